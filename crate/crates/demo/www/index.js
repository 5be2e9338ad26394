import init, {
  check_compatibility,
  plan_pipeline,
  simulate_pipeline,
  sample_hams,
  sample_pipeline,
} from "./pkg/hetflow_demo.js";

const $ = (id) => document.getElementById(id);

function show(el, f) {
  try {
    el.textContent = JSON.stringify(JSON.parse(f()), null, 2);
  } catch (e) {
    el.textContent = "error: " + (e.message ?? e);
  }
}

await init();
$("hams").value = sample_hams();
$("pipeline").value = sample_pipeline();

$("check").onclick = () => {
  const out = $("check-out");
  try {
    const r = JSON.parse(check_compatibility($("proc-tag").value, $("impl-tag").value));
    out.className = r.compatible ? "yes" : "no";
    out.textContent = `${r.processor} ${r.compatible ? "accepts" : "rejects"} ${r.implementation}`;
  } catch (e) {
    out.className = "no";
    out.textContent = e.message ?? String(e);
  }
};

$("plan").onclick = () =>
  show($("out"), () => plan_pipeline($("hams").value, $("pipeline").value, $("mode").value));

$("simulate").onclick = () =>
  show($("out"), () => simulate_pipeline($("hams").value, $("pipeline").value, $("mode").value));
