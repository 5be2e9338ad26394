use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use hetflow_control::{router, ApiError, ErrorCode, Platform, DEFAULT_PORT, LISTEN_ENV};
use hetflow_core::ham::HamManifest;
use hetflow_core::matcher::{DeploymentPlan, PlanMode};
use hetflow_core::runtime::SessionState;
use hetflow_core::PipelineDefinition;
use serde_json::Value as JsonValue;

#[derive(Parser)]
#[command(name = "hetflow", version, about = "Plan and run dataflow pipelines on heterogeneous processors")]
struct Cli {
    /// HAM manifest to load first (repeatable)
    #[arg(long = "ham", global = true, value_name = "FILE")]
    hams: Vec<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a HAM manifest, or load it into a running server
    LoadHam {
        file: PathBuf,
        /// Control service to load into instead of checking locally
        #[arg(long)]
        server: Option<String>,
    },
    /// Check a pipeline definition
    Validate { pipeline: PathBuf },
    /// Compute a deployment plan without deploying
    Plan {
        pipeline: PathBuf,
        #[arg(long)]
        exhaustive: bool,
        /// Print the plan as JSON
        #[arg(long)]
        json: bool,
    },
    /// Deploy and run a pipeline to completion
    Run {
        pipeline: PathBuf,
        #[arg(long)]
        exhaustive: bool,
        /// Stop the run after this many seconds
        #[arg(long, value_name = "SECS")]
        timeout: Option<u64>,
    },
    /// Start the control service
    Serve {
        #[arg(long, env = LISTEN_ENV, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)))]
        listen: SocketAddr,
        /// Pipeline to preload (repeatable)
        #[arg(long = "pipeline", value_name = "FILE")]
        pipelines: Vec<PathBuf>,
        /// Static console bundle to serve for unmatched paths
        #[arg(long, value_name = "DIR")]
        console_dir: Option<PathBuf>,
    },
    /// Show processors and sessions of a running server
    Status {
        /// Session to show in full
        session: Option<String>,
        #[arg(long, env = "HETFLOW_SERVER", default_value_t = format!("http://127.0.0.1:{DEFAULT_PORT}"))]
        server: String,
    },
}

type CliResult = Result<(), ApiError>;

fn read(path: &Path) -> Result<String, ApiError> {
    fs::read_to_string(path).map_err(|e| ApiError::new(ErrorCode::NotFound, format!("{}: {e}", path.display())))
}

fn read_manifest(path: &Path) -> Result<HamManifest, ApiError> {
    HamManifest::from_json(&read(path)?).map_err(|e| ApiError::from(e))
}

fn read_pipeline(path: &Path) -> Result<PipelineDefinition, ApiError> {
    PipelineDefinition::from_json(&read(path)?).map_err(ApiError::from)
}

/// A platform with the global `--ham` manifests and the pipeline's own
/// manifests (relative to the pipeline file) loaded.
fn platform_for(hams: &[PathBuf], pipeline: Option<(&Path, &PipelineDefinition)>) -> Result<Platform, ApiError> {
    let platform = Platform::new();
    let mut files: Vec<PathBuf> = hams.to_vec();
    if let Some((path, def)) = pipeline {
        let base = path.parent().unwrap_or(Path::new("."));
        files.extend(def.hams.iter().map(|h| base.join(h)));
    }
    for f in files {
        platform.load_ham(&read_manifest(&f)?)?;
    }
    Ok(platform)
}

fn print_plan(plan: &DeploymentPlan) {
    if let Some(report) = &plan.report {
        println!("infeasible ({} mode)", plan.mode);
        print!("{report}");
        return;
    }
    println!("complete ({} mode)", plan.mode);
    for (shell, a) in &plan.assignments {
        println!("  {shell} -> {} on {}", a.implementation_id, a.processor_id);
    }
}

fn mode(exhaustive: bool) -> PlanMode {
    if exhaustive {
        PlanMode::Exhaustive
    } else {
        PlanMode::Greedy
    }
}

fn load_ham(hams: &[PathBuf], file: &Path, server: Option<&str>) -> CliResult {
    let manifest = read_manifest(file)?;
    let summary = match server {
        Some(url) => {
            let body = remote(url, "POST", "/hams", Some(serde_json::to_value(&manifest).unwrap()))?;
            serde_json::from_value(body["ham"].clone()).map_err(|e| ApiError::new(ErrorCode::BadRequest, e.to_string()))?
        }
        None => platform_for(hams, None)?.load_ham(&manifest)?,
    };
    let summary: hetflow_core::ham::HamSummary = summary;
    println!("loaded HAM {} ({}): {}", summary.ham_id, summary.name, summary.processors.join(", "));
    Ok(())
}

fn validate(file: &Path) -> CliResult {
    let def = read_pipeline(file)?;
    let graph = def.build_graph()?;
    for w in graph.warnings() {
        eprintln!("warning: {}", serde_json::to_string(&w).unwrap());
    }
    let violations = graph.validate();
    if !violations.is_empty() {
        return Err(ApiError::new(ErrorCode::InvalidGraph, format!("{} violation(s)", violations.len()))
            .with_details(serde_json::json!({ "violations": violations })));
    }
    println!("valid");
    Ok(())
}

fn plan(hams: &[PathBuf], file: &Path, exhaustive: bool, json: bool) -> CliResult {
    let def = read_pipeline(file)?;
    let platform = platform_for(hams, Some((file, &def)))?;
    let id = platform.load_pipeline(def)?.id;
    let plan = platform.plan(&id, mode(exhaustive))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "v": 1, "plan": plan })).unwrap());
    } else {
        print_plan(&plan);
    }
    match plan.report {
        Some(report) => Err(ApiError::new(ErrorCode::PlanInfeasible, "no feasible deployment plan")
            .with_details(serde_json::json!({ "report": report }))),
        None => Ok(()),
    }
}

fn run(hams: &[PathBuf], file: &Path, exhaustive: bool, timeout: Option<u64>) -> CliResult {
    let def = read_pipeline(file)?;
    let platform = platform_for(hams, Some((file, &def)))?;
    let id = platform.load_pipeline(def)?.id;
    let started = platform.start(&id, mode(exhaustive))?;
    let session = platform.session_handle(&started.stats.session_id)?;
    match timeout {
        Some(secs) => {
            if !session.wait(Duration::from_secs(secs)) {
                eprintln!("timeout after {secs}s; stopping");
                session.stop()?;
            }
        }
        None => while !session.wait(Duration::from_secs(3600)) {},
    }
    let stats = session.stats();
    for (port, values) in &stats.sinks {
        let text: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        println!("{port}: [{}]", text.join(", "));
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "v": 1, "session": stats })).unwrap());
    if stats.state == SessionState::Failed {
        return Err(ApiError::new(ErrorCode::BackendError, stats.error.unwrap_or_else(|| "session failed".into())));
    }
    Ok(())
}

fn serve(hams: &[PathBuf], listen: SocketAddr, pipelines: &[PathBuf], console_dir: Option<PathBuf>) -> CliResult {
    let platform = platform_for(hams, None)?;
    for p in pipelines {
        let def = read_pipeline(p)?;
        let base = p.parent().unwrap_or(Path::new("."));
        for h in &def.hams {
            platform.load_ham(&read_manifest(&base.join(h))?)?;
        }
        platform.load_pipeline(def)?;
    }
    let app = router(Arc::new(platform), console_dir);
    let rt = tokio::runtime::Runtime::new().map_err(|e| ApiError::new(ErrorCode::BackendError, e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| ApiError::new(ErrorCode::BadRequest, format!("cannot listen on {listen}: {e}")))?;
        tracing::info!("listening on http://{}", listener.local_addr().unwrap_or(listen));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ApiError::new(ErrorCode::BackendError, e.to_string()))
    })
}

/// One request to a running service; error bodies come back as `ApiError`.
fn remote(server: &str, method: &str, path: &str, body: Option<JsonValue>) -> Result<JsonValue, ApiError> {
    let client = reqwest::blocking::Client::new();
    let url = format!("{}{path}", server.trim_end_matches('/'));
    let req = match method {
        "POST" => client.post(&url),
        _ => client.get(&url),
    };
    let req = match body {
        Some(b) => req.json(&b),
        None => req,
    };
    let resp = req
        .send()
        .map_err(|e| ApiError::new(ErrorCode::BackendError, format!("{url}: {e}")))?;
    let json: JsonValue = resp
        .json()
        .map_err(|e| ApiError::new(ErrorCode::BackendError, format!("{url}: {e}")))?;
    if let Some(err) = json.get("error") {
        return Err(serde_json::from_value(err.clone())
            .unwrap_or_else(|_| ApiError::new(ErrorCode::BackendError, err.to_string())));
    }
    Ok(json)
}

fn status(server: &str, session: Option<&str>) -> CliResult {
    if let Some(id) = session {
        let body = remote(server, "GET", &format!("/sessions/{id}"), None)?;
        println!("{}", serde_json::to_string_pretty(&body).unwrap());
        return Ok(());
    }
    let procs = remote(server, "GET", "/processors", None)?;
    println!("processors:");
    for p in procs["processors"].as_array().into_iter().flatten() {
        println!(
            "  {:<12} {:<32} {:<16} capacity {} occupancy {}",
            p["id"].as_str().unwrap_or("?"),
            p["tag"].as_str().unwrap_or("?"),
            p["backend_kind"].as_str().unwrap_or("?"),
            p["capacity"],
            p["occupancy"]
        );
    }
    let sessions = remote(server, "GET", "/sessions", None)?;
    println!("sessions:");
    for s in sessions["sessions"].as_array().into_iter().flatten() {
        println!(
            "  {:<10} {:<16} {}",
            s["session_id"].as_str().unwrap_or("?"),
            s["pipeline_id"].as_str().unwrap_or("?"),
            s["state"].as_str().unwrap_or("?")
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::LoadHam { file, server } => load_ham(&cli.hams, file, server.as_deref()),
        Command::Validate { pipeline } => validate(pipeline),
        Command::Plan { pipeline, exhaustive, json } => plan(&cli.hams, pipeline, *exhaustive, *json),
        Command::Run { pipeline, exhaustive, timeout } => run(&cli.hams, pipeline, *exhaustive, *timeout),
        Command::Serve { listen, pipelines, console_dir } => serve(&cli.hams, *listen, pipelines, console_dir.clone()),
        Command::Status { session, server } => status(server, session.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.body()).unwrap());
            ExitCode::from(1)
        }
    }
}
