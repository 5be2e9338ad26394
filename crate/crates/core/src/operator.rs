//! Token values and the built-in operator catalog.
//!
//! Both execution backends evaluate the same catalog, so a shell behaves
//! identically whether it lands on the host executor or on a simulated FPGA.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Payload carried by one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    I64(i64),
    F64(f64),
    Bytes(Vec<u8>),
}

impl Value {
    /// The datatype token this value satisfies.
    pub fn datatype(&self) -> &'static str {
        match self {
            Value::I64(_) => "i64",
            Value::F64(_) => "f64",
            Value::Bytes(_) => "bytes",
        }
    }

    /// Parses one textual token for a port of the given datatype.
    pub fn parse_as(datatype: &str, text: &str) -> Result<Value, EvalError> {
        let text = text.trim();
        let bad = || EvalError::Parse {
            datatype: datatype.to_string(),
            text: text.to_string(),
        };
        match datatype {
            "i64" => text.parse().map(Value::I64).map_err(|_| bad()),
            "f64" => text.parse().map(Value::F64).map_err(|_| bad()),
            "bytes" => Ok(Value::Bytes(text.as_bytes().to_vec())),
            other => Err(EvalError::UnsupportedDatatype(other.to_string())),
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I64(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I64(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v}"),
            Value::Bytes(b) => write!(f, "{}", String::from_utf8_lossy(b)),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::I64(v)
    }
}

/// Operator name plus integer parameters, as written in pipeline files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub operator: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<i64>,
}

impl OperatorSpec {
    pub fn new(operator: impl Into<String>, params: impl Into<Vec<i64>>) -> Self {
        OperatorSpec {
            operator: operator.into(),
            params: params.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OperatorError {
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("operator {operator} expects {expected}, got {got:?}")]
    BadParams {
        operator: String,
        expected: &'static str,
        got: Vec<i64>,
    },
    #[error("operator {operator} cannot serve a shell with {inputs} inputs and {outputs} outputs")]
    Arity {
        operator: String,
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("operator {operator} does not accept {datatype} values")]
    Type {
        operator: &'static str,
        datatype: &'static str,
    },
    #[error("mixed datatypes in one firing of {0}")]
    MixedTypes(&'static str),
    #[error("cannot parse {text:?} as {datatype}")]
    Parse { datatype: String, text: String },
    #[error("unsupported datatype {0:?}")]
    UnsupportedDatatype(String),
}

/// A resolved catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Identity,
    AddConst(i64),
    Scale(i64),
    Clamp { lo: i64, hi: i64 },
    /// Sliding sum over the last `n` inputs, emitting once per input.
    SumWindow(usize),
    /// Copies its single input to every output.
    Tee,
    /// Adds one token from each input.
    Sum,
}

/// Names accepted by [`Operator::resolve`].
pub const CATALOG: &[&str] = &[
    "identity",
    "add_const",
    "scale",
    "clamp",
    "sum_window",
    "tee",
    "sum",
];

impl Operator {
    pub fn resolve(spec: &OperatorSpec) -> Result<Operator, OperatorError> {
        let p = spec.params.as_slice();
        let bad = |expected| OperatorError::BadParams {
            operator: spec.operator.clone(),
            expected,
            got: p.to_vec(),
        };
        let op = match spec.operator.as_str() {
            "identity" => match p {
                [] => Operator::Identity,
                _ => return Err(bad("no parameters")),
            },
            "add_const" => match p {
                [k] => Operator::AddConst(*k),
                _ => return Err(bad("one parameter (k)")),
            },
            "scale" => match p {
                [k] => Operator::Scale(*k),
                _ => return Err(bad("one parameter (k)")),
            },
            "clamp" => match p {
                [lo, hi] if lo <= hi => Operator::Clamp { lo: *lo, hi: *hi },
                _ => return Err(bad("two parameters lo <= hi")),
            },
            "sum_window" => match p {
                [n] if *n >= 1 => Operator::SumWindow(*n as usize),
                _ => return Err(bad("one parameter n >= 1")),
            },
            "tee" => match p {
                [] => Operator::Tee,
                _ => return Err(bad("no parameters")),
            },
            "sum" => match p {
                [] => Operator::Sum,
                _ => return Err(bad("no parameters")),
            },
            other => return Err(OperatorError::UnknownOperator(other.to_string())),
        };
        Ok(op)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Operator::Identity => "identity",
            Operator::AddConst(_) => "add_const",
            Operator::Scale(_) => "scale",
            Operator::Clamp { .. } => "clamp",
            Operator::SumWindow(_) => "sum_window",
            Operator::Tee => "tee",
            Operator::Sum => "sum",
        }
    }

    /// Checks that the operator can drive a shell with the given port counts.
    pub fn check_arity(&self, inputs: usize, outputs: usize) -> Result<(), OperatorError> {
        let ok = match self {
            Operator::Tee => inputs == 1 && outputs >= 1,
            Operator::Sum => inputs >= 1 && outputs == 1,
            _ => inputs == 1 && outputs == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(OperatorError::Arity {
                operator: self.name().to_string(),
                inputs,
                outputs,
            })
        }
    }

    pub fn instantiate(&self) -> OperatorState {
        OperatorState {
            op: *self,
            window: VecDeque::new(),
        }
    }
}

/// An operator plus whatever state it carries between firings.
#[derive(Debug, Clone)]
pub struct OperatorState {
    op: Operator,
    window: VecDeque<Value>,
}

impl OperatorState {
    pub fn operator(&self) -> Operator {
        self.op
    }

    /// One firing: one token per input in, one token per output out.
    /// Integer arithmetic wraps.
    pub fn fire(&mut self, inputs: &[Value], outputs: usize) -> Result<Vec<Value>, EvalError> {
        let name = self.op.name();
        let out = match self.op {
            Operator::Identity => inputs[0].clone(),
            Operator::Tee => return Ok(vec![inputs[0].clone(); outputs]),
            Operator::AddConst(k) => match &inputs[0] {
                Value::I64(v) => Value::I64(v.wrapping_add(k)),
                Value::F64(v) => Value::F64(v + k as f64),
                Value::Bytes(_) => return Err(type_error(name, &inputs[0])),
            },
            Operator::Scale(k) => match &inputs[0] {
                Value::I64(v) => Value::I64(v.wrapping_mul(k)),
                Value::F64(v) => Value::F64(v * k as f64),
                Value::Bytes(_) => return Err(type_error(name, &inputs[0])),
            },
            Operator::Clamp { lo, hi } => match &inputs[0] {
                Value::I64(v) => Value::I64((*v).clamp(lo, hi)),
                Value::F64(v) => Value::F64(v.clamp(lo as f64, hi as f64)),
                Value::Bytes(_) => return Err(type_error(name, &inputs[0])),
            },
            Operator::SumWindow(n) => {
                if matches!(inputs[0], Value::Bytes(_)) {
                    return Err(type_error(name, &inputs[0]));
                }
                if let Some(first) = self.window.front() {
                    if first.datatype() != inputs[0].datatype() {
                        return Err(EvalError::MixedTypes(name));
                    }
                }
                self.window.push_back(inputs[0].clone());
                if self.window.len() > n {
                    self.window.pop_front();
                }
                sum_values(name, self.window.iter())?
            }
            Operator::Sum => sum_values(name, inputs.iter())?,
        };
        Ok(vec![out])
    }
}

fn type_error(operator: &'static str, value: &Value) -> EvalError {
    EvalError::Type {
        operator,
        datatype: value.datatype(),
    }
}

fn sum_values<'a>(
    operator: &'static str,
    mut values: impl Iterator<Item = &'a Value>,
) -> Result<Value, EvalError> {
    let first = values.next().expect("at least one value").clone();
    values.try_fold(first, |acc, v| match (acc, v) {
        (Value::I64(a), Value::I64(b)) => Ok(Value::I64(a.wrapping_add(*b))),
        (Value::F64(a), Value::F64(b)) => Ok(Value::F64(a + b)),
        (Value::Bytes(_), _) | (_, Value::Bytes(_)) => Err(EvalError::Type {
            operator,
            datatype: "bytes",
        }),
        _ => Err(EvalError::MixedTypes(operator)),
    })
    .and_then(|v| match v {
        Value::Bytes(_) => Err(type_error(operator, &v)),
        v => Ok(v),
    })
}
