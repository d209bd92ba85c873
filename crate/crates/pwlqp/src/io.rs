//! Problem exchange format: a JSON manifest with inline vectors (bounds
//! encoded as numbers or the strings `"inf"` / `"-inf"`) referencing
//! Matrix Market files for `Q`, `A` and the hinge block. Round-trips are
//! bit-exact.

use crate::linalg::mm;
use crate::model::ProblemSpec;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n: usize,
    m: usize,
    s: usize,
    c: Vec<f64>,
    b: Vec<f64>,
    dhat: Vec<f64>,
    l1_weights: Vec<f64>,
    lower: Vec<Value>,
    upper: Vec<Value>,
    objective_constant: f64,
    q_file: String,
    a_file: String,
    chat_file: String,
}

fn encode_bound(v: f64) -> Value {
    if v == f64::INFINITY {
        Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else {
        serde_json::json!(v)
    }
}

fn decode_bound(v: &Value) -> Result<f64> {
    match v {
        Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Value::Number(x) => x.as_f64().ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("bound {x} is not representable"),
        }),
        other => Err(Error::Parse {
            line: 0,
            msg: format!("invalid bound encoding {other}"),
        }),
    }
}

/// Write a problem next to `json_path`: the manifest plus `.q.mtx`,
/// `.a.mtx` and `.chat.mtx` siblings.
pub fn save_problem(spec: &ProblemSpec, json_path: &Path) -> Result<()> {
    let stem = json_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("problem");
    let sibling = |suffix: &str| format!("{stem}.{suffix}.mtx");
    let dir = json_path.parent().unwrap_or_else(|| Path::new("."));

    let q_file = sibling("q");
    let a_file = sibling("a");
    let chat_file = sibling("chat");
    mm::write_matrix_market_file(&dir.join(&q_file), &spec.q)?;
    mm::write_matrix_market_file(&dir.join(&a_file), &spec.a)?;
    mm::write_matrix_market_file(&dir.join(&chat_file), &spec.chat)?;

    let manifest = Manifest {
        n: spec.n,
        m: spec.m,
        s: spec.s,
        c: spec.c.clone(),
        b: spec.b.clone(),
        dhat: spec.dhat.clone(),
        l1_weights: spec.l1_weights.clone(),
        lower: spec.lower.iter().copied().map(encode_bound).collect(),
        upper: spec.upper.iter().copied().map(encode_bound).collect(),
        objective_constant: spec.objective_constant,
        q_file,
        a_file,
        chat_file,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(json_path, text)?;
    Ok(())
}

/// Load a problem manifest; matrix files resolve relative to it.
pub fn load_problem(json_path: &Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(json_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = json_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |name: &str| -> PathBuf {
        let p = Path::new(name);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            dir.join(p)
        }
    };
    let spec = ProblemSpec {
        n: manifest.n,
        m: manifest.m,
        s: manifest.s,
        c: manifest.c,
        q: mm::read_matrix_market_file(&resolve(&manifest.q_file))?,
        a: mm::read_matrix_market_file(&resolve(&manifest.a_file))?,
        b: manifest.b,
        chat: mm::read_matrix_market_file(&resolve(&manifest.chat_file))?,
        dhat: manifest.dhat,
        l1_weights: manifest.l1_weights,
        lower: manifest
            .lower
            .iter()
            .map(decode_bound)
            .collect::<Result<_>>()?,
        upper: manifest
            .upper
            .iter()
            .map(decode_bound)
            .collect::<Result<_>>()?,
        objective_constant: manifest.objective_constant,
    };
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidProblem(errs));
    }
    Ok(spec)
}

/// Solution file consumed by the `check` command; the solver's JSON
/// report is a superset of this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub x: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
