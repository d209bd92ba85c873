//! Data ingestion and problem generation for the portfolio, regression
//! and classification applications.
//!
//! All four generators emit [`ProblemSpec`] instances whose hinge scale
//! factors are folded into the rows of the hinge block, so the objective
//! is always the plain unweighted hinge sum of the canonical form.

use crate::linalg::SparseMatrix;
use crate::model::ProblemSpec;
use crate::{Error, Result};
use std::io::BufRead;

/// Scenario returns: `l` scenarios of `n` asset returns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    pub scenarios: usize,
    pub assets: usize,
    pub returns: Vec<f64>,
    /// Optional benchmark (target) expected return.
    pub benchmark: Option<f64>,
}

impl ScenarioMatrix {
    pub fn get(&self, scenario: usize, asset: usize) -> f64 {
        self.returns[scenario * self.assets + asset]
    }

    /// Mean return per asset.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.assets];
        for i in 0..self.scenarios {
            for j in 0..self.assets {
                mu[j] += self.get(i, j);
            }
        }
        for v in &mut mu {
            *v /= self.scenarios as f64;
        }
        mu
    }
}

/// Parse a rectangular numeric CSV of scenario returns. A header row is
/// detected by non-numeric cells and skipped.
pub fn parse_returns_csv<R: BufRead>(reader: R) -> Result<ScenarioMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let cells: Vec<&str> = t.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(first) = rows.first() {
                    if vals.len() != first.len() {
                        return Err(Error::Parse {
                            line: idx + 1,
                            msg: format!(
                                "ragged row: {} cells, expected {}",
                                vals.len(),
                                first.len()
                            ),
                        });
                    }
                }
                rows.push(vals);
            }
            Err(e) => {
                if rows.is_empty() && idx == 0 {
                    continue; // header row
                }
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: e.to_string(),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no numeric rows".into(),
        });
    }
    let assets = rows[0].len();
    let scenarios = rows.len();
    Ok(ScenarioMatrix {
        scenarios,
        assets,
        returns: rows.into_iter().flatten().collect(),
        benchmark: None,
    })
}

/// How to interpret LIBSVM labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LibsvmMode {
    /// Labels stay as parsed reals.
    Regression,
    /// Labels `{0,1}` or `{-1,1}` are normalized to `-1/+1`.
    Classification,
}

/// Sparse sample matrix in LIBSVM feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmDataset {
    pub samples: usize,
    /// Feature width (max 0-based index + 1).
    pub width: usize,
    pub labels: Vec<f64>,
    /// Per-sample sorted `(feature, value)` pairs, 0-based.
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Parse LIBSVM text: `label idx:val idx:val ...` per line, 1-based
/// indices, `#` comments, tolerant of repeated whitespace.
pub fn parse_libsvm<R: BufRead>(reader: R, mode: LibsvmMode) -> Result<LibsvmDataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let body = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut toks = body.split_whitespace();
        let label_tok = match toks.next() {
            Some(t) => t,
            None => continue, // blank or comment-only line
        };
        let label: f64 = label_tok.parse().map_err(|e: std::num::ParseFloatError| {
            Error::Parse {
                line: lineno,
                msg: format!("bad label '{label_tok}': {e}"),
            }
        })?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in toks {
            let (a, b) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("malformed feature pair '{tok}'"),
            })?;
            let fidx: usize = a.parse().map_err(|e: std::num::ParseIntError| Error::Parse {
                line: lineno,
                msg: format!("bad feature index '{a}': {e}"),
            })?;
            if fidx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let fval: f64 = b.parse().map_err(|e: std::num::ParseFloatError| Error::Parse {
                line: lineno,
                msg: format!("bad feature value '{b}': {e}"),
            })?;
            row.push((fidx - 1, fval));
        }
        row.sort_by_key(|&(i, _)| i);
        if let Some(&(last, _)) = row.last() {
            width = width.max(last + 1);
        }
        labels.push(label);
        rows.push(row);
    }
    if mode == LibsvmMode::Classification {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = match *l {
                1.0 => 1.0,
                v if v == -1.0 || v == 0.0 => -1.0,
                v => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("classification label must be 0/1 or ±1, got {v}"),
                    })
                }
            };
        }
    }
    Ok(LibsvmDataset {
        samples: labels.len(),
        width,
        labels,
        rows,
    })
}

/// Serialize back to LIBSVM text (1-based indices).
pub fn write_libsvm<W: std::io::Write>(w: &mut W, ds: &LibsvmDataset) -> Result<()> {
    for (label, row) in ds.labels.iter().zip(&ds.rows) {
        write!(w, "{label}")?;
        for (i, v) in row {
            write!(w, " {}:{}", i + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn budget_rows(
    n_assets: usize,
    n_total: usize,
    mu: &[f64],
    target: Option<f64>,
) -> (SparseMatrix, Vec<f64>) {
    // sum_i x_i = 1 and, when a target return is given,
    // mu'x - slack = r with slack >= 0 in the last column
    let mut trips: Vec<(usize, usize, f64)> = (0..n_assets).map(|j| (0, j, 1.0)).collect();
    let mut b = vec![1.0];
    if let Some(r) = target {
        for (j, &m) in mu.iter().enumerate() {
            trips.push((1, j, m));
        }
        trips.push((1, n_total - 1, -1.0));
        b.push(r);
    }
    let m_rows = b.len();
    (
        SparseMatrix::from_triplets(m_rows, n_total, &trips).expect("valid triplets"),
        b,
    )
}

/// CVaR portfolio model. Variables are `(x, t)` plus a slack column when
/// a target return is requested; hinge row `i` is
/// `(1/(l alpha)) [-xi_i', -1, 0]` so the hinge sum is the scaled tail
/// average over the threshold variable `t`.
pub fn gen_cvar(
    sc: &ScenarioMatrix,
    alpha: f64,
    target: Option<f64>,
    upper: &[f64],
) -> Result<ProblemSpec> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    if upper.len() != sc.assets {
        return Err(Error::Dimension {
            context: "gen_cvar upper bounds",
            expected: sc.assets,
            got: upper.len(),
        });
    }
    let n_assets = sc.assets;
    let l = sc.scenarios;
    let has_slack = target.is_some();
    let n = n_assets + 1 + has_slack as usize; // x, t, [slack]
    let t_col = n_assets;

    let scale = 1.0 / (l as f64 * alpha);
    let mut trips = Vec::with_capacity(l * (n_assets + 1));
    for i in 0..l {
        for j in 0..n_assets {
            trips.push((i, j, -scale * sc.get(i, j)));
        }
        trips.push((i, t_col, -scale));
    }
    let chat = SparseMatrix::from_triplets(l, n, &trips)?;

    let mu = sc.mean();
    let (a, b) = budget_rows(n_assets, n, &mu, target);

    let mut c = vec![0.0; n];
    c[t_col] = 1.0;
    let mut lower = vec![0.0; n];
    let mut upper_full = vec![1.0; n];
    upper_full[..n_assets].copy_from_slice(upper);
    lower[t_col] = f64::NEG_INFINITY;
    upper_full[t_col] = f64::INFINITY;
    if has_slack {
        lower[n - 1] = 0.0;
        upper_full[n - 1] = f64::INFINITY;
    }

    Ok(ProblemSpec {
        n,
        m: a.nrows(),
        s: l,
        c,
        q: SparseMatrix::zeros(n, n),
        a,
        b,
        chat,
        dhat: vec![0.0; l],
        l1_weights: vec![0.0; n],
        lower,
        upper: upper_full,
        objective_constant: 0.0,
    })
}

/// Mean absolute semi-deviation portfolio model; hinge row `i` is
/// `(1/l)(mu - xi_i)'` over the asset block.
pub fn gen_masd(
    sc: &ScenarioMatrix,
    target: Option<f64>,
    upper: &[f64],
    l1_weight: Option<f64>,
) -> Result<ProblemSpec> {
    if upper.len() != sc.assets {
        return Err(Error::Dimension {
            context: "gen_masd upper bounds",
            expected: sc.assets,
            got: upper.len(),
        });
    }
    if let Some(w) = l1_weight {
        if w < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "l1 weight must be nonnegative, got {w}"
            )));
        }
    }
    let n_assets = sc.assets;
    let l = sc.scenarios;
    let has_slack = target.is_some();
    let n = n_assets + has_slack as usize;

    let mu = sc.mean();
    let inv_l = 1.0 / l as f64;
    let mut trips = Vec::with_capacity(l * n_assets);
    for i in 0..l {
        for j in 0..n_assets {
            let v = inv_l * (mu[j] - sc.get(i, j));
            if v != 0.0 {
                trips.push((i, j, v));
            }
        }
    }
    let chat = SparseMatrix::from_triplets(l, n, &trips)?;
    let (a, b) = budget_rows(n_assets, n, &mu, target);

    let mut lower = vec![0.0; n];
    let mut upper_full = vec![1.0; n];
    upper_full[..n_assets].copy_from_slice(upper);
    let mut l1 = vec![0.0; n];
    if let Some(w) = l1_weight {
        l1[..n_assets].fill(w);
    }
    if has_slack {
        lower[n - 1] = 0.0;
        upper_full[n - 1] = f64::INFINITY;
    }

    Ok(ProblemSpec {
        n,
        m: a.nrows(),
        s: l,
        c: vec![0.0; n],
        q: SparseMatrix::zeros(n, n),
        a,
        b,
        chat,
        dhat: vec![0.0; l],
        l1_weights: l1,
        lower,
        upper: upper_full,
        objective_constant: 0.0,
    })
}

/// Elastic-net penalized quantile regression over `x = (b0, beta)`.
///
/// Hinge row `i` is `-(1/l)[1, xi_i']` with offset `y_i / l`; the linear
/// term is `(alpha - 1) C' 1` and `(alpha - 1) 1'd` is folded into the
/// objective constant, so the objective equals the mean quantile loss
/// plus the elastic-net penalty.
pub fn gen_quantile(
    ds: &LibsvmDataset,
    alpha: f64,
    lambda: f64,
    tau: f64,
) -> Result<ProblemSpec> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    if lambda < 0.0 || !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(
            "lambda must be >= 0 and tau in [0,1]".into(),
        ));
    }
    let l = ds.samples;
    let d = ds.width;
    let n = 1 + d;
    let inv_l = 1.0 / l as f64;

    let mut trips = Vec::new();
    let mut col_sums = vec![0.0; n]; // C'1
    for (i, row) in ds.rows.iter().enumerate() {
        trips.push((i, 0, -inv_l));
        col_sums[0] -= inv_l;
        for &(j, v) in row {
            trips.push((i, 1 + j, -inv_l * v));
            col_sums[1 + j] -= inv_l * v;
        }
    }
    let chat = SparseMatrix::from_triplets(l, n, &trips)?;
    let dhat: Vec<f64> = ds.labels.iter().map(|&y| inv_l * y).collect();

    let c: Vec<f64> = col_sums.iter().map(|&s| (alpha - 1.0) * s).collect();
    let constant = (alpha - 1.0) * dhat.iter().sum::<f64>();

    let mut qdiag = vec![0.0; n];
    let mut l1 = vec![0.0; n];
    for j in 1..n {
        qdiag[j] = lambda * (1.0 - tau);
        l1[j] = lambda * tau;
    }

    Ok(ProblemSpec {
        n,
        m: 0,
        s: l,
        c,
        q: SparseMatrix::from_diag(&qdiag),
        a: SparseMatrix::zeros(0, n),
        b: vec![],
        chat,
        dhat,
        l1_weights: l1,
        lower: vec![f64::NEG_INFINITY; n],
        upper: vec![f64::INFINITY; n],
        objective_constant: constant,
    })
}

/// Elastic-net soft-margin linear SVM over `x = (b0, beta)`. Hinge row
/// `i` is `(1/l)[y_i, -y_i xi_i']` with offset `1/l`, so the hinge sum is
/// the mean hinge loss `(1/l) sum (1 - y_i(xi_i' beta - b0))_+`.
pub fn gen_svm(ds: &LibsvmDataset, lambda: f64, tau1: f64, tau2: f64) -> Result<ProblemSpec> {
    if lambda <= 0.0 || tau1 <= 0.0 || tau2 <= 0.0 {
        return Err(Error::InvalidParameter(
            "lambda, tau1 and tau2 must be positive".into(),
        ));
    }
    for (i, &y) in ds.labels.iter().enumerate() {
        if y != 1.0 && y != -1.0 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("svm label must be ±1, got {y}"),
            });
        }
    }
    let l = ds.samples;
    let d = ds.width;
    let n = 1 + d;
    let inv_l = 1.0 / l as f64;

    let mut trips = Vec::new();
    for (i, row) in ds.rows.iter().enumerate() {
        let y = ds.labels[i];
        trips.push((i, 0, inv_l * y));
        for &(j, v) in row {
            trips.push((i, 1 + j, -inv_l * y * v));
        }
    }
    let chat = SparseMatrix::from_triplets(l, n, &trips)?;

    let mut qdiag = vec![0.0; n];
    let mut l1 = vec![0.0; n];
    for j in 1..n {
        qdiag[j] = lambda * tau2;
        l1[j] = lambda * tau1;
    }

    Ok(ProblemSpec {
        n,
        m: 0,
        s: l,
        c: vec![0.0; n],
        q: SparseMatrix::from_diag(&qdiag),
        a: SparseMatrix::zeros(0, n),
        b: vec![],
        chat,
        dhat: vec![inv_l; l],
        l1_weights: l1,
        lower: vec![f64::NEG_INFINITY; n],
        upper: vec![f64::INFINITY; n],
        objective_constant: 0.0,
    })
}

/// Quantile loss `rho_alpha(w) = (1-alpha) w_- + alpha w_+`.
pub fn quantile_loss(alpha: f64, w: f64) -> f64 {
    0.5 * (w.abs() + (2.0 * alpha - 1.0) * w)
}

/// Empirical CVaR at level `alpha`: mean of the `ceil(alpha l)` worst
/// losses (exact tail average when `alpha l` is integral).
pub fn empirical_cvar(losses: &[f64], alpha: f64) -> f64 {
    let l = losses.len();
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((alpha * l as f64).ceil() as usize).clamp(1, l);
    // Rockafellar-Uryasev value at the optimal threshold t* = k-th worst
    let t = sorted[k - 1];
    let tail_excess: f64 = sorted[..k].iter().map(|&v| v - t).sum();
    t + tail_excess / (alpha * l as f64)
}
