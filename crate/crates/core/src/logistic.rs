//! Weighted maximum-likelihood logistic regression.
//!
//! Every model in the toolkit (treatment-assignment models, the four
//! prediction strategies, calibration regressions) is a binomial-logit GLM
//! with at most a handful of columns, so the solver is a dense Newton/IRLS
//! iteration with step-halving on the weighted log-likelihood
//!
//! ```text
//! l(beta) = sum_i w_i [ y_i log(pi_i) + (1 - y_i) log(1 - pi_i) ],  logit(pi_i) = offset_i + x_i' beta
//! ```

use std::collections::HashMap;

use thiserror::Error;

/// Label of the implicit all-ones column.
pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogisticError {
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("design has {rows} rows but {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("weights must be non-negative (row {0})")]
    NegativeWeight(usize),
    #[error("outcome must be 0 or 1 (row {0})")]
    NonBinaryOutcome(usize),
    #[error("only {positive} positively weighted rows for {required} coefficients")]
    InsufficientSupport { positive: usize, required: usize },
    #[error("outcome is constant among positively weighted rows")]
    DegenerateOutcome,
    #[error("perfect separation suspected: |coefficient| reached {max_abs_coef:.2} at iteration {iteration}")]
    Separation { iteration: usize, max_abs_coef: f64 },
    #[error("weighted information matrix is singular (rank-deficient design)")]
    RankDeficient,
    #[error("term `{0}` is missing from the prediction row")]
    MissingTerm(String),
}

pub type Result<T> = std::result::Result<T, LogisticError>;

/// Numerically stable inverse logit.
#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Dense row-major design matrix whose first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Builds a design from named covariate columns; the intercept column is
    /// prepended.
    pub fn from_columns<S: Into<String>>(columns: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let n_rows = columns.first().map(|(_, c)| c.len());
        let n_cols = columns.len() + 1;
        let mut labels = Vec::with_capacity(n_cols);
        labels.push(INTERCEPT.to_string());
        let mut cols = Vec::with_capacity(columns.len());
        for (label, col) in columns {
            labels.push(label.into());
            cols.push(col);
        }
        let n_rows = match n_rows {
            Some(n) => n,
            None => return Err(LogisticError::TooFewRows { rows: 0, cols: 1 }),
        };
        for col in &cols {
            if col.len() != n_rows {
                return Err(LogisticError::DimensionMismatch {
                    what: "design column",
                    expected: n_rows,
                    found: col.len(),
                });
            }
        }
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            values.push(1.0);
            values.extend(cols.iter().map(|c| c[i]));
        }
        Self::from_row_major(labels, n_rows, values)
    }

    /// An intercept-only design with `n_rows` rows.
    pub fn intercept_only(n_rows: usize) -> Result<Self> {
        Self::from_row_major(vec![INTERCEPT.to_string()], n_rows, vec![1.0; n_rows])
    }

    /// Wraps row-major values (intercept column included).
    pub fn from_row_major(labels: Vec<String>, n_rows: usize, values: Vec<f64>) -> Result<Self> {
        let n_cols = labels.len();
        if values.len() != n_rows * n_cols {
            return Err(LogisticError::DimensionMismatch {
                what: "design values",
                expected: n_rows * n_cols,
                found: values.len(),
            });
        }
        if n_cols == 0 || n_rows < n_cols {
            return Err(LogisticError::TooFewRows {
                rows: n_rows,
                cols: n_cols,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LogisticError::NonFinite("design"));
        }
        if values.chunks_exact(n_cols).any(|row| row[0] != 1.0) {
            return Err(LogisticError::NonFinite("intercept column (must be all ones)"));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_cols)
    }
}

/// Coefficients of a fitted logistic model together with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    terms: Vec<String>,
    coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl FitResult {
    /// A fit with fixed coefficients, for models assembled by hand.
    pub fn from_coefficients<S: Into<String>>(terms: Vec<(S, f64)>) -> Self {
        let (terms, coefficients) = terms.into_iter().map(|(t, c)| (t.into(), c)).unzip();
        Self {
            terms,
            coefficients,
            converged: true,
            iterations: 0,
            final_gradient_norm: 0.0,
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t == term)
            .map(|j| self.coefficients[j])
    }

    /// Term-name to coefficient map.
    pub fn coefficient_map(&self) -> HashMap<&str, f64> {
        self.terms
            .iter()
            .map(String::as_str)
            .zip(self.coefficients.iter().copied())
            .collect()
    }

    /// Linear predictor for a row laid out in the same column order as the
    /// fitted design (intercept included).
    #[inline]
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefficients.len());
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    /// Predicted probability for a row given by term name. The intercept is
    /// implicit and need not be supplied.
    pub fn predict_prob(&self, row: &HashMap<&str, f64>) -> Result<f64> {
        let mut eta = 0.0;
        for (term, beta) in self.terms.iter().zip(&self.coefficients) {
            let x = if term == INTERCEPT {
                row.get(term.as_str()).copied().unwrap_or(1.0)
            } else {
                *row
                    .get(term.as_str())
                    .ok_or_else(|| LogisticError::MissingTerm(term.clone()))?
            };
            eta += x * beta;
        }
        Ok(expit(eta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence threshold on the Euclidean norm of the weighted score.
    pub grad_tol: f64,
    /// Any |coefficient| above this during iteration is reported as separation.
    pub separation_bound: f64,
    pub max_halvings: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-8,
            separation_bound: 30.0,
            max_halvings: 40,
        }
    }
}

/// Configurable weighted logistic solver.
#[derive(Debug, Clone, Default)]
pub struct LogisticFitter<'a> {
    options: LogisticOptions,
    offset: Option<&'a [f64]>,
    start: Option<&'a [f64]>,
}

impl<'a> LogisticFitter<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn options(mut self, options: LogisticOptions) -> Self {
        self.options = options;
        self
    }

    /// Fixed per-row addition to the linear predictor (coefficient 1).
    pub fn offset(mut self, offset: &'a [f64]) -> Self {
        self.offset = Some(offset);
        self
    }

    /// Starting coefficients; defaults to zero.
    pub fn start(mut self, start: &'a [f64]) -> Self {
        self.start = Some(start);
        self
    }

    pub fn fit(&self, x: &DesignMatrix, y: &[u8], w: &[f64]) -> Result<FitResult> {
        let n = x.n_rows();
        let p = x.n_cols();
        check_len("outcome", n, y.len())?;
        check_len("weights", n, w.len())?;
        if let Some(off) = self.offset {
            check_len("offset", n, off.len())?;
            if off.iter().any(|v| !v.is_finite()) {
                return Err(LogisticError::NonFinite("offset"));
            }
        }
        if let Some(start) = self.start {
            check_len("start", p, start.len())?;
        }

        let mut positive = 0usize;
        let mut seen = [false; 2];
        for (i, (&yi, &wi)) in y.iter().zip(w).enumerate() {
            if !wi.is_finite() {
                return Err(LogisticError::NonFinite("weights"));
            }
            if wi < 0.0 {
                return Err(LogisticError::NegativeWeight(i));
            }
            if yi > 1 {
                return Err(LogisticError::NonBinaryOutcome(i));
            }
            if wi > 0.0 {
                positive += 1;
                seen[yi as usize] = true;
            }
        }
        if positive < p {
            return Err(LogisticError::InsufficientSupport {
                positive,
                required: p,
            });
        }
        if !(seen[0] && seen[1]) {
            return Err(LogisticError::DegenerateOutcome);
        }

        let opts = &self.options;
        let mut beta = match self.start {
            Some(s) => s.to_vec(),
            None => vec![0.0; p],
        };
        let total_weight: f64 = w.iter().sum();
        let eval = |b: &[f64]| evaluate(x, y, w, self.offset, b);
        let loglik = |b: &[f64]| log_likelihood(x, y, w, self.offset, b);
        let mut state = eval(&beta);
        let mut iterations = 0;
        while iterations < opts.max_iter {
            if state.grad_norm() < opts.grad_tol {
                break;
            }
            iterations += 1;
            let delta = solve_spd(&state.info, &state.grad, p)?;
            let full: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
            let full_state = eval(&full);
            // The log-likelihood is concave along the step, so it cannot have
            // decreased by more than -(score at the candidate . step).
            let slope_at_end: f64 = full_state.grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
            let mut halvings = 0;
            let (candidate, cand_state) = if slope_at_end >= -1e-12 * (1.0 + total_weight) {
                (full, full_state)
            } else {
                let current = loglik(&beta);
                let slack = 1e-12 * (1.0 + current.abs());
                let mut cand = full;
                let mut cand_state = Some(full_state);
                loop {
                    if loglik(&cand) >= current - slack || halvings >= opts.max_halvings {
                        let st = cand_state.unwrap_or_else(|| eval(&cand));
                        break (cand, st);
                    }
                    halvings += 1;
                    let step = 0.5f64.powi(halvings as i32);
                    cand = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
                    cand_state = None;
                }
            };
            let max_abs = candidate.iter().fold(0.0f64, |m, b| m.max(b.abs()));
            if !(max_abs <= opts.separation_bound) {
                return Err(LogisticError::Separation {
                    iteration: iterations,
                    max_abs_coef: max_abs,
                });
            }
            let stalled = halvings >= opts.max_halvings;
            beta = candidate;
            state = cand_state;
            if stalled {
                break;
            }
        }
        let final_gradient_norm = state.grad_norm();
        Ok(FitResult {
            terms: x.labels().to_vec(),
            coefficients: beta,
            converged: final_gradient_norm < opts.grad_tol,
            iterations,
            final_gradient_norm,
        })
    }
}

/// Maximizes the weighted binomial log-likelihood with default options.
pub fn fit_weighted_logistic(x: &DesignMatrix, y: &[u8], w: &[f64]) -> Result<FitResult> {
    LogisticFitter::new().fit(x, y, w)
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LogisticError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

struct NewtonState {
    grad: Vec<f64>,
    /// Lower triangle of the weighted information matrix, row-major p x p.
    info: Vec<f64>,
}

impl NewtonState {
    fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Score and lower-triangle information at `beta`.
fn evaluate(x: &DesignMatrix, y: &[u8], w: &[f64], offset: Option<&[f64]>, beta: &[f64]) -> NewtonState {
    match offset {
        Some(off) => evaluate_with(x, y, w, off.iter().copied(), beta),
        None => evaluate_with(x, y, w, std::iter::repeat(0.0), beta),
    }
}

fn evaluate_with(x: &DesignMatrix, y: &[u8], w: &[f64], off: impl Iterator<Item = f64>, beta: &[f64]) -> NewtonState {
    // fixed widths let the per-row loops unroll; the arithmetic is identical
    match beta.len() {
        1 => evaluate_fixed::<1>(x, y, w, off, beta),
        2 => evaluate_fixed::<2>(x, y, w, off, beta),
        3 => evaluate_fixed::<3>(x, y, w, off, beta),
        4 => evaluate_fixed::<4>(x, y, w, off, beta),
        5 => evaluate_fixed::<5>(x, y, w, off, beta),
        6 => evaluate_fixed::<6>(x, y, w, off, beta),
        _ => evaluate_dyn(x, y, w, off, beta),
    }
}

/// Fitted probability, then the row's score and information weights.
#[inline(always)]
fn row_terms(eta: f64, yi: u8, wi: f64) -> (f64, f64) {
    let e = (-eta.abs()).exp();
    let pi = if eta >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (wi * (f64::from(yi) - pi), wi * pi * (1.0 - pi))
}

fn evaluate_fixed<const P: usize>(
    x: &DesignMatrix,
    y: &[u8],
    w: &[f64],
    off: impl Iterator<Item = f64>,
    beta: &[f64],
) -> NewtonState {
    let b: [f64; P] = beta.try_into().expect("coefficient count matches design");
    let mut grad = [0.0; P];
    let mut info = [[0.0; P]; P];
    for (((row, &yi), &wi), oi) in x.values.chunks_exact(P).zip(y).zip(w).zip(off) {
        if wi == 0.0 {
            continue;
        }
        let row: &[f64; P] = row.try_into().expect("row width");
        let mut eta = oi;
        for j in 0..P {
            eta += row[j] * b[j];
        }
        let (r, v) = row_terms(eta, yi, wi);
        for j in 0..P {
            grad[j] += r * row[j];
            let vj = v * row[j];
            for k in 0..=j {
                info[j][k] += vj * row[k];
            }
        }
    }
    NewtonState {
        grad: grad.to_vec(),
        info: info.iter().flatten().copied().collect(),
    }
}

fn evaluate_dyn(x: &DesignMatrix, y: &[u8], w: &[f64], off: impl Iterator<Item = f64>, beta: &[f64]) -> NewtonState {
    let p = beta.len();
    let mut grad = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    for (((row, &yi), &wi), oi) in x.rows().zip(y).zip(w).zip(off) {
        if wi == 0.0 {
            continue;
        }
        let eta = oi + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let (r, v) = row_terms(eta, yi, wi);
        for j in 0..p {
            grad[j] += r * row[j];
            let vj = v * row[j];
            for k in 0..=j {
                info[j * p + k] += vj * row[k];
            }
        }
    }
    NewtonState { grad, info }
}

/// Weighted binomial log-likelihood at `beta`.
fn log_likelihood(x: &DesignMatrix, y: &[u8], w: &[f64], offset: Option<&[f64]>, beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, ((row, &yi), &wi)) in x.rows().zip(y).zip(w).enumerate() {
        if wi == 0.0 {
            continue;
        }
        let mut eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        if let Some(off) = offset {
            eta += off[i];
        }
        ll += wi * (f64::from(yi) * eta - softplus(eta));
    }
    ll
}

/// Solves `A x = b` for symmetric positive-definite `A` given by its lower
/// triangle, via Cholesky.
fn solve_spd(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let max_diag = (0..p).map(|j| a[j * p + j]).fold(0.0f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(LogisticError::RankDeficient);
    }
    let eps = 1e-12 * max_diag;
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        if !(d > eps) {
            return Err(LogisticError::RankDeficient);
        }
        let d = d.sqrt();
        l[j * p + j] = d;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / d;
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * z[k];
        }
        z[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Ok(x)
}
