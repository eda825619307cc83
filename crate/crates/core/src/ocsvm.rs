//! One-class SVM with an RBF kernel, trained by pairwise (SMO-style)
//! coordinate descent on the dual
//!
//! ```text
//! min ½ αᵀKα   subject to   0 ≤ αᵢ ≤ 1/(νN),   Σ αᵢ = 1
//! ```
//!
//! Scores are `rho − Σ αᵢ k(svᵢ, x)`, so larger means more anomalous.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faac::ObservationMatrix;
use crate::scaling::AutoscaleParams;
use crate::stats;

pub const OCSVM_FORMAT_VERSION: u32 = 1;

/// Alphas within this distance of a bound count as being at the bound.
const BOUND_EPS: f64 = 1e-12;
/// Kernel rows kept in the solver cache.
const CACHE_ROWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    Fixed(f64),
    /// `1 / (2·median²)` of pairwise distances among the first
    /// `median_sample` scaled calibration rows.
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcsvmParams {
    pub nu: f64,
    pub gamma: GammaRule,
    pub tol: f64,
    /// Pair updates allowed; `None` means `10·N`.
    pub max_iter: Option<usize>,
    /// Calibration rows kept after stride subsampling.
    pub max_calibration: usize,
    pub median_sample: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        OcsvmParams {
            nu: 0.02,
            gamma: GammaRule::MedianHeuristic,
            tol: 1e-4,
            max_iter: None,
            max_calibration: 5000,
            median_sample: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub format_version: u32,
    pub scaling: AutoscaleParams,
    pub gamma: f64,
    pub nu: f64,
    pub rho: f64,
    /// Scaled calibration rows with positive alpha.
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// Rows the dual was solved on (after subsampling).
    pub calibration_size: usize,
    pub converged: bool,
    /// Maximal KKT violation when the solver stopped.
    pub kkt_violation: f64,
    pub iterations: usize,
}

/// Result of the dual solver on an explicit kernel.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// Gradient `Kα` at the solution.
    pub gradient: Vec<f64>,
    /// Objective after initialisation and after every pair update.
    pub objective_history: Vec<f64>,
    pub kkt_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DualSolution {
    pub fn objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history is never empty")
    }
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "kernel dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(rbf(x, y, gamma))
}

#[inline]
fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// Row access to a kernel matrix.
pub trait KernelSource: Sync {
    fn len(&self) -> usize;
    fn row(&self, i: usize) -> Arc<Vec<f64>>;
    fn diag(&self, i: usize) -> f64;
}

/// A precomputed dense kernel.
pub struct DenseKernel {
    rows: Vec<Arc<Vec<f64>>>,
}

impl DenseKernel {
    pub fn new(k: Vec<Vec<f64>>) -> Self {
        DenseKernel {
            rows: k.into_iter().map(Arc::new).collect(),
        }
    }
}

impl KernelSource for DenseKernel {
    fn len(&self) -> usize {
        self.rows.len()
    }
    fn row(&self, i: usize) -> Arc<Vec<f64>> {
        Arc::clone(&self.rows[i])
    }
    fn diag(&self, i: usize) -> f64 {
        self.rows[i][i]
    }
}

/// RBF kernel rows computed on demand with a bounded cache.
struct RbfKernel<'a> {
    points: &'a [Vec<f64>],
    gamma: f64,
    cache: std::sync::Mutex<(HashMap<usize, Arc<Vec<f64>>>, Vec<usize>)>,
}

impl<'a> RbfKernel<'a> {
    fn new(points: &'a [Vec<f64>], gamma: f64) -> Self {
        RbfKernel {
            points,
            gamma,
            cache: std::sync::Mutex::new((HashMap::new(), Vec::new())),
        }
    }
}

impl KernelSource for RbfKernel<'_> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn row(&self, i: usize) -> Arc<Vec<f64>> {
        if let Some(r) = self.cache.lock().unwrap().0.get(&i) {
            return Arc::clone(r);
        }
        let xi = &self.points[i];
        let row: Vec<f64> = self
            .points
            .par_iter()
            .with_min_len(256)
            .map(|xj| rbf(xi, xj, self.gamma))
            .collect();
        let row = Arc::new(row);
        let mut guard = self.cache.lock().unwrap();
        let (map, order) = &mut *guard;
        if map.len() >= CACHE_ROWS {
            // FIFO eviction.
            let old = order.remove(0);
            map.remove(&old);
        }
        map.insert(i, Arc::clone(&row));
        order.push(i);
        row
    }

    fn diag(&self, _i: usize) -> f64 {
        1.0
    }
}

/// Solves the one-class dual for upper bound `c` with maximal-violating-pair
/// selection. `c·N ≥ 1` is required for feasibility.
pub fn solve_dual(
    kernel: &dyn KernelSource,
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DualSolution> {
    let n = kernel.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty calibration set".into()));
    }
    if c * (n as f64) < 1.0 - 1e-12 {
        return Err(Error::Config(format!(
            "infeasible box: upper bound {c} times {n} points is below 1"
        )));
    }

    // Fill the first ⌊1/c⌋ alphas to the bound and put the remainder next.
    let mut alpha = vec![0.0; n];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        let v = c.min(left);
        *a = v;
        left -= v;
        if left < 1e-15 {
            left = 0.0;
        }
    }

    let mut grad = vec![0.0; n];
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            let row = kernel.row(i);
            for (g, k) in grad.iter_mut().zip(row.iter()) {
                *g += a * k;
            }
        }
    }
    let objective =
        |alpha: &[f64], grad: &[f64]| 0.5 * alpha.iter().zip(grad).map(|(a, g)| a * g).sum::<f64>();

    let mut history = vec![objective(&alpha, &grad)];
    let mut iterations = 0;
    let mut violation;
    loop {
        // i: may increase (α < c) with smallest gradient;
        // j: may decrease (α > 0) with largest gradient.
        let mut i_best = usize::MAX;
        let mut j_best = usize::MAX;
        for k in 0..n {
            if alpha[k] < c - BOUND_EPS && (i_best == usize::MAX || grad[k] < grad[i_best]) {
                i_best = k;
            }
            if alpha[k] > BOUND_EPS && (j_best == usize::MAX || grad[k] > grad[j_best]) {
                j_best = k;
            }
        }
        violation = if i_best == usize::MAX || j_best == usize::MAX {
            0.0
        } else {
            grad[j_best] - grad[i_best]
        };
        if violation <= tol || iterations >= max_iter {
            break;
        }
        let (i, j) = (i_best, j_best);
        let ki = kernel.row(i);
        let kj = kernel.row(j);
        let eta = (kernel.diag(i) + kernel.diag(j) - 2.0 * ki[j]).max(1e-12);
        let delta = (violation / eta).min(c - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        if alpha[j] < BOUND_EPS {
            alpha[j] = 0.0;
        }
        if c - alpha[i] < BOUND_EPS {
            alpha[i] = c;
        }
        for ((g, a), b) in grad.iter_mut().zip(ki.iter()).zip(kj.iter()) {
            *g += delta * (a - b);
        }
        iterations += 1;
        history.push(objective(&alpha, &grad));
    }

    let free: Vec<f64> = (0..n)
        .filter(|&k| alpha[k] > BOUND_EPS && alpha[k] < c - BOUND_EPS)
        .map(|k| grad[k])
        .collect();
    let rho = if !free.is_empty() {
        stats::mean(&free)
    } else {
        // ρ lies between the largest gradient at the upper bound and the
        // smallest gradient at zero.
        let lo = (0..n)
            .filter(|&k| alpha[k] >= c - BOUND_EPS)
            .map(|k| grad[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = (0..n)
            .filter(|&k| alpha[k] <= BOUND_EPS)
            .map(|k| grad[k])
            .fold(f64::INFINITY, f64::min);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        }
    };
    let converged = violation <= tol;
    Ok(DualSolution {
        alpha,
        rho,
        gradient: grad,
        objective_history: history,
        kkt_violation: violation,
        iterations,
        converged,
    })
}

/// Indices of a uniform stride subsample of `n` rows down to `max`.
pub fn stride_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let step = n as f64 / max as f64;
    (0..max).map(|i| (i as f64 * step) as usize).collect()
}

/// `1/(2·median²)` over pairwise distances of `points`; zero distances are
/// skipped when any non-zero distance exists.
pub fn median_heuristic(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(d2.sqrt());
        }
    }
    let nonzero: Vec<f64> = d.iter().copied().filter(|&v| v > 0.0).collect();
    if nonzero.is_empty() {
        return 1.0;
    }
    let med = stats::quantile(&nonzero, 0.5);
    1.0 / (2.0 * med * med)
}

pub fn fit_ocsvm(calibration: &ObservationMatrix, params: &OcsvmParams) -> Result<OcsvmModel> {
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(Error::Config(format!(
            "nu must lie in (0, 1], got {}",
            params.nu
        )));
    }
    if !(params.tol > 0.0) {
        return Err(Error::Config(format!(
            "tol must be positive, got {}",
            params.tol
        )));
    }
    if params.max_calibration < 1 || params.median_sample < 2 {
        return Err(Error::Config("subsample sizes are too small".into()));
    }
    let scaling = AutoscaleParams::fit(calibration)?;
    let idx = stride_indices(calibration.n_windows(), params.max_calibration);
    let points: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| scaling.scale_row(calibration.row(i)))
        .collect();
    let n = points.len();
    if params.nu * (n as f64) < 1.0 {
        return Err(Error::Config(format!(
            "infeasible box: nu·N = {} < 1",
            params.nu * n as f64
        )));
    }
    let gamma = match params.gamma {
        GammaRule::Fixed(g) if g > 0.0 => g,
        GammaRule::Fixed(g) => {
            return Err(Error::Config(format!("gamma must be positive, got {g}")))
        }
        GammaRule::MedianHeuristic => median_heuristic(&points[..n.min(params.median_sample)]),
    };
    let c = 1.0 / (params.nu * n as f64);
    let max_iter = params.max_iter.unwrap_or(10 * n);
    let kernel = RbfKernel::new(&points, gamma);
    let sol = solve_dual(&kernel, c, params.tol, max_iter)?;
    if !sol.converged {
        log::warn!(
            "OCSVM solver stopped after {} updates with KKT violation {:.3e} (tol {:.1e})",
            sol.iterations,
            sol.kkt_violation,
            params.tol
        );
    }
    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for (k, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(points[k].clone());
            alphas.push(a);
        }
    }
    Ok(OcsvmModel {
        format_version: OCSVM_FORMAT_VERSION,
        scaling,
        gamma,
        nu: params.nu,
        rho: sol.rho,
        support_vectors,
        alphas,
        calibration_size: n,
        converged: sol.converged,
        kkt_violation: sol.kkt_violation,
        iterations: sol.iterations,
    })
}

impl OcsvmModel {
    pub fn feature_names(&self) -> &[String] {
        &self.scaling.feature_names
    }

    /// Score of an already scaled row.
    pub fn score_scaled(&self, z: &[f64]) -> f64 {
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * rbf(sv, z, self.gamma))
            .sum();
        self.rho - s
    }

    pub fn score_row(&self, row: &[f64]) -> f64 {
        self.score_scaled(&self.scaling.scale_row(row))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: OcsvmModel =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("OCSVM model: {e}")))?;
        if m.format_version != OCSVM_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported OCSVM model version {}",
                m.format_version
            )));
        }
        let p = m.scaling.n_features();
        if m.alphas.len() != m.support_vectors.len()
            || m.support_vectors.iter().any(|s| s.len() != p)
        {
            return Err(Error::Config(
                "OCSVM model dimensions are inconsistent".into(),
            ));
        }
        Ok(m)
    }
}

pub fn score_ocsvm(model: &OcsvmModel, matrix: &ObservationMatrix) -> Result<Vec<f64>> {
    model.scaling.check_features(matrix.feature_names())?;
    Ok((0..matrix.n_windows())
        .into_par_iter()
        .map(|i| model.score_row(matrix.row(i)))
        .collect())
}
