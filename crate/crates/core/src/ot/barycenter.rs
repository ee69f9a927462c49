use ndarray::Array2;

use super::sinkhorn::{col_lse, epsilon_schedule, gibbs, needs_absorb, row_lse};
use super::{CostMatrix, Histogram, SinkhornConfig, SIMPLEX_TOL};
use crate::error::{Error, Result};

const WARM_TOL: f64 = 1e-3;

/// Convex weights, one per input histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterWeights(Vec<f64>);

impl BarycenterWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::dim("barycenter needs at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("barycenter weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config(format!("barycenter weights sum to {total}, expected 1")));
        }
        Ok(BarycenterWeights(weights))
    }

    pub fn uniform(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::dim("barycenter needs at least one weight"));
        }
        Ok(BarycenterWeights(vec![1.0 / count as f64; count]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Barycenter {
    pub histogram: Histogram,
    pub converged: bool,
    pub iterations: usize,
    /// Largest L1 violation of an input marginal at the returned iterate.
    pub marginal_violation: f64,
}

/// Entropic Wasserstein barycenter by iterative Bregman projections.
///
/// Each input `b_s` gets its own plan `P_s` with the barycenter on the rows
/// and `b_s` on the columns. Every sweep projects each plan onto its column
/// constraint, then replaces the shared row marginal by the weighted
/// geometric mean of the current row marginals and projects onto it.
pub fn wasserstein_barycenter(
    hs: &[Histogram],
    weights: &BarycenterWeights,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<Barycenter> {
    cfg.validate()?;
    if hs.is_empty() {
        return Err(Error::dim("barycenter needs at least one histogram"));
    }
    if hs.len() != weights.len() {
        return Err(Error::dim(format!("{} histograms but {} weights", hs.len(), weights.len())));
    }
    if cost.nrows() != cost.ncols() {
        return Err(Error::dim("barycenter cost matrix must be square"));
    }
    let n = cost.nrows();
    if let Some(bad) = hs.iter().find(|h| h.len() != n) {
        return Err(Error::dim(format!("histogram of length {} against {n} bins", bad.len())));
    }
    if !cfg.needs_log_domain(cost) {
        match scaling(hs, weights.as_slice(), cost.as_array(), cfg) {
            Ok(b) => return Ok(b),
            Err(Error::NumericalInstability(_)) if cfg.mode == super::SinkhornMode::Auto => {}
            Err(e) => return Err(e),
        }
    }
    Ok(log_domain(hs, weights.as_slice(), cost.as_array(), cfg))
}

fn scaling(hs: &[Histogram], w: &[f64], cost: &Array2<f64>, cfg: &SinkhornConfig) -> Result<Barycenter> {
    let n = cost.nrows();
    let kernel = cost.mapv(|c| (-c / cfg.epsilon).exp());
    let s_count = hs.len();
    let mut u = vec![vec![1.0; n]; s_count];
    let mut v = vec![vec![1.0; n]; s_count];
    let mut row = vec![vec![0.0; n]; s_count];
    let mut bary = vec![1.0 / n as f64; n];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let check = |x: f64| x.is_finite() && (1e-300..=1e300).contains(&x);

    for it in 1..=cfg.max_iter {
        iterations = it;
        for s in 0..s_count {
            let b = hs[s].as_slice();
            for j in 0..n {
                let ktu: f64 = kernel.column(j).iter().zip(&u[s]).map(|(k, ui)| k * ui).sum();
                v[s][j] = if b[j] == 0.0 { 0.0 } else { b[j] / ktu };
                if b[j] > 0.0 && !check(v[s][j]) {
                    return Err(Error::NumericalInstability("barycenter scaling"));
                }
            }
            for i in 0..n {
                let kv: f64 = kernel.row(i).iter().zip(&v[s]).map(|(k, vj)| k * vj).sum();
                row[s][i] = u[s][i] * kv;
            }
        }
        for i in 0..n {
            let log_a: f64 = (0..s_count).map(|s| w[s] * row[s][i].ln()).sum();
            bary[i] = log_a.exp();
            for s in 0..s_count {
                u[s][i] = if bary[i] == 0.0 { 0.0 } else { u[s][i] * bary[i] / row[s][i] };
                if bary[i] > 0.0 && !check(u[s][i]) {
                    return Err(Error::NumericalInstability("barycenter scaling"));
                }
            }
        }
        violation = (0..s_count)
            .map(|s| {
                let b = hs[s].as_slice();
                (0..n)
                    .map(|j| {
                        let ktu: f64 = kernel.column(j).iter().zip(&u[s]).map(|(k, ui)| k * ui).sum();
                        (v[s][j] * ktu - b[j]).abs()
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        if violation < cfg.marginal_tol {
            break;
        }
    }

    Ok(Barycenter {
        histogram: Histogram::from_positive_mass(bary),
        converged: violation < cfg.marginal_tol,
        iterations,
        marginal_violation: violation,
    })
}

/// One sweep at regularization `eps` over potentials `f[s]` (barycenter
/// side) and `g[s]` (input side). Returns the log barycenter.
fn log_sweep(
    hs: &[Histogram],
    w: &[f64],
    cost: &Array2<f64>,
    eps: f64,
    f: &mut [Vec<f64>],
    g: &mut [Vec<f64>],
    log_rows: &mut [Vec<f64>],
) -> Vec<f64> {
    let n = cost.nrows();
    for s in 0..hs.len() {
        let b = hs[s].as_slice();
        for j in 0..n {
            g[s][j] = if b[j] > 0.0 {
                eps * b[j].ln() - eps * col_lse(cost, &f[s], j, eps)
            } else {
                f64::NEG_INFINITY
            };
        }
        for i in 0..n {
            log_rows[s][i] = f[s][i] / eps + row_lse(cost, &g[s], i, eps);
        }
    }
    let log_bary: Vec<f64> = (0..n)
        .map(|i| {
            // Zero-weight inputs must not drag a bin to -inf.
            (0..hs.len())
                .filter(|&s| w[s] > 0.0)
                .map(|s| w[s] * log_rows[s][i])
                .sum()
        })
        .collect();
    for s in 0..hs.len() {
        for i in 0..n {
            if log_bary[i] == f64::NEG_INFINITY {
                f[s][i] = f64::NEG_INFINITY;
            } else {
                f[s][i] += eps * (log_bary[i] - log_rows[s][i]);
            }
        }
    }
    log_bary
}

/// Log-stabilized Bregman state: plan `s` is `diag(u[s]) K[s] diag(v[s])`
/// with `K[s]_ij = exp((f[s]_i + g[s]_j - C_ij) / eps)`.
struct Stabilized<'a> {
    hs: &'a [Histogram],
    w: &'a [f64],
    cost: &'a Array2<f64>,
    eps: f64,
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    kernels: Vec<Array2<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    log_rows: Vec<Vec<f64>>,
}

impl<'a> Stabilized<'a> {
    fn new(hs: &'a [Histogram], w: &'a [f64], cost: &'a Array2<f64>, eps: f64) -> Self {
        let n = cost.nrows();
        let s_count = hs.len();
        let mut state = Stabilized {
            hs,
            w,
            cost,
            eps,
            f: vec![vec![0.0; n]; s_count],
            g: vec![vec![0.0; n]; s_count],
            kernels: Vec::new(),
            u: vec![vec![1.0; n]; s_count],
            v: vec![vec![1.0; n]; s_count],
            log_rows: vec![vec![0.0; n]; s_count],
        };
        state.refresh();
        state
    }

    fn fold_scalings(&mut self) {
        let eps = self.eps;
        for s in 0..self.hs.len() {
            for (f, u) in self.f[s].iter_mut().zip(&self.u[s]) {
                if *f != f64::NEG_INFINITY && u.is_finite() && *u > 0.0 {
                    *f += eps * u.ln();
                }
            }
            for (g, v) in self.g[s].iter_mut().zip(&self.v[s]) {
                if *g != f64::NEG_INFINITY && v.is_finite() && *v > 0.0 {
                    *g += eps * v.ln();
                }
            }
            self.u[s].iter_mut().for_each(|u| *u = 1.0);
            self.v[s].iter_mut().for_each(|v| *v = 1.0);
        }
    }

    /// Folds scalings into potentials, runs one exact log-domain sweep and
    /// rebuilds the kernels.
    fn refresh(&mut self) {
        self.fold_scalings();
        log_sweep(self.hs, self.w, self.cost, self.eps, &mut self.f, &mut self.g, &mut self.log_rows);
        self.kernels = (0..self.hs.len())
            .map(|s| gibbs(self.cost, &self.f[s], &self.g[s], self.eps))
            .collect();
    }

    fn set_eps(&mut self, eps: f64) {
        self.fold_scalings();
        self.eps = eps;
        self.refresh();
    }

    /// One Bregman sweep. Returns the largest input-marginal violation of
    /// the plans as they stood before the sweep, the new shared row
    /// marginal, and whether the state had to be re-stabilized (which
    /// invalidates that marginal).
    fn sweep(&mut self) -> (f64, Vec<f64>, bool) {
        let n = self.cost.nrows();
        let s_count = self.hs.len();
        let mut violation: f64 = 0.0;
        let mut blown = false;
        let mut rows = vec![vec![0.0; n]; s_count];
        for s in 0..s_count {
            let b = self.hs[s].as_slice();
            let ktu = self.kernels[s].t().dot(&ndarray::ArrayView1::from(&self.u[s][..]));
            let mut err = 0.0;
            for j in 0..n {
                err += (self.v[s][j] * ktu[j] - b[j]).abs();
                self.v[s][j] = if b[j] == 0.0 { 0.0 } else { b[j] / ktu[j] };
                blown |= needs_absorb(self.v[s][j]);
            }
            violation = violation.max(err);
            let kv = self.kernels[s].dot(&ndarray::ArrayView1::from(&self.v[s][..]));
            for i in 0..n {
                rows[s][i] = self.u[s][i] * kv[i];
            }
        }
        let mut bary = vec![0.0; n];
        for i in 0..n {
            let log_a: f64 = (0..s_count)
                .filter(|&s| self.w[s] > 0.0)
                .map(|s| self.w[s] * rows[s][i].ln())
                .sum();
            bary[i] = log_a.exp();
            for s in 0..s_count {
                self.u[s][i] = if bary[i] == 0.0 || rows[s][i] == 0.0 {
                    0.0
                } else {
                    self.u[s][i] * bary[i] / rows[s][i]
                };
                blown |= needs_absorb(self.u[s][i]);
            }
        }
        let refreshed = blown || bary.iter().any(|x| !x.is_finite());
        if refreshed {
            self.refresh();
        }
        (violation, bary, refreshed)
    }
}

fn log_domain(hs: &[Histogram], w: &[f64], cost: &Array2<f64>, cfg: &SinkhornConfig) -> Barycenter {
    let schedule = epsilon_schedule(cost.iter().cloned().fold(0.0, f64::max), cfg.epsilon);
    let last = schedule.len() - 1;
    let warm_budget = (cfg.max_iter / (2 * schedule.len())).max(1);
    let mut state = Stabilized::new(hs, w, cost, schedule[0]);

    let mut used = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged = false;
    let mut previous: Option<Vec<f64>> = None;
    for (k, &eps) in schedule.iter().enumerate() {
        if used >= cfg.max_iter {
            break;
        }
        if k > 0 {
            state.set_eps(eps);
            previous = None;
        }
        let final_level = k == last;
        let tol = if final_level { cfg.marginal_tol } else { WARM_TOL.max(cfg.marginal_tol) };
        let budget = if final_level { cfg.max_iter - used } else { warm_budget.min(cfg.max_iter - used) };
        for _ in 0..budget {
            used += 1;
            let (violation, bary, refreshed) = state.sweep();
            // The violation belongs to the plans produced by the previous
            // sweep, whose shared row marginal is `previous`.
            if let Some(prev) = previous.take() {
                if final_level && best.as_ref().is_none_or(|(v, _)| violation < *v) {
                    best = Some((violation, prev));
                }
                if violation < tol {
                    converged = final_level;
                    previous = Some(bary);
                    break;
                }
            }
            previous = if refreshed { None } else { Some(bary) };
        }
    }
    let (violation, bary) = match best {
        Some(b) => b,
        None => (f64::INFINITY, previous.unwrap_or_else(|| vec![1.0; cost.nrows()])),
    };
    Barycenter {
        histogram: Histogram::from_positive_mass(bary),
        converged,
        iterations: used,
        marginal_violation: violation,
    }
}
