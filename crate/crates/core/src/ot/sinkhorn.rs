use ndarray::Array2;

use super::{log_sum_exp, CostMatrix, Histogram};
use crate::error::{Error, Result};

/// Scaling vectors outside this band trigger the log-domain path.
const SCALING_MIN: f64 = 1e-300;
const SCALING_MAX: f64 = 1e300;
/// `exp(-x)` underflows below `SCALING_MIN` for `x` above this.
const KERNEL_EXPONENT_LIMIT: f64 = 690.0;
/// Geometric decay of the regularization schedule in the log-domain solver.
const EPS_DECAY: f64 = 0.5;
/// Marginal tolerance used on the intermediate rungs of the schedule.
const WARM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkhornMode {
    /// Plain scaling, falling back to log-domain iterations when the scaling
    /// vectors or the Gibbs kernel leave the representable range.
    Auto,
    /// Plain scaling only; range violations are reported as errors.
    Scaling,
    /// Log-sum-exp iterations on the dual potentials.
    LogDomain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization strength.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once both marginal L1 violations fall below this.
    pub marginal_tol: f64,
    pub mode: SinkhornMode,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 1e-5,
            max_iter: 10_000,
            marginal_tol: 1e-6,
            mode: SinkhornMode::Auto,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        SinkhornConfig {
            epsilon,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(Error::Config(format!(
                "marginal_tol must be positive, got {}",
                self.marginal_tol
            )));
        }
        Ok(())
    }

    pub(crate) fn needs_log_domain(&self, cost: &CostMatrix) -> bool {
        match self.mode {
            SinkhornMode::LogDomain => true,
            SinkhornMode::Scaling => false,
            SinkhornMode::Auto => cost.max() / self.epsilon > KERNEL_EXPONENT_LIMIT,
        }
    }
}

/// Result of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Mass moved from source bin `i` to target bin `j`.
    pub plan: Array2<f64>,
    /// `<plan, C>`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the log-domain path produced the plan.
    pub log_domain: bool,
    /// `||P 1 - a||_1`.
    pub row_violation: f64,
    /// `||P^T 1 - b||_1`.
    pub col_violation: f64,
}

/// Entropically regularized transport between `a` (rows) and `b` (columns).
pub fn sinkhorn_distance(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    if a.len() != cost.nrows() || b.len() != cost.ncols() {
        return Err(Error::dim(format!(
            "histograms of length {} and {} against a {}x{} cost matrix",
            a.len(),
            b.len(),
            cost.nrows(),
            cost.ncols()
        )));
    }
    if !cfg.needs_log_domain(cost) {
        match scaling(a.as_slice(), b.as_slice(), cost.as_array(), cfg) {
            Ok(plan) => return Ok(plan),
            Err(Error::NumericalInstability(_)) if cfg.mode == SinkhornMode::Auto => {}
            Err(e) => return Err(e),
        }
    }
    Ok(log_domain(a.as_slice(), b.as_slice(), cost.as_array(), cfg))
}

fn in_range(x: f64) -> bool {
    x.is_finite() && (SCALING_MIN..=SCALING_MAX).contains(&x)
}

fn finish(plan: Array2<f64>, a: &[f64], b: &[f64], cost: &Array2<f64>) -> (f64, f64, f64) {
    let row: f64 = plan.rows().into_iter().zip(a).map(|(r, ai)| (r.sum() - ai).abs()).sum();
    let col: f64 = plan.columns().into_iter().zip(b).map(|(c, bj)| (c.sum() - bj).abs()).sum();
    let total = (&plan * cost).sum();
    (total, row, col)
}

fn scaling(a: &[f64], b: &[f64], cost: &Array2<f64>, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    let kernel = cost.mapv(|c| (-c / cfg.epsilon).exp());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        for i in 0..n {
            let kv: f64 = kernel.row(i).iter().zip(&v).map(|(k, vj)| k * vj).sum();
            u[i] = if a[i] == 0.0 { 0.0 } else { a[i] / kv };
            if a[i] > 0.0 && !in_range(u[i]) {
                return Err(Error::NumericalInstability("sinkhorn scaling"));
            }
        }
        let mut row_err = 0.0;
        for j in 0..m {
            let ktu: f64 = kernel.column(j).iter().zip(&u).map(|(k, ui)| k * ui).sum();
            v[j] = if b[j] == 0.0 { 0.0 } else { b[j] / ktu };
            if b[j] > 0.0 && !in_range(v[j]) {
                return Err(Error::NumericalInstability("sinkhorn scaling"));
            }
        }
        for i in 0..n {
            let kv: f64 = kernel.row(i).iter().zip(&v).map(|(k, vj)| k * vj).sum();
            row_err += (u[i] * kv - a[i]).abs();
        }
        if row_err < cfg.marginal_tol {
            converged = true;
            break;
        }
    }

    let plan = Array2::from_shape_fn((n, m), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    let (total, row_violation, col_violation) = finish(plan.clone(), a, b, cost);
    Ok(TransportPlan {
        plan,
        cost: total,
        iterations,
        converged: converged && col_violation < cfg.marginal_tol,
        log_domain: false,
        row_violation,
        col_violation,
    })
}

/// Regularization schedule ending exactly at `target`.
pub(crate) fn epsilon_schedule(cost_max: f64, target: f64) -> Vec<f64> {
    let mut eps = Vec::new();
    let mut e = cost_max.max(target);
    while e > target {
        eps.push(e);
        e *= EPS_DECAY;
    }
    eps.push(target);
    eps
}

/// `eps * log(x)`, with zero mass mapping to `-inf`.
pub(crate) fn eps_log(x: f64, eps: f64) -> f64 {
    if x > 0.0 {
        eps * x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `LSE_j((g_j - C_ij) / eps)` for row `i`.
pub(crate) fn row_lse(cost: &Array2<f64>, g: &[f64], i: usize, eps: f64) -> f64 {
    let row = cost.row(i);
    log_sum_exp(row.iter().zip(g).map(move |(c, gj)| (gj - c) / eps))
}

/// `LSE_i((f_i - C_ij) / eps)` for column `j`.
pub(crate) fn col_lse(cost: &Array2<f64>, f: &[f64], j: usize, eps: f64) -> f64 {
    let col = cost.column(j);
    log_sum_exp(col.into_iter().zip(f).map(move |(c, fi)| (fi - c) / eps))
}

/// `exp((f_i + g_j - C_ij) / eps)`, zero wherever a potential is `-inf`.
pub(crate) fn gibbs(cost: &Array2<f64>, f: &[f64], g: &[f64], eps: f64) -> Array2<f64> {
    Array2::from_shape_fn(cost.dim(), |(i, j)| {
        if f[i] == f64::NEG_INFINITY || g[j] == f64::NEG_INFINITY {
            0.0
        } else {
            ((f[i] + g[j] - cost[[i, j]]) / eps).exp()
        }
    })
}

/// Scaling factors outside this band are folded into the potentials.
pub(crate) const ABSORB_MIN: f64 = 1e-50;
pub(crate) const ABSORB_MAX: f64 = 1e50;

pub(crate) fn needs_absorb(x: f64) -> bool {
    x != 0.0 && !(x.is_finite() && (ABSORB_MIN..=ABSORB_MAX).contains(&x))
}

/// Log-stabilized Sinkhorn state: the plan is
/// `diag(u) K diag(v)` with `K_ij = exp((f_i + g_j - C_ij) / eps)`.
struct Stabilized<'a> {
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a Array2<f64>,
    eps: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    kernel: Array2<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Stabilized<'a> {
    fn new(a: &'a [f64], b: &'a [f64], cost: &'a Array2<f64>, eps: f64) -> Self {
        let (n, m) = cost.dim();
        Stabilized {
            a,
            b,
            cost,
            eps,
            f: vec![0.0; n],
            g: vec![0.0; m],
            kernel: Array2::zeros((n, m)),
            u: vec![1.0; n],
            v: vec![1.0; m],
        }
    }

    /// Folds the scalings into the potentials, runs one exact log-domain
    /// iteration and rebuilds the kernel.
    fn refresh(&mut self) {
        let eps = self.eps;
        for (f, u) in self.f.iter_mut().zip(&self.u) {
            if *f != f64::NEG_INFINITY && u.is_finite() && *u > 0.0 {
                *f += eps * u.ln();
            }
        }
        for (g, v) in self.g.iter_mut().zip(&self.v) {
            if *g != f64::NEG_INFINITY && v.is_finite() && *v > 0.0 {
                *g += eps * v.ln();
            }
        }
        for i in 0..self.f.len() {
            self.f[i] = eps_log(self.a[i], eps) - eps * row_lse(self.cost, &self.g, i, eps);
        }
        for j in 0..self.g.len() {
            self.g[j] = eps_log(self.b[j], eps) - eps * col_lse(self.cost, &self.f, j, eps);
        }
        self.kernel = gibbs(self.cost, &self.f, &self.g, eps);
        self.u.iter_mut().for_each(|u| *u = 1.0);
        self.v.iter_mut().for_each(|v| *v = 1.0);
    }

    fn set_eps(&mut self, eps: f64) {
        // Keep the current plan's scalings in the potentials before the
        // regularization changes.
        for (f, u) in self.f.iter_mut().zip(&self.u) {
            if *f != f64::NEG_INFINITY && u.is_finite() && *u > 0.0 {
                *f += self.eps * u.ln();
            }
        }
        for (g, v) in self.g.iter_mut().zip(&self.v) {
            if *g != f64::NEG_INFINITY && v.is_finite() && *v > 0.0 {
                *g += self.eps * v.ln();
            }
        }
        self.u.iter_mut().for_each(|u| *u = 1.0);
        self.v.iter_mut().for_each(|v| *v = 1.0);
        self.eps = eps;
        self.refresh();
    }

    /// Row and column L1 violations of the current plan.
    fn violations(&self) -> (f64, f64) {
        let kv = self.kernel.dot(&ndarray::ArrayView1::from(&self.v[..]));
        let ktu = self.kernel.t().dot(&ndarray::ArrayView1::from(&self.u[..]));
        let row = (0..self.a.len()).map(|i| (self.u[i] * kv[i] - self.a[i]).abs()).sum();
        let col = (0..self.b.len()).map(|j| (self.v[j] * ktu[j] - self.b[j]).abs()).sum();
        (row, col)
    }

    /// Plain scaling iterations until both violations drop below `tol`.
    fn iterate(&mut self, tol: f64, budget: usize) -> (usize, bool) {
        let (n, m) = self.cost.dim();
        let mut col_err = f64::INFINITY;
        for it in 0..budget {
            let kv = self.kernel.dot(&ndarray::ArrayView1::from(&self.v[..]));
            let row_err: f64 = (0..n).map(|i| (self.u[i] * kv[i] - self.a[i]).abs()).sum();
            if row_err < tol && col_err < tol {
                return (it, true);
            }
            let mut blown = false;
            for i in 0..n {
                self.u[i] = if self.a[i] == 0.0 { 0.0 } else { self.a[i] / kv[i] };
                blown |= needs_absorb(self.u[i]);
            }
            if blown {
                self.refresh();
                col_err = f64::INFINITY;
                continue;
            }
            let ktu = self.kernel.t().dot(&ndarray::ArrayView1::from(&self.u[..]));
            col_err = 0.0;
            for j in 0..m {
                self.v[j] = if self.b[j] == 0.0 { 0.0 } else { self.b[j] / ktu[j] };
                blown |= needs_absorb(self.v[j]);
                col_err += (self.v[j] * ktu[j] - self.b[j]).abs();
            }
            if blown {
                self.refresh();
                col_err = f64::INFINITY;
            }
        }
        (budget, false)
    }

    fn absorb(&mut self) {
        for (f, u) in self.f.iter_mut().zip(&self.u) {
            *f = if *u == 0.0 { f64::NEG_INFINITY } else if *f == f64::NEG_INFINITY { *f } else { *f + self.eps * u.ln() };
        }
        for (g, v) in self.g.iter_mut().zip(&self.v) {
            *g = if *v == 0.0 { f64::NEG_INFINITY } else if *g == f64::NEG_INFINITY { *g } else { *g + self.eps * v.ln() };
        }
        self.u.iter_mut().for_each(|u| *u = 1.0);
        self.v.iter_mut().for_each(|v| *v = 1.0);
        self.kernel = gibbs(self.cost, &self.f, &self.g, self.eps);
    }

    /// Newton iterations on the dual potentials. Returns
    /// `(steps, converged)`; stops early when a step fails to reduce the
    /// marginal error.
    fn newton(&mut self, tol: f64, max_steps: usize) -> (usize, bool) {
        self.absorb();
        let rows: Vec<usize> = (0..self.a.len()).filter(|&i| self.a[i] > 0.0).collect();
        let cols: Vec<usize> = (0..self.b.len()).filter(|&j| self.b[j] > 0.0).collect();
        if rows.is_empty() || cols.is_empty() {
            return (0, false);
        }
        // The dual is invariant under f + t, g - t; pin the last column.
        let dim = rows.len() + cols.len() - 1;
        let eps = self.eps;
        let mut err = self.marginal_error();
        for step in 0..max_steps {
            if err < tol {
                return (step, true);
            }
            let plan = &self.kernel;
            let row_mass: Vec<f64> = rows.iter().map(|&i| plan.row(i).sum()).collect();
            let col_mass: Vec<f64> = cols.iter().map(|&j| plan.column(j).sum()).collect();
            let mut hess = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            let mut grad = nalgebra::DVector::<f64>::zeros(dim);
            for (ri, &i) in rows.iter().enumerate() {
                hess[(ri, ri)] = row_mass[ri];
                grad[ri] = self.a[i] - row_mass[ri];
                for (cj, &j) in cols.iter().enumerate().take(cols.len() - 1) {
                    let p = plan[[i, j]];
                    hess[(ri, rows.len() + cj)] = p;
                    hess[(rows.len() + cj, ri)] = p;
                }
            }
            for (cj, &j) in cols.iter().enumerate().take(cols.len() - 1) {
                hess[(rows.len() + cj, rows.len() + cj)] = col_mass[cj];
                grad[rows.len() + cj] = self.b[j] - col_mass[cj];
            }
            let scale = hess.diagonal().max();
            let mut chol = hess.clone().cholesky();
            if chol.is_none() {
                for d in 0..dim {
                    hess[(d, d)] += 1e-12 * scale;
                }
                chol = hess.cholesky();
            }
            let Some(chol) = chol else {
                return (step, false);
            };
            let delta = chol.solve(&grad) * eps;

            let (f0, g0) = (self.f.clone(), self.g.clone());
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                for (ri, &i) in rows.iter().enumerate() {
                    self.f[i] = f0[i] + t * delta[ri];
                }
                for (cj, &j) in cols.iter().enumerate().take(cols.len() - 1) {
                    self.g[j] = g0[j] + t * delta[rows.len() + cj];
                }
                self.kernel = gibbs(self.cost, &self.f, &self.g, eps);
                let trial = self.marginal_error();
                if trial < err {
                    err = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                self.f = f0;
                self.g = g0;
                self.kernel = gibbs(self.cost, &self.f, &self.g, eps);
                return (step + 1, false);
            }
        }
        (max_steps, err < tol)
    }

    fn marginal_error(&self) -> f64 {
        let (r, c) = self.violations();
        r + c
    }

    fn plan(&self) -> Array2<f64> {
        let (n, m) = self.cost.dim();
        Array2::from_shape_fn((n, m), |(i, j)| self.u[i] * self.kernel[[i, j]] * self.v[j])
    }
}

/// Plain iterations per level before switching to Newton steps.
const SCALING_PER_LEVEL: usize = 5;
const NEWTON_STEPS: usize = 50;
/// Newton steps factor a dense system of this many unknowns at most.
const NEWTON_MAX_DIM: usize = 1024;
/// Accuracy demanded on intermediate levels when Newton steps are
/// available. It must sit well below the smallest mass the plan moves along
/// any link, or the next level inherits a structurally wrong plan.
const NEWTON_WARM_TOL: f64 = 1e-9;

/// Log-domain solve over a decreasing regularization schedule.
///
/// Each level starts with a few scaling iterations. For problems small
/// enough to factor the dual Hessian, Newton steps on the dual potentials
/// then finish the level to high accuracy; otherwise scaling iterations
/// continue with a share of the budget. Plain scaling needs on the order of
/// one over the smallest transported link mass iterations, which Newton
/// steps avoid.
fn log_domain(a: &[f64], b: &[f64], cost: &Array2<f64>, cfg: &SinkhornConfig) -> TransportPlan {
    let schedule = epsilon_schedule(cost.iter().cloned().fold(0.0, f64::max), cfg.epsilon);
    let last = schedule.len() - 1;
    let use_newton = a.len() + b.len() <= NEWTON_MAX_DIM;
    let warm_budget = (cfg.max_iter / (2 * schedule.len())).max(1);
    let mut state = Stabilized::new(a, b, cost, schedule[0]);
    state.refresh();
    let mut used = 0;
    let mut converged = false;
    for (k, &eps) in schedule.iter().enumerate() {
        if used >= cfg.max_iter {
            break;
        }
        if k > 0 {
            state.set_eps(eps);
        }
        let final_level = k == last;
        let tol = match (final_level, use_newton) {
            (true, _) => cfg.marginal_tol,
            (false, true) => NEWTON_WARM_TOL.min(cfg.marginal_tol),
            (false, false) => WARM_TOL.max(cfg.marginal_tol),
        };
        let level_budget = if final_level { cfg.max_iter - used } else { warm_budget.min(cfg.max_iter - used) };
        let mut level_used = 0;
        let (it, mut ok) = state.iterate(tol, SCALING_PER_LEVEL.min(level_budget));
        level_used += it;
        if !ok && use_newton && level_used < level_budget {
            let (steps, done) = state.newton(tol, NEWTON_STEPS.min(level_budget - level_used));
            level_used += steps;
            ok = done;
        }
        if !ok && level_used < level_budget {
            let (it, done) = state.iterate(tol, level_budget - level_used);
            level_used += it;
            ok = done;
        }
        used += level_used;
        converged = ok && final_level;
    }
    // If the budget ran out before the target level, move the last
    // potentials to the target before reading off the plan.
    if state.eps != cfg.epsilon {
        state.set_eps(cfg.epsilon);
    }
    let plan = state.plan();
    let (total, row_violation, col_violation) = finish(plan.clone(), a, b, cost);
    TransportPlan {
        plan,
        cost: total,
        iterations: used,
        converged: converged && row_violation < cfg.marginal_tol && col_violation < cfg.marginal_tol,
        log_domain: true,
        row_violation,
        col_violation,
    }
}
