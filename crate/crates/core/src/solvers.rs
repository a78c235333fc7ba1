//! BSGD-TV and the baselines it is compared against.
//!
//! All solvers share one step map, `x <- prox(x + 2 mu A^T r, PROX_TV_FACTOR * mu * lambda)`,
//! and differ in how the residual `r` is obtained:
//!
//! - **BSGD-TV** works on the `M x N` blocks of `A`. Each scheduled pair
//!   `(i, j)` computes `2 A[I_i, J_j]^T r[I_i]` and `A[I_i, J_j] x[J_j]` from
//!   the iteration-start snapshot; after a barrier the per-column-block
//!   contributions `z^j` are refreshed, `r = y - sum_j z^j` is reassembled,
//!   and the gradient pieces are summed. The residual used at step `k`
//!   therefore belongs to `x[k-1]`.
//! - **ISTA** applies the same map with the fresh residual `y - A x`.
//! - **GD** drops the proximal step.
//! - **Block ADMM-TV** is consensus ADMM over the row blocks, with conjugate
//!   gradient inner solves and the TV prox as the consensus update.
//!
//! Reductions run in a fixed index order, so traces do not depend on how many
//! workers execute the per-block products.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{assemble_residual_into, dot, norm2_sq, BlockOperator};
use crate::metrics;
use crate::tv::{tv_prox, tv_prox_warm, GradientField, PixelLayout, ProxSettings};

/// Scale between `mu * lambda` and the weight handed to [`tv_prox`].
///
/// The proximal step solves `argmin_t ||t - v||^2 + 2 w TV(t)` with
/// `w = PROX_TV_FACTOR * mu * lambda`.
pub const PROX_TV_FACTOR: f64 = 1.0;

/// Maximum number of step halvings when enforcing sufficient decrease.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Bsgd,
    Ista,
    Gd,
    Admm,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Bsgd, SolverKind::Ista, SolverKind::Gd, SolverKind::Admm];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Bsgd => "bsgd",
            SolverKind::Ista => "ista",
            SolverKind::Gd => "gd",
            SolverKind::Admm => "admm",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bsgd" | "bsgd-tv" => Ok(SolverKind::Bsgd),
            "ista" => Ok(SolverKind::Ista),
            "gd" => Ok(SolverKind::Gd),
            "admm" | "admm-tv" => Ok(SolverKind::Admm),
            other => Err(Error::InvalidInput(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Step length.
    pub mu: f64,
    /// TV weight.
    pub lambda: f64,
    /// Fraction of column blocks used per iteration.
    pub alpha: f64,
    /// Fraction of row blocks used per iteration.
    pub gamma: f64,
    /// Epoch budget.
    pub epochs: usize,
    pub seed: u64,
    pub prox: ProxSettings,
    /// Resume each proximal solve from the previous dual field.
    pub warm_start_prox: bool,
    /// Scale the BSGD prox weight by the fraction of block pairs processed
    /// in the iteration. Has no effect on full sweeps.
    pub coverage_scaled_prox: bool,
    /// Evaluate the sufficient-decrease condition every BSGD iteration.
    pub monitor_decrease: bool,
    /// Halve the step until the condition holds (implies monitoring).
    pub enforce_decrease: bool,
    /// ADMM penalty.
    pub rho: f64,
    /// Conjugate-gradient steps per ADMM subproblem.
    pub cg_iters: usize,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub workers: Option<usize>,
    /// Relative error above which a run is declared divergent.
    pub divergence_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 6e-4,
            lambda: 0.1,
            alpha: 1.0,
            gamma: 1.0,
            epochs: 200,
            seed: 1,
            prox: ProxSettings::default(),
            warm_start_prox: true,
            coverage_scaled_prox: true,
            monitor_decrease: true,
            enforce_decrease: false,
            rho: 1.0,
            cg_iters: 5,
            workers: None,
            divergence_threshold: 1e6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, op: &BlockOperator) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidInput(format!("step length must be positive, got {}", self.mu)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidWeight(self.lambda));
        }
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidInput(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        let p = op.partition();
        if selected_count(p.col_blocks(), self.alpha) == 0 || selected_count(p.row_blocks(), self.gamma) == 0 {
            return Err(Error::InvalidInput(format!(
                "alpha = {} and gamma = {} select no blocks of a {}x{} partition",
                self.alpha,
                self.gamma,
                p.row_blocks(),
                p.col_blocks()
            )));
        }
        self.prox.validate()?;
        if self.workers == Some(0) {
            return Err(Error::InvalidInput("worker count must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::InvalidInput("divergence threshold must be positive".into()));
        }
        Ok(())
    }
}

fn selected_count(blocks: usize, fraction: f64) -> usize {
    ((fraction * blocks as f64).round() as usize).min(blocks)
}

/// Operator, measurements, ground truth and image layout of one experiment.
#[derive(Debug, Clone)]
pub struct Problem {
    pub op: BlockOperator,
    pub y: Vec<f64>,
    pub x_true: Vec<f64>,
    pub layout: PixelLayout,
}

impl Problem {
    pub fn new(op: BlockOperator, y: Vec<f64>, x_true: Vec<f64>, layout: PixelLayout) -> Result<Self> {
        if y.len() != op.nrows() {
            return Err(Error::Shape(format!(
                "measurements have length {}, operator has {} rows",
                y.len(),
                op.nrows()
            )));
        }
        if x_true.len() != op.ncols() || layout.len() != op.ncols() {
            return Err(Error::Shape(format!(
                "operator has {} columns, ground truth {}, image {} pixels",
                op.ncols(),
                x_true.len(),
                layout.len()
            )));
        }
        Ok(Self { op, y, x_true, layout })
    }

    /// Same data with the operator split into `row_blocks x col_blocks`.
    pub fn with_blocks(&self, row_blocks: usize, col_blocks: usize) -> Result<Self> {
        Ok(Self {
            op: self.op.with_blocks(row_blocks, col_blocks)?,
            y: self.y.clone(),
            x_true: self.x_true.clone(),
            layout: self.layout.clone(),
        })
    }

    /// Reported objective `||y - A x||^2 + 2 lambda TV(x)`. Charges the
    /// operator one product.
    pub fn objective(&self, x: &[f64], lambda: f64) -> Result<f64> {
        metrics::objective_value(x, &self.op, &self.y, lambda, &self.layout)
    }

    pub fn relative_error(&self, x: &[f64]) -> Result<f64> {
        metrics::relative_error(x, &self.x_true)
    }
}

/// Driver-owned iterate and bookkeeping for BSGD-TV.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Vec<f64>,
    /// `z_cache[j]` holds `A[:, J_j] x[J_j]` as last computed, per row.
    pub z_cache: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    /// Gradient assembled in the last iteration (including the factor 2).
    pub g: Vec<f64>,
    /// Block pairs processed so far.
    pub pairs_processed: u64,
    /// Nonzeros touched by solver products (monitoring and sampling excluded).
    pub matvec_nnz: u64,
    /// Current step length; only differs from the configured one after
    /// enforced halvings.
    pub mu: f64,
    dual: GradientField,
    f_current: Option<f64>,
    rng: ChaCha8Rng,
    blocks: (usize, usize),
    nnz: usize,
}

impl SolverState {
    /// Cold start: `x = 0`, `z^j = 0`, hence `r = y`.
    pub fn new(problem: &Problem, cfg: &SolverConfig) -> Self {
        let op = &problem.op;
        let p = op.partition();
        Self {
            x: vec![0.0; op.ncols()],
            z_cache: vec![vec![0.0; op.nrows()]; p.col_blocks()],
            r: problem.y.clone(),
            g: vec![0.0; op.ncols()],
            pairs_processed: 0,
            matvec_nnz: 0,
            mu: cfg.mu,
            dual: GradientField::zeros(problem.layout.height(), problem.layout.width()),
            f_current: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            blocks: (p.row_blocks(), p.col_blocks()),
            nnz: op.nnz(),
        }
    }

    /// Normalised iteration count: pairs processed over `M * N`.
    pub fn epoch(&self) -> f64 {
        self.pairs_processed as f64 / (self.blocks.0 * self.blocks.1) as f64
    }

    pub fn matvec_units(&self) -> f64 {
        if self.nnz == 0 {
            0.0
        } else {
            self.matvec_nnz as f64 / self.nnz as f64
        }
    }
}

/// The block pairs processed in one iteration.
///
/// With `alpha = gamma = 1` this is a random permutation of all `M x N` pairs
/// (one full sweep). Otherwise `round(gamma M)` row blocks and `round(alpha N)`
/// column blocks are drawn without replacement and their product is returned
/// in random order.
pub fn schedule_pairs<R: rand::Rng + ?Sized>(
    row_blocks: usize,
    col_blocks: usize,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = if alpha >= 1.0 && gamma >= 1.0 {
        (0..row_blocks).flat_map(|i| (0..col_blocks).map(move |j| (i, j))).collect()
    } else {
        let rows = index::sample(rng, row_blocks, selected_count(row_blocks, gamma).max(1)).into_vec();
        let cols = index::sample(rng, col_blocks, selected_count(col_blocks, alpha).max(1)).into_vec();
        rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).collect()
    };
    pairs.shuffle(rng);
    pairs
}

/// Sufficient-decrease test
/// `f(x+) < f(x) + (x+ - x)^T grad_prev + ||x+ - x||^2 / (2 mu)`, where
/// `grad_prev` is the gradient of `f` at the previous iterate.
pub fn sufficient_decrease_holds(
    f_next: f64,
    f_curr: f64,
    x_next: &[f64],
    x_curr: &[f64],
    grad_prev: &[f64],
    mu: f64,
) -> bool {
    let mut linear = 0.0;
    let mut step_sq = 0.0;
    for ((a, b), g) in x_next.iter().zip(x_curr).zip(grad_prev) {
        let d = a - b;
        linear += d * g;
        step_sq += d * d;
    }
    f_next < f_curr + linear + step_sq / (2.0 * mu)
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    pub pairs: usize,
    /// Outcome of the sufficient-decrease test, when it was evaluated.
    pub decrease_holds: Option<bool>,
    pub halvings: usize,
}

fn check_conforming(state: &SolverState, problem: &Problem) -> Result<()> {
    let op = &problem.op;
    let p = op.partition();
    if state.x.len() != op.ncols()
        || state.g.len() != op.ncols()
        || state.r.len() != op.nrows()
        || state.z_cache.len() != p.col_blocks()
        || state.z_cache.iter().any(|z| z.len() != op.nrows())
        || state.blocks != (p.row_blocks(), p.col_blocks())
    {
        return Err(Error::Shape("solver state does not conform to the operator".into()));
    }
    Ok(())
}

fn prox_step(
    v: &[f64],
    weight: f64,
    layout: &PixelLayout,
    settings: &ProxSettings,
    dual: Option<&mut GradientField>,
) -> Result<Vec<f64>> {
    if weight == 0.0 {
        return Ok(v.to_vec());
    }
    let img = layout.to_grid(v)?;
    let out = match dual {
        Some(dual) => tv_prox_warm(&img, weight, settings, dual)?.image,
        None => tv_prox(&img, weight, settings)?,
    };
    layout.from_grid(&out)
}

fn residual_norm_sq_uncharged(op: &BlockOperator, y: &[f64], x: &[f64]) -> Result<f64> {
    let ax = op.apply_uncharged(x)?;
    Ok(metrics::data_fidelity(y, &ax))
}

/// One outer BSGD-TV iteration, updating `state` in place.
pub fn bsgd_tv_iteration(state: &mut SolverState, problem: &Problem, cfg: &SolverConfig) -> Result<IterationReport> {
    check_conforming(state, problem)?;
    let op = &problem.op;
    let part = op.partition();
    let (m, n) = state.blocks;
    let pairs = schedule_pairs(m, n, cfg.alpha, cfg.gamma, &mut state.rng);

    let before = op.matvec_nnz();
    let x_snapshot = &state.x;
    let r_snapshot = &state.r;
    let products: Vec<((usize, usize), Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<_> {
            let rows = part.row_range(i);
            let cols = part.col_range(j);
            let mut ghat = op.block_matvec_transpose(i, j, &r_snapshot[rows])?;
            ghat.iter_mut().for_each(|v| *v *= 2.0);
            let z = op.block_matvec(i, j, &x_snapshot[cols])?;
            Ok(((i, j), ghat, z))
        })
        .collect::<Result<_>>()?;
    state.matvec_nnz += op.matvec_nnz() - before;

    // Barrier passed: fixed-order reduction.
    let mut order: Vec<usize> = (0..products.len()).collect();
    order.sort_by_key(|&k| (products[k].0 .1, products[k].0 .0));
    for &k in &order {
        let ((i, j), _, ref z) = products[k];
        state.z_cache[j][part.row_range(i)].copy_from_slice(z);
    }
    assemble_residual_into(&problem.y, &state.z_cache, &mut state.r)?;
    state.g.iter_mut().for_each(|v| *v = 0.0);
    for &k in &order {
        let ((_, j), ref ghat, _) = products[k];
        for (g, h) in state.g[part.col_range(j)].iter_mut().zip(ghat) {
            *g += h;
        }
    }

    let monitor = cfg.monitor_decrease || cfg.enforce_decrease;
    let f_curr = if monitor {
        match state.f_current {
            Some(f) => Some(f),
            None => Some(residual_norm_sq_uncharged(op, &problem.y, &state.x)?),
        }
    } else {
        None
    };
    let grad_prev: Vec<f64> = if monitor { state.g.iter().map(|v| -v).collect() } else { Vec::new() };

    let coverage = if cfg.coverage_scaled_prox {
        pairs.len() as f64 / (m * n) as f64
    } else {
        1.0
    };
    let mut halvings = 0;
    let (x_next, holds) = loop {
        let mu = state.mu;
        let stepped: Vec<f64> = state.x.iter().zip(&state.g).map(|(x, g)| x + mu * g).collect();
        let weight = PROX_TV_FACTOR * mu * cfg.lambda * coverage;
        let mut trial_dual = state.dual.clone();
        let candidate = prox_step(
            &stepped,
            weight,
            &problem.layout,
            &cfg.prox,
            cfg.warm_start_prox.then_some(&mut trial_dual),
        )?;
        let Some(f_curr) = f_curr else {
            state.dual = trial_dual;
            break (candidate, None);
        };
        let f_next = residual_norm_sq_uncharged(op, &problem.y, &candidate)?;
        let ok = sufficient_decrease_holds(f_next, f_curr, &candidate, &state.x, &grad_prev, mu);
        if ok || !cfg.enforce_decrease || halvings >= MAX_HALVINGS {
            state.dual = trial_dual;
            state.f_current = Some(f_next);
            break (candidate, Some(ok));
        }
        state.mu *= 0.5;
        halvings += 1;
    };
    state.x = x_next;
    state.pairs_processed += pairs.len() as u64;
    Ok(IterationReport {
        pairs: pairs.len(),
        decrease_holds: holds,
        halvings,
    })
}

fn fresh_gradient_step(x: &[f64], op: &BlockOperator, y: &[f64], mu: f64) -> Result<Vec<f64>> {
    let ax = op.apply(x)?;
    let r: Vec<f64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
    let atr = op.apply_transpose(&r)?;
    Ok(x.iter().zip(&atr).map(|(x, g)| x + 2.0 * mu * g).collect())
}

/// `x+ = prox(x + 2 mu A^T (y - A x), mu lambda)` with whole-matrix products.
pub fn ista_iteration(
    x: &[f64],
    op: &BlockOperator,
    y: &[f64],
    mu: f64,
    lambda: f64,
    prox: &ProxSettings,
    layout: &PixelLayout,
) -> Result<Vec<f64>> {
    let stepped = fresh_gradient_step(x, op, y, mu)?;
    prox_step(&stepped, PROX_TV_FACTOR * mu * lambda, layout, prox, None)
}

fn ista_iteration_warm(
    x: &[f64],
    problem: &Problem,
    cfg: &SolverConfig,
    dual: &mut GradientField,
) -> Result<Vec<f64>> {
    let stepped = fresh_gradient_step(x, &problem.op, &problem.y, cfg.mu)?;
    prox_step(
        &stepped,
        PROX_TV_FACTOR * cfg.mu * cfg.lambda,
        &problem.layout,
        &cfg.prox,
        cfg.warm_start_prox.then_some(dual),
    )
}

/// `x+ = x + 2 mu A^T (y - A x)`.
pub fn gd_iteration(x: &[f64], op: &BlockOperator, y: &[f64], mu: f64) -> Result<Vec<f64>> {
    fresh_gradient_step(x, op, y, mu)
}

/// Consensus ADMM state: one local copy per row block, scaled duals, and the
/// consensus image.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub locals: Vec<Vec<f64>>,
    pub duals: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    /// `2 A[I_i, :]^T y[I_i]`, computed once.
    rhs: Vec<Vec<f64>>,
    prox_dual: GradientField,
}

impl AdmmState {
    /// Zero start; computing the fixed right-hand sides charges one product.
    pub fn new(problem: &Problem) -> Result<Self> {
        let op = &problem.op;
        let p = op.partition();
        let rhs = (0..p.row_blocks())
            .map(|i| {
                let mut v = row_block_adjoint(op, i, &problem.y[p.row_range(i)])?;
                v.iter_mut().for_each(|e| *e *= 2.0);
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            locals: vec![vec![0.0; op.ncols()]; p.row_blocks()],
            duals: vec![vec![0.0; op.ncols()]; p.row_blocks()],
            z: vec![0.0; op.ncols()],
            rhs,
            prox_dual: GradientField::zeros(problem.layout.height(), problem.layout.width()),
        })
    }
}

/// `A[I_i, :] x`, assembled from the blocks of row block `i`.
fn row_block_forward(op: &BlockOperator, i: usize, x: &[f64]) -> Result<Vec<f64>> {
    let p = op.partition();
    let mut out = vec![0.0; p.row_range(i).len()];
    let mut part = vec![0.0; out.len()];
    for j in 0..p.col_blocks() {
        op.block_matvec_into(i, j, &x[p.col_range(j)], &mut part)?;
        for (o, v) in out.iter_mut().zip(&part) {
            *o += v;
        }
    }
    Ok(out)
}

/// `A[I_i, :]^T r_i`.
fn row_block_adjoint(op: &BlockOperator, i: usize, r_i: &[f64]) -> Result<Vec<f64>> {
    let p = op.partition();
    let mut out = vec![0.0; op.ncols()];
    for j in 0..p.col_blocks() {
        op.block_matvec_transpose_into(i, j, r_i, &mut out[p.col_range(j)])?;
    }
    Ok(out)
}

/// Solves `(2 A_i^T A_i + rho I) x = b` by `iters` conjugate-gradient steps
/// starting from `x`.
fn cg_subproblem(op: &BlockOperator, i: usize, rho: f64, b: &[f64], x: &mut [f64], iters: usize) -> Result<()> {
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let av = row_block_forward(op, i, v)?;
        let mut out = row_block_adjoint(op, i, &av)?;
        for (o, vv) in out.iter_mut().zip(v) {
            *o = 2.0 * *o + rho * vv;
        }
        Ok(out)
    };
    let kx = apply(x)?;
    let mut r: Vec<f64> = b.iter().zip(&kx).map(|(b, k)| b - k).collect();
    let mut p = r.clone();
    let mut rs = norm2_sq(&r);
    for _ in 0..iters {
        if rs == 0.0 {
            break;
        }
        let kp = apply(&p)?;
        let curvature = dot(&p, &kp);
        if curvature <= 0.0 {
            break;
        }
        let step = rs / curvature;
        for ((xv, pv), (rv, kv)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&kp)) {
            *xv += step * pv;
            *rv -= step * kv;
        }
        let rs_new = norm2_sq(&r);
        let beta = rs_new / rs;
        for (pv, rv) in p.iter_mut().zip(&r) {
            *pv = rv + beta * *pv;
        }
        rs = rs_new;
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidPenalty(rho));
    }
    Ok(())
}

/// One consensus ADMM iteration for `||y - A x||^2 + lambda' TV(x)` split
/// over row blocks:
///
/// - per row block `i` (independent): `x_i = argmin ||y_i - A_i x||^2 +
///   rho/2 ||x - z + u_i||^2`, by `cg_iters` CG steps,
/// - `z = prox(mean_i(x_i + u_i))`,
/// - `u_i += x_i - z`.
///
/// The regularizer matches the one the proximal-gradient solvers reach at
/// their fixed point, so all solvers target the same minimizer.
pub fn block_admm_tv_iteration(
    state: &mut AdmmState,
    problem: &Problem,
    rho: f64,
    lambda: f64,
    cg_iters: usize,
    prox: &ProxSettings,
    warm_start: bool,
) -> Result<()> {
    check_rho(rho)?;
    let op = &problem.op;
    let m = op.partition().row_blocks();
    if state.locals.len() != m || state.z.len() != op.ncols() {
        return Err(Error::Shape("ADMM state does not conform to the operator".into()));
    }
    let z = &state.z;
    let rhs = &state.rhs;
    let updated: Vec<Vec<f64>> = state
        .locals
        .par_iter()
        .zip(state.duals.par_iter())
        .enumerate()
        .map(|(i, (x_i, u_i))| -> Result<Vec<f64>> {
            let b: Vec<f64> = rhs[i]
                .iter()
                .zip(z.iter().zip(u_i))
                .map(|(r, (zv, uv))| r + rho * (zv - uv))
                .collect();
            let mut x = x_i.clone();
            cg_subproblem(op, i, rho, &b, &mut x, cg_iters)?;
            Ok(x)
        })
        .collect::<Result<_>>()?;
    state.locals = updated;

    let mut v = vec![0.0; op.ncols()];
    for (x_i, u_i) in state.locals.iter().zip(&state.duals) {
        for ((vv, xv), uv) in v.iter_mut().zip(x_i).zip(u_i) {
            *vv += xv + uv;
        }
    }
    v.iter_mut().for_each(|e| *e /= m as f64);
    // argmin PROX_TV_FACTOR lambda TV(z) + (m rho / 2) ||z - v||^2
    let weight = PROX_TV_FACTOR * lambda / (m as f64 * rho);
    state.z = prox_step(
        &v,
        weight,
        &problem.layout,
        prox,
        warm_start.then_some(&mut state.prox_dual),
    )?;

    for (x_i, u_i) in state.locals.iter().zip(state.duals.iter_mut()) {
        for ((uv, xv), zv) in u_i.iter_mut().zip(x_i).zip(&state.z) {
            *uv += xv - zv;
        }
    }
    Ok(())
}

/// One row of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub epoch: f64,
    pub relative_error: f64,
    pub objective: f64,
    pub matvec_units: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub solver: SolverKind,
    pub samples: Vec<TraceSample>,
    /// Sufficient-decrease outcome of every BSGD iteration that evaluated it.
    pub decrease_log: Vec<bool>,
    /// Iterate after the last completed iteration.
    pub final_iterate: Vec<f64>,
}

pub const CSV_HEADER: &str = "epoch,relative_error,objective,matvec_units";

impl ConvergenceTrace {
    pub fn last(&self) -> Option<&TraceSample> {
        self.samples.last()
    }

    /// First sampled cost at which the relative error drops to `threshold`.
    pub fn matvec_units_to_reach(&self, threshold: f64) -> Option<f64> {
        self.samples
            .iter()
            .find(|s| s.relative_error <= threshold)
            .map(|s| s.matvec_units)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                s.epoch, s.relative_error, s.objective, s.matvec_units
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Parses the CSV produced by [`ConvergenceTrace::write_csv`].
    pub fn samples_from_csv(text: &str) -> Result<Vec<TraceSample>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Parse("missing trace header".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f = l
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{l}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if f.len() != 4 {
                    return Err(Error::Parse(format!("expected 4 fields in `{l}`")));
                }
                Ok(TraceSample {
                    epoch: f[0],
                    relative_error: f[1],
                    objective: f[2],
                    matvec_units: f[3],
                })
            })
            .collect()
    }
}

enum Engine {
    Bsgd(SolverState),
    Ista { x: Vec<f64>, dual: GradientField },
    Gd { x: Vec<f64> },
    Admm(AdmmState),
}

impl Engine {
    fn iterate(&self) -> &[f64] {
        match self {
            Engine::Bsgd(s) => &s.x,
            Engine::Ista { x, .. } | Engine::Gd { x } => x,
            Engine::Admm(s) => &s.z,
        }
    }
}

struct Driver<'a> {
    problem: &'a Problem,
    cfg: &'a SolverConfig,
    trace: ConvergenceTrace,
    epoch: f64,
    nnz_used: u64,
}

impl Driver<'_> {
    fn units(&self) -> f64 {
        let nnz = self.problem.op.nnz();
        if nnz == 0 {
            0.0
        } else {
            self.nnz_used as f64 / nnz as f64
        }
    }

    fn sample(&mut self, x: &[f64]) -> Result<()> {
        let objective = self.problem.objective(x, self.cfg.lambda)?;
        let relative_error = self.problem.relative_error(x)?;
        self.trace.samples.push(TraceSample {
            epoch: self.epoch,
            relative_error,
            objective,
            matvec_units: self.units(),
        });
        Ok(())
    }

    fn diverged(&self, x: &[f64]) -> Result<bool> {
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(true);
        }
        Ok(self.problem.relative_error(x)? > self.cfg.divergence_threshold)
    }
}

/// Runs `kind` for `cfg.epochs` epochs, sampling every `sample_every` epochs
/// (and at the start and end).
///
/// Reported `matvec_units` count solver work only; products spent on
/// sampling or monitoring are excluded. A non-finite iterate or a relative
/// error above `cfg.divergence_threshold` aborts with [`Error::Divergence`]
/// carrying the samples taken so far.
pub fn run_solver(kind: SolverKind, problem: &Problem, cfg: &SolverConfig, sample_every: usize) -> Result<ConvergenceTrace> {
    cfg.validate(&problem.op)?;
    if kind == SolverKind::Admm {
        check_rho(cfg.rho)?;
    }
    match cfg.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(kind, problem, cfg, sample_every.max(1)))
        }
        None => run_inner(kind, problem, cfg, sample_every.max(1)),
    }
}

fn run_inner(kind: SolverKind, problem: &Problem, cfg: &SolverConfig, sample_every: usize) -> Result<ConvergenceTrace> {
    let op = &problem.op;
    let mut driver = Driver {
        problem,
        cfg,
        trace: ConvergenceTrace {
            solver: kind,
            samples: Vec::new(),
            decrease_log: Vec::new(),
            final_iterate: Vec::new(),
        },
        epoch: 0.0,
        nnz_used: 0,
    };
    let before = op.matvec_nnz();
    let mut engine = match kind {
        SolverKind::Bsgd => Engine::Bsgd(SolverState::new(problem, cfg)),
        SolverKind::Ista => Engine::Ista {
            x: vec![0.0; op.ncols()],
            dual: GradientField::zeros(problem.layout.height(), problem.layout.width()),
        },
        SolverKind::Gd => Engine::Gd { x: vec![0.0; op.ncols()] },
        SolverKind::Admm => Engine::Admm(AdmmState::new(problem)?),
    };
    driver.nnz_used += op.matvec_nnz() - before;
    driver.sample(engine.iterate())?;

    let budget = cfg.epochs as f64;
    let mut next_sample = sample_every as f64;
    while driver.epoch < budget {
        let before = op.matvec_nnz();
        match &mut engine {
            Engine::Bsgd(state) => {
                let report = bsgd_tv_iteration(state, problem, cfg)?;
                if let Some(ok) = report.decrease_holds {
                    driver.trace.decrease_log.push(ok);
                }
                driver.epoch = state.epoch();
            }
            Engine::Ista { x, dual } => {
                *x = ista_iteration_warm(x, problem, cfg, dual)?;
                driver.epoch += 1.0;
            }
            Engine::Gd { x } => {
                *x = gd_iteration(x, op, &problem.y, cfg.mu)?;
                driver.epoch += 1.0;
            }
            Engine::Admm(state) => {
                block_admm_tv_iteration(
                    state,
                    problem,
                    cfg.rho,
                    cfg.lambda,
                    cfg.cg_iters,
                    &cfg.prox,
                    cfg.warm_start_prox,
                )?;
                driver.epoch += 1.0;
            }
        }
        driver.nnz_used += op.matvec_nnz() - before;

        if driver.diverged(engine.iterate())? {
            let epoch = driver.epoch;
            driver.trace.final_iterate = engine.iterate().to_vec();
            return Err(Error::Divergence {
                epoch,
                trace: Box::new(driver.trace),
            });
        }
        if driver.epoch >= next_sample || driver.epoch >= budget {
            driver.sample(engine.iterate())?;
            while next_sample <= driver.epoch {
                next_sample += sample_every as f64;
            }
        }
    }
    driver.trace.final_iterate = engine.iterate().to_vec();
    Ok(driver.trace)
}
