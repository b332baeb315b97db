//! Proximal alternating minimization (PAM) for iFCTN tensor completion.
//!
//! The model minimizes `1/2 ||X - iFCTN(G)||_F^2` subject to `X = O` on the
//! observed set. Each iteration
//!
//! 1. sweeps every factor `G[k,i]` (k ascending, then i ascending, all
//!    columns), solving a ridge problem anchored at the previous value with
//!    weight `rho`, always using the newest values of the other factors;
//! 2. replaces the unobserved entries of `X` by the proximal average
//!    `(iFCTN(G) + rho * X_old) / (1 + rho)` and pins the observed ones to `O`.
//!
//! Because every block update is an exact minimizer of its proximal
//! subproblem, the objective drops by at least `rho/2 * ||M_new - M_old||^2`
//! per iteration; [`SolverConfig::assert_decrease`] turns that into a runtime
//! check.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cherry::{mode_pairs, pair_product, reconstruct_with, CherryFactors, PairGrams, RankMatrix};
use crate::error::{Error, Result};
use crate::eval::Mask;
use crate::tensor::{strides, DenseTensor};

/// Absolute slack allowed in the sufficient-decrease check.
pub const DECREASE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Proximal weight.
    pub rho: f64,
    pub max_iter: usize,
    /// Stop once `||X_new - X_old||_F / ||X_old||_F < eps`.
    pub eps: f64,
    pub seed: u64,
    /// Upper bound of the uniform initial factor entries. `None` picks
    /// `(mean |O| over observed)^(1/N)` clamped to `[0.1, 1]`.
    pub init_scale: Option<f64>,
    /// Abort when an iteration violates the sufficient-decrease inequality.
    pub assert_decrease: bool,
    /// Worker threads for the column solves; 1 runs serially.
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 0.1,
            max_iter: 1000,
            eps: 1e-5,
            seed: 0,
            init_scale: None,
            assert_decrease: false,
            threads: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "init_scale must be a finite non-negative number, got {s}"
                )));
            }
        }
        if self.threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Observed data, its mask and the iFCTN ranks to fit.
#[derive(Debug, Clone)]
pub struct CompletionProblem {
    observed: DenseTensor,
    mask: Mask,
    ranks: RankMatrix,
}

impl CompletionProblem {
    pub fn new(observed: DenseTensor, mask: Mask, ranks: RankMatrix) -> Result<Self> {
        if observed.shape() != mask.shape() {
            return Err(Error::ShapeMismatch(format!(
                "observed {:?} vs mask {:?}",
                observed.shape(),
                mask.shape()
            )));
        }
        if observed.order() < 2 {
            return Err(Error::InvalidShape("completion needs a tensor of order >= 2".into()));
        }
        if ranks.order() != observed.order() {
            return Err(Error::InvalidRanks(format!(
                "rank matrix is {0}x{0} but the tensor has order {1}",
                ranks.order(),
                observed.order()
            )));
        }
        if mask.observed_count() == 0 {
            return Err(Error::InvalidArgument("mask has no observed entries".into()));
        }
        let bad = observed
            .values()
            .iter()
            .zip(mask.observed())
            .any(|(v, &o)| o && !v.is_finite());
        if bad {
            return Err(Error::NonFinite("observed data contains NaN or Inf".into()));
        }
        Ok(CompletionProblem {
            observed,
            mask,
            ranks,
        })
    }

    pub fn observed(&self) -> &DenseTensor {
        &self.observed
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn ranks(&self) -> &RankMatrix {
        &self.ranks
    }

    pub fn shape(&self) -> &[usize] {
        self.observed.shape()
    }

    /// `O` on the observed set, 0 elsewhere.
    pub fn zero_filled(&self) -> DenseTensor {
        let v = self
            .observed
            .values()
            .iter()
            .zip(self.mask.observed())
            .map(|(&v, &o)| if o { v } else { 0.0 })
            .collect();
        DenseTensor::new(self.shape().to_vec(), v).expect("same shape")
    }

    pub fn default_init_scale(&self) -> f64 {
        let (sum, count) = self
            .observed
            .values()
            .iter()
            .zip(self.mask.observed())
            .filter(|(_, &o)| o)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v.abs(), c + 1));
        let mean = sum / count as f64;
        mean.powf(1.0 / self.observed.order() as f64).clamp(0.1, 1.0)
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub step_norm: f64,
    pub rel_change: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DenseTensor,
    pub factors: CherryFactors,
    /// Objective at the initial point.
    pub initial_objective: f64,
    /// `F(M^(s))` after each iteration `s = 1..`.
    pub objective_trace: Vec<f64>,
    /// `||M^(s) - M^(s-1)||_F` (factors and X together).
    pub step_trace: Vec<f64>,
    pub rel_change_trace: Vec<f64>,
    /// Wall-clock seconds since the solve started, per iteration.
    pub seconds_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SolveReport {
    pub fn trace(&self) -> Vec<TraceRow> {
        (0..self.iterations)
            .map(|s| TraceRow {
                iter: s + 1,
                objective: self.objective_trace[s],
                step_norm: self.step_trace[s],
                rel_change: self.rel_change_trace[s],
                seconds: self.seconds_trace[s],
            })
            .collect()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.seconds_trace.last().copied().unwrap_or(0.0)
    }
}

/// Factors with entries drawn i.i.d. from `U[0, init_scale)` using a ChaCha8
/// stream seeded by `seed`, filled in storage order.
pub fn init_factors(
    shape: &[usize],
    ranks: &RankMatrix,
    seed: u64,
    init_scale: f64,
) -> Result<CherryFactors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CherryFactors::from_fn(shape, ranks, |_, _, _, _| rng.gen::<f64>() * init_scale)
}

fn check_pair(g: &CherryFactors, x: &DenseTensor) -> Result<()> {
    if g.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "factors model {:?} but X is {:?}",
            g.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// `1/2 ||X - iFCTN(G)||_F^2`.
pub fn objective(g: &CherryFactors, x: &DenseTensor) -> Result<f64> {
    check_pair(g, x)?;
    let recon = crate::cherry::ifctn_reconstruct(g);
    Ok(half_sq_dist(x, &recon))
}

fn half_sq_dist(a: &DenseTensor, b: &DenseTensor) -> f64 {
    0.5 * a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

/// Weighted moments feeding the normal equations of column `j` of `G[k,i]`.
///
/// With `T(idx) = prod of H over all pairs except {k,i}` evaluated at
/// `idx[k] = j`, returns `w[a] = sum T^2` and `v[a] = sum T * X` over all
/// indices with `idx[i] = a`.
fn column_moments(
    grams: &PairGrams,
    pairs: &[(usize, usize)],
    x: &DenseTensor,
    k: usize,
    i: usize,
    j: usize,
) -> (Vec<f64>, Vec<f64>) {
    let shape = x.shape();
    let st = strides(shape);
    let skip = Some((k.min(i), k.max(i)));
    let mut w = vec![0.0; shape[i]];
    let mut v = vec![0.0; shape[i]];
    let mut idx = vec![0; shape.len()];
    idx[k] = j;
    let xs = x.values();
    loop {
        let t = pair_product(grams, pairs, &idx, skip);
        let off: usize = idx.iter().zip(&st).map(|(a, b)| a * b).sum();
        w[idx[i]] += t * t;
        v[idx[i]] += t * xs[off];
        // odometer over every mode except k
        let mut carry = true;
        for (m, (slot, &d)) in idx.iter_mut().zip(shape).enumerate() {
            if m == k {
                continue;
            }
            *slot += 1;
            if *slot < d {
                carry = false;
                break;
            }
            *slot = 0;
        }
        if carry {
            break;
        }
    }
    (w, v)
}

/// Solves `(B diag(w) B^T + rho I) c = B v + rho c_old` with `B = G[i,k]`.
fn solve_column(partner: &crate::tensor::Matrix, w: &[f64], v: &[f64], old: &[f64], rho: f64) -> Result<Vec<f64>> {
    let r = partner.rows();
    let mut lhs = DMatrix::<f64>::zeros(r, r);
    let mut rhs = DVector::<f64>::from_iterator(r, old.iter().map(|c| rho * c));
    for (a, (&wa, &va)) in w.iter().zip(v).enumerate() {
        let col = partner.column(a);
        for q in 0..r {
            rhs[q] += va * col[q];
            let s = wa * col[q];
            for p in 0..r {
                lhs[(p, q)] += s * col[p];
            }
        }
    }
    for p in 0..r {
        lhs[(p, p)] += rho;
    }
    let chol = lhs.cholesky().ok_or_else(|| {
        Error::NonFinite("column system is not positive definite (non-finite data?)".into())
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn check_block(g: &CherryFactors, k: usize, i: usize) -> Result<()> {
    let n = g.order();
    if k >= n || i >= n {
        return Err(Error::ModeOutOfRange { mode: k.max(i), order: n });
    }
    if k == i {
        return Err(Error::InvalidArgument(format!("no cherry factor G[{0},{0}]", k + 1)));
    }
    Ok(())
}

/// New value of column `j` of `G[k,i]` with every other factor held fixed.
///
/// Minimizes `1/2 ||X_(k)^T - Z_k (G_(k))^T||^2 + rho/2 ||c - c_old||^2`
/// restricted to that column, using the pairwise-Gram form of `Z_k`.
pub fn update_factor_column(
    g: &CherryFactors,
    k: usize,
    i: usize,
    j: usize,
    x: &DenseTensor,
    rho: f64,
) -> Result<Vec<f64>> {
    check_pair(g, x)?;
    check_block(g, k, i)?;
    if j >= g.shape()[k] {
        return Err(Error::IndexOutOfRange {
            index: vec![j],
            shape: vec![g.shape()[k]],
        });
    }
    let grams = PairGrams::new(g);
    let pairs = mode_pairs(g.order());
    let (w, v) = column_moments(&grams, &pairs, x, k, i, j);
    solve_column(g.factor(i, k), &w, &v, g.factor(k, i).column(j), rho)
}

#[allow(clippy::too_many_arguments)]
fn update_block(
    g: &mut CherryFactors,
    grams: &mut PairGrams,
    pairs: &[(usize, usize)],
    x: &DenseTensor,
    k: usize,
    i: usize,
    rho: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<()> {
    let gr: &PairGrams = grams;
    let gg: &CherryFactors = g;
    let solve = |j: usize| -> Result<Vec<f64>> {
        let (w, v) = column_moments(gr, pairs, x, k, i, j);
        solve_column(gg.factor(i, k), &w, &v, gg.factor(k, i).column(j), rho)
    };
    let ik = g.shape()[k];
    let cols: Vec<Vec<f64>> = match pool {
        Some(p) => p.install(|| (0..ik).into_par_iter().map(solve).collect::<Result<_>>())?,
        None => (0..ik).map(solve).collect::<Result<_>>()?,
    };
    let f = g.factor_mut(k, i);
    for (j, c) in cols.into_iter().enumerate() {
        f.column_mut(j).copy_from_slice(&c);
    }
    grams.refresh(g, k, i);
    Ok(())
}

fn sweep_in_place(
    g: &mut CherryFactors,
    grams: &mut PairGrams,
    x: &DenseTensor,
    rho: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<()> {
    let n = g.order();
    let pairs = mode_pairs(n);
    for k in 0..n {
        for i in (0..n).filter(|&i| i != k) {
            update_block(g, grams, &pairs, x, k, i, rho, pool)?;
        }
    }
    Ok(())
}

/// One Gauss-Seidel pass over every factor block, serially.
pub fn sweep_factors(g: &CherryFactors, x: &DenseTensor, rho: f64) -> Result<CherryFactors> {
    check_pair(g, x)?;
    let mut out = g.clone();
    let mut grams = PairGrams::new(&out);
    sweep_in_place(&mut out, &mut grams, x, rho, None)?;
    Ok(out)
}

fn x_step(recon: &DenseTensor, x_old: &DenseTensor, problem: &CompletionProblem, rho: f64) -> DenseTensor {
    let vals = recon
        .values()
        .iter()
        .zip(x_old.values())
        .zip(problem.observed().values())
        .zip(problem.mask().observed())
        .map(|(((&t, &xo), &o), &seen)| if seen { o } else { (t + rho * xo) / (1.0 + rho) })
        .collect();
    DenseTensor::new(x_old.shape().to_vec(), vals).expect("same shape")
}

/// Proximal X update: `O` on the observed set, `(iFCTN(G) + rho X_old)/(1 + rho)`
/// elsewhere.
pub fn update_x(
    g: &CherryFactors,
    x_old: &DenseTensor,
    problem: &CompletionProblem,
    rho: f64,
) -> Result<DenseTensor> {
    check_pair(g, x_old)?;
    if x_old.shape() != problem.shape() {
        return Err(Error::ShapeMismatch(format!(
            "X {:?} vs problem {:?}",
            x_old.shape(),
            problem.shape()
        )));
    }
    Ok(x_step(&crate::cherry::ifctn_reconstruct(g), x_old, problem, rho))
}

/// Runs PAM from a seeded random start until the relative change of `X`
/// drops below `eps` or `max_iter` iterations have run.
pub fn pam_solve(problem: &CompletionProblem, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let scale = config
        .init_scale
        .unwrap_or_else(|| problem.default_init_scale());
    let g0 = init_factors(problem.shape(), problem.ranks(), config.seed, scale)?;
    pam_solve_from(problem, config, g0)
}

/// [`pam_solve`] starting from the given factors instead of a random draw.
pub fn pam_solve_from(
    problem: &CompletionProblem,
    config: &SolverConfig,
    initial: CherryFactors,
) -> Result<SolveReport> {
    config.validate()?;
    if initial.shape() != problem.shape() || initial.ranks() != problem.ranks() {
        return Err(Error::ShapeMismatch(
            "initial factors do not match the problem's shape and ranks".into(),
        ));
    }
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let start = Instant::now();
    let rho = config.rho;
    let mut g = initial;
    let mut grams = PairGrams::new(&g);
    let mut x = problem.zero_filled();
    let mut f_prev = half_sq_dist(&x, &reconstruct_with(&g, &grams));
    let initial_objective = f_prev;

    let mut report = SolveReport {
        x: x.clone(),
        factors: g.clone(),
        initial_objective,
        objective_trace: Vec::new(),
        step_trace: Vec::new(),
        rel_change_trace: Vec::new(),
        seconds_trace: Vec::new(),
        converged: false,
        iterations: 0,
    };

    for s in 1..=config.max_iter {
        let g_old = g.clone();
        sweep_in_place(&mut g, &mut grams, &x, rho, pool.as_ref())?;
        let recon = reconstruct_with(&g, &grams);
        let x_new = x_step(&recon, &x, problem, rho);
        let f_new = half_sq_dist(&x_new, &recon);

        let dx2 = x_new
            .values()
            .iter()
            .zip(x.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        let dg2 = g.squared_distance(&g_old);
        let x_norm = x.frobenius_norm();
        let rel = dx2.sqrt() / if x_norm == 0.0 { 1.0 } else { x_norm };

        if !f_new.is_finite() || !g.is_finite() || !x_new.is_finite() {
            return Err(Error::NonFinite(format!("iteration {s} produced NaN or Inf")));
        }
        if config.assert_decrease {
            let decrease = f_prev - f_new;
            let bound = 0.5 * rho * (dx2 + dg2);
            if decrease < bound - DECREASE_SLACK {
                return Err(Error::DecreaseViolation {
                    iteration: s,
                    decrease,
                    bound,
                });
            }
        }

        report.objective_trace.push(f_new);
        report.step_trace.push((dx2 + dg2).sqrt());
        report.rel_change_trace.push(rel);
        report.seconds_trace.push(start.elapsed().as_secs_f64());
        report.iterations = s;
        x = x_new;
        f_prev = f_new;
        if rel < config.eps {
            report.converged = true;
            break;
        }
    }
    report.x = x;
    report.factors = g;
    Ok(report)
}
