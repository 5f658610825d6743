use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{evaluate, objective, GppomState, Hyperparams, ObjectiveValue};
use crate::error::{invalid, Error, Result};
use crate::kernels::KernelWidths;

/// Latent rows closer than this (in every pair) mark a collapsed fit.
pub const DEGENERATE_SPREAD: f64 = 1e-3;

/// Bounds on `[log beta, log gamma_d]` during hyperparameter steps.
const LOG_BETA_RANGE: (f64, f64) = (-4.6, 13.8);
const LOG_GAMMA_RANGE: (f64, f64) = (-4.6, 4.6);

/// Step rule for the latent block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Steepest descent with an adaptive initial step.
    GradientDescent,
    /// Limited-memory BFGS directions, unit initial step.
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub optimizer: Optimizer,
    pub lbfgs_memory: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop when one iteration changes the objective by less than this.
    pub tol: f64,
    /// One hyperparameter step per this many latent steps; 0 disables them.
    pub hyper_every: usize,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub latent_dim: usize,
    /// Latent rows start as `init_scale * N(0, 1)`.
    pub init_scale: f64,
    /// Largest change of any latent entry in one step; infinite disables the cap.
    pub max_step: f64,
    pub beta_init: f64,
    pub gamma_init: f64,
    pub gamma_theta: f64,
    /// HSIC reuses the model's (optimized) cause widths; otherwise it keeps
    /// the initial widths.
    pub tie_hsic_widths: bool,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Lbfgs,
            lbfgs_memory: 10,
            restarts: 5,
            max_iters: 500,
            tol: 1e-6,
            hyper_every: 0,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            latent_dim: 1,
            init_scale: 0.001,
            max_step: 0.02,
            beta_init: 1000.0,
            gamma_init: 1.0,
            gamma_theta: 1.0,
            tie_hsic_widths: true,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(invalid("latent dimension must be at least 1"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(invalid("Armijo constant must lie in (0, 1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("backtracking shrink factor must lie in (0, 1)"));
        }
        if !(self.max_step > 0.0) {
            return Err(invalid("max_step must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tolerance must be nonnegative"));
        }
        Ok(())
    }
}

/// How one restart ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RestartOutcome {
    Converged { objective: f64, iterations: usize, degenerate: bool },
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: GppomState,
    pub objective: ObjectiveValue,
    pub iterations: usize,
    /// Index of the restart that produced `state`.
    pub restart: usize,
    /// Set when every pair of latent rows is closer than [`DEGENERATE_SPREAD`].
    pub degenerate: bool,
    /// Objective after each accepted step of the selected restart, starting with the initial value.
    pub trace: Vec<f64>,
    pub restarts: Vec<RestartOutcome>,
}

/// Seed for restart `r` given a base seed.
fn restart_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn initial_state(x: &[f64], y: &[f64], opts: &FitOptions, seed: u64) -> Result<GppomState> {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = DMatrix::from_fn(n, opts.latent_dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        opts.init_scale * z
    });
    let mut hyper = Hyperparams::new(
        opts.beta_init,
        KernelWidths::uniform(1, opts.gamma_init)?,
        KernelWidths::uniform(opts.latent_dim, opts.gamma_theta)?,
    )?;
    if !opts.tie_hsic_widths {
        hyper = hyper.with_fixed_hsic_widths(KernelWidths::uniform(1, opts.gamma_init)?)?;
    }
    GppomState::new(
        DMatrix::from_column_slice(n, 1, x),
        DVector::from_column_slice(y),
        theta,
        hyper,
    )
}

fn clamp_log_params(p: &mut DVector<f64>) {
    p[0] = p[0].clamp(LOG_BETA_RANGE.0, LOG_BETA_RANGE.1);
    for v in p.iter_mut().skip(1) {
        *v = v.clamp(LOG_GAMMA_RANGE.0, LOG_GAMMA_RANGE.1);
    }
}

struct Run {
    state: GppomState,
    value: ObjectiveValue,
    iterations: usize,
    trace: Vec<f64>,
}

/// Backtracking search. `propose(t)` maps a step size to a candidate state
/// and its displacement from the current point; the candidate is accepted on
/// sufficient decrease `J' <= J + c g.d` measured against that displacement.
fn line_search<F>(
    current: f64,
    grad: &DVector<f64>,
    mut step: f64,
    opts: &FitOptions,
    lambda: f64,
    mut propose: F,
) -> Option<(GppomState, ObjectiveValue, f64)>
where
    F: FnMut(f64) -> Option<(GppomState, DVector<f64>)>,
{
    for _ in 0..opts.max_backtracks {
        if let Some((cand, displacement)) = propose(step) {
            let slope = grad.dot(&displacement);
            if slope < 0.0 {
                if let Ok(v) = objective(&cand, lambda) {
                    if v.total.is_finite() && v.total <= current + opts.armijo * slope {
                        return Some((cand, v, step));
                    }
                }
            }
        }
        step *= opts.shrink;
    }
    None
}

/// Limited-memory inverse-Hessian approximation for the latent block.
struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>,
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Self { memory, pairs: VecDeque::with_capacity(memory) }
    }

    fn reset(&mut self) {
        self.pairs.clear();
    }

    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let sy = s.dot(&y);
        // curvature condition; skip pairs that would break positive definiteness
        if sy <= 1e-12 * s.norm() * y.norm() {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            q *= s.dot(y) / y.dot(y);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        -q
    }
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn run_restart(x: &[f64], y: &[f64], lambda: f64, opts: &FitOptions, seed: u64) -> Result<Run> {
    let mut state = initial_state(x, y, opts, seed)?;
    let (n, q) = state.theta().shape();
    let mut eval = evaluate(&state, lambda)?;
    let mut trace = vec![eval.value.total];
    let mut gd_step = 1e-2;
    let mut hyper_step = 1e-2;
    let mut lbfgs = Lbfgs::new(opts.lbfgs_memory);
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let start = eval.value.total;
        let mut moved = false;

        let g = flatten(&eval.grad_theta);
        let theta0 = flatten(state.theta());
        let (dir, step, steepest) = match opts.optimizer {
            Optimizer::GradientDescent => (-&g, gd_step, true),
            Optimizer::Lbfgs => {
                let d = lbfgs.direction(&g);
                if g.dot(&d) < 0.0 {
                    (d, 1.0, false)
                } else {
                    lbfgs.reset();
                    (-&g, gd_step, true)
                }
            }
        };
        let longest = dir.amax();
        let step = if longest * step > opts.max_step { opts.max_step / longest } else { step };
        let accepted = line_search(start, &g, step, opts, lambda, |t| {
            let disp = &dir * t;
            let mut cand = state.clone();
            cand.set_theta(DMatrix::from_column_slice(n, q, (&theta0 + &disp).as_slice())).ok()?;
            Some((cand, disp))
        });
        match accepted {
            Some((cand, _, t)) => {
                state = cand;
                eval = evaluate(&state, lambda)?;
                trace.push(eval.value.total);
                if matches!(opts.optimizer, Optimizer::Lbfgs) {
                    lbfgs.push(flatten(state.theta()) - &theta0, flatten(&eval.grad_theta) - &g);
                }
                if steepest {
                    gd_step = t * 2.0;
                }
                moved = true;
            }
            None => lbfgs.reset(),
        }

        if opts.hyper_every > 0 && iterations % opts.hyper_every == 0 {
            let g = eval.grad_hyper.clone();
            let p0 = state.hyper().log_params();
            let accepted = line_search(eval.value.total, &g, hyper_step, opts, lambda, |t| {
                let mut p = &p0 - &g * t;
                clamp_log_params(&mut p);
                let hyper = state.hyper().with_log_params(&p).ok()?;
                let mut cand = state.clone();
                cand.set_hyper(hyper).ok()?;
                Some((cand, &p - &p0))
            });
            if let Some((cand, _, t)) = accepted {
                state = cand;
                eval = evaluate(&state, lambda)?;
                trace.push(eval.value.total);
                hyper_step = t * 2.0;
                // the latent curvature model refers to the old hyperparameters
                lbfgs.reset();
                moved = true;
            }
        }

        if !moved || (start - eval.value.total).abs() < opts.tol {
            break;
        }
    }

    Ok(Run { state, value: eval.value, iterations, trace })
}

/// Fits the latent parameters for the direction `x -> y`.
///
/// Runs `opts.restarts` independent block gradient descents and returns the
/// non-degenerate restart with the lowest objective.
pub fn fit(x: &[f64], y: &[f64], lambda: f64, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    if x.len() != y.len() {
        return Err(invalid(format!("x has {} values but y has {}", x.len(), y.len())));
    }
    if x.len() < 4 {
        return Err(invalid(format!("fit needs at least 4 observations, got {}", x.len())));
    }

    let runs: Vec<Result<Run>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_restart(x, y, lambda, opts, restart_seed(opts.seed, r)))
        .collect();

    let mut outcomes = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, Run)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                let degenerate = run.state.theta_spread() < DEGENERATE_SPREAD;
                outcomes.push(RestartOutcome::Converged {
                    objective: run.value.total,
                    iterations: run.iterations,
                    degenerate,
                });
                let better = best.as_ref().is_none_or(|(_, b)| run.value.total < b.value.total);
                if !degenerate && better {
                    best = Some((r, run));
                }
            }
            Err(e) => outcomes.push(RestartOutcome::Failed(e.to_string())),
        }
    }

    match best {
        Some((restart, run)) => Ok(FitResult {
            state: run.state,
            objective: run.value,
            iterations: run.iterations,
            restart,
            degenerate: false,
            trace: run.trace,
            restarts: outcomes,
        }),
        None => Err(Error::EstimationFailed(format!(
            "all {} restarts failed or collapsed: {:?}",
            opts.restarts, outcomes
        ))),
    }
}
