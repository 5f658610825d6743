//! Gaussian process partially observable model (GPPOM).
//!
//! The effect `y` is modelled as a GP over the pair `(x, theta)` where `x` is
//! the observed cause and `theta` is a per-observation latent mechanism
//! parameter. The covariance is `K_X ∘ K_theta + beta^{-1} I`. Estimation
//! minimizes the negative log marginal likelihood plus `lambda * log HSIC(X, Theta)`
//! so that the recovered latent stays independent of the cause.

mod fit;
mod linalg;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernels::{self, double_center, GramSource, KernelWidths};

pub use fit::{fit, FitOptions, FitResult, Optimizer, RestartOutcome, DEGENERATE_SPREAD};
use linalg::Cholesky;

/// HSIC values at or below this make `log HSIC` unusable.
pub const DEGENERATE_HSIC: f64 = 1e-300;

/// Output dimension of the effect. The effect is always a single column.
const OUTPUT_DIM: f64 = 1.0;

/// Noise precision and kernel widths.
///
/// `beta` and the cause widths are stored as logs so that gradient steps keep
/// them positive. The latent widths are held fixed: the scale of `theta` is
/// itself free, so a latent width would be redundant.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    log_beta: f64,
    log_widths_x: Vec<f64>,
    widths_theta: KernelWidths,
    hsic_widths: Option<KernelWidths>,
}

impl Hyperparams {
    pub fn new(beta: f64, widths_x: KernelWidths, widths_theta: KernelWidths) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(invalid(format!("beta must be positive and finite, got {beta}")));
        }
        Ok(Self {
            log_beta: beta.ln(),
            log_widths_x: widths_x.as_slice().iter().map(|g| g.ln()).collect(),
            widths_theta,
            hsic_widths: None,
        })
    }

    /// Measures HSIC with a fixed cause kernel of these widths instead of the
    /// model's cause kernel. The cause widths then only enter the likelihood.
    pub fn with_fixed_hsic_widths(mut self, widths: KernelWidths) -> Result<Self> {
        if widths.dim() != self.log_widths_x.len() {
            return Err(invalid("HSIC widths must match the cause dimension"));
        }
        self.hsic_widths = Some(widths);
        Ok(self)
    }

    pub fn hsic_widths(&self) -> Option<&KernelWidths> {
        self.hsic_widths.as_ref()
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn widths_x(&self) -> KernelWidths {
        KernelWidths::new(self.log_widths_x.iter().map(|g| g.exp()).collect())
            .expect("exp of a finite log width is positive")
    }

    pub fn widths_theta(&self) -> &KernelWidths {
        &self.widths_theta
    }

    /// `[log beta, log gamma_1, ..., log gamma_Dx]`.
    pub fn log_params(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(1 + self.log_widths_x.len());
        v.push(self.log_beta);
        v.extend_from_slice(&self.log_widths_x);
        DVector::from_vec(v)
    }

    pub fn with_log_params(&self, p: &DVector<f64>) -> Result<Self> {
        if p.len() != 1 + self.log_widths_x.len() {
            return Err(invalid(format!(
                "expected {} log hyperparameters, got {}",
                1 + self.log_widths_x.len(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite log hyperparameter".into()));
        }
        Ok(Self {
            log_beta: p[0],
            log_widths_x: p.iter().skip(1).copied().collect(),
            widths_theta: self.widths_theta.clone(),
            hsic_widths: self.hsic_widths.clone(),
        })
    }
}

/// Latent matrix, hyperparameters and data for one direction of fit.
///
/// `K_X` and `K_theta` are cached and rebuilt whenever `theta` or the
/// hyperparameters change.
#[derive(Debug, Clone)]
pub struct GppomState {
    x: DMatrix<f64>,
    y: DVector<f64>,
    theta: DMatrix<f64>,
    hyper: Hyperparams,
    kx: DMatrix<f64>,
    ktheta: DMatrix<f64>,
    /// Cause Gram used inside HSIC when it is decoupled from the model kernel.
    kx_hsic: Option<DMatrix<f64>>,
}

fn hsic_gram(x: &DMatrix<f64>, hyper: &Hyperparams) -> Result<Option<DMatrix<f64>>> {
    hyper
        .hsic_widths
        .as_ref()
        .map(|w| Ok(kernels::rbf_gram_tagged(x, w, GramSource::Cause)?.into_matrix()))
        .transpose()
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite entries in {what}")))
    }
}

impl GppomState {
    /// `x` is N x D_x, `y` has length N, `theta` is N x q.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        theta: DMatrix<f64>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(invalid("GPPOM state needs at least one observation"));
        }
        if y.len() != n || theta.nrows() != n {
            return Err(invalid(format!(
                "row mismatch: x has {n}, y has {}, theta has {}",
                y.len(),
                theta.nrows()
            )));
        }
        if theta.ncols() == 0 {
            return Err(invalid("latent dimension must be at least 1"));
        }
        if hyper.log_widths_x.len() != x.ncols() {
            return Err(invalid(format!(
                "x has {} columns but {} cause widths were given",
                x.ncols(),
                hyper.log_widths_x.len()
            )));
        }
        if hyper.widths_theta.dim() != theta.ncols() {
            return Err(invalid(format!(
                "theta has {} columns but {} latent widths were given",
                theta.ncols(),
                hyper.widths_theta.dim()
            )));
        }
        check_finite(&x, "x")?;
        check_finite(&theta, "theta")?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite entries in y".into()));
        }
        let kx = kernels::rbf_gram_tagged(&x, &hyper.widths_x(), GramSource::Cause)?.into_matrix();
        let ktheta =
            kernels::rbf_gram_tagged(&theta, &hyper.widths_theta, GramSource::Latent)?.into_matrix();
        let kx_hsic = hsic_gram(&x, &hyper)?;
        Ok(Self { x, y, theta, hyper, kx, ktheta, kx_hsic })
    }

    /// Single cause column and default widths of 1 for both kernels.
    pub fn from_columns(x: &[f64], y: &[f64], theta: &[f64], beta: f64) -> Result<Self> {
        let hyper = Hyperparams::new(beta, KernelWidths::uniform(1, 1.0)?, KernelWidths::uniform(1, 1.0)?)?;
        Self::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DVector::from_column_slice(y),
            DMatrix::from_column_slice(theta.len(), 1, theta),
            hyper,
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn kx(&self) -> &DMatrix<f64> {
        &self.kx
    }

    /// Cause Gram entering HSIC.
    pub fn kx_hsic(&self) -> &DMatrix<f64> {
        self.kx_hsic.as_ref().unwrap_or(&self.kx)
    }

    pub fn ktheta(&self) -> &DMatrix<f64> {
        &self.ktheta
    }

    pub fn set_theta(&mut self, theta: DMatrix<f64>) -> Result<()> {
        if theta.shape() != self.theta.shape() {
            return Err(invalid(format!(
                "theta shape {:?} does not match {:?}",
                theta.shape(),
                self.theta.shape()
            )));
        }
        check_finite(&theta, "theta")?;
        self.ktheta = kernels::rbf_gram_tagged(&theta, &self.hyper.widths_theta, GramSource::Latent)?
            .into_matrix();
        self.theta = theta;
        Ok(())
    }

    pub fn set_hyper(&mut self, hyper: Hyperparams) -> Result<()> {
        if hyper.log_widths_x.len() != self.x.ncols() || hyper.widths_theta.dim() != self.theta.ncols() {
            return Err(invalid("hyperparameter dimensions do not match the state"));
        }
        self.kx = kernels::rbf_gram_tagged(&self.x, &hyper.widths_x(), GramSource::Cause)?.into_matrix();
        if hyper.hsic_widths != self.hyper.hsic_widths {
            self.kx_hsic = hsic_gram(&self.x, &hyper)?;
        }
        if hyper.widths_theta != self.hyper.widths_theta {
            self.ktheta = kernels::rbf_gram_tagged(&self.theta, &hyper.widths_theta, GramSource::Latent)?
                .into_matrix();
        }
        self.hyper = hyper;
        Ok(())
    }

    /// Largest absolute pairwise difference between latent rows (max over coordinates).
    pub fn theta_spread(&self) -> f64 {
        self.theta
            .column_iter()
            .map(|c| c.max() - c.min())
            .fold(0.0, f64::max)
    }
}

/// `K_X ∘ K_theta + beta^{-1} I`.
pub fn covariance(state: &GppomState) -> DMatrix<f64> {
    let mut k = state.kx.component_mul(&state.ktheta);
    let ridge = 1.0 / state.hyper.beta();
    for i in 0..k.nrows() {
        k[(i, i)] += ridge;
    }
    k
}

/// Decomposition of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    /// Negative log marginal likelihood.
    pub nll: f64,
    /// `lambda * log hsic_raw` (0 when lambda is 0).
    pub hsic_log_term: f64,
    pub hsic_raw: f64,
}

struct LikelihoodParts {
    chol: Cholesky,
    alpha: DVector<f64>,
    nll: f64,
}

fn likelihood_parts(state: &GppomState) -> Result<LikelihoodParts> {
    let n = state.n() as f64;
    let chol = Cholesky::factor(&covariance(state))?;
    let alpha = chol.solve(&state.y);
    let nll = 0.5 * OUTPUT_DIM * n * (2.0 * PI).ln()
        + 0.5 * OUTPUT_DIM * chol.log_det()
        + 0.5 * state.y.dot(&alpha);
    Ok(LikelihoodParts { chol, alpha, nll })
}

/// `-L`, the negative log marginal likelihood of `y` under the GPPOM covariance.
pub fn neg_log_likelihood(state: &GppomState) -> Result<f64> {
    Ok(likelihood_parts(state)?.nll)
}

/// Biased HSIC between the cause Gram and the latent Gram.
pub fn latent_hsic(state: &GppomState) -> f64 {
    let n = state.n() as f64;
    kernels::centered_trace(state.kx_hsic(), &state.ktheta) / (n * n)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("lambda must be nonnegative and finite, got {lambda}")))
    }
}

fn assemble(nll: f64, hsic_raw: f64, lambda: f64) -> Result<ObjectiveValue> {
    let hsic_log_term = if lambda == 0.0 {
        0.0
    } else {
        if hsic_raw <= DEGENERATE_HSIC {
            return Err(Error::DegenerateLatent { hsic: hsic_raw });
        }
        lambda * hsic_raw.ln()
    };
    Ok(ObjectiveValue { total: nll + hsic_log_term, nll, hsic_log_term, hsic_raw })
}

/// `-L + lambda * log HSIC_b(X, Theta)`.
pub fn objective(state: &GppomState, lambda: f64) -> Result<ObjectiveValue> {
    check_lambda(lambda)?;
    let nll = neg_log_likelihood(state)?;
    assemble(nll, latent_hsic(state), lambda)
}

/// Objective together with both gradients, sharing one factorization.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: ObjectiveValue,
    /// N x q gradient with respect to `theta`.
    pub grad_theta: DMatrix<f64>,
    /// Gradient with respect to `[log beta, log gamma_1, ..]`.
    pub grad_hyper: DVector<f64>,
}

/// Gradients of the objective with respect to the entries of `K_theta` and `K_X`,
/// each entry treated as an independent variable.
struct KernelGradients {
    wrt_ktheta: DMatrix<f64>,
    wrt_kx: DMatrix<f64>,
    wrt_ktilde_trace: f64,
}

fn kernel_gradients(
    state: &GppomState,
    parts: &LikelihoodParts,
    lambda: f64,
) -> Result<(ObjectiveValue, KernelGradients)> {
    let n = state.n() as f64;
    let kx_hsic = state.kx_hsic();
    let trace = kernels::centered_trace(kx_hsic, &state.ktheta);
    let value = assemble(parts.nll, trace / (n * n), lambda)?;

    // d(-L)/dK~ = (D K~^{-1} - K~^{-1} y y^T K~^{-1}) / 2
    let inv = parts.chol.inverse();
    let mut g = inv * (0.5 * OUTPUT_DIM);
    g.ger(-0.5, &parts.alpha, &parts.alpha, 1.0);
    let wrt_ktilde_trace = g.trace();

    let mut wrt_ktheta = g.component_mul(&state.kx);
    let mut wrt_kx = g.component_mul(&state.ktheta);
    if lambda != 0.0 {
        // d log tr(K_X H K_theta H) / dK_theta = H K_X H / tr(...)
        wrt_ktheta += double_center(kx_hsic) * (lambda / trace);
        if state.kx_hsic.is_none() {
            wrt_kx += double_center(&state.ktheta) * (lambda / trace);
        }
    }
    Ok((value, KernelGradients { wrt_ktheta, wrt_kx, wrt_ktilde_trace }))
}

/// Chain rule through an RBF Gram: `dJ/dP_ij` for points `P` given a symmetric
/// `dJ/dK` with entries treated independently.
fn rbf_points_gradient(points: &DMatrix<f64>, k: &DMatrix<f64>, dk: &DMatrix<f64>, widths: &[f64]) -> DMatrix<f64> {
    // dK_mn/dP_ij = -2 gamma_j K_in (P_ij - P_nj) on row i and column i.
    // Summing both gives -4 gamma_j sum_n W_in (P_ij - P_nj), W = dK ∘ K.
    let w = dk.component_mul(k);
    let row_sums = w.column_sum();
    let wp = &w * points;
    DMatrix::from_fn(points.nrows(), points.ncols(), |i, j| {
        -4.0 * widths[j] * (points[(i, j)] * row_sums[i] - wp[(i, j)])
    })
}

fn log_width_gradient(points: &DMatrix<f64>, k: &DMatrix<f64>, dk: &DMatrix<f64>, widths: &[f64]) -> Vec<f64> {
    let n = points.nrows();
    widths
        .iter()
        .enumerate()
        .map(|(d, g)| {
            // dK_ij/dlog gamma_d = -gamma_d (p_id - p_jd)^2 K_ij
            let mut s = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let diff = points[(i, d)] - points[(j, d)];
                    s += dk[(i, j)] * k[(i, j)] * diff * diff;
                }
            }
            -g * s
        })
        .collect()
}

/// Objective and both gradients in one pass.
pub fn evaluate(state: &GppomState, lambda: f64) -> Result<Evaluation> {
    check_lambda(lambda)?;
    let parts = likelihood_parts(state)?;
    let (value, kg) = kernel_gradients(state, &parts, lambda)?;
    let grad_theta = rbf_points_gradient(
        &state.theta,
        &state.ktheta,
        &kg.wrt_ktheta,
        state.hyper.widths_theta.as_slice(),
    );
    Ok(Evaluation { value, grad_theta, grad_hyper: hyper_gradient(state, &kg) })
}

fn hyper_gradient(state: &GppomState, kg: &KernelGradients) -> DVector<f64> {
    let widths = state.hyper.widths_x();
    let mut grad = Vec::with_capacity(1 + widths.dim());
    // dK~/dlog beta = -beta^{-1} I
    grad.push(-kg.wrt_ktilde_trace / state.hyper.beta());
    grad.extend(log_width_gradient(&state.x, &state.kx, &kg.wrt_kx, widths.as_slice()));
    DVector::from_vec(grad)
}

/// Gradient of the objective with respect to `theta` (N x q).
pub fn grad_theta(state: &GppomState, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(evaluate(state, lambda)?.grad_theta)
}

/// Gradient of the objective with respect to `[log beta, log gamma_1, ..]`.
pub fn grad_hyper(state: &GppomState, lambda: f64) -> Result<DVector<f64>> {
    Ok(evaluate(state, lambda)?.grad_hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, seed: u64) -> GppomState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        GppomState::from_columns(&x, &y, &t, 10.0).unwrap()
    }

    #[test]
    fn single_observation_covariance() {
        let s = GppomState::from_columns(&[0.3], &[0.0], &[0.1], 4.0).unwrap();
        assert_abs_diff_eq!(covariance(&s)[(0, 0)], 1.25, epsilon = 1e-15);
    }

    #[test]
    fn constant_theta_leaves_cause_gram() {
        let s = GppomState::from_columns(&[0.0, 0.5, 1.0], &[0.0, 0.1, 0.2], &[0.7; 3], 2.0).unwrap();
        let mut expected = s.kx().clone();
        for i in 0..3 {
            expected[(i, i)] += 0.5;
        }
        assert!((covariance(&s) - expected).amax() < 1e-15);
    }

    #[test]
    fn covariance_matches_scalar_loop() {
        let s = random_state(4, 3);
        let k = covariance(&s);
        for i in 0..4 {
            for j in 0..4 {
                let dx = s.x()[(i, 0)] - s.x()[(j, 0)];
                let dt = s.theta()[(i, 0)] - s.theta()[(j, 0)];
                let mut v = (-dx * dx).exp() * (-dt * dt).exp();
                if i == j {
                    v += 0.1;
                }
                assert_abs_diff_eq!(k[(i, j)], v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_min_eigenvalue_above_ridge() {
        for seed in 0..5 {
            let s = random_state(8, seed);
            let eig = covariance(&s).symmetric_eigenvalues();
            assert!(eig.min() >= 0.1 - 1e-10);
        }
    }

    #[test]
    fn nll_single_point() {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let s0 = GppomState::from_columns(&[0.0], &[0.0], &[0.0], 1.0).unwrap();
        assert_abs_diff_eq!(
            neg_log_likelihood(&s0).unwrap(),
            half_log_2pi + 0.5 * 2f64.ln(),
            epsilon = 1e-14
        );
        let s1 = GppomState::from_columns(&[0.0], &[1.0], &[0.0], 1.0).unwrap();
        assert_abs_diff_eq!(
            neg_log_likelihood(&s1).unwrap(),
            half_log_2pi + 0.5 * 2f64.ln() + 0.25,
            epsilon = 1e-14
        );
    }

    #[test]
    fn lambda_zero_is_nll() {
        let s = random_state(6, 1);
        let v = objective(&s, 0.0).unwrap();
        assert_eq!(v.total, neg_log_likelihood(&s).unwrap());
        assert_eq!(v.hsic_log_term, 0.0);
    }

    #[test]
    fn constant_theta_is_degenerate() {
        let s = GppomState::from_columns(&[0.0, 0.5, 1.0], &[0.0, 0.1, 0.2], &[0.7; 3], 2.0).unwrap();
        assert!(matches!(objective(&s, 1.0), Err(Error::DegenerateLatent { .. })));
        assert!(matches!(grad_theta(&s, 1.0), Err(Error::DegenerateLatent { .. })));
    }

    #[test]
    fn objective_decomposes() {
        let s = random_state(5, 9);
        let v = objective(&s, 1.0).unwrap();
        assert_abs_diff_eq!(v.total, v.nll + v.hsic_log_term, epsilon = 1e-10);
        assert_abs_diff_eq!(v.total, neg_log_likelihood(&s).unwrap() + v.hsic_raw.ln(), epsilon = 1e-10);
    }

    #[test]
    fn negative_lambda_rejected() {
        let s = random_state(4, 2);
        assert!(objective(&s, -1.0).is_err());
    }

    #[test]
    fn non_finite_theta_rejected() {
        let mut s = random_state(4, 2);
        let mut t = s.theta().clone();
        t[(1, 0)] = f64::NAN;
        assert!(matches!(s.set_theta(t), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_effect_gradient_raises_beta() {
        let s = GppomState::from_columns(&[0.0, 0.4, 0.9, 1.3], &[0.0; 4], &[0.1, -0.2, 0.3, 0.0], 5.0).unwrap();
        let g = grad_hyper(&s, 0.0).unwrap();
        // descent direction -g must increase log beta
        assert!(g[0] < 0.0);
    }

    #[test]
    fn width_gradient_vanishes_for_identical_causes() {
        let s = GppomState::from_columns(&[0.5; 4], &[0.1, -0.3, 0.2, 0.4], &[0.1, -0.2, 0.3, 0.0], 5.0).unwrap();
        // K_X is all ones, so HSIC vanishes and only lambda = 0 is evaluable
        let g = grad_hyper(&s, 0.0).unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn duplicated_rows_share_gradient() {
        // rows 0 and 1 are identical in (x, y, theta); rows 2 and 3 mirror x.
        let s = GppomState::from_columns(
            &[0.3, 0.3, -0.3, 0.8],
            &[0.5, 0.5, -0.2, 0.1],
            &[0.2, 0.2, -0.4, 0.6],
            10.0,
        )
        .unwrap();
        let g = grad_theta(&s, 1.0).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], g[(1, 0)], epsilon = 1e-10);
    }

    #[test]
    fn gradient_is_a_descent_direction() {
        let s = random_state(8, 4);
        let e = evaluate(&s, 1.0).unwrap();
        let mut moved = s.clone();
        moved.set_theta(s.theta() - &e.grad_theta * 1e-4).unwrap();
        assert!(objective(&moved, 1.0).unwrap().total < e.value.total);
    }
}
