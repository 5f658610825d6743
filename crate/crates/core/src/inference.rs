//! Bivariate causal direction by comparing fitted latent independence.
//!
//! Both variables are standardized, the latent model is fitted in each
//! direction, and the direction whose latent parameters are less dependent on
//! the putative cause (smaller HSIC) is reported.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::gppom::{fit, FitOptions, FitResult, ObjectiveValue};

/// Minimum sample size accepted by [`infer_direction`].
pub const MIN_OBSERVATIONS: usize = 10;

/// Relative tolerance under which the two HSIC values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Rescales to sample mean 0 and sample standard deviation 1 (denominator N - 1).
pub fn standardize(values: &[f64]) -> Result<Standardized> {
    if values.len() < 2 {
        return Err(invalid(format!("standardize needs at least 2 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in column".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 0.0) || std <= f64::EPSILON * mean.abs() {
        return Err(Error::ConstantVariable);
    }
    Ok(Standardized { values: values.iter().map(|v| (v - mean) / std).collect(), mean, std })
}

/// Indices sorting observations by `(primary, secondary)`.
pub(crate) fn canonical_order(primary: &[f64], secondary: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..primary.len()).collect();
    idx.sort_by(|&a, &b| {
        primary[a]
            .total_cmp(&primary[b])
            .then_with(|| secondary[a].total_cmp(&secondary[b]))
            .then(a.cmp(&b))
    });
    idx
}

/// Fits `cause -> effect` on rows in canonical order so that the result does
/// not depend on how the input rows happen to be ordered.
/// Returns the fit and the permutation used (`fit row k` is input row `order[k]`).
pub(crate) fn fit_canonical(
    cause: &[f64],
    effect: &[f64],
    lambda: f64,
    opts: &FitOptions,
) -> Result<(FitResult, Vec<usize>)> {
    let order = canonical_order(cause, effect);
    let c: Vec<f64> = order.iter().map(|&i| cause[i]).collect();
    let e: Vec<f64> = order.iter().map(|&i| effect[i]).collect();
    Ok((fit(&c, &e, lambda, opts)?, order))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XtoY,
    YtoX,
    NoDecision,
}

impl Direction {
    pub fn mirrored(self) -> Self {
        match self {
            Direction::XtoY => Direction::YtoX,
            Direction::YtoX => Direction::XtoY,
            Direction::NoDecision => Direction::NoDecision,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::XtoY => "XtoY",
            Direction::YtoX => "YtoX",
            Direction::NoDecision => "NoDecision",
        })
    }
}

/// Outcome of the fit in one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub objective: ObjectiveValue,
    pub iterations: usize,
    pub restart: usize,
}

impl From<&FitResult> for FitSummary {
    fn from(r: &FitResult) -> Self {
        Self { objective: r.objective, iterations: r.iterations, restart: r.restart }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalVerdict {
    pub direction: Direction,
    /// HSIC between cause and latent when fitting `x -> y`; `None` if that fit failed.
    pub hsic_xy: Option<f64>,
    pub hsic_yx: Option<f64>,
    /// Fit summary or failure message.
    pub fit_xy: Result<FitSummary, String>,
    pub fit_yx: Result<FitSummary, String>,
}

impl CausalVerdict {
    /// The verdict for the same data with columns swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            direction: self.direction.mirrored(),
            hsic_xy: self.hsic_yx,
            hsic_yx: self.hsic_xy,
            fit_xy: self.fit_yx.clone(),
            fit_yx: self.fit_xy.clone(),
        }
    }
}

fn decide(hsic_xy: f64, hsic_yx: f64) -> Direction {
    let scale = hsic_xy.abs().max(hsic_yx.abs());
    if (hsic_xy - hsic_yx).abs() <= TIE_TOLERANCE * scale {
        return Direction::NoDecision;
    }
    match hsic_xy.partial_cmp(&hsic_yx) {
        Some(Ordering::Less) => Direction::XtoY,
        Some(Ordering::Greater) => Direction::YtoX,
        _ => Direction::NoDecision,
    }
}

/// Decides between `x -> y` and `y -> x`.
///
/// Both directions use the same restart seeds. A failed fit in either
/// direction yields [`Direction::NoDecision`] with the failure recorded.
pub fn infer_direction(x: &[f64], y: &[f64], lambda: f64, opts: &FitOptions) -> Result<CausalVerdict> {
    if x.len() != y.len() {
        return Err(invalid(format!("x has {} values but y has {}", x.len(), y.len())));
    }
    if x.len() < MIN_OBSERVATIONS {
        return Err(invalid(format!(
            "direction inference needs at least {MIN_OBSERVATIONS} observations, got {}",
            x.len()
        )));
    }
    let xs = standardize(x)?.values;
    let ys = standardize(y)?.values;

    let (xy, yx) = rayon::join(
        || fit_canonical(&xs, &ys, lambda, opts),
        || fit_canonical(&ys, &xs, lambda, opts),
    );
    let summarize = |r: Result<(FitResult, Vec<usize>)>| -> Result<Result<(f64, FitSummary), String>> {
        match r {
            Ok((f, _)) => Ok(Ok((f.objective.hsic_raw.max(0.0), FitSummary::from(&f)))),
            Err(e @ (Error::InvalidArgument(_) | Error::ConstantVariable)) => Err(e),
            Err(e) => Ok(Err(e.to_string())),
        }
    };
    let xy = summarize(xy)?;
    let yx = summarize(yx)?;

    let direction = match (&xy, &yx) {
        (Ok((a, _)), Ok((b, _))) => decide(*a, *b),
        _ => Direction::NoDecision,
    };
    Ok(CausalVerdict {
        direction,
        hsic_xy: xy.as_ref().ok().map(|(h, _)| *h),
        hsic_yx: yx.as_ref().ok().map(|(h, _)| *h),
        fit_xy: xy.map(|(_, s)| s),
        fit_yx: yx.map(|(_, s)| s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_standardize() {
        let s = standardize(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.values[0] + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((s.values[1] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardize_is_idempotent() {
        let once = standardize(&[3.0, -1.0, 4.0, 1.0, 5.0, 9.0]).unwrap();
        let twice = standardize(&once.values).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column() {
        assert!(matches!(standardize(&[1.0, 1.0, 1.0]), Err(Error::ConstantVariable)));
    }

    #[test]
    fn decision_rule() {
        assert_eq!(decide(0.1, 0.2), Direction::XtoY);
        assert_eq!(decide(0.2, 0.1), Direction::YtoX);
        assert_eq!(decide(0.1, 0.1), Direction::NoDecision);
        assert_eq!(decide(0.1, 0.1 * (1.0 + 1e-14)), Direction::NoDecision);
    }

    #[test]
    fn too_few_observations() {
        let v: Vec<f64> = (0..5).map(f64::from).collect();
        assert!(infer_direction(&v, &v, 1.0, &FitOptions::default()).is_err());
    }

    #[test]
    fn canonical_order_sorts_pairs() {
        let order = canonical_order(&[2.0, 1.0, 1.0], &[0.0, 5.0, 3.0]);
        assert_eq!(order, vec![2, 1, 0]);
    }
}
