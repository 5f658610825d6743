//! Synthetic data from additive-noise mixture models.
//!
//! Every observation draws a mechanism index `c`, a parameter `theta` from
//! that mechanism's uniform band, a cause `x ~ U(0, 1)`, and the effect
//! `y = f(x; theta) + eps` with `eps ~ N(0, sigma^2)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// User-supplied mechanism `f(x, theta)`.
pub type CustomMechanism = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Function form shared by every component of a mixture.
#[derive(Clone)]
pub enum Family {
    /// `1 / (1.5 + theta x^2)`
    F1,
    /// `2 x^(theta - 0.25)`, defined for `x >= 0`
    F2,
    /// `exp(-theta x)`
    F3,
    /// `tanh(theta x)`
    F4,
    Custom(CustomMechanism),
}

impl Family {
    pub fn eval(&self, x: f64, theta: f64) -> Result<f64> {
        mechanism_eval(self, x, theta)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::F1 => "f1",
            Family::F2 => "f2",
            Family::F3 => "f3",
            Family::F4 => "f4",
            Family::Custom(_) => "custom",
        }
    }
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for Family {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Family::Custom(a), Family::Custom(b)) => Arc::ptr_eq(a, b),
            _ => self.name() == other.name(),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Family::F1),
            "f2" => Ok(Family::F2),
            "f3" => Ok(Family::F3),
            "f4" => Ok(Family::F4),
            other => Err(invalid(format!("unknown mechanism family '{other}' (expected f1..f4)"))),
        }
    }
}

pub fn mechanism_eval(family: &Family, x: f64, theta: f64) -> Result<f64> {
    if !x.is_finite() || !theta.is_finite() {
        return Err(Error::Domain(format!("non-finite input x={x}, theta={theta}")));
    }
    Ok(match family {
        Family::F1 => 1.0 / (1.5 + theta * x * x),
        Family::F2 => {
            if x < 0.0 {
                return Err(Error::Domain(format!("f2 needs x >= 0, got {x}")));
            }
            2.0 * x.powf(theta - 0.25)
        }
        Family::F3 => (-theta * x).exp(),
        Family::F4 => (theta * x).tanh(),
        Family::Custom(f) => f(x, theta),
    })
}

/// One mixture component: `theta ~ U(theta_low, theta_high)` with mixing weight `weight`.
///
/// `theta_low == theta_high` gives a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismSpec {
    pub theta_low: f64,
    pub theta_high: f64,
    pub weight: f64,
}

/// Standard parameter bands for up to four mechanisms.
pub const STANDARD_BANDS: [(f64, f64); 4] = [(1.0, 1.1), (3.0, 3.1), (0.5, 0.6), (2.0, 2.1)];

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub family: Family,
    pub mechanisms: Vec<MechanismSpec>,
    pub noise_std: f64,
    pub n: usize,
}

impl MixtureSpec {
    /// `c` equally weighted mechanisms using [`STANDARD_BANDS`], noise 0.05.
    pub fn standard(family: Family, c: usize, n: usize) -> Result<Self> {
        if c == 0 || c > STANDARD_BANDS.len() {
            return Err(invalid(format!("standard mixtures have 1 to 4 mechanisms, got {c}")));
        }
        let w = 1.0 / c as f64;
        let mechanisms = STANDARD_BANDS[..c]
            .iter()
            .map(|&(lo, hi)| MechanismSpec { theta_low: lo, theta_high: hi, weight: w })
            .collect();
        let spec = Self { family, mechanisms, noise_std: 0.05, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        self.noise_std = sigma;
        self.validate()?;
        Ok(self)
    }

    /// Two-mechanism mixture with `a1` on the first component and `1 - a1` on the second.
    pub fn with_first_weight(mut self, a1: f64) -> Result<Self> {
        if self.mechanisms.len() != 2 {
            return Err(invalid("first-weight override needs exactly two mechanisms"));
        }
        self.mechanisms[0].weight = a1;
        self.mechanisms[1].weight = 1.0 - a1;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty() {
            return Err(invalid("mixture needs at least one mechanism"));
        }
        if self.n == 0 {
            return Err(invalid("sample count must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(invalid(format!("noise std must be nonnegative, got {}", self.noise_std)));
        }
        for m in &self.mechanisms {
            if !(m.weight > 0.0 && m.weight < 1.0) && !(self.mechanisms.len() == 1 && m.weight == 1.0) {
                return Err(invalid(format!("mixing weight {} outside (0, 1)", m.weight)));
            }
            if !(m.theta_low.is_finite() && m.theta_high.is_finite()) || m.theta_low > m.theta_high {
                return Err(invalid(format!(
                    "invalid theta band [{}, {})",
                    m.theta_low, m.theta_high
                )));
            }
        }
        let total: f64 = self.mechanisms.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixing weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    fn equal_weights(&self) -> bool {
        let w0 = self.mechanisms[0].weight;
        self.mechanisms.iter().all(|m| (m.weight - w0).abs() <= 1e-12)
    }
}

/// Generated sample with its ground truth. Labels are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub labels: Vec<usize>,
    pub theta: Vec<f64>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn generate(spec: &MixtureSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| invalid(e.to_string()))?;
    let c = spec.mechanisms.len();
    let cumulative: Vec<f64> = spec
        .mechanisms
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m.weight;
            Some(*acc)
        })
        .collect();
    let equal = spec.equal_weights();

    let mut out = LabeledDataset {
        x: Vec::with_capacity(spec.n),
        y: Vec::with_capacity(spec.n),
        labels: Vec::with_capacity(spec.n),
        theta: Vec::with_capacity(spec.n),
    };
    for i in 0..spec.n {
        let idx = if equal {
            i % c
        } else {
            let u: f64 = rng.random();
            cumulative.iter().position(|&cw| u < cw).unwrap_or(c - 1)
        };
        let m = &spec.mechanisms[idx];
        let theta = if m.theta_high > m.theta_low {
            rng.random_range(m.theta_low..m.theta_high)
        } else {
            m.theta_low
        };
        let x: f64 = rng.random();
        let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let y = mechanism_eval(&spec.family, x, theta)? + eps;
        out.x.push(x);
        out.y.push(y);
        out.labels.push(idx + 1);
        out.theta.push(theta);
    }
    Ok(out)
}
