//! LayerNorm without gain and bias, split into its two operators.
//!
//! `layernorm(x) = (x - mu) / sigma` with the biased (1/d) standard deviation.
//! The numerator is the orthogonal projection of `x` onto the hyperplane whose
//! normal is the ones vector; dividing by `sigma` rescales that projection to
//! Euclidean norm exactly `sqrt(d)`.
//!
//! No epsilon is added to any denominator. Constant inputs are reported as
//! [`Error::DegenerateInput`] instead.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm};
use crate::{Error, Result};

/// Threshold below which a norm or standard deviation counts as zero.
pub const TOL_ZERO: f64 = 1e-12;

/// Denominator used by the variants that rescale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Denominator {
    /// `sqrt(mean((x - mu)^2))`
    #[default]
    StdDev,
    /// `sqrt(mean(x^2))`
    Rms,
}

/// Which parts of LayerNorm are applied.
///
/// `ScalingOnly(StdDev)` keeps the numerator as plain `x`; `ProjectionOnly`
/// subtracts the mean but never rescales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerNormVariant {
    Full(Denominator),
    ProjectionOnly,
    ScalingOnly(Denominator),
    Identity,
}

impl LayerNormVariant {
    pub const FULL: LayerNormVariant = LayerNormVariant::Full(Denominator::StdDev);
    pub const SCALING_ONLY: LayerNormVariant = LayerNormVariant::ScalingOnly(Denominator::StdDev);

    /// The four variants with the default denominator.
    pub const ALL: [LayerNormVariant; 4] = [
        LayerNormVariant::FULL,
        LayerNormVariant::ProjectionOnly,
        LayerNormVariant::SCALING_ONLY,
        LayerNormVariant::Identity,
    ];

    pub fn projects(self) -> bool {
        matches!(self, LayerNormVariant::Full(_) | LayerNormVariant::ProjectionOnly)
    }

    pub fn scales(self) -> bool {
        matches!(self, LayerNormVariant::Full(_) | LayerNormVariant::ScalingOnly(_))
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerNormVariant::Full(Denominator::StdDev) => "full",
            LayerNormVariant::Full(Denominator::Rms) => "full-rms",
            LayerNormVariant::ProjectionOnly => "projection-only",
            LayerNormVariant::ScalingOnly(Denominator::StdDev) => "scaling-only",
            LayerNormVariant::ScalingOnly(Denominator::Rms) => "scaling-only-rms",
            LayerNormVariant::Identity => "identity",
        }
    }
}

impl fmt::Display for LayerNormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerNormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "full" => LayerNormVariant::Full(Denominator::StdDev),
            "full-rms" => LayerNormVariant::Full(Denominator::Rms),
            "projection-only" | "projection" => LayerNormVariant::ProjectionOnly,
            "scaling-only" | "scaling" => LayerNormVariant::ScalingOnly(Denominator::StdDev),
            "scaling-only-rms" => LayerNormVariant::ScalingOnly(Denominator::Rms),
            "identity" | "none" => LayerNormVariant::Identity,
            other => {
                return Err(Error::Config(format!(
                    "unknown layernorm variant `{other}` (expected full, full-rms, \
                     projection-only, scaling-only, scaling-only-rms or identity)"
                )))
            }
        })
    }
}

impl TryFrom<String> for LayerNormVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerNormVariant> for String {
    fn from(v: LayerNormVariant) -> String {
        v.name().to_string()
    }
}

fn check_vector(x: &[f64], min_dim: usize) -> Result<()> {
    if x.len() < min_dim {
        return Err(Error::Precondition(format!(
            "vector dimension {} is below {min_dim}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("entry {i} is {}", x[i])));
    }
    Ok(())
}

pub fn ones(d: usize) -> Vec<f64> {
    vec![1.0; d]
}

/// Coordinate-wise average.
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Biased (1/d) standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let mu = mean(x);
    (x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn rms(x: &[f64]) -> f64 {
    (dot(x, x) / x.len() as f64).sqrt()
}

/// `x - mean(x) * ones`, the orthogonal projection onto the hyperplane
/// `{y : y . ones = 0}`.
pub fn project(x: &[f64]) -> Result<Vec<f64>> {
    check_vector(x, 2)?;
    let mu = mean(x);
    Ok(x.iter().map(|v| v - mu).collect())
}

/// `sqrt(d) * x / ||x||`.
pub fn scale_to_sqrt_d(x: &[f64]) -> Result<Vec<f64>> {
    check_vector(x, 1)?;
    let n = norm(x);
    if n <= TOL_ZERO {
        return Err(Error::ZeroVector { norm: n });
    }
    let s = (x.len() as f64).sqrt() / n;
    Ok(x.iter().map(|v| v * s).collect())
}

fn denominator(x: &[f64], which: Denominator) -> Result<f64> {
    let s = match which {
        Denominator::StdDev => std_dev(x),
        Denominator::Rms => rms(x),
    };
    if s <= TOL_ZERO {
        return Err(Error::DegenerateInput(format!(
            "{} of input is {s:e}; layernorm is undefined",
            match which {
                Denominator::StdDev => "standard deviation",
                Denominator::Rms => "rms",
            }
        )));
    }
    Ok(s)
}

pub fn layernorm(x: &[f64], variant: LayerNormVariant) -> Result<Vec<f64>> {
    match variant {
        LayerNormVariant::Identity => {
            check_vector(x, 1)?;
            Ok(x.to_vec())
        }
        LayerNormVariant::ProjectionOnly => project(x),
        LayerNormVariant::ScalingOnly(which) => {
            check_vector(x, 2)?;
            let s = denominator(x, which)?;
            Ok(x.iter().map(|v| v / s).collect())
        }
        LayerNormVariant::Full(_) => {
            // The projected vector has mean zero, so its rms and its standard
            // deviation coincide; both denominators reduce to sigma(x).
            check_vector(x, 2)?;
            let s = denominator(x, Denominator::StdDev)?;
            let mu = mean(x);
            Ok(x.iter().map(|v| (v - mu) / s).collect())
        }
    }
}

/// Vector-Jacobian product of [`layernorm`] at `x`: returns `J(x)^T g`.
pub fn layernorm_vjp(x: &[f64], variant: LayerNormVariant, g: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(x.len(), g.len());
    let d = x.len() as f64;
    match variant {
        LayerNormVariant::Identity => Ok(g.to_vec()),
        LayerNormVariant::ProjectionOnly => {
            let gm = mean(g);
            Ok(g.iter().map(|v| v - gm).collect())
        }
        LayerNormVariant::ScalingOnly(which) => {
            // y = x / s(x);  dx = g / s - (g . x) / s^2 * grad s
            let s = denominator(x, which)?;
            let gx = dot(g, x);
            let mu = match which {
                Denominator::StdDev => mean(x),
                Denominator::Rms => 0.0,
            };
            Ok(x.iter()
                .zip(g)
                .map(|(xi, gi)| gi / s - gx / (s * s) * (xi - mu) / (d * s))
                .collect())
        }
        LayerNormVariant::Full(_) => {
            // y = sqrt(d) u / ||u|| with u = P x;
            // dx = P (sqrt(d) / ||u||) (g - u_hat (u_hat . g))
            let s = denominator(x, Denominator::StdDev)?;
            let mu = mean(x);
            let y: Vec<f64> = x.iter().map(|v| (v - mu) / s).collect();
            let yg = dot(&y, g) / d;
            let inner: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| (gi - yi * yg) / s).collect();
            let im = mean(&inner);
            Ok(inner.iter().map(|v| v - im).collect())
        }
    }
}

/// Explicit matrix of the projection, `(1/d) (d I - ones ones^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    d: usize,
    entries: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.d..(i + 1) * self.d]
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok((0..self.d).map(|i| dot(self.row(i), x)).collect())
    }
}

pub fn projection_matrix(d: usize) -> Result<ProjectionMatrix> {
    if d < 2 {
        return Err(Error::Precondition(format!("projection matrix needs d >= 2, got {d}")));
    }
    let df = d as f64;
    let mut entries = vec![-1.0 / df; d * d];
    for i in 0..d {
        entries[i * d + i] = (df - 1.0) / df;
    }
    Ok(ProjectionMatrix { d, entries })
}

/// Full LayerNorm of `alpha * v + beta * ones` for a unit `v` orthogonal to
/// the ones vector. Every point of that plane with `alpha != 0` lands on
/// `sign(alpha) * sqrt(d) * v`.
pub fn plane_collapse(v: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    check_vector(v, 2)?;
    let s: f64 = v.iter().sum();
    if s.abs() > 1e-9 {
        return Err(Error::Precondition(format!("v . ones = {s:e}, expected 0")));
    }
    let n = norm(v);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!("||v|| = {n}, expected 1")));
    }
    if alpha == 0.0 {
        return Err(Error::DegenerateInput(
            "alpha = 0 puts the point on the ones line; layernorm is undefined".into(),
        ));
    }
    let x: Vec<f64> = v.iter().map(|vi| alpha * vi + beta).collect();
    layernorm(&x, LayerNormVariant::FULL)
}

/// Angle in degrees, in `[0, 180]`, between `v` and the ones vector.
pub fn angle_to_ones(v: &[f64]) -> Result<f64> {
    check_vector(v, 1)?;
    let n = norm(v);
    if n <= TOL_ZERO {
        return Err(Error::ZeroVector { norm: n });
    }
    let c = v.iter().sum::<f64>() / (n * (v.len() as f64).sqrt());
    Ok(c.clamp(-1.0, 1.0).acos().to_degrees())
}
