//! Polarisation entanglement: CHSH statistics and ghost birefringence.
//!
//! Angles are in degrees except the retardation, which is in radians.
//! Birefringence probing keeps the signal polariser at 0 degrees and rotates
//! the idler analyser through `BETAS`.

use nalgebra::{Matrix4, Vector4};
use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::poisson;

/// Idler analyser angles used for birefringence probing.
pub const BETAS: [f64; 4] = [0.0, 45.0, 90.0, 135.0];
/// Analyser pairs at which the CHSH sum is evaluated.
pub const CHSH_ALPHAS: [f64; 2] = [0.0, 45.0];
pub const CHSH_BETAS: [f64; 2] = [22.5, 67.5];
/// Tolerance separating round-off from genuinely inconsistent quads.
pub const ACOS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellModel {
    /// Maximum true coincidence count.
    pub n0: f64,
    /// Angle-independent accidental contribution.
    pub n1: f64,
}

impl BellModel {
    pub fn new(n0: f64, n1: f64) -> Result<Self> {
        let m = BellModel { n0, n1 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n0.is_finite() && self.n0 >= 0.0 && self.n1.is_finite() && self.n1 >= 0.0) {
            return Err(Error::param(format!(
                "Bell model needs finite n0, n1 >= 0, got ({}, {})",
                self.n0, self.n1
            )));
        }
        Ok(())
    }

    /// Mean coincidences at analyser angles `(alpha, beta)`.
    pub fn mean(&self, alpha: f64, beta: f64) -> f64 {
        self.n0 * (alpha - beta).to_radians().cos().powi(2) + self.n1
    }

    /// Poisson-sampled coincidences at `(alpha, beta)`.
    pub fn sample<R: Rng + ?Sized>(&self, alpha: f64, beta: f64, rng: &mut R) -> f64 {
        poisson(rng, self.mean(alpha, beta)) as f64
    }

    /// Noiseless CHSH value in closed form.
    pub fn chsh_closed_form(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.n0 / (self.n0 + 2.0 * self.n1)
    }

    /// Accidental-to-true ratio `n1 / n0` that yields CHSH value `s`.
    pub fn ratio_for_chsh(s: f64) -> Result<f64> {
        let max = 2.0 * std::f64::consts::SQRT_2;
        if !(s > 0.0 && s <= max) {
            return Err(Error::param(format!("CHSH target must lie in (0, 2 sqrt 2], got {s}")));
        }
        Ok(0.5 * (max / s - 1.0))
    }
}

/// Correlation from the four coincidence counts `N(a, b)`, `N(a+90, b+90)`,
/// `N(a+90, b)` and `N(a, b+90)`.
pub fn correlation_e(n_ab: f64, n_perp_perp: f64, n_perp_b: f64, n_a_perp: f64) -> Result<f64> {
    let den = n_ab + n_perp_perp + n_perp_b + n_a_perp;
    if den <= 0.0 {
        return Err(Error::degenerate("correlation denominator is zero"));
    }
    Ok((n_ab + n_perp_perp - n_perp_b - n_a_perp) / den)
}

/// Correlation at `(alpha, beta)` from a count source.
pub fn correlation_at<F: FnMut(f64, f64) -> f64>(counts: &mut F, alpha: f64, beta: f64) -> Result<f64> {
    let n_ab = counts(alpha, beta);
    let n_pp = counts(alpha + 90.0, beta + 90.0);
    let n_pb = counts(alpha + 90.0, beta);
    let n_ap = counts(alpha, beta + 90.0);
    correlation_e(n_ab, n_pp, n_pb, n_ap)
}

/// CHSH sum `|E(0, 22.5) - E(0, 67.5)| + |E(45, 22.5) + E(45, 67.5)|` with
/// counts supplied by `counts(alpha, beta)`.
pub fn chsh_s<F: FnMut(f64, f64) -> f64>(mut counts: F) -> Result<f64> {
    let [a0, a1] = CHSH_ALPHAS;
    let [b0, b1] = CHSH_BETAS;
    let e00 = correlation_at(&mut counts, a0, b0)?;
    let e01 = correlation_at(&mut counts, a0, b1)?;
    let e10 = correlation_at(&mut counts, a1, b0)?;
    let e11 = correlation_at(&mut counts, a1, b1)?;
    Ok((e00 - e01).abs() + (e10 + e11).abs())
}

/// Noiseless CHSH value of a model, evaluated through the correlations.
pub fn chsh_noiseless(model: &BellModel) -> Result<f64> {
    model.validate()?;
    chsh_s(|a, b| model.mean(a, b))
}

/// One round of Poisson-sampled counts at every angle the CHSH sum uses.
pub fn chsh_sampled<R: Rng + ?Sized>(model: &BellModel, rng: &mut R) -> Result<f64> {
    model.validate()?;
    chsh_s(|a, b| model.sample(a, b, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirefringencePoint {
    pub t: f64,
    /// Principal-axis angle, degrees in [0, 90).
    pub theta: f64,
    /// Retardation, radians in [0, pi].
    pub delta: f64,
}

impl BirefringencePoint {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t)
            || !(0.0..90.0).contains(&self.theta)
            || !(0.0..=std::f64::consts::PI).contains(&self.delta)
        {
            return Err(Error::param(format!(
                "birefringence point out of range: T={}, theta={}, delta={}",
                self.t, self.theta, self.delta
            )));
        }
        Ok(())
    }
}

/// Coincidence counts (or rates) at idler analyser angles 0, 45, 90, 135.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceQuad {
    pub n_0: f64,
    pub n_45: f64,
    pub n_90: f64,
    pub n_135: f64,
}

impl CoincidenceQuad {
    pub fn sum(&self) -> f64 {
        self.n_0 + self.n_45 + self.n_90 + self.n_135
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.n_0, self.n_45, self.n_90, self.n_135]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CoincidenceQuad { n_0: a[0], n_45: a[1], n_90: a[2], n_135: a[3] }
    }

    pub fn scaled(self, k: f64) -> Self {
        CoincidenceQuad::from_array(self.to_array().map(|v| v * k))
    }
}

/// Mueller matrix of a linear retarder with axis `theta` (degrees) and
/// retardation `delta` (radians).
pub fn mueller_matrix(theta: f64, delta: f64) -> Matrix4<f64> {
    let (s2, c2) = (2.0 * theta).to_radians().sin_cos();
    let (sd, cd) = delta.sin_cos();
    Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, c2 * c2 + s2 * s2 * cd, c2 * s2 * (1.0 - cd), -s2 * sd,
        0.0, c2 * s2 * (1.0 - cd), s2 * s2 + c2 * c2 * cd, c2 * sd,
        0.0, s2 * sd, -c2 * sd, cd,
    )
}

/// Coincidence rate at an arbitrary idler analyser angle `beta`, obtained by
/// propagating the heralded Stokes vector through the Mueller matrix.
pub fn coincidence_rate(point: BirefringencePoint, beta: f64) -> f64 {
    let (s, c) = (2.0 * beta).to_radians().sin_cos();
    let out = mueller_matrix(point.theta, point.delta) * Vector4::new(1.0, c, s, 0.0) * point.t;
    0.5 * (out[0] + out[1])
}

/// Closed-form rates at the four probing angles; they sum to `2 T`.
pub fn forward_birefringence(point: BirefringencePoint) -> Result<CoincidenceQuad> {
    point.validate()?;
    let (s2, c2) = (2.0 * point.theta).to_radians().sin_cos();
    // 1 - cos(delta) and 1 - a without cancellation for small angles.
    let one_minus_cd = 2.0 * (0.5 * point.delta).sin().powi(2);
    let one_minus_a = s2 * s2 * one_minus_cd;
    let b = c2 * s2 * one_minus_cd;
    let h = 0.5 * point.t;
    Ok(CoincidenceQuad {
        n_0: h * (2.0 - one_minus_a),
        n_45: h * (1.0 + b),
        n_90: h * one_minus_a,
        n_135: h * (1.0 - b),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inversion {
    pub point: BirefringencePoint,
    /// False when the retardation vanishes and the axis carries no signal;
    /// `point.theta` is then 0.
    pub theta_determinate: bool,
    /// Magnitude by which the arccos argument left [-1, 1] before clamping.
    pub clamp_excess: f64,
}

/// Inversion with a caller-chosen clamping tolerance. Noisy count data may
/// push the arccos argument slightly outside [-1, 1]; pass
/// `f64::INFINITY` to always clamp and inspect `clamp_excess` instead.
pub fn invert_birefringence_with(quad: CoincidenceQuad, tolerance: f64) -> Result<Inversion> {
    if quad.to_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param(format!("coincidence quad must be finite and >= 0: {quad:?}")));
    }
    let sum = quad.sum();
    if sum <= 0.0 {
        return Err(Error::degenerate("coincidence quad sums to zero"));
    }
    let t = 0.5 * sum;
    let d = quad.n_45 - quad.n_135;
    if quad.n_90 == 0.0 && d == 0.0 {
        return Ok(Inversion {
            point: BirefringencePoint { t, theta: 0.0, delta: 0.0 },
            theta_determinate: false,
            clamp_excess: 0.0,
        });
    }
    let mut theta = 0.5 * (2.0 * quad.n_90).atan2(d).to_degrees();
    if theta >= 90.0 {
        theta -= 90.0;
    }
    // 1 - cos(delta); the half-angle form keeps small retardations exact.
    let x = if quad.n_90 > 0.0 {
        (d * d + 4.0 * quad.n_90 * quad.n_90) / (quad.n_90 * sum)
    } else {
        f64::INFINITY
    };
    let excess = (x - 2.0).max(0.0);
    if excess > tolerance {
        return Err(Error::Inconsistent(format!(
            "retardation cosine {} lies outside [-1, 1] for {quad:?}",
            1.0 - x
        )));
    }
    Ok(Inversion {
        point: BirefringencePoint { t, theta, delta: 2.0 * (0.5 * x.min(2.0)).sqrt().asin() },
        theta_determinate: true,
        clamp_excess: excess,
    })
}

/// Recovers `(T, theta, delta)` from rates normalised so that a clear,
/// isotropic object gives `(1, 0.5, 0, 0.5)`.
pub fn invert_birefringence(quad: CoincidenceQuad) -> Result<Inversion> {
    invert_birefringence_with(quad, ACOS_TOLERANCE)
}

/// Per-pixel quality of a recovered birefringence map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelFlag {
    Ok = 0,
    /// Retardation consistent with zero at three standard deviations; the
    /// axis angle is reported as 0 and delta as 0.
    Indeterminate = 1,
    /// Arccos argument was clamped by more than the inversion tolerance.
    Clamped = 2,
    /// No coincidences at this pixel.
    Empty = 3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BirefringenceMaps {
    pub t: Array2<f64>,
    pub theta: Array2<f64>,
    pub delta: Array2<f64>,
    pub flags: Array2<PixelFlag>,
    /// Normalisation: mean of half the quad sum over the background.
    pub scale: f64,
}

/// Per-pixel inversion of four coincidence images taken at `BETAS`.
///
/// Counts are normalised by half the mean quad sum over `background`, a
/// clear isotropic region, so that `T` is relative to it. A pixel is
/// treated as retardation-free when `d^2 + 4 N90^2` is within nine times
/// its Poisson variance `N45 + N135 + 4 N90` (raw counts).
pub fn birefringence_image(images: [&Array2<f64>; 4], background: &Array2<bool>) -> Result<BirefringenceMaps> {
    let dim = images[0].dim();
    if images.iter().any(|m| m.dim() != dim) || background.dim() != dim {
        return Err(Error::param("coincidence images and background mask must share dimensions"));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    Zip::from(images[0])
        .and(images[1])
        .and(images[2])
        .and(images[3])
        .and(background)
        .for_each(|a, b, c, d, &bg| {
            if bg {
                acc += 0.5 * (a + b + c + d);
                n += 1;
            }
        });
    if n == 0 {
        return Err(Error::degenerate("background region is empty"));
    }
    let scale = acc / n as f64;
    if scale <= 0.0 {
        return Err(Error::degenerate("background region has no coincidences"));
    }
    let mut maps = BirefringenceMaps {
        t: Array2::zeros(dim),
        theta: Array2::zeros(dim),
        delta: Array2::zeros(dim),
        flags: Array2::from_elem(dim, PixelFlag::Ok),
        scale,
    };
    for ((r, c), flag) in maps.flags.indexed_iter_mut() {
        let raw = CoincidenceQuad::from_array([0, 1, 2, 3].map(|k| images[k][[r, c]]));
        if raw.sum() <= 0.0 {
            *flag = PixelFlag::Empty;
            continue;
        }
        let d = raw.n_45 - raw.n_135;
        let signal = d * d + 4.0 * raw.n_90 * raw.n_90;
        let variance = raw.n_45 + raw.n_135 + 4.0 * raw.n_90;
        let quad = raw.scaled(1.0 / scale);
        if signal <= 9.0 * variance {
            maps.t[[r, c]] = 0.5 * quad.sum();
            *flag = PixelFlag::Indeterminate;
            continue;
        }
        let inv = invert_birefringence_with(quad, f64::INFINITY)?;
        maps.t[[r, c]] = inv.point.t;
        maps.theta[[r, c]] = inv.point.theta;
        maps.delta[[r, c]] = inv.point.delta;
        if inv.clamp_excess > ACOS_TOLERANCE {
            *flag = PixelFlag::Clamped;
        }
    }
    Ok(maps)
}
