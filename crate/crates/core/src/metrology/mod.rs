//! Image-quality analysis: edge-spread and depth-of-field fits, global
//! SSIM, threshold crossings and PSF calibration.

pub mod lsq;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::scanner::{beam_width, effective_widths, PsfModel, PINHOLE_FOCAL_OFFSET};
use lsq::Problem;

/// FWHM of a Gaussian `exp(-x^2 / w^2)` per unit `w`.
pub fn fwhm_per_width() -> f64 {
    2.0 * std::f64::consts::LN_2.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// 95 % confidence half-widths, one per parameter.
    pub ci95: Vec<f64>,
    pub residual_norm: f64,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.params[k])
    }

    pub fn ci(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.ci95[k])
    }

    fn from_solution(names: &[&str], sol: &lsq::Solution) -> Result<Self> {
        Ok(FitResult {
            names: names.iter().map(|s| s.to_string()).collect(),
            params: sol.params.iter().copied().collect(),
            ci95: lsq::ci95(sol)?,
            residual_norm: sol.residuals.norm(),
        })
    }
}

/// A value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean: f64,
    pub stderr: f64,
}

struct Esf<'a> {
    x: &'a [f64],
    y: &'a [f64],
}

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

impl Problem for Esf<'_> {
    fn n_params(&self) -> usize {
        4
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let (a, b, x0, w) = (p[0], p[1], p[2], p[3]);
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(self.y).map(|(&x, &y)| a * erf((x - x0) / w) + b - y),
        )
    }
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let (a, x0, w) = (p[0], p[2], p[3]);
        DMatrix::from_fn(self.x.len(), 4, |i, k| {
            let u = (self.x[i] - x0) / w;
            let g = a * TWO_OVER_SQRT_PI * (-u * u).exp();
            match k {
                0 => erf(u),
                1 => 1.0,
                2 => -g / w,
                _ => -g * u / w,
            }
        })
    }
}

const ERFINV_0_8: f64 = 0.906_193_802_436_823_2;

/// Fits `a erf((x - x0) / w) + b` to an edge profile.
pub fn fit_esf(profile: &[(f64, f64)]) -> Result<FitResult> {
    if profile.len() < 5 {
        return Err(Error::param("edge profile needs at least five points"));
    }
    if profile.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::param("edge profile contains non-finite values"));
    }
    let mut pts = profile.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        return Err(Error::FitFailure("edge profile is flat".into()));
    }
    let span = x[x.len() - 1] - x[0];
    let rising = y[y.len() - 1] >= y[0];
    let a0 = 0.5 * (hi - lo) * if rising { 1.0 } else { -1.0 };
    let b0 = 0.5 * (hi + lo);
    let x00 = midpoint_crossing(&x, &y, b0).unwrap_or(0.5 * (x[0] + x[x.len() - 1]));
    // The 10 %-90 % rise of a*erf((x-x0)/w) spans 2 erfinv(0.8) w.
    let rise = match (
        midpoint_crossing(&x, &y, lo + 0.1 * (hi - lo)),
        midpoint_crossing(&x, &y, lo + 0.9 * (hi - lo)),
    ) {
        (Some(p), Some(q)) if p != q => (q - p).abs() / (2.0 * ERFINV_0_8),
        _ => 0.25 * span,
    };
    let p0 = DVector::from_vec(vec![a0, b0, x00, rise]);
    let sol = lsq::solve(&Esf { x: &x, y: &y }, p0)?;
    if !(sol.params[3] > 0.0) {
        return Err(Error::FitFailure(format!("edge width {} is not positive", sol.params[3])));
    }
    FitResult::from_solution(&["a", "b", "x0", "w"], &sol)
}

/// Median of the positions where the profile crosses `level`, each located
/// by linear interpolation.
fn midpoint_crossing(x: &[f64], y: &[f64], level: f64) -> Option<f64> {
    let mut xs: Vec<f64> = x
        .windows(2)
        .zip(y.windows(2))
        .filter(|(_, yw)| (yw[0] - level) * (yw[1] - level) <= 0.0 && yw[0] != yw[1])
        .map(|(xw, yw)| xw[0] + (level - yw[0]) / (yw[1] - yw[0]) * (xw[1] - xw[0]))
        .collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(xs[xs.len() / 2])
}

/// Resolution `2 sqrt(ln 2) w` with standard error `sqrt(ln 2) / 1.96`
/// times the 95 % half-width of `w`.
pub fn resolution_from_fit(fit: &FitResult) -> Result<Measurement> {
    let w = fit.get("w").ok_or_else(|| Error::param("fit has no width parameter"))?;
    let ci = fit.ci("w").expect("ci per parameter");
    Ok(Measurement {
        mean: fwhm_per_width() * w,
        stderr: std::f64::consts::LN_2.sqrt() / 1.96 * ci,
    })
}

struct Hyperbola<'a> {
    z: &'a [f64],
    r: &'a [f64],
}

impl Problem for Hyperbola<'_> {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.z.len()
    }
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.z.len(),
            self.z.iter().zip(self.r).map(|(&z, &r)| beam_width(p[0], p[1], p[2], z) - r),
        )
    }
    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let (r0, z0, zr) = (p[0], p[1], p[2]);
        DMatrix::from_fn(self.z.len(), 3, |i, k| {
            let v = (self.z[i] - z0) / zr;
            let s = (1.0 + v * v).sqrt();
            match k {
                0 => s,
                1 => -r0 * v / (s * zr),
                _ => -r0 * v * v / (s * zr),
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DofFit {
    /// Parameters `R0`, `z0`, `zR`.
    pub fit: FitResult,
    /// `2 zR` with standard error `ci95(zR) / 1.96`.
    pub dof: Measurement,
}

/// Fits `R0 sqrt(1 + (z - z0)^2 / zR^2)` to resolution-versus-z points.
pub fn fit_dof(points: &[(f64, f64)]) -> Result<DofFit> {
    if points.len() < 5 {
        return Err(Error::param("depth-of-field fit needs at least five points"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (z, r): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let (k_min, &r_min) = r
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::param("empty points"))?;
    if k_min == 0 || k_min == r.len() - 1 {
        return Err(Error::param("z points do not bracket the focus"));
    }
    // Rayleigh length guess: half the z extent where R stays below sqrt(2) R0.
    let inside: Vec<f64> = z
        .iter()
        .zip(&r)
        .filter(|(_, &v)| v <= std::f64::consts::SQRT_2 * r_min)
        .map(|(&zz, _)| zz)
        .collect();
    let extent = inside.last().copied().unwrap_or(z[k_min]) - inside.first().copied().unwrap_or(z[k_min]);
    let zr0 = if extent > 0.0 { 0.5 * extent } else { 0.25 * (z[z.len() - 1] - z[0]) };
    let p0 = DVector::from_vec(vec![r_min, z[k_min], zr0]);
    let mut sol = lsq::solve(&Hyperbola { z: &z, r: &r }, p0)?;
    // zR enters squared; report the positive branch.
    sol.params[2] = sol.params[2].abs();
    if !(sol.params[0] > 0.0 && sol.params[2] > 0.0) {
        return Err(Error::FitFailure("depth-of-field fit reached a non-positive R0 or zR".into()));
    }
    sol.jacobian = Hyperbola { z: &z, r: &r }.jacobian(&sol.params);
    let fit = FitResult::from_solution(&["R0", "z0", "zR"], &sol)?;
    let dof = Measurement { mean: 2.0 * fit.params[2], stderr: fit.ci95[2] / 1.96 };
    Ok(DofFit { fit, dof })
}

fn moments(a: &Array2<f64>, b: &Array2<f64>) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let m1 = a.sum() / n;
    let m2 = b.sum() / n;
    let (mut v1, mut v2, mut c) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        v1 += (x - m1) * (x - m1);
        v2 += (y - m2) * (y - m2);
        c += (x - m1) * (y - m2);
    }
    (m1, m2, v1 / n, v2 / n, c / n)
}

/// Global structural similarity `4 m1 m2 s12 / ((m1^2 + m2^2)(s1^2 + s2^2))`
/// over whole images, without stabilising constants.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::param(format!("image shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    if a.len() < 2 {
        return Err(Error::param("SSIM needs at least two pixels"));
    }
    let (m1, m2, v1, v2, c) = moments(a, b);
    let den = (m1 * m1 + m2 * m2) * (v1 + v2);
    if den == 0.0 || !den.is_finite() {
        return Err(Error::degenerate("SSIM denominator is zero"));
    }
    Ok(4.0 * m1 * m2 * c / den)
}

/// Where a decreasing curve first drops below a level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "power", rename_all = "snake_case")]
pub enum Crossing {
    At(f64),
    /// The curve stays at or above the level over the whole sweep.
    Beyond,
}

impl Crossing {
    pub fn power(self) -> Option<f64> {
        match self {
            Crossing::At(p) => Some(p),
            Crossing::Beyond => None,
        }
    }
}

/// First downward crossing of `level`, interpolated linearly in
/// `log10(power)` (linearly in power when the lower bracket is 0).
pub fn threshold_crossing(powers: &[f64], values: &[f64], level: f64) -> Result<Crossing> {
    if powers.len() != values.len() || powers.len() < 2 {
        return Err(Error::param("crossing needs at least two (power, value) pairs"));
    }
    if powers.windows(2).any(|w| !(w[1] > w[0])) || powers[0] < 0.0 {
        return Err(Error::param("powers must be non-negative and strictly increasing"));
    }
    if values[0] < level {
        return Ok(Crossing::At(powers[0]));
    }
    for k in 1..powers.len() {
        let (v0, v1) = (values[k - 1], values[k]);
        if v1 < level {
            let f = (v0 - level) / (v0 - v1);
            let (p0, p1) = (powers[k - 1], powers[k]);
            let p = if p0 > 0.0 {
                10f64.powf(p0.log10() + f * (p1.log10() - p0.log10()))
            } else {
                p0 + f * (p1 - p0)
            };
            return Ok(Crossing::At(p));
        }
    }
    Ok(Crossing::Beyond)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimRow {
    pub power: f64,
    pub classical: f64,
    pub ice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimCurve {
    pub rows: Vec<SsimRow>,
    pub crossing_classical: Crossing,
    pub crossing_ice: Crossing,
}

impl SsimCurve {
    /// Ratio of the coincidence to the classical crossing power, when both
    /// exist.
    pub fn suppression_ratio(&self) -> Option<f64> {
        Some(self.crossing_ice.power()? / self.crossing_classical.power()?)
    }
}

/// SSIM of each channel against its own zero-power image, one row per
/// power, with crossings at `level`.
pub fn ssim_curve(
    powers: &[f64],
    classical: &[Array2<f64>],
    ice: &[Array2<f64>],
    level: f64,
) -> Result<SsimCurve> {
    if powers.len() < 2 || classical.len() != powers.len() || ice.len() != powers.len() {
        return Err(Error::param("need one classical and one coincidence image per power, at least two powers"));
    }
    if powers[0] != 0.0 {
        return Err(Error::param("the first power must be 0 (reference image)"));
    }
    let rows = powers
        .iter()
        .zip(classical.iter().zip(ice))
        .map(|(&p, (c, q))| {
            Ok(SsimRow { power: p, classical: ssim(&classical[0], c)?, ice: ssim(&ice[0], q)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let cls: Vec<f64> = rows.iter().map(|r| r.classical).collect();
    let qs: Vec<f64> = rows.iter().map(|r| r.ice).collect();
    Ok(SsimCurve {
        crossing_classical: threshold_crossing(powers, &cls, level)?,
        crossing_ice: threshold_crossing(powers, &qs, level)?,
        rows,
    })
}

/// Resolution and depth of field per channel used to pin the PSF model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationTargets {
    pub resolution_classical: f64,
    pub resolution_ice: f64,
    pub dof_classical: f64,
    pub dof_ice: f64,
    /// Pinhole focus relative to the signal focus, um.
    pub pinhole_offset: f64,
    /// Axial positions at which the coincidence curve is fitted.
    pub z_min: f64,
    pub z_max: f64,
    pub z_step: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            resolution_classical: 14.4,
            resolution_ice: 10.4,
            dof_classical: 92.0,
            dof_ice: 95.0,
            pinhole_offset: PINHOLE_FOCAL_OFFSET,
            z_min: -350.0,
            z_max: 350.0,
            z_step: 10.0,
        }
    }
}

impl CalibrationTargets {
    pub fn z_grid(&self) -> Result<Vec<f64>> {
        if !(self.z_step > 0.0 && self.z_max > self.z_min) {
            return Err(Error::param("calibration z grid is empty"));
        }
        let n = ((self.z_max - self.z_min) / self.z_step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| self.z_min + k as f64 * self.z_step).collect())
    }
}

/// Fitted focal resolution and DOF of the model's coincidence channel over
/// the target grid, from the analytic widths.
pub fn ice_curve_fit(psf: &PsfModel, z: &[f64]) -> Result<DofFit> {
    let pts: Vec<(f64, f64)> = z
        .iter()
        .map(|&zz| (zz, fwhm_per_width() * effective_widths(psf, zz).1))
        .collect();
    fit_dof(&pts)
}

/// Solves for the PSF model whose classical and coincidence resolution
/// curves have the target focal resolutions and depths of field.
///
/// The classical curve is an exact hyperbola, so `w_s` and `zr_s` follow in
/// closed form. The pinhole `(w_ep, zr_ep)` is found by driving the fitted
/// coincidence curve to its targets.
pub fn calibrate_psf(targets: &CalibrationTargets) -> Result<PsfModel> {
    for (name, v) in [
        ("resolution_classical", targets.resolution_classical),
        ("resolution_ice", targets.resolution_ice),
        ("dof_classical", targets.dof_classical),
        ("dof_ice", targets.dof_ice),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::param(format!("{name} must be > 0, got {v}")));
        }
    }
    if targets.resolution_ice >= targets.resolution_classical {
        return Err(Error::param("coincidence resolution must be finer than classical"));
    }
    let z = targets.z_grid()?;
    let w_s = targets.resolution_classical / fwhm_per_width();
    let zr_s = 0.5 * targets.dof_classical;
    let model = |p: &DVector<f64>| PsfModel {
        w_s,
        z0_s: 0.0,
        zr_s,
        w_ep: p[0],
        z0_ep: targets.pinhole_offset,
        zr_ep: p[1],
    };
    let residual = |p: &DVector<f64>| -> DVector<f64> {
        match ice_curve_fit(&model(p), &z) {
            Ok(f) => DVector::from_vec(vec![
                (f.fit.params[0] - targets.resolution_ice) / targets.resolution_ice,
                (f.dof.mean - targets.dof_ice) / targets.dof_ice,
            ]),
            Err(_) => DVector::from_element(2, f64::NAN),
        }
    };
    struct Calib<F>(F);
    impl<F: Fn(&DVector<f64>) -> DVector<f64>> Problem for Calib<F> {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            2
        }
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            (self.0)(p)
        }
        fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
            lsq::numeric_jacobian(&self.0, p)
        }
    }
    // Equal-Gaussian product as the starting point.
    let ratio = targets.resolution_classical / targets.resolution_ice;
    let w0 = w_s / (ratio * ratio - 1.0).max(1e-3).sqrt();
    let sol = lsq::solve(&Calib(residual), DVector::from_vec(vec![w0, zr_s]))?;
    if sol.residuals.amax() > 1e-6 {
        return Err(Error::FitFailure(format!(
            "PSF calibration cannot meet the targets (relative misfit {:.3e})",
            sol.residuals.amax()
        )));
    }
    let psf = model(&sol.params);
    psf.validate()?;
    Ok(psf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn esf_points(a: f64, b: f64, x0: f64, w: f64) -> Vec<(f64, f64)> {
        (-50..=50).map(|k| {
            let x = k as f64;
            (x, a * erf((x - x0) / w) + b)
        })
        .collect()
    }

    #[test]
    fn esf_noiseless_recovery() {
        let fit = fit_esf(&esf_points(0.5, 0.5, 0.0, 10.0)).unwrap();
        for (got, want) in fit.params.iter().zip([0.5, 0.5, 0.0, 10.0]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(fit.ci95.iter().all(|&c| (0.0..1e-6).contains(&c)));
    }

    #[test]
    fn esf_reversed_profile() {
        let pts = esf_points(0.5, 0.5, 3.0, 8.0);
        let rev: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (-x, y)).collect();
        let f = fit_esf(&pts).unwrap();
        let r = fit_esf(&rev).unwrap();
        assert_relative_eq!(f.get("w").unwrap(), r.get("w").unwrap(), max_relative = 1e-6);
        assert_relative_eq!(f.get("a").unwrap(), -r.get("a").unwrap(), max_relative = 1e-6);
    }

    #[test]
    fn esf_rejects_bad_input() {
        assert!(fit_esf(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]).is_err());
        let flat: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 2.0)).collect();
        assert!(matches!(fit_esf(&flat), Err(Error::FitFailure(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]
        #[test]
        fn esf_fit_is_optimal(seed in 0u64..500, w in 3.0..20.0f64, x0 in -10.0..10.0f64) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, crate::rng::Domain::Synthetic, 9, 0);
            let pts: Vec<(f64, f64)> = esf_points(0.4, 0.6, x0, w)
                .into_iter()
                .map(|(x, y)| (x, y + 0.02 * (rng.random::<f64>() - 0.5)))
                .collect();
            let fit = fit_esf(&pts).unwrap();
            let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let esf = Esf { x: &x, y: &y };
            let at_fit = esf.residuals(&DVector::from_vec(fit.params.clone())).norm_squared();
            let at_truth = esf.residuals(&DVector::from_vec(vec![0.4, 0.6, x0, w])).norm_squared();
            prop_assert!(at_fit <= at_truth + 1e-12, "{:?} {at_fit} {at_truth}", fit.params);
        }

        #[test]
        fn resolution_is_linear_in_width(w in 0.1..100.0f64) {
            let mk = |w: f64| FitResult { names: vec!["w".into()], params: vec![w], ci95: vec![0.1], residual_norm: 0.0 };
            let r1 = resolution_from_fit(&mk(w)).unwrap().mean;
            let r2 = resolution_from_fit(&mk(2.0 * w)).unwrap().mean;
            prop_assert!((r2 - 2.0 * r1).abs() <= 1e-12 * r2);
        }

        #[test]
        fn ssim_symmetry(seed in 0u64..500) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, crate::rng::Domain::Synthetic, 10, 0);
            let a = Array2::from_shape_fn((5, 7), |_| rng.random::<f64>());
            let b = Array2::from_shape_fn((5, 7), |_| rng.random::<f64>());
            prop_assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn ssim_scaled_copy(seed in 0u64..200, c in 0.01..50.0f64) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, crate::rng::Domain::Synthetic, 11, 0);
            let a = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>() + 0.1);
            // SSIM(a, c a) = 4 c^2 m^2 s^2 / ((1 + c^2) m^2 (1 + c^2) s^2).
            let want = 4.0 * c * c / ((1.0 + c * c) * (1.0 + c * c));
            prop_assert!((ssim(&a, &(&a * c)).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn resolution_example() {
        let fit = FitResult { names: vec!["w".into()], params: vec![10.0], ci95: vec![1.96], residual_norm: 0.0 };
        let r = resolution_from_fit(&fit).unwrap();
        assert!((r.mean - 16.651).abs() < 1e-3);
        assert_relative_eq!(r.stderr, std::f64::consts::LN_2.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn dof_noiseless_recovery() {
        let pts: Vec<(f64, f64)> = (-20..=20).map(|k| {
            let z = 10.0 * k as f64;
            (z, beam_width(10.0, 0.0, 46.0, z))
        })
        .collect();
        let d = fit_dof(&pts).unwrap();
        assert!((d.fit.params[0] - 10.0).abs() < 1e-8);
        assert!(d.fit.params[1].abs() < 1e-7);
        assert!((d.dof.mean - 92.0).abs() < 1e-7);
        assert!(fit_dof(&pts[..4]).is_err());
        assert!(fit_dof(&pts[20..]).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let shifted = &a + 3.0;
        let (m1, m2) = (2.5, 5.5);
        let want = 2.0 * m1 * m2 / (m1 * m1 + m2 * m2);
        assert!((ssim(&a, &shifted).unwrap() - want).abs() < 1e-12);
        assert!(ssim(&a, &(-&a + 10.0)).unwrap() < 0.0);
        assert!(ssim(&Array2::zeros((2, 2)), &Array2::zeros((2, 2))).is_err());
        assert!(ssim(&a, &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn crossing_examples() {
        let p = [0.0, 1.0, 10.0, 100.0];
        let v = [1.0, 0.5, 0.2, 0.05];
        // Between 10 (0.2) and 100 (0.05): f = 2/3 in log10 power.
        let want = 10f64.powf(1.0 + 2.0 / 3.0);
        assert_relative_eq!(threshold_crossing(&p, &v, 0.1).unwrap().power().unwrap(), want, max_relative = 1e-12);
        assert_eq!(threshold_crossing(&p, &[1.0, 0.9, 0.8, 0.7], 0.1).unwrap(), Crossing::Beyond);
        // Linear in power when the bracket starts at zero.
        assert_relative_eq!(threshold_crossing(&[0.0, 4.0], &[1.0, 0.0], 0.1).unwrap().power().unwrap(), 3.6);
        assert!(threshold_crossing(&[1.0, 1.0], &[1.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn zero_power_curve_is_one() {
        let img = array![[1.0, 5.0], [2.0, 7.0]];
        let c = ssim_curve(&[0.0, 1.0], &[img.clone(), img.clone()], &[img.clone(), img], 0.1).unwrap();
        assert!(c.rows.iter().all(|r| r.classical == 1.0 && r.ice == 1.0));
        assert_eq!(c.crossing_classical, Crossing::Beyond);
        assert_eq!(c.suppression_ratio(), None);
    }

    #[test]
    fn calibration_hits_targets_and_preset() {
        let t = CalibrationTargets::default();
        let psf = calibrate_psf(&t).unwrap();
        let fit = ice_curve_fit(&psf, &t.z_grid().unwrap()).unwrap();
        assert_relative_eq!(fit.fit.params[0], 10.4, max_relative = 1e-6);
        assert_relative_eq!(fit.dof.mean, 95.0, max_relative = 1e-6);
        let preset = PsfModel::calibrated();
        assert_relative_eq!(psf.w_ep, preset.w_ep, max_relative = 1e-5);
        assert_relative_eq!(psf.zr_ep, preset.zr_ep, max_relative = 1e-5);
        assert_eq!(psf.w_s, preset.w_s);
        assert_eq!(psf.zr_s, preset.zr_s);
    }

    #[test]
    fn impossible_calibration_is_rejected() {
        let t = CalibrationTargets { resolution_ice: 15.0, ..CalibrationTargets::default() };
        assert!(calibrate_psf(&t).is_err());
    }
}
