//! Transmittance estimators for count images and the SNR metrics used to
//! compare them.
//!
//! Images are `Array2<f64>` (counts converted to reals). A pixel whose
//! estimate is undefined is stored as NaN and flagged; SNR statistics skip
//! it.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    T0,
    Ratio,
    Optsub,
    Cov,
    Scov,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::T0 => "t0",
            Method::Ratio => "ratio",
            Method::Optsub => "optsub",
            Method::Cov => "cov",
            Method::Scov => "scov",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateImage {
    pub t_hat: Array2<f64>,
    pub method: Method,
    /// Mean count over the background region used for normalisation.
    pub background_mean: f64,
    /// True where the estimate is undefined (`t_hat` is NaN there).
    pub flags: Array2<bool>,
}

impl EstimateImage {
    fn new(t_hat: Array2<f64>, method: Method, background_mean: f64) -> Self {
        let flags = t_hat.mapv(|v| !v.is_finite());
        EstimateImage { t_hat, method, background_mean, flags }
    }
}

/// Per-pixel noise-subtraction multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMultiplier {
    pub k_star: Array2<f64>,
    /// True where the multiplier fell back to 0 (no idler variance, or a
    /// histogram bin with fewer than two pixels).
    pub flags: Array2<bool>,
}

/// How the per-pixel multiplier is combined with single-frame counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovFrameMode {
    /// Apply the multiplier to every frame and average the estimates.
    #[default]
    PerFrameMean,
    /// Apply it to the final frame only.
    LastFrame,
}

pub fn to_f64(img: &Array2<u64>) -> Array2<f64> {
    img.mapv(|v| v as f64)
}

fn check_same(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::param(format!("{what}: shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean of `n` over the masked background pixels.
pub fn background_mean(n: &Array2<f64>, background: &Array2<bool>) -> Result<f64> {
    if n.dim() != background.dim() {
        return Err(Error::param("background mask shape differs from the image"));
    }
    let (sum, count) = Zip::from(n)
        .and(background)
        .fold((0.0, 0usize), |(s, c), &v, &b| if b { (s + v, c + 1) } else { (s, c) });
    if count == 0 {
        return Err(Error::degenerate("background region is empty"));
    }
    let mean = sum / count as f64;
    if mean <= 0.0 {
        return Err(Error::degenerate("background mean is zero"));
    }
    Ok(mean)
}

fn spatial_mean(n: &Array2<f64>) -> f64 {
    n.mean().unwrap_or(0.0)
}

/// `N / <N^b>`.
pub fn estimate_t0(n: &Array2<f64>, background: &Array2<bool>) -> Result<EstimateImage> {
    let b = background_mean(n, background)?;
    Ok(EstimateImage::new(n / b, Method::T0, b))
}

/// `(N_s / N_i) <N_i> / <N_s^b>`; pixels with `N_i = 0` are flagged.
pub fn estimate_ratio(n_s: &Array2<f64>, n_i: &Array2<f64>, background: &Array2<bool>) -> Result<EstimateImage> {
    check_same(n_s, n_i, "ratio estimator")?;
    let b = background_mean(n_s, background)?;
    let scale = spatial_mean(n_i) / b;
    let t = Zip::from(n_s)
        .and(n_i)
        .map_collect(|&s, &i| if i > 0.0 { s / i * scale } else { f64::NAN });
    Ok(EstimateImage::new(t, Method::Ratio, b))
}

/// Optimised subtraction with a prior transmittance estimate `t_hat`:
/// `N_s/<N_s^b> - t_hat eta (mu/(mu_stray+mu))^2 dN_i/<N_s^b>`, where
/// `dN_i = N_i - <N_i>`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_optsub(
    n_s: &Array2<f64>,
    n_i: &Array2<f64>,
    t_hat: &Array2<f64>,
    eta: f64,
    mu_spdc: f64,
    mu_stray: f64,
    background: &Array2<bool>,
) -> Result<EstimateImage> {
    check_same(n_s, n_i, "optsub estimator")?;
    check_same(n_s, t_hat, "optsub prior")?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param(format!("eta must lie in [0, 1], got {eta}")));
    }
    if !(mu_spdc >= 0.0 && mu_stray >= 0.0) {
        return Err(Error::param("photon numbers must be >= 0"));
    }
    let b = background_mean(n_s, background)?;
    let total = mu_spdc + mu_stray;
    let weight = if total > 0.0 { eta * (mu_spdc / total).powi(2) } else { 0.0 };
    let ni_mean = spatial_mean(n_i);
    let t = Zip::from(n_s)
        .and(n_i)
        .and(t_hat)
        .map_collect(|&s, &i, &th| s / b - th * weight * (i - ni_mean) / b);
    Ok(EstimateImage::new(t, Method::Optsub, b))
}

/// Population covariance and variance of paired samples.
fn cov_var(x: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (a, b) in x.clone() {
        sx += a;
        sy += b;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut cov, mut var) = (0.0, 0.0);
    for (a, b) in x {
        cov += (a - mx) * (b - my);
        var += (b - my) * (b - my);
    }
    (cov / n as f64, var / n as f64, n)
}

/// Least-squares slope of `y` on `x`, or `None` when `x` is constant.
pub fn regression_slope(y: &[f64], x: &[f64]) -> Option<f64> {
    let (cov, var, _) = cov_var(y.iter().copied().zip(x.iter().copied()));
    (var > 0.0).then(|| cov / var)
}

/// Subtracts the optimal multiple of the centred `x` from `y`; returns the
/// multiplier and the corrected series.
pub fn cov_correct_series(y: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y.len() != x.len() || y.len() < 2 {
        return Err(Error::param("series must have equal length >= 2"));
    }
    let k = regression_slope(y, x).unwrap_or(0.0);
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    Ok((k, y.iter().zip(x).map(|(a, b)| a - k * (b - mx)).collect()))
}

fn check_stacks(n_stack: &[Array2<f64>], i_stack: &[Array2<f64>]) -> Result<()> {
    if n_stack.len() < 2 {
        return Err(Error::param("temporal multiplier needs at least two frames"));
    }
    if n_stack.len() != i_stack.len() {
        return Err(Error::param("signal and idler stacks differ in length"));
    }
    let dim = n_stack[0].dim();
    if n_stack.iter().chain(i_stack).any(|m| m.dim() != dim) {
        return Err(Error::param("all frames must share dimensions"));
    }
    Ok(())
}

/// `k*(r) = Cov_t[N, N_i] / Var_t[N_i]` per pixel; 0 where the idler is
/// constant in time.
pub fn cov_multiplier(n_stack: &[Array2<f64>], i_stack: &[Array2<f64>]) -> Result<CovMultiplier> {
    check_stacks(n_stack, i_stack)?;
    let dim = n_stack[0].dim();
    let mut k_star = Array2::zeros(dim);
    let mut flags = Array2::from_elem(dim, false);
    for ((r, c), k) in k_star.indexed_iter_mut() {
        let series = n_stack.iter().zip(i_stack).map(|(n, i)| (n[[r, c]], i[[r, c]]));
        let (cov, var, _) = cov_var(series);
        if var > 0.0 {
            *k = cov / var;
        } else {
            flags[[r, c]] = true;
        }
    }
    Ok(CovMultiplier { k_star, flags })
}

/// `N/<N^b> - k dN_i/<N^b>` for one frame.
fn subtract(n: &Array2<f64>, n_i: &Array2<f64>, k: &Array2<f64>, background: &Array2<bool>, method: Method) -> Result<EstimateImage> {
    let b = background_mean(n, background)?;
    let ni_mean = spatial_mean(n_i);
    let t = Zip::from(n)
        .and(n_i)
        .and(k)
        .map_collect(|&s, &i, &k| s / b - k * (i - ni_mean) / b);
    Ok(EstimateImage::new(t, method, b))
}

/// Per-frame CoV estimates sharing one temporal multiplier.
pub fn estimate_cov_frames(
    n_stack: &[Array2<f64>],
    i_stack: &[Array2<f64>],
    background: &Array2<bool>,
) -> Result<Vec<EstimateImage>> {
    let k = cov_multiplier(n_stack, i_stack)?;
    n_stack
        .iter()
        .zip(i_stack)
        .map(|(n, i)| subtract(n, i, &k.k_star, background, Method::Cov))
        .collect()
}

/// CoV transmittance estimate of a stack.
pub fn estimate_cov(
    n_stack: &[Array2<f64>],
    i_stack: &[Array2<f64>],
    background: &Array2<bool>,
    mode: CovFrameMode,
) -> Result<EstimateImage> {
    let frames = estimate_cov_frames(n_stack, i_stack, background)?;
    match mode {
        CovFrameMode::LastFrame => Ok(frames.into_iter().last().expect("at least two frames")),
        CovFrameMode::PerFrameMean => {
            let m = frames.len() as f64;
            let t = frames.iter().fold(Array2::zeros(n_stack[0].dim()), |acc, f| acc + &f.t_hat) / m;
            let b = frames.iter().map(|f| f.background_mean).sum::<f64>() / m;
            Ok(EstimateImage::new(t, Method::Cov, b))
        }
    }
}

/// Histogram bin index of each pixel: `bins` equal-width bins over
/// `[min, max]` of `n`, the maximum falling in the last bin.
pub fn histogram_bins(n: &Array2<f64>, bins: usize) -> Result<Array2<usize>> {
    if bins == 0 {
        return Err(Error::param("number of histogram bins must be >= 1"));
    }
    let (lo, hi) = n.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::param("image must be finite and non-empty"));
    }
    let width = (hi - lo) / bins as f64;
    Ok(n.mapv(|v| {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        }
    }))
}

/// Spatial multiplier: one regression slope per histogram bin of `n`.
pub fn scov_multiplier(n: &Array2<f64>, n_i: &Array2<f64>, bins: usize) -> Result<CovMultiplier> {
    check_same(n, n_i, "s-CoV multiplier")?;
    let labels = histogram_bins(n, bins)?;
    let mut slopes = vec![0.0; bins];
    let mut bad = vec![false; bins];
    for (l, (slope, bad)) in slopes.iter_mut().zip(&mut bad).enumerate() {
        let members = Zip::from(n).and(n_i).and(&labels).fold(Vec::new(), |mut v, &a, &b, &lab| {
            if lab == l {
                v.push((a, b));
            }
            v
        });
        if members.is_empty() {
            continue;
        }
        let (cov, var, count) = cov_var(members.iter().copied());
        if count >= 2 && var > 0.0 {
            *slope = cov / var;
        } else {
            *bad = true;
        }
    }
    Ok(CovMultiplier {
        k_star: labels.mapv(|l| slopes[l]),
        flags: labels.mapv(|l| bad[l]),
    })
}

/// Single-frame s-CoV transmittance estimate.
pub fn estimate_scov(n: &Array2<f64>, n_i: &Array2<f64>, bins: usize, background: &Array2<bool>) -> Result<EstimateImage> {
    let k = scov_multiplier(n, n_i, bins)?;
    subtract(n, n_i, &k.k_star, background, Method::Scov)
}

/// Mean over sample standard deviation (n - 1) of the finite samples.
/// Returns infinity for a constant sequence.
pub fn snr(samples: impl IntoIterator<Item = f64>) -> Result<f64> {
    let xs: Vec<f64> = samples.into_iter().filter(|v| v.is_finite()).collect();
    if xs.len() < 2 {
        return Err(Error::degenerate("SNR needs at least two finite samples"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mean / var.sqrt())
}

/// SNR per square root of dwell time (s^-1/2).
pub fn normalized_snr(snr: f64, dwell: f64) -> Result<f64> {
    if !(dwell.is_finite() && dwell > 0.0) {
        return Err(Error::param(format!("dwell time must be > 0, got {dwell}")));
    }
    Ok(snr / dwell.sqrt())
}
