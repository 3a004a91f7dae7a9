//! Sub-shot-noise estimator comparison.
//!
//! A one-dimensional object (first half clear background, second half of
//! transmittance `T`) is imaged for many frames. Each estimator's SNR over
//! the object pixels of all frames is divided by the SNR of the classical
//! `N / <N^b>` estimate. Standard errors come from a bootstrap over frames.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{num, Outputs};
use crate::config::SsnSweepConfig;
use crate::error::Result;
use crate::estimators::{
    cov_correct_series, estimate_cov_frames, estimate_optsub, estimate_ratio, estimate_t0, snr, EstimateImage,
};
use crate::io::{Plot, Series};
use crate::photon_model::{sample_pairs, PairChannel, SourceParams};
use crate::rng::{stream, Domain};

/// Which image is combined with the idler image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Singles,
    Coincidences,
}

impl Input {
    pub fn name(self) -> &'static str {
        match self {
            Input::Singles => "singles",
            Input::Coincidences => "coincidences",
        }
    }
}

/// Compared estimators, in table order.
pub const METHODS: [&str; 3] = ["ratio", "optsub", "cov"];

#[derive(Clone, Debug, PartialEq)]
pub struct SsnPoint {
    pub eta: f64,
    pub stray_ratio: f64,
    /// SNR enhancement over the classical estimate, in `METHODS` order.
    pub enhancement: [f64; 3],
    pub stderr: [f64; 3],
    /// Bootstrap z-scores of `cov - ratio` and `cov - optsub`.
    pub z_cov_ratio: f64,
    pub z_cov_optsub: f64,
    /// Frames with a non-empty background, the only ones evaluated.
    pub frames_used: usize,
}

struct Stacks {
    n_s: Vec<Array2<f64>>,
    n_i: Vec<Array2<f64>>,
    n_c: Vec<Array2<f64>>,
}

fn simulate(cfg: &SsnSweepConfig, eta: f64, stray_ratio: f64, seed: u64, point: u64) -> Stacks {
    let source = SourceParams::entangled(cfg.mu_spdc, stray_ratio * cfg.mu_spdc, eta);
    let p = cfg.pixels;
    let per_pixel: Vec<Vec<[u64; 3]>> = (0..p)
        .into_par_iter()
        .map(|px| {
            let t = if px < p / 2 { 1.0 } else { cfg.transmittance };
            let channel = PairChannel::transmittance(t, t);
            let mut rng = stream(seed, Domain::SsnSweep, point, px as u64);
            (0..cfg.frames)
                .map(|_| {
                    let c = sample_pairs(&source, channel, 0.0, &mut rng);
                    [c.n_s, c.n_i, c.n_c]
                })
                .collect()
        })
        .collect();
    let frame = |f: usize, k: usize| Array2::from_shape_fn((1, p), |(_, px)| per_pixel[px][f][k] as f64);
    Stacks {
        n_s: (0..cfg.frames).map(|f| frame(f, 0)).collect(),
        n_i: (0..cfg.frames).map(|f| frame(f, 1)).collect(),
        n_c: (0..cfg.frames).map(|f| frame(f, 2)).collect(),
    }
}

/// Per-frame `(sum, sum of squares, count)` of the finite object pixels.
type Moments = Vec<[f64; 3]>;

fn moments(frames: &[EstimateImage], object: &[usize]) -> Moments {
    frames
        .iter()
        .map(|e| {
            object.iter().map(|&px| e.t_hat[[0, px]]).filter(|v| v.is_finite()).fold([0.0; 3], |a, v| {
                [a[0] + v, a[1] + v * v, a[2] + 1.0]
            })
        })
        .collect()
}

fn pooled_snr(m: &Moments, frames: &[usize]) -> f64 {
    let [s1, s2, n] = frames.iter().fold([0.0; 3], |a, &f| [a[0] + m[f][0], a[1] + m[f][1], a[2] + m[f][2]]);
    let mean = s1 / n;
    let var = (s2 - n * mean * mean) / (n - 1.0);
    mean / var.sqrt()
}

fn values<'a>(frames: &'a [EstimateImage], object: &'a [usize]) -> impl Iterator<Item = f64> + 'a {
    frames.iter().flat_map(move |e| object.iter().map(move |&px| e.t_hat[[0, px]]))
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Enhancements of one input image type at one sweep point.
fn evaluate(
    cfg: &SsnSweepConfig,
    n: &[Array2<f64>],
    n_i: &[Array2<f64>],
    eta: f64,
    stray_ratio: f64,
    seed: u64,
    point: u64,
) -> Result<SsnPoint> {
    let p = cfg.pixels;
    let background = Array2::from_shape_fn((1, p), |(_, px)| px < p / 2);
    let object: Vec<usize> = (p / 2..p).collect();
    // A frame without background counts has no normalisation.
    let keep: Vec<usize> = (0..n.len())
        .filter(|&f| (0..p / 2).any(|px| n[f][[0, px]] > 0.0))
        .collect();
    let n: Vec<Array2<f64>> = keep.iter().map(|&f| n[f].clone()).collect();
    let n_i: Vec<Array2<f64>> = keep.iter().map(|&f| n_i[f].clone()).collect();

    let t0 = n.iter().map(|m| estimate_t0(m, &background)).collect::<Result<Vec<_>>>()?;
    let ratio = n
        .iter()
        .zip(&n_i)
        .map(|(s, i)| estimate_ratio(s, i, &background))
        .collect::<Result<Vec<_>>>()?;
    let t_hat = t0.iter().fold(Array2::zeros((1, p)), |acc, e| acc + &e.t_hat) / t0.len() as f64;
    let mu_stray = stray_ratio * cfg.mu_spdc;
    let optsub = n
        .iter()
        .zip(&n_i)
        .map(|(s, i)| estimate_optsub(s, i, &t_hat, eta, cfg.mu_spdc, mu_stray, &background))
        .collect::<Result<Vec<_>>>()?;
    let cov = estimate_cov_frames(&n, &n_i, &background)?;

    let base = snr(values(&t0, &object))?;
    let estimates = [&ratio, &optsub, &cov];
    let mut enhancement = [0.0; 3];
    for (e, frames) in enhancement.iter_mut().zip(estimates) {
        *e = snr(values(frames, &object))? / base;
    }

    let m0 = moments(&t0, &object);
    let ms: Vec<Moments> = estimates.iter().map(|f| moments(f, &object)).collect();
    let frames = n.len();
    let boot: Vec<[f64; 3]> = (0..cfg.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, Domain::Bootstrap, point, b as u64);
            let idx: Vec<usize> = (0..frames).map(|_| rng.random_range(0..frames)).collect();
            let b0 = pooled_snr(&m0, &idx);
            [0, 1, 2].map(|k| pooled_snr(&ms[k], &idx) / b0)
        })
        .collect();
    let column = |f: &dyn Fn(&[f64; 3]) -> f64| boot.iter().map(f).collect::<Vec<f64>>();
    let stderr = [0, 1, 2].map(|k| std_dev(&column(&|r| r[k])));
    let z = |other: usize| (enhancement[2] - enhancement[other]) / std_dev(&column(&|r| r[2] - r[other]));
    Ok(SsnPoint {
        eta,
        stray_ratio,
        enhancement,
        stderr,
        z_cov_ratio: z(0),
        z_cov_optsub: z(1),
        frames_used: frames,
    })
}

/// Both input panels at one `(eta, stray_ratio)` point, from one shared
/// simulation.
pub fn sweep_point(
    cfg: &SsnSweepConfig,
    eta: f64,
    stray_ratio: f64,
    seed: u64,
    point: u64,
) -> Result<(SsnPoint, SsnPoint)> {
    let s = simulate(cfg, eta, stray_ratio, seed, point);
    Ok((
        evaluate(cfg, &s.n_s, &s.n_i, eta, stray_ratio, seed, point)?,
        evaluate(cfg, &s.n_c, &s.n_i, eta, stray_ratio, seed, point)?,
    ))
}

/// Variance law of the regression-corrected signal on correlated Gaussian
/// pairs: returns `(rho, Var[corrected] / Var[y])` per grid entry.
pub fn synthetic_variance(cfg: &SsnSweepConfig, seed: u64) -> Result<Vec<(f64, f64)>> {
    cfg.rho_grid
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let mut rng = stream(seed, Domain::Synthetic, k as u64, 0);
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for _ in 0..cfg.synthetic_samples {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                x.push(a);
                y.push(10.0 + rho * a + (1.0 - rho * rho).sqrt() * b);
            }
            let (_, z) = cov_correct_series(&y, &x)?;
            let var = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|t| (t - m).powi(2)).sum::<f64>() / v.len() as f64
            };
            Ok((rho, var(&z) / var(&y)))
        })
        .collect()
}

pub const TABLE_HEADER: [&str; 11] = [
    "eta",
    "stray_ratio",
    "ratio",
    "optsub",
    "cov",
    "ratio_se",
    "optsub_se",
    "cov_se",
    "z_cov_ratio",
    "z_cov_optsub",
    "frames_used",
];

fn row(p: &SsnPoint) -> Vec<String> {
    let mut r = vec![num(p.eta), num(p.stray_ratio)];
    r.extend(p.enhancement.iter().map(|&v| num(v)));
    r.extend(p.stderr.iter().map(|&v| num(v)));
    r.extend([num(p.z_cov_ratio), num(p.z_cov_optsub), p.frames_used.to_string()]);
    r
}

fn plot(title: &str, x_label: &str, points: &[SsnPoint], x: fn(&SsnPoint) -> f64, log: bool) -> Plot {
    let mut plot = Plot::new(title, x_label, "SNR enhancement");
    if log {
        plot = plot.log_x();
    }
    for (k, name) in METHODS.iter().enumerate() {
        plot = plot.with(Series::new(*name, points.iter().map(|p| (x(p), p.enhancement[k])).collect()));
    }
    plot
}

pub fn run(cfg: &SsnSweepConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let mut jobs: Vec<(f64, f64, u64)> = cfg
        .eta_grid
        .iter()
        .enumerate()
        .map(|(k, &eta)| (eta, cfg.stray_ratio, k as u64))
        .collect();
    let n_eta = jobs.len();
    jobs.extend(
        cfg.stray_ratio_grid
            .iter()
            .enumerate()
            .map(|(k, &r)| (cfg.eta, r, 1000 + k as u64)),
    );
    let results = jobs
        .iter()
        .map(|&(eta, r, id)| sweep_point(cfg, eta, r, seed, id))
        .collect::<Result<Vec<_>>>()?;
    let (eta_part, stray_part) = results.split_at(n_eta);

    for (input, pick) in [
        (Input::Singles, (|r: &(SsnPoint, SsnPoint)| r.0.clone()) as fn(&(SsnPoint, SsnPoint)) -> SsnPoint),
        (Input::Coincidences, |r: &(SsnPoint, SsnPoint)| r.1.clone()),
    ] {
        let eta_pts: Vec<SsnPoint> = eta_part.iter().map(pick).collect();
        let stray_pts: Vec<SsnPoint> = stray_part.iter().map(pick).collect();
        let name = input.name();
        out.table(&format!("ssn_eta_{name}.csv"), &TABLE_HEADER, &eta_pts.iter().map(row).collect::<Vec<_>>())?;
        out.table(&format!("ssn_stray_{name}.csv"), &TABLE_HEADER, &stray_pts.iter().map(row).collect::<Vec<_>>())?;
        out.plot(
            &format!("ssn_eta_{name}.svg"),
            &plot(&format!("Enhancement vs efficiency ({name})"), "eta", &eta_pts, |p| p.eta, false),
        )?;
        out.plot(
            &format!("ssn_stray_{name}.svg"),
            &plot(&format!("Enhancement vs stray ratio ({name})"), "mu_stray / mu_spdc", &stray_pts, |p| p.stray_ratio, true),
        )?;
    }

    let synth = synthetic_variance(cfg, seed)?;
    let rows: Vec<Vec<String>> = synth
        .iter()
        .map(|&(rho, ratio)| {
            let want = 1.0 - rho * rho;
            vec![num(rho), num(ratio), num(want), num(1.0 / ratio.sqrt()), num(1.0 / want.sqrt())]
        })
        .collect();
    out.table(
        "ssn_synthetic.csv",
        &["rho", "var_ratio", "var_ratio_expected", "snr_gain", "snr_gain_expected"],
        &rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SsnSweepConfig {
        SsnSweepConfig { frames: 200, bootstrap: 50, pixels: 100, ..Default::default() }
    }

    #[test]
    fn vanishing_efficiency_gives_no_enhancement() {
        let cfg = small();
        let (s, _) = sweep_point(&cfg, 0.05, 1.0, 1, 0).unwrap();
        assert!((s.enhancement[1] - 1.0).abs() < 0.01, "{:?}", s.enhancement);
        assert!((s.enhancement[2] - 1.0).abs() < 0.03, "{:?}", s.enhancement);
    }

    #[test]
    fn synthetic_matches_variance_law() {
        let cfg = SsnSweepConfig { synthetic_samples: 20_000, ..small() };
        for (rho, ratio) in synthetic_variance(&cfg, 4).unwrap() {
            assert!((ratio - (1.0 - rho * rho)).abs() <= 0.05 * (1.0 - rho * rho), "{rho} {ratio}");
        }
    }

    #[test]
    fn cov_leads_at_the_operating_point() {
        let (s, c) = sweep_point(&small(), 0.7, 1.0, 2, 0).unwrap();
        for p in [&s, &c] {
            assert!(p.enhancement[2] >= p.enhancement[0] && p.enhancement[2] >= p.enhancement[1], "{p:?}");
            assert!(p.stderr.iter().all(|&v| v > 0.0 && v < 0.05));
        }
    }
}
