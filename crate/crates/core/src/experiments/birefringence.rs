//! Ghost birefringence: four scans with the idler analyser at each of
//! `BETAS`, inverted pixel by pixel into transmittance, axis angle and
//! retardation maps.

use ndarray::Array2;

use super::{num, Outputs};
use crate::config::GhostBirefringenceConfig;
use crate::error::Result;
use crate::metrology::ssim;
use crate::phantom::{make_birefringent_phantom, region_owner, Phantom, Region};
use crate::polarimetry::{birefringence_image, BirefringenceMaps, PixelFlag, BETAS};
use crate::rng::{derive_seed, Domain};
use crate::scanner::{acquire_scan, effective_widths, ScanConfig};

pub struct GhostRun {
    pub phantom: Phantom,
    pub regions: Vec<Region>,
    /// Signal singles per analyser angle.
    pub classical: Vec<Array2<f64>>,
    /// Coincidences per analyser angle.
    pub ice: Vec<Array2<f64>>,
    pub maps: BirefringenceMaps,
    /// Pixels whose owner is uniform over a neighbourhood wider than the
    /// coincidence PSF; 0 marks the background.
    pub interior: Array2<Option<usize>>,
}

/// Per-region statistics of the recovered maps over interior pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionStats {
    /// 0 for the background, `k + 1` for region `k`.
    pub id: usize,
    pub pixels: usize,
    pub truth: [f64; 3],
    /// Mean and standard deviation of `(T, theta, delta)` over the pixels
    /// flagged `Ok`; for the background, over all pixels.
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    pub flagged: usize,
}

pub fn background_ring(n: usize, margin: usize) -> Array2<bool> {
    Array2::from_shape_fn((n, n), |(r, c)| r.min(c) < margin || r.max(c) >= n - margin)
}

fn interior(owner: &Array2<usize>, halo: usize) -> Array2<Option<usize>> {
    let (h, w) = owner.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        if r < halo || c < halo || r + halo >= h || c + halo >= w {
            return None;
        }
        let k = owner[[r, c]];
        let uniform = (r - halo..=r + halo).all(|y| (c - halo..=c + halo).all(|x| owner[[y, x]] == k));
        uniform.then_some(k)
    })
}

pub fn simulate(cfg: &GhostBirefringenceConfig, seed: u64) -> Result<GhostRun> {
    cfg.validate()?;
    let regions: Vec<Region> = cfg.regions.iter().map(|r| r.region()).collect();
    let phantom = make_birefringent_phantom(cfg.field(), &regions)?;
    let source = cfg.source()?;
    let psf = cfg.psf_model()?;
    let (mut classical, mut ice) = (Vec::new(), Vec::new());
    for (k, &beta) in BETAS.iter().enumerate() {
        let scan = ScanConfig { analyzer_beta: Some(beta), ..ScanConfig::covering(&phantom) };
        let frame = acquire_scan(&phantom, &source, &psf, &scan, derive_seed(seed, Domain::Analyzer, k as u64, 0))?
            .swap_remove(0);
        classical.push(frame.n_s.mapv(|v| v as f64));
        ice.push(frame.n_c.mapv(|v| v as f64));
    }
    let background = background_ring(cfg.field_px, cfg.background_margin_px);
    let maps = birefringence_image([&ice[0], &ice[1], &ice[2], &ice[3]], &background)?;
    let w_c = effective_widths(&psf, 0.0).0;
    let halo = (3.0 * w_c / cfg.pitch_um).ceil() as usize;
    let interior = interior(&region_owner(cfg.field(), &regions), halo);
    Ok(GhostRun { phantom, regions, classical, ice, maps, interior })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

impl GhostRun {
    pub fn region_stats(&self) -> Vec<RegionStats> {
        (0..=self.regions.len())
            .map(|id| {
                let cells: Vec<(usize, usize)> = self
                    .interior
                    .indexed_iter()
                    .filter(|(_, o)| **o == Some(id))
                    .map(|(rc, _)| rc)
                    .collect();
                let ok: Vec<(usize, usize)> = cells
                    .iter()
                    .copied()
                    .filter(|&rc| id == 0 || self.maps.flags[rc] == PixelFlag::Ok)
                    .collect();
                let truth = match id {
                    0 => [1.0, 0.0, 0.0],
                    k => {
                        let r = &self.regions[k - 1];
                        [r.t, r.theta, r.delta]
                    }
                };
                let maps = [&self.maps.t, &self.maps.theta, &self.maps.delta];
                let stats = maps.map(|m| mean_sd(&ok.iter().map(|&rc| m[rc]).collect::<Vec<_>>()));
                RegionStats {
                    id,
                    pixels: cells.len(),
                    truth,
                    mean: stats.map(|s| s.0),
                    sd: stats.map(|s| s.1),
                    flagged: cells.len() - ok.len(),
                }
            })
            .collect()
    }

    /// SSIM of every pair of classical images, `(i, j, ssim)`.
    pub fn classical_ssim(&self) -> Result<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        for i in 0..self.classical.len() {
            for j in i + 1..self.classical.len() {
                out.push((i, j, ssim(&self.classical[i], &self.classical[j])?));
            }
        }
        Ok(out)
    }
}

pub fn run(cfg: &GhostBirefringenceConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let g = simulate(cfg, seed)?;
    for (k, beta) in BETAS.iter().enumerate() {
        out.pgm(&format!("ice_beta{beta:03}.pgm"), &g.ice[k])?;
        out.pgm(&format!("classical_beta{beta:03}.pgm"), &g.classical[k])?;
        out.matrix(&format!("ice_beta{beta:03}.csv"), &g.ice[k])?;
    }
    for (name, m) in [("t", &g.maps.t), ("theta", &g.maps.theta), ("delta", &g.maps.delta)] {
        out.matrix(&format!("{name}_map.csv"), m)?;
        out.pgm(&format!("{name}_map.pgm"), m)?;
    }
    out.matrix("flags.csv", &g.maps.flags.mapv(|f| f as u8 as f64))?;
    let rows: Vec<Vec<String>> = g
        .region_stats()
        .iter()
        .map(|s| {
            let mut row = vec![s.id.to_string(), s.pixels.to_string(), s.flagged.to_string()];
            for k in 0..3 {
                row.extend([num(s.truth[k]), num(s.mean[k]), num(s.sd[k])]);
            }
            row
        })
        .collect();
    out.table(
        "region_summary.csv",
        &[
            "region",
            "pixels",
            "flagged",
            "t_true",
            "t_mean",
            "t_sd",
            "theta_true_deg",
            "theta_mean_deg",
            "theta_sd_deg",
            "delta_true_rad",
            "delta_mean_rad",
            "delta_sd_rad",
        ],
        &rows,
    )?;
    let pairs: Vec<Vec<String>> = g
        .classical_ssim()?
        .into_iter()
        .map(|(i, j, v)| vec![num(BETAS[i]), num(BETAS[j]), num(v)])
        .collect();
    out.table("classical_ssim.csv", &["beta_a_deg", "beta_b_deg", "ssim"], &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RegionKeys, ShapeKeys};

    #[test]
    fn known_regions_are_recovered() {
        let g = simulate(&GhostBirefringenceConfig::default(), 5).unwrap();
        for s in g.region_stats().iter().skip(1) {
            assert!(s.pixels > 20, "{s:?}");
            assert!((s.mean[0] - s.truth[0]).abs() < 0.03, "{s:?}");
            assert!((s.mean[1] - s.truth[1]).abs() < 2.0, "{s:?}");
            assert!((s.mean[2] - s.truth[2]).abs() < 0.05, "{s:?}");
        }
        for (_, _, v) in g.classical_ssim().unwrap() {
            assert!(v > 0.99, "{v}");
        }
    }

    #[test]
    fn zero_retardation_gives_flat_delta() {
        let cfg = GhostBirefringenceConfig {
            regions: vec![RegionKeys {
                shape: ShapeKeys::Disk { cx_um: 160.0, cy_um: 160.0, r_um: 60.0 },
                t: 0.7,
                theta_deg: 20.0,
                delta_rad: 0.0,
            }],
            ..Default::default()
        };
        let g = simulate(&cfg, 1).unwrap();
        let inside: Vec<f64> = g
            .interior
            .indexed_iter()
            .filter(|(_, o)| o.is_some())
            .map(|(rc, _)| g.maps.delta[rc])
            .collect();
        assert!(inside.len() > 100);
        // The three-sigma retardation test lets a fraction of a percent of
        // pure-noise pixels through.
        let off = inside.iter().filter(|d| d.abs() >= 0.2).count();
        assert!(off * 100 <= inside.len(), "{off} of {}", inside.len());
    }
}
