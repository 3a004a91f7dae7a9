//! SSIM of classical and coincidence images of a fibre volume while a
//! randomly firing LED adds stray light to a fixed subset of scan pixels.
//!
//! Every power level reuses the run seed, so the LED schedule and the
//! per-pixel streams are shared and only the stray level changes.

use ndarray::Array2;

use super::{num, summary_rows, Outputs};
use crate::config::StrayLightConfig;
use crate::error::Result;
use crate::io::{Plot, Series};
use crate::metrology::{ssim_curve, Crossing, SsimCurve};
use crate::phantom::{make_fiber_volume, Field, FiberVolumeSpec};
use crate::scanner::{acquire_scan_layers, led_schedule, ScanConfig};

/// Classical (`n_s`) and coincidence (`n_c`) images at one stray level.
pub struct StrayScan {
    pub stray_mu: f64,
    pub classical: Array2<f64>,
    pub ice: Array2<f64>,
}

pub fn scan_config(cfg: &StrayLightConfig, stray_mu: f64) -> ScanConfig {
    ScanConfig {
        pixels_x: cfg.scan_px,
        pixels_y: cfg.scan_px,
        step: cfg.step_um,
        z: -0.5 * cfg.z_extent_um,
        frames: 1,
        stray_probability: cfg.stray_probability,
        stray_mu,
        analyzer_beta: None,
    }
}

pub fn scans(cfg: &StrayLightConfig, seed: u64) -> Result<Vec<StrayScan>> {
    cfg.validate()?;
    let layers = make_fiber_volume(
        &FiberVolumeSpec {
            field: Field::new(cfg.field_px, cfg.field_px, cfg.pitch_um),
            n_fibers: cfg.n_fibers,
            diameter: cfg.fiber_diameter_um,
            z_extent: cfg.z_extent_um,
            n_slices: cfg.n_slices,
        },
        seed,
    )?;
    let source = cfg.source()?;
    let psf = cfg.psf_model()?;
    cfg.stray_mu_grid
        .iter()
        .map(|&mu| {
            let frame = acquire_scan_layers(&layers, &source, &psf, &scan_config(cfg, mu), seed)?
                .swap_remove(0);
            Ok(StrayScan {
                stray_mu: mu,
                classical: frame.n_s.mapv(|v| v as f64),
                ice: frame.n_c.mapv(|v| v as f64),
            })
        })
        .collect()
}

pub fn curve(cfg: &StrayLightConfig, scans: &[StrayScan]) -> Result<SsimCurve> {
    let powers: Vec<f64> = scans.iter().map(|s| s.stray_mu).collect();
    let cls: Vec<Array2<f64>> = scans.iter().map(|s| s.classical.clone()).collect();
    let ice: Vec<Array2<f64>> = scans.iter().map(|s| s.ice.clone()).collect();
    ssim_curve(&powers, &cls, &ice, cfg.ssim_level)
}

fn crossing_value(c: Crossing) -> f64 {
    c.power().unwrap_or(f64::INFINITY)
}

pub fn run(cfg: &StrayLightConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let scans = scans(cfg, seed)?;
    let c = curve(cfg, &scans)?;
    let rows: Vec<Vec<String>> = c
        .rows
        .iter()
        .map(|r| vec![num(r.power), num(r.classical), num(r.ice), num(r.ice - r.classical)])
        .collect();
    out.table("ssim_curve.csv", &["stray_mu", "ssim_classical", "ssim_ice", "delta_ssim"], &rows)?;
    // An open-ended crossing is written as `inf`; the ratio is then `inf` or NaN.
    let (pc, pq) = (crossing_value(c.crossing_classical), crossing_value(c.crossing_ice));
    out.table(
        "stray_summary.csv",
        &["key", "value"],
        &summary_rows(&[
            ("crossing_classical", pc),
            ("crossing_ice", pq),
            ("suppression_ratio", pq / pc),
            ("ssim_level", cfg.ssim_level),
        ]),
    )?;
    let led = led_schedule(&scan_config(cfg, 0.0), seed);
    out.pgm("led_schedule.pgm", &led.mapv(|b| if b { 1.0 } else { 0.0 }))?;
    for (k, s) in [0, scans.len() - 1].into_iter().map(|k| (k, &scans[k])) {
        out.pgm(&format!("classical_{k:02}.pgm"), &s.classical)?;
        out.pgm(&format!("ice_{k:02}.pgm"), &s.ice)?;
    }
    let series = |name: &str, f: fn(&crate::metrology::SsimRow) -> f64| {
        Series::new(name, c.rows.iter().filter(|r| r.power > 0.0).map(|r| (r.power, f(r))).collect())
    };
    out.plot(
        "ssim_curve.svg",
        &Plot::new("SSIM versus stray light", "stray photons per dwell", "SSIM")
            .log_x()
            .with(series("classical", |r| r.classical))
            .with(series("coincidence", |r| r.ice))
            .with(series("difference", |r| r.ice - r.classical)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StrayLightConfig {
        StrayLightConfig {
            field_px: 64,
            scan_px: 32,
            n_fibers: 6,
            stray_mu_grid: vec![0.0, 1e4, 1e6, 1e8],
            ..Default::default()
        }
    }

    #[test]
    fn dark_led_keeps_ssim_at_one() {
        let cfg = StrayLightConfig { stray_probability: 0.0, ..small() };
        let c = curve(&cfg, &scans(&cfg, 1).unwrap()).unwrap();
        for r in &c.rows {
            assert_eq!((r.classical, r.ice), (1.0, 1.0), "{r:?}");
        }
    }

    #[test]
    fn coincidence_image_degrades_later() {
        let cfg = small();
        let c = curve(&cfg, &scans(&cfg, 2).unwrap()).unwrap();
        for r in &c.rows {
            assert!(r.ice >= r.classical, "{r:?}");
        }
    }
}
