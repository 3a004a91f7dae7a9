//! Resolution versus axial position for the classical and coincidence
//! channels, from noiseless edge z-stacks.
//!
//! At each z the central row of the rendered edge is fitted with an erf;
//! the resolution is the FWHM of the fitted Gaussian. A hyperbola through
//! R(z) gives the focal resolution and the depth of field `2 zR`. The same
//! is done for the coincidence image of an accidental-only source, whose
//! coincidences are products of singles and so follow the classical PSF.

use rayon::prelude::*;

use super::{num, summary_rows, Outputs};
use crate::config::ResolutionDofConfig;
use crate::error::{Error, Result};
use crate::io::{Plot, Series};
use crate::metrology::{fit_dof, fit_esf, resolution_from_fit, DofFit, Measurement};
use crate::phantom::{make_edge_target, Field, Layer};
use crate::scanner::{expected_scan, transmittance_images, ScanConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionRow {
    pub z: f64,
    pub classical: Measurement,
    pub ice: Measurement,
    pub accidental: Measurement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionStudy {
    pub rows: Vec<ResolutionRow>,
    pub classical: DofFit,
    pub ice: DofFit,
    pub accidental: DofFit,
}

impl ResolutionStudy {
    /// Relative resolution gain of the coincidence channel at focus, in
    /// percent of the coincidence resolution.
    pub fn improvement_percent(&self) -> f64 {
        let (c, q) = (self.classical.fit.params[0], self.ice.fit.params[0]);
        100.0 * (c - q) / q
    }
}

fn edge_resolution(row: &[f64], step: f64) -> Result<Measurement> {
    let pts: Vec<(f64, f64)> = row
        .iter()
        .enumerate()
        .map(|(k, &v)| ((k as f64 + 0.5) * step, v))
        .collect();
    resolution_from_fit(&fit_esf(&pts)?)
}

pub fn study(cfg: &ResolutionDofConfig) -> Result<ResolutionStudy> {
    cfg.validate()?;
    let psf = cfg.psf_model()?;
    let source = cfg.accidental_source()?;
    let field = Field::new(cfg.width_px, cfg.height_px, cfg.pitch_um);
    let edge = make_edge_target(field, 0.5 * cfg.width_px as f64 * cfg.pitch_um)?;
    let layers = [Layer::at_focus(edge.clone())];
    let base = ScanConfig::covering(&edge);
    let mid = cfg.height_px / 2;

    let rows = cfg
        .z_grid()
        .into_par_iter()
        .map(|z| {
            let scan = ScanConfig { z, ..base };
            let (t_cl, t_q) = transmittance_images(&layers, &psf, &scan)?;
            let acc = expected_scan(&layers, &source, &psf, &scan)?.c;
            let row = |m: &ndarray::Array2<f64>| m.row(mid).to_vec();
            Ok(ResolutionRow {
                z,
                classical: edge_resolution(&row(&t_cl), scan.step)?,
                ice: edge_resolution(&row(&t_q), scan.step)?,
                accidental: edge_resolution(&row(&acc), scan.step)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = |f: fn(&ResolutionRow) -> f64| rows.iter().map(|r| (r.z, f(r))).collect::<Vec<_>>();
    let classical = fit_dof(&curve(|r| r.classical.mean))?;
    let ice = fit_dof(&curve(|r| r.ice.mean))?;
    let accidental = fit_dof(&curve(|r| r.accidental.mean))?;
    if rows.is_empty() {
        return Err(Error::param("empty z grid"));
    }
    Ok(ResolutionStudy { rows, classical, ice, accidental })
}

pub fn run(cfg: &ResolutionDofConfig, out: &mut Outputs) -> Result<()> {
    let s = study(cfg)?;
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.z),
                num(r.classical.mean),
                num(r.classical.stderr),
                num(r.ice.mean),
                num(r.ice.stderr),
                num(r.accidental.mean),
                num(r.accidental.stderr),
            ]
        })
        .collect();
    out.table(
        "resolution_vs_z.csv",
        &[
            "z_um",
            "classical_um",
            "classical_se_um",
            "ice_um",
            "ice_se_um",
            "accidental_um",
            "accidental_se_um",
        ],
        &rows,
    )?;
    let fit_row = |name: &str, f: &DofFit| {
        vec![
            name.to_string(),
            num(f.fit.params[0]),
            num(f.fit.ci95[0]),
            num(f.fit.params[1]),
            num(f.dof.mean),
            num(f.dof.stderr),
        ]
    };
    out.table(
        "dof_fits.csv",
        &["channel", "r0_um", "r0_ci95_um", "z0_um", "dof_um", "dof_se_um"],
        &[
            fit_row("classical", &s.classical),
            fit_row("ice", &s.ice),
            fit_row("accidental", &s.accidental),
        ],
    )?;
    out.table(
        "resolution_summary.csv",
        &["key", "value"],
        &summary_rows(&[
            ("resolution_classical_um", s.classical.fit.params[0]),
            ("resolution_ice_um", s.ice.fit.params[0]),
            ("dof_classical_um", s.classical.dof.mean),
            ("dof_ice_um", s.ice.dof.mean),
            ("improvement_percent", s.improvement_percent()),
        ]),
    )?;
    let series = |name: &str, f: fn(&ResolutionRow) -> f64| {
        Series::new(name, s.rows.iter().map(|r| (r.z, f(r))).collect())
    };
    out.plot(
        "resolution_vs_z.svg",
        &Plot::new("Resolution versus z", "z (um)", "FWHM (um)")
            .with(series("classical", |r| r.classical.mean))
            .with(series("coincidence", |r| r.ice.mean))
            .with(series("accidental only", |r| r.accidental.mean)),
    )
}
