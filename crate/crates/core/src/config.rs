//! Run configuration files.
//!
//! A config is a TOML document with one flat table per experiment or CLI
//! pipeline. Dimensional keys carry their unit as a suffix (`_um`, `_ns`,
//! `_s`, `_deg`, `_rad`); unsuffixed numbers are dimensionless. Every table
//! has full defaults, so an empty file is a valid config. Unknown keys are
//! errors, and validation errors name the offending `table.key`.

use std::fmt::Display;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CovFrameMode, Method};
use crate::phantom::{Field, Phantom, Region, Shape};
use crate::photon_model::{SourceMode, SourceParams};
use crate::scanner::{PsfModel, ScanConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biref: Option<BirefConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssn_sweep: Option<SsnSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_dof: Option<ResolutionDofConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stray_light: Option<StrayLightConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bell: Option<BellConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ghost_birefringence: Option<GhostBirefringenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_comparison: Option<SourceComparisonConfig>,
}

impl Config {
    /// Parses and validates a config document. `origin` names the source in
    /// error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| toml_error(text, origin, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every table present, with defaults filled in.
    pub fn with_all_defaults() -> Self {
        Config {
            simulate: Some(Default::default()),
            estimate: Some(Default::default()),
            biref: Some(Default::default()),
            ssn_sweep: Some(Default::default()),
            resolution_dof: Some(Default::default()),
            stray_light: Some(Default::default()),
            bell: Some(Default::default()),
            ghost_birefringence: Some(Default::default()),
            source_comparison: Some(Default::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn opt<T>(v: &Option<T>, f: impl Fn(&T) -> Result<()>) -> Result<()> {
            v.as_ref().map_or(Ok(()), f)
        }
        opt(&self.simulate, SimulateConfig::validate)?;
        opt(&self.estimate, EstimateConfig::validate)?;
        opt(&self.biref, BirefConfig::validate)?;
        opt(&self.ssn_sweep, SsnSweepConfig::validate)?;
        opt(&self.resolution_dof, ResolutionDofConfig::validate)?;
        opt(&self.stray_light, StrayLightConfig::validate)?;
        opt(&self.bell, BellConfig::validate)?;
        opt(&self.ghost_birefringence, GhostBirefringenceConfig::validate)?;
        opt(&self.source_comparison, SourceComparisonConfig::validate)
    }
}

/// One-line description of a TOML error, naming the key on the offending
/// line where the parser does not.
fn toml_error(text: &str, origin: &str, e: &toml::de::Error) -> Error {
    let message = e.message().replace('\n', " ");
    let Some(span) = e.span() else {
        return Error::Config(format!("{origin}: {message}"));
    };
    let start = span.start.min(text.len());
    let line_no = text[..start].matches('\n').count() + 1;
    let line = text.lines().nth(line_no - 1).unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) if !message.contains('`') => Error::Config(format!(
            "{origin}: line {line_no}: key `{}`: {message}",
            key.trim()
        )),
        _ => Error::Config(format!("{origin}: line {line_no}: {message}")),
    }
}

/// Validation helpers bound to a table name.
struct Table(&'static str);

impl Table {
    fn fail(&self, key: &str, value: impl Display, why: &str) -> Error {
        Error::Config(format!("{}.{key} = {value}: {why}", self.0))
    }

    fn positive(&self, key: &str, v: f64) -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(self.fail(key, v, "must be finite and > 0"))
        }
    }

    fn non_negative(&self, key: &str, v: f64) -> Result<()> {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(self.fail(key, v, "must be finite and >= 0"))
        }
    }

    fn finite(&self, key: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(self.fail(key, v, "must be finite"))
        }
    }

    /// `[0, 1]`, or `(0, 1]` when `open_low`.
    fn fraction(&self, key: &str, v: f64, open_low: bool) -> Result<()> {
        let ok = if open_low { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
        if ok {
            Ok(())
        } else if open_low {
            Err(self.fail(key, v, "must lie in (0, 1]"))
        } else {
            Err(self.fail(key, v, "must lie in [0, 1]"))
        }
    }

    fn at_least(&self, key: &str, v: usize, min: usize) -> Result<()> {
        if v >= min {
            Ok(())
        } else {
            Err(self.fail(key, v, &format!("must be >= {min}")))
        }
    }

    fn non_empty<T>(&self, key: &str, v: &[T]) -> Result<()> {
        if v.is_empty() {
            Err(self.fail(key, "[]", "must not be empty"))
        } else {
            Ok(())
        }
    }

    fn increasing(&self, key: &str, v: &[f64]) -> Result<()> {
        if v.windows(2).any(|w| !(w[1] > w[0])) {
            Err(self.fail(key, format!("{v:?}"), "must be strictly increasing"))
        } else {
            Ok(())
        }
    }

    /// Re-labels a library parameter error as a config error of this table.
    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Parameter(m) => Error::Config(format!("{}: {m}", self.0)),
            other => other,
        })
    }
}

/// Source keys shared by several tables.
#[allow(clippy::too_many_arguments)]
fn source_params(
    t: &Table,
    mu_spdc: f64,
    mu_stray: f64,
    eta: f64,
    tau_c_ns: f64,
    t_dwell_s: f64,
    mode: SourceMode,
) -> Result<SourceParams> {
    t.non_negative("mu_spdc", mu_spdc)?;
    t.non_negative("mu_stray", mu_stray)?;
    t.fraction("eta", eta, false)?;
    t.positive("tau_c_ns", tau_c_ns)?;
    t.positive("t_dwell_s", t_dwell_s)?;
    let s = SourceParams { mu_spdc, mu_stray, eta, tau_c: tau_c_ns * 1e-9, t_dwell: t_dwell_s, mode };
    t.wrap(s.validate())?;
    Ok(s)
}

/// PSF keys shared by several tables, defaulting to the calibrated preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfKeys {
    pub w_s_um: f64,
    pub z0_s_um: f64,
    pub zr_s_um: f64,
    pub w_ep_um: f64,
    pub z0_ep_um: f64,
    pub zr_ep_um: f64,
}

impl Default for PsfKeys {
    fn default() -> Self {
        let p = PsfModel::calibrated();
        PsfKeys {
            w_s_um: p.w_s,
            z0_s_um: p.z0_s,
            zr_s_um: p.zr_s,
            w_ep_um: p.w_ep,
            z0_ep_um: p.z0_ep,
            zr_ep_um: p.zr_ep,
        }
    }
}

impl PsfKeys {
    fn model(&self, t: &Table) -> Result<PsfModel> {
        t.positive("w_s_um", self.w_s_um)?;
        t.finite("z0_s_um", self.z0_s_um)?;
        t.positive("zr_s_um", self.zr_s_um)?;
        t.positive("w_ep_um", self.w_ep_um)?;
        t.finite("z0_ep_um", self.z0_ep_um)?;
        t.positive("zr_ep_um", self.zr_ep_um)?;
        Ok(PsfModel {
            w_s: self.w_s_um,
            z0_s: self.z0_s_um,
            zr_s: self.zr_s_um,
            w_ep: self.w_ep_um,
            z0_ep: self.z0_ep_um,
            zr_ep: self.zr_ep_um,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    #[default]
    Bar,
    Edge,
    Fibers,
    Clear,
}

/// `simulate`: scan a synthetic phantom and write the count stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub phantom: PhantomKind,
    pub pitch_um: f64,
    /// Field size for edge, fibre and clear phantoms.
    pub field_px: usize,
    pub bar_widths_um: Vec<f64>,
    pub edge_x_um: f64,
    pub n_fibers: usize,
    pub fiber_diameter_um: f64,
    pub z_extent_um: f64,
    pub n_slices: usize,
    pub mu_spdc: f64,
    pub mu_stray: f64,
    pub eta: f64,
    pub tau_c_ns: f64,
    pub t_dwell_s: f64,
    pub source_mode: SourceMode,
    /// Scan size; 0 covers the phantom at the scan step.
    pub scan_px_x: usize,
    pub scan_px_y: usize,
    /// Scan step; 0 uses the phantom pitch.
    pub step_um: f64,
    pub z_um: f64,
    pub frames: usize,
    pub stray_probability: f64,
    pub stray_mu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analyzer_beta_deg: Option<f64>,
    pub psf: PsfKeys,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            phantom: PhantomKind::Bar,
            pitch_um: 2.0,
            field_px: 128,
            bar_widths_um: vec![8.0, 12.0, 16.0, 24.0],
            edge_x_um: 128.0,
            n_fibers: 12,
            fiber_diameter_um: 7.0,
            z_extent_um: 100.0,
            n_slices: 3,
            mu_spdc: 1000.0,
            mu_stray: 0.0,
            eta: 0.5,
            tau_c_ns: 8.0,
            t_dwell_s: 1.0,
            source_mode: SourceMode::Entangled,
            scan_px_x: 0,
            scan_px_y: 0,
            step_um: 0.0,
            z_um: 0.0,
            frames: 4,
            stray_probability: 0.0,
            stray_mu: 0.0,
            analyzer_beta_deg: None,
            psf: PsfKeys::default(),
        }
    }
}

impl SimulateConfig {
    const T: Table = Table("simulate");

    pub fn validate(&self) -> Result<()> {
        let t = &Self::T;
        t.positive("pitch_um", self.pitch_um)?;
        t.at_least("field_px", self.field_px, 1)?;
        for &w in &self.bar_widths_um {
            t.positive("bar_widths_um", w)?;
        }
        t.finite("edge_x_um", self.edge_x_um)?;
        t.positive("fiber_diameter_um", self.fiber_diameter_um)?;
        t.non_negative("z_extent_um", self.z_extent_um)?;
        t.at_least("n_slices", self.n_slices, 1)?;
        self.source()?;
        t.non_negative("step_um", self.step_um)?;
        t.finite("z_um", self.z_um)?;
        t.at_least("frames", self.frames, 1)?;
        t.fraction("stray_probability", self.stray_probability, false)?;
        t.non_negative("stray_mu", self.stray_mu)?;
        if let Some(b) = self.analyzer_beta_deg {
            t.finite("analyzer_beta_deg", b)?;
        }
        self.psf.model(t)?;
        Ok(())
    }

    pub fn source(&self) -> Result<SourceParams> {
        source_params(
            &Self::T,
            self.mu_spdc,
            self.mu_stray,
            self.eta,
            self.tau_c_ns,
            self.t_dwell_s,
            self.source_mode,
        )
    }

    pub fn psf_model(&self) -> Result<PsfModel> {
        self.psf.model(&Self::T)
    }

    pub fn field(&self) -> Field {
        Field::new(self.field_px, self.field_px, self.pitch_um)
    }

    /// Scan over `phantom`, resolving the zero defaults of the scan size and
    /// step against its field.
    pub fn scan_config(&self, phantom: &Phantom) -> ScanConfig {
        let step = if self.step_um > 0.0 { self.step_um } else { phantom.field.pitch };
        let cover = |n: usize, set: usize| match set {
            0 => ((n as f64 * phantom.field.pitch / step).floor() as usize).max(1),
            k => k,
        };
        ScanConfig {
            pixels_x: cover(phantom.width(), self.scan_px_x),
            pixels_y: cover(phantom.height(), self.scan_px_y),
            step,
            z: self.z_um,
            frames: self.frames,
            stray_probability: self.stray_probability,
            stray_mu: self.stray_mu,
            analyzer_beta: self.analyzer_beta_deg,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Signal singles.
    #[default]
    S,
    /// Coincidences.
    C,
}

/// `estimate`: transmittance estimation on a saved count stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub method: Method,
    pub channel: Channel,
    /// Background rectangle `[x0, y0, x1, y1)` in scan pixels.
    pub background_px: [usize; 4],
    pub bins: usize,
    pub cov_frames: CovFrameMode,
    /// Source parameters for the optimised-subtraction weight.
    pub eta: f64,
    pub mu_spdc: f64,
    pub mu_stray: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            method: Method::Cov,
            channel: Channel::S,
            background_px: [0, 0, 4, 4],
            bins: 16,
            cov_frames: CovFrameMode::PerFrameMean,
            eta: 0.5,
            mu_spdc: 1000.0,
            mu_stray: 0.0,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        let t = Table("estimate");
        let [x0, y0, x1, y1] = self.background_px;
        if x1 <= x0 || y1 <= y0 {
            return Err(t.fail("background_px", format!("{:?}", self.background_px), "rectangle is empty"));
        }
        t.at_least("bins", self.bins, 1)?;
        t.fraction("eta", self.eta, false)?;
        t.non_negative("mu_spdc", self.mu_spdc)?;
        t.non_negative("mu_stray", self.mu_stray)
    }
}

/// `biref`: inversion of four coincidence images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BirefConfig {
    /// Background rectangle `[x0, y0, x1, y1)` in pixels.
    pub background_px: [usize; 4],
}

impl Default for BirefConfig {
    fn default() -> Self {
        BirefConfig { background_px: [0, 0, 4, 4] }
    }
}

impl BirefConfig {
    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.background_px;
        if x1 <= x0 || y1 <= y0 {
            return Err(Table("biref").fail("background_px", format!("{:?}", self.background_px), "rectangle is empty"));
        }
        Ok(())
    }
}

/// Sub-shot-noise estimator comparison on a one-dimensional object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsnSweepConfig {
    pub mu_spdc: f64,
    /// Object transmittance; the other half of the pixels is clear background.
    pub transmittance: f64,
    /// Efficiency held fixed while the stray ratio varies.
    pub eta: f64,
    pub eta_grid: Vec<f64>,
    /// `mu_stray / mu_spdc` held fixed while the efficiency varies.
    pub stray_ratio: f64,
    pub stray_ratio_grid: Vec<f64>,
    /// Total pixels; the first half is background.
    pub pixels: usize,
    pub frames: usize,
    /// Bootstrap resamples over frames for standard errors.
    pub bootstrap: usize,
    /// Correlations for the synthetic Gaussian check of the variance law.
    pub rho_grid: Vec<f64>,
    pub synthetic_samples: usize,
}

impl Default for SsnSweepConfig {
    fn default() -> Self {
        SsnSweepConfig {
            mu_spdc: 10.0,
            transmittance: 0.5,
            eta: 0.7,
            eta_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            stray_ratio: 1.0,
            stray_ratio_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            pixels: 200,
            frames: 1000,
            bootstrap: 200,
            rho_grid: vec![0.0, 0.5, 0.8, 0.95],
            synthetic_samples: 100_000,
        }
    }
}

impl SsnSweepConfig {
    pub fn validate(&self) -> Result<()> {
        let t = Table("ssn_sweep");
        t.positive("mu_spdc", self.mu_spdc)?;
        t.fraction("transmittance", self.transmittance, true)?;
        t.fraction("eta", self.eta, true)?;
        t.non_empty("eta_grid", &self.eta_grid)?;
        for &e in &self.eta_grid {
            t.fraction("eta_grid", e, true)?;
        }
        t.non_negative("stray_ratio", self.stray_ratio)?;
        t.non_empty("stray_ratio_grid", &self.stray_ratio_grid)?;
        for &r in &self.stray_ratio_grid {
            t.non_negative("stray_ratio_grid", r)?;
        }
        t.at_least("pixels", self.pixels, 4)?;
        if !self.pixels.is_multiple_of(2) {
            return Err(t.fail("pixels", self.pixels, "must be even"));
        }
        t.at_least("frames", self.frames, 3)?;
        t.at_least("bootstrap", self.bootstrap, 2)?;
        for &r in &self.rho_grid {
            if !(r > -1.0 && r < 1.0) {
                return Err(t.fail("rho_grid", r, "must lie in (-1, 1)"));
            }
        }
        t.at_least("synthetic_samples", self.synthetic_samples, 3)
    }
}

/// Resolution and depth of field of both channels from edge z-stacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolutionDofConfig {
    pub pitch_um: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub z_min_um: f64,
    pub z_max_um: f64,
    pub z_step_um: f64,
    /// Source for the accidental-only comparison.
    pub mu_spdc: f64,
    pub eta: f64,
    pub accidental_tau_c_ns: f64,
    pub t_dwell_s: f64,
    pub psf: PsfKeys,
}

impl Default for ResolutionDofConfig {
    fn default() -> Self {
        let b = SourceParams::benchtop();
        ResolutionDofConfig {
            pitch_um: 1.0,
            width_px: 1024,
            height_px: 4,
            z_min_um: -350.0,
            z_max_um: 350.0,
            z_step_um: 10.0,
            mu_spdc: b.mu_spdc,
            eta: b.eta,
            accidental_tau_c_ns: 400.0,
            t_dwell_s: 1.0,
            psf: PsfKeys::default(),
        }
    }
}

impl ResolutionDofConfig {
    const T: Table = Table("resolution_dof");

    pub fn validate(&self) -> Result<()> {
        let t = &Self::T;
        t.positive("pitch_um", self.pitch_um)?;
        t.at_least("width_px", self.width_px, 8)?;
        t.at_least("height_px", self.height_px, 1)?;
        t.finite("z_min_um", self.z_min_um)?;
        t.finite("z_max_um", self.z_max_um)?;
        t.positive("z_step_um", self.z_step_um)?;
        if self.z_grid().len() < 5 {
            return Err(t.fail("z_max_um", self.z_max_um, "z grid needs at least five positions"));
        }
        self.accidental_source()?;
        self.psf.model(t)?;
        Ok(())
    }

    pub fn z_grid(&self) -> Vec<f64> {
        if !(self.z_step_um > 0.0 && self.z_max_um >= self.z_min_um) {
            return Vec::new();
        }
        let n = ((self.z_max_um - self.z_min_um) / self.z_step_um + 1e-9).floor() as usize + 1;
        (0..n).map(|k| self.z_min_um + k as f64 * self.z_step_um).collect()
    }

    pub fn accidental_source(&self) -> Result<SourceParams> {
        source_params(
            &Self::T,
            self.mu_spdc,
            0.0,
            self.eta,
            self.accidental_tau_c_ns,
            self.t_dwell_s,
            SourceMode::AccidentalOnly,
        )
    }

    pub fn psf_model(&self) -> Result<PsfModel> {
        self.psf.model(&Self::T)
    }
}

/// SSIM degradation of both channels under a random stray-light schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrayLightConfig {
    pub field_px: usize,
    pub pitch_um: f64,
    pub scan_px: usize,
    pub step_um: f64,
    pub n_fibers: usize,
    pub fiber_diameter_um: f64,
    pub z_extent_um: f64,
    pub n_slices: usize,
    pub mu_spdc: f64,
    pub eta: f64,
    pub tau_c_ns: f64,
    pub t_dwell_s: f64,
    pub stray_probability: f64,
    /// Mean extra stray photons per dwell at lit pixels; must start at 0.
    pub stray_mu_grid: Vec<f64>,
    pub ssim_level: f64,
    pub psf: PsfKeys,
}

impl Default for StrayLightConfig {
    fn default() -> Self {
        let b = SourceParams::benchtop();
        let mut grid = vec![0.0];
        grid.extend((0..=24).map(|k| 10f64.powf(3.0 + 0.25 * k as f64)));
        StrayLightConfig {
            field_px: 128,
            pitch_um: 2.0,
            scan_px: 64,
            step_um: 4.0,
            n_fibers: 12,
            fiber_diameter_um: 7.0,
            z_extent_um: 100.0,
            n_slices: 3,
            mu_spdc: b.mu_spdc,
            eta: b.eta,
            tau_c_ns: 8.0,
            t_dwell_s: 1.0,
            stray_probability: 0.2,
            stray_mu_grid: grid,
            ssim_level: 0.1,
            psf: PsfKeys::default(),
        }
    }
}

impl StrayLightConfig {
    const T: Table = Table("stray_light");

    pub fn validate(&self) -> Result<()> {
        let t = &Self::T;
        t.at_least("field_px", self.field_px, 8)?;
        t.positive("pitch_um", self.pitch_um)?;
        t.at_least("scan_px", self.scan_px, 2)?;
        t.positive("step_um", self.step_um)?;
        if self.scan_px as f64 * self.step_um > self.field_px as f64 * self.pitch_um {
            return Err(t.fail("scan_px", self.scan_px, "scan extends beyond the phantom"));
        }
        t.positive("fiber_diameter_um", self.fiber_diameter_um)?;
        t.non_negative("z_extent_um", self.z_extent_um)?;
        t.at_least("n_slices", self.n_slices, 1)?;
        self.source()?;
        t.fraction("stray_probability", self.stray_probability, false)?;
        if self.stray_mu_grid.len() < 2 || self.stray_mu_grid[0] != 0.0 {
            return Err(t.fail(
                "stray_mu_grid",
                format!("{:?}", self.stray_mu_grid),
                "needs at least two powers, starting at 0",
            ));
        }
        t.increasing("stray_mu_grid", &self.stray_mu_grid)?;
        t.fraction("ssim_level", self.ssim_level, true)?;
        self.psf.model(t)?;
        Ok(())
    }

    pub fn source(&self) -> Result<SourceParams> {
        source_params(&Self::T, self.mu_spdc, 0.0, self.eta, self.tau_c_ns, self.t_dwell_s, SourceMode::Entangled)
    }

    pub fn psf_model(&self) -> Result<PsfModel> {
        self.psf.model(&Self::T)
    }
}

/// CHSH test with Poisson-sampled coincidences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellConfig {
    /// Maximum true coincidences per setting.
    pub n0: f64,
    /// Accidental-to-true ratio `n1 / n0`.
    pub n1_ratio: f64,
    pub rounds: usize,
}

impl Default for BellConfig {
    fn default() -> Self {
        BellConfig { n0: 2000.0, n1_ratio: 0.0086, rounds: 10 }
    }
}

impl BellConfig {
    pub fn validate(&self) -> Result<()> {
        let t = Table("bell");
        t.positive("n0", self.n0)?;
        t.non_negative("n1_ratio", self.n1_ratio)?;
        t.at_least("rounds", self.rounds, 2)
    }
}

/// Birefringence recovered by rotating only the idler analyser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhostBirefringenceConfig {
    pub field_px: usize,
    pub pitch_um: f64,
    /// Width of the clear border used as the normalisation background.
    pub background_margin_px: usize,
    pub mu_spdc: f64,
    pub eta: f64,
    pub tau_c_ns: f64,
    pub t_dwell_s: f64,
    /// Regions drawn in order over a clear isotropic background.
    pub regions: Vec<RegionKeys>,
    pub psf: PsfKeys,
}

/// A phantom region with unit-suffixed keys.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionKeys {
    pub shape: ShapeKeys,
    pub t: f64,
    pub theta_deg: f64,
    pub delta_rad: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeKeys {
    Full,
    Rect { x0_um: f64, y0_um: f64, x1_um: f64, y1_um: f64 },
    Disk { cx_um: f64, cy_um: f64, r_um: f64 },
}

impl RegionKeys {
    pub fn region(&self) -> Region {
        let shape = match self.shape {
            ShapeKeys::Full => Shape::Full,
            ShapeKeys::Rect { x0_um, y0_um, x1_um, y1_um } => Shape::Rect { x0: x0_um, y0: y0_um, x1: x1_um, y1: y1_um },
            ShapeKeys::Disk { cx_um, cy_um, r_um } => Shape::Disk { cx: cx_um, cy: cy_um, r: r_um },
        };
        Region { shape, t: self.t, theta: self.theta_deg, delta: self.delta_rad }
    }
}

impl Default for GhostBirefringenceConfig {
    fn default() -> Self {
        GhostBirefringenceConfig {
            field_px: 80,
            pitch_um: 4.0,
            background_margin_px: 4,
            mu_spdc: 4.0e5,
            eta: 0.25,
            tau_c_ns: 8.0,
            t_dwell_s: 1.0,
            regions: vec![
                RegionKeys {
                    shape: ShapeKeys::Disk { cx_um: 100.0, cy_um: 160.0, r_um: 50.0 },
                    t: 0.8,
                    theta_deg: 30.0,
                    delta_rad: 1.2,
                },
                RegionKeys {
                    shape: ShapeKeys::Rect { x0_um: 180.0, y0_um: 80.0, x1_um: 270.0, y1_um: 240.0 },
                    t: 0.6,
                    theta_deg: 60.0,
                    delta_rad: 2.0,
                },
            ],
            psf: PsfKeys::default(),
        }
    }
}

impl GhostBirefringenceConfig {
    const T: Table = Table("ghost_birefringence");

    pub fn validate(&self) -> Result<()> {
        let t = &Self::T;
        t.at_least("field_px", self.field_px, 8)?;
        t.positive("pitch_um", self.pitch_um)?;
        t.at_least("background_margin_px", self.background_margin_px, 1)?;
        if 2 * self.background_margin_px >= self.field_px {
            return Err(t.fail("background_margin_px", self.background_margin_px, "leaves no interior"));
        }
        self.source()?;
        for r in &self.regions {
            t.fraction("regions.t", r.t, false)?;
            if !(0.0..90.0).contains(&r.theta_deg) {
                return Err(t.fail("regions.theta_deg", r.theta_deg, "must lie in [0, 90)"));
            }
            if !(0.0..=std::f64::consts::PI).contains(&r.delta_rad) {
                return Err(t.fail("regions.delta_rad", r.delta_rad, "must lie in [0, pi]"));
            }
        }
        self.psf.model(t)?;
        Ok(())
    }

    pub fn source(&self) -> Result<SourceParams> {
        source_params(&Self::T, self.mu_spdc, 0.0, self.eta, self.tau_c_ns, self.t_dwell_s, SourceMode::Entangled)
    }

    pub fn psf_model(&self) -> Result<PsfModel> {
        self.psf.model(&Self::T)
    }

    pub fn field(&self) -> Field {
        Field::new(self.field_px, self.field_px, self.pitch_um)
    }
}

/// Coincidence-image SNR of an entangled and a flux-matched classical source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceComparisonConfig {
    pub field_px: usize,
    pub pitch_um: f64,
    pub transmittance: f64,
    pub mu_spdc: f64,
    pub eta: f64,
    pub tau_c_ns: f64,
    pub t_dwell_s: f64,
    /// Multiples of `mu_spdc` at which both sources are compared.
    pub flux_factors: Vec<f64>,
}

impl Default for SourceComparisonConfig {
    fn default() -> Self {
        let b = SourceParams::benchtop();
        SourceComparisonConfig {
            field_px: 32,
            pitch_um: 4.0,
            transmittance: 1.0,
            mu_spdc: b.mu_spdc,
            eta: b.eta,
            tau_c_ns: 8.0,
            t_dwell_s: 1.0,
            flux_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl SourceComparisonConfig {
    const T: Table = Table("source_comparison");

    pub fn validate(&self) -> Result<()> {
        let t = &Self::T;
        t.at_least("field_px", self.field_px, 2)?;
        t.positive("pitch_um", self.pitch_um)?;
        t.fraction("transmittance", self.transmittance, true)?;
        self.source(1.0, SourceMode::Entangled)?;
        t.non_empty("flux_factors", &self.flux_factors)?;
        for &f in &self.flux_factors {
            t.positive("flux_factors", f)?;
        }
        Ok(())
    }

    pub fn source(&self, flux_factor: f64, mode: SourceMode) -> Result<SourceParams> {
        source_params(&Self::T, self.mu_spdc * flux_factor, 0.0, self.eta, self.tau_c_ns, self.t_dwell_s, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_valid() {
        assert_eq!(Config::parse("", "empty").unwrap(), Config::default());
        let cfg = Config::parse("[bell]\n", "x").unwrap();
        assert_eq!(cfg.bell, Some(BellConfig::default()));
    }

    #[test]
    fn zero_scan_size_covers_the_phantom() {
        let cfg = SimulateConfig { step_um: 4.0, scan_px_y: 5, ..Default::default() };
        let scan = cfg.scan_config(&Phantom::transparent(Field::new(30, 20, 2.0)));
        assert_eq!((scan.pixels_x, scan.pixels_y, scan.step), (15, 5, 4.0));
        let scan = SimulateConfig::default().scan_config(&Phantom::transparent(Field::new(30, 20, 2.0)));
        assert_eq!((scan.pixels_x, scan.pixels_y, scan.step), (30, 20, 2.0));
    }

    #[test]
    fn out_of_range_names_the_key() {
        let err = Config::parse("[ssn_sweep]\neta = 1.5\n", "x").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("ssn_sweep.eta"), "{msg}");
        assert!(!msg.contains('\n'));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let msg = Config::parse("[bell]\nn0 = 10\nbogus = 1\n", "x").unwrap_err().to_string();
        assert!(msg.contains("bogus"), "{msg}");
        let msg = Config::parse("[nonexistent]\n", "x").unwrap_err().to_string();
        assert!(msg.contains("nonexistent"), "{msg}");
        assert!(!msg.contains('\n'));
    }

    #[test]
    fn type_errors_name_the_key() {
        let msg = Config::parse("[bell]\nrounds = \"ten\"\n", "x").unwrap_err().to_string();
        assert!(msg.contains("rounds"), "{msg}");
        assert!(!msg.contains('\n'));
    }

    #[test]
    fn regions_parse_with_units() {
        let text = r#"
[ghost_birefringence]
regions = [
  { shape = { kind = "disk", cx_um = 50.0, cy_um = 50.0, r_um = 20.0 }, t = 0.9, theta_deg = 10.0, delta_rad = 0.5 },
]
"#;
        let cfg = Config::parse(text, "x").unwrap();
        let r = cfg.ghost_birefringence.unwrap().regions[0].region();
        assert_eq!(r.shape, Shape::Disk { cx: 50.0, cy: 50.0, r: 20.0 });
        let bad = text.replace("r_um", "radius");
        assert!(Config::parse(&bad, "x").is_err());
    }

    #[test]
    fn full_defaults_round_trip() {
        let cfg = Config::with_all_defaults();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let once = Config::parse(&text, "x").unwrap();
        assert_eq!(once, cfg);
        let twice = Config::parse(&once.to_toml().unwrap(), "x").unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn shipped_presets_parse_and_round_trip() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = Config::load(&path).unwrap();
                let again = Config::parse(&cfg.to_toml().unwrap(), "x").unwrap();
                assert_eq!(again, cfg, "{}", path.display());
                seen += 1;
            }
        }
        assert!(seen >= 1);
    }

    #[test]
    fn stray_grid_must_start_at_zero() {
        let msg = Config::parse("[stray_light]\nstray_mu_grid = [1.0, 2.0]\n", "x").unwrap_err().to_string();
        assert!(msg.contains("stray_light.stray_mu_grid"), "{msg}");
    }

    #[test]
    fn window_longer_than_dwell_is_rejected() {
        let msg = Config::parse("[source_comparison]\ntau_c_ns = 2e9\n", "x").unwrap_err().to_string();
        assert!(msg.starts_with("config error: source_comparison"), "{msg}");
    }
}
