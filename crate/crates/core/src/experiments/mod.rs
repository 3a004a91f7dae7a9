//! Named, config-driven simulation studies.
//!
//! Each experiment is a pure function of its parameters and seed. It writes
//! CSV tables, SVG plots and, where it produces images, 16-bit PGMs into
//! `<output_dir>/<name>_seed<seed>/`, together with the resolved
//! parameters as `config.toml`.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::config::{
    BellConfig, Config, GhostBirefringenceConfig, ResolutionDofConfig, SourceComparisonConfig,
    SsnSweepConfig, StrayLightConfig,
};
use crate::error::{Error, Result};
use crate::io::{self, Plot};

pub mod bell;
pub mod birefringence;
pub mod resolution;
pub mod source_comparison;
pub mod ssn;
pub mod stray_light;

/// Names of the registered experiments.
pub const REGISTRY: [&str; 6] = [
    "ssn_sweep",
    "resolution_dof",
    "stray_light",
    "bell",
    "ghost_birefringence",
    "source_comparison",
];

/// Typed parameters of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub enum Parameters {
    SsnSweep(SsnSweepConfig),
    ResolutionDof(ResolutionDofConfig),
    StrayLight(StrayLightConfig),
    Bell(BellConfig),
    GhostBirefringence(GhostBirefringenceConfig),
    SourceComparison(SourceComparisonConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub parameters: Parameters,
    pub seed: u64,
    /// Files written by the last run, relative to the run directory.
    pub outputs: Vec<PathBuf>,
}

impl ExperimentSpec {
    /// The named experiment with its table from `config`, or defaults when
    /// the table is absent.
    pub fn from_config(name: &str, config: &Config, seed: u64) -> Result<Self> {
        let parameters = match name {
            "ssn_sweep" => Parameters::SsnSweep(config.ssn_sweep.clone().unwrap_or_default()),
            "resolution_dof" => Parameters::ResolutionDof(config.resolution_dof.clone().unwrap_or_default()),
            "stray_light" => Parameters::StrayLight(config.stray_light.clone().unwrap_or_default()),
            "bell" => Parameters::Bell(config.bell.clone().unwrap_or_default()),
            "ghost_birefringence" => {
                Parameters::GhostBirefringence(config.ghost_birefringence.clone().unwrap_or_default())
            }
            "source_comparison" => {
                Parameters::SourceComparison(config.source_comparison.clone().unwrap_or_default())
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment `{other}` (expected one of {})",
                    REGISTRY.join(", ")
                )))
            }
        };
        Ok(ExperimentSpec { name: name.to_string(), parameters, seed, outputs: Vec::new() })
    }

    pub fn with_defaults(name: &str, seed: u64) -> Result<Self> {
        Self::from_config(name, &Config::default(), seed)
    }

    pub fn run_dir(&self, output_dir: &Path) -> PathBuf {
        output_dir.join(format!("{}_seed{}", self.name, self.seed))
    }

    /// The parameters as a config document holding only this experiment.
    pub fn config(&self) -> Config {
        let mut c = Config::default();
        match &self.parameters {
            Parameters::SsnSweep(p) => c.ssn_sweep = Some(p.clone()),
            Parameters::ResolutionDof(p) => c.resolution_dof = Some(p.clone()),
            Parameters::StrayLight(p) => c.stray_light = Some(p.clone()),
            Parameters::Bell(p) => c.bell = Some(p.clone()),
            Parameters::GhostBirefringence(p) => c.ghost_birefringence = Some(p.clone()),
            Parameters::SourceComparison(p) => c.source_comparison = Some(p.clone()),
        }
        c
    }
}

/// Runs the experiment, records its outputs in `spec.outputs` and returns
/// the run directory.
pub fn run(spec: &mut ExperimentSpec, output_dir: &Path) -> Result<PathBuf> {
    run_with(spec, output_dir, Formats::default())
}

/// As [`run`], writing only the enabled output kinds.
pub fn run_with(spec: &mut ExperimentSpec, output_dir: &Path, formats: Formats) -> Result<PathBuf> {
    spec.config().validate()?;
    let dir = spec.run_dir(output_dir);
    let mut out = Outputs::create(&dir)?.with_formats(formats);
    out.text("config.toml", &spec.config().to_toml()?)?;
    let seed = spec.seed;
    match &spec.parameters {
        Parameters::SsnSweep(p) => ssn::run(p, seed, &mut out)?,
        Parameters::ResolutionDof(p) => resolution::run(p, &mut out)?,
        Parameters::StrayLight(p) => stray_light::run(p, seed, &mut out)?,
        Parameters::Bell(p) => bell::run(p, seed, &mut out)?,
        Parameters::GhostBirefringence(p) => birefringence::run(p, seed, &mut out)?,
        Parameters::SourceComparison(p) => source_comparison::run(p, seed, &mut out)?,
    }
    spec.outputs = out.files;
    Ok(dir)
}

/// Output kinds a run writes. `config.toml` and other text files are
/// always written.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub pgm: bool,
    pub svg: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Formats { csv: true, pgm: true, svg: true }
    }
}

/// Writer for one run directory that records every file it creates.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
    formats: Formats,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new(), formats: Formats::default() })
    }

    pub fn with_formats(mut self, formats: Formats) -> Self {
        self.formats = formats;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.files.push(PathBuf::from(name));
        Ok(path)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name)?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if !self.formats.csv {
            return Ok(());
        }
        let path = self.path(name)?;
        io::write_table_csv(&path, header, rows)
    }

    pub fn matrix(&mut self, name: &str, m: &Array2<f64>) -> Result<()> {
        if !self.formats.csv {
            return Ok(());
        }
        let path = self.path(name)?;
        io::write_matrix_csv(&path, m)
    }

    /// Image scaled to the full 16-bit range.
    pub fn pgm(&mut self, name: &str, img: &Array2<f64>) -> Result<()> {
        if !self.formats.pgm {
            return Ok(());
        }
        let path = self.path(name)?;
        io::write_pgm16(&path, &io::autoscale_levels(img))
    }

    pub fn plot(&mut self, name: &str, plot: &Plot) -> Result<()> {
        if !self.formats.svg {
            return Ok(());
        }
        let path = self.path(name)?;
        plot.save(&path)
    }
}

/// Shortest round-trip decimal form, so tables reparse to the same bits.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// `(key, value)` rows of a two-column summary table.
pub(crate) fn summary_rows(items: &[(&str, f64)]) -> Vec<Vec<String>> {
    items.iter().map(|(k, v)| vec![k.to_string(), num(*v)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_a_config_error() {
        assert!(matches!(ExperimentSpec::with_defaults("nope", 0), Err(Error::Config(_))));
    }

    #[test]
    fn every_registered_name_resolves() {
        for name in REGISTRY {
            let spec = ExperimentSpec::with_defaults(name, 3).unwrap();
            assert_eq!(spec.run_dir(Path::new("out")), Path::new("out").join(format!("{name}_seed3")));
            spec.config().validate().unwrap();
        }
    }

    #[test]
    fn disabled_formats_are_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let formats = Formats { csv: false, pgm: true, svg: false };
        let mut out = Outputs::create(dir.path()).unwrap().with_formats(formats);
        let img = Array2::from_elem((2, 2), 1.0);
        out.matrix("m.csv", &img).unwrap();
        out.pgm("m.pgm", &img).unwrap();
        out.plot("p.svg", &Plot::new("t", "x", "y")).unwrap();
        out.text("note.txt", "x").unwrap();
        assert_eq!(out.files(), [PathBuf::from("m.pgm"), PathBuf::from("note.txt")]);
        assert!(!dir.path().join("m.csv").exists());
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.78e-15, -0.0, 1e300] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
