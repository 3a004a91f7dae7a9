//! `ice`: command-line front end for the coincidence-imaging toolkit.
//!
//! Every subcommand writes below `--output-dir` only. Failures print one
//! line `error[<class>]: <message>` to stderr and exit with the class code:
//! usage 2, config or input 3, computation 4, I/O 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use ice_core::config::{BirefConfig, Channel, Config, EstimateConfig, PhantomKind, SimulateConfig};
use ice_core::estimators::{
    estimate_cov, estimate_optsub, estimate_ratio, estimate_scov, estimate_t0, to_f64, EstimateImage, Method,
};
use ice_core::experiments::{self, ExperimentSpec, Formats, Outputs, REGISTRY};
use ice_core::io::{read_matrix_csv, read_pgm, read_table_csv};
use ice_core::metrology::{fit_dof, fit_esf, resolution_from_fit, ssim, FitResult};
use ice_core::phantom::{make_bar_target, make_edge_target, make_fiber_volume, FiberVolumeSpec, Layer};
use ice_core::polarimetry::birefringence_image;
use ice_core::scanner::{acquire_scan_layers, export_pgm, load_stack, save_stack};
use ice_core::{Error, Phantom};

#[derive(Parser)]
#[command(name = "ice", version, about = "Coincidence imaging with entangled photon pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; absent tables take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    /// Output kinds to write.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Pgm, Format::Svg])]
    format: Vec<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Pgm,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    /// Edge spread function: columns `x, y`.
    Esf,
    /// Resolution versus axial position: columns `z, resolution`.
    Dof,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a synthetic phantom and write the count stack.
    Simulate(Common),
    /// Estimate transmittance from a count stack written by `simulate`.
    Estimate {
        /// Stack directory (holding `stack.toml`).
        #[arg(long)]
        stack: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sampled CHSH test.
    Bell(Common),
    /// Invert four coincidence images taken at analyser angles 0, 45, 90
    /// and 135 degrees (CSV matrices or PGM).
    Biref {
        #[arg(num_args = 4, required = true)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit an edge profile or a resolution-versus-z curve from a CSV.
    Fit {
        #[arg(value_enum)]
        kind: FitKind,
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the global SSIM of two images.
    Ssim { a: PathBuf, b: PathBuf },
    /// Run a named experiment.
    Experiment {
        #[arg(long)]
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<Config, Error> {
        match &self.config {
            Some(path) => Config::load(path),
            None => Ok(Config::default()),
        }
    }

    fn formats(&self) -> Formats {
        Formats {
            csv: self.format.contains(&Format::Csv),
            pgm: self.format.contains(&Format::Pgm),
            svg: self.format.contains(&Format::Svg),
        }
    }

    fn outputs(&self, name: &str) -> Result<Outputs, Error> {
        Ok(Outputs::create(&self.output_dir.join(name))?.with_formats(self.formats()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = classify(&e);
            let message = match &e {
                Error::Config(m) => m.clone(),
                other => other.to_string(),
            };
            eprintln!("error[{class}]: {}", message.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        _ if e.is_computation() => ("computation", 4),
        Error::Config(_) | Error::Parameter(_) | Error::Format { .. } => ("config", 3),
        _ => ("io", 1),
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate(c) => simulate(&c.config()?.simulate.unwrap_or_default(), &c),
        Command::Estimate { stack, common } => estimate(&common.config()?.estimate.unwrap_or_default(), &stack, &common),
        Command::Bell(c) => experiment("bell", &c),
        Command::Biref { images, common } => biref(&common.config()?.biref.unwrap_or_default(), &images, &common),
        Command::Fit { kind, input, common } => fit(kind, &input, &common),
        Command::Ssim { a, b } => {
            // Debug formatting keeps the trailing `.0` of whole numbers.
            println!("{:?}", ssim(&read_image(&a)?, &read_image(&b)?)?);
            Ok(())
        }
        Command::Experiment { name, common } => experiment(&name, &common),
    }
}

fn experiment(name: &str, c: &Common) -> Result<(), Error> {
    if !REGISTRY.contains(&name) {
        return Err(Error::Config(format!("unknown experiment `{name}` (expected one of {})", REGISTRY.join(", "))));
    }
    let mut spec = ExperimentSpec::from_config(name, &c.config()?, c.seed)?;
    let dir = experiments::run_with(&mut spec, &c.output_dir, c.formats())?;
    println!("{}", dir.display());
    Ok(())
}

fn simulate(cfg: &SimulateConfig, c: &Common) -> Result<(), Error> {
    cfg.validate()?;
    let layers = match cfg.phantom {
        PhantomKind::Bar => vec![Layer::at_focus(make_bar_target(&cfg.bar_widths_um, cfg.pitch_um)?)],
        PhantomKind::Edge => vec![Layer::at_focus(make_edge_target(cfg.field(), cfg.edge_x_um)?)],
        PhantomKind::Clear => vec![Layer::at_focus(Phantom::transparent(cfg.field()))],
        PhantomKind::Fibers => make_fiber_volume(
            &FiberVolumeSpec {
                field: cfg.field(),
                n_fibers: cfg.n_fibers,
                diameter: cfg.fiber_diameter_um,
                z_extent: cfg.z_extent_um,
                n_slices: cfg.n_slices,
            },
            c.seed,
        )?,
    };
    let scan = cfg.scan_config(&layers[0].phantom);
    scan.validate()?;
    let frames = acquire_scan_layers(&layers, &cfg.source()?, &cfg.psf_model()?, &scan, c.seed)?;
    let dir = c.output_dir.join(format!("simulate_seed{}", c.seed));
    let mut out = c.outputs(&format!("simulate_seed{}", c.seed))?;
    let resolved = Config { simulate: Some(cfg.clone()), ..Default::default() };
    out.text("config.toml", &resolved.to_toml()?)?;
    let formats = c.formats();
    if formats.csv {
        save_stack(&dir.join("stack"), &frames)?;
        for (k, layer) in layers.iter().enumerate() {
            layer.phantom.save(&dir.join(format!("phantom/layer{k:02}")))?;
        }
    }
    if formats.pgm {
        for f in &frames {
            export_pgm(&dir.join("pgm"), f)?;
        }
    }
    println!("{}", dir.display());
    Ok(())
}

fn background_mask(rect: [usize; 4], dim: (usize, usize), table: &str) -> Result<Array2<bool>, Error> {
    let [x0, y0, x1, y1] = rect;
    let (h, w) = dim;
    if x1 > w || y1 > h {
        return Err(Error::Config(format!(
            "{table}.background_px: {rect:?} outside the {w} x {h} image"
        )));
    }
    Ok(Array2::from_shape_fn(dim, |(y, x)| (x0..x1).contains(&x) && (y0..y1).contains(&y)))
}

fn mean_image(stack: &[Array2<f64>]) -> Array2<f64> {
    stack.iter().fold(Array2::zeros(stack[0].dim()), |acc, m| acc + m) / stack.len() as f64
}

/// Frame-averaged estimate, flagged wherever any frame is flagged.
fn average(images: Vec<EstimateImage>) -> EstimateImage {
    let n = images.len() as f64;
    let mut it = images.into_iter();
    let mut acc = it.next().expect("at least one frame");
    for e in it {
        acc.t_hat += &e.t_hat;
        acc.background_mean += e.background_mean;
        acc.flags.zip_mut_with(&e.flags, |a, &b| *a |= b);
    }
    acc.t_hat /= n;
    acc.background_mean /= n;
    acc
}

type FrameEstimator<'a> = dyn Fn(&Array2<f64>, &Array2<f64>) -> Result<EstimateImage, Error> + 'a;

fn estimate(cfg: &EstimateConfig, stack_dir: &Path, c: &Common) -> Result<(), Error> {
    cfg.validate()?;
    let frames = load_stack(stack_dir)?;
    if frames.is_empty() {
        return Err(Error::Format { path: stack_dir.display().to_string(), reason: "stack has no frames".into() });
    }
    let n: Vec<Array2<f64>> = frames
        .iter()
        .map(|f| to_f64(match cfg.channel {
            Channel::S => &f.n_s,
            Channel::C => &f.n_c,
        }))
        .collect();
    let n_i: Vec<Array2<f64>> = frames.iter().map(|f| to_f64(&f.n_i)).collect();
    let bg = background_mask(cfg.background_px, n[0].dim(), "estimate")?;
    let per_frame = |f: &FrameEstimator| {
        n.iter().zip(&n_i).map(|(s, i)| f(s, i)).collect::<Result<Vec<_>, _>>().map(average)
    };
    let est = match cfg.method {
        Method::T0 => per_frame(&|s, _| estimate_t0(s, &bg))?,
        Method::Ratio => per_frame(&|s, i| estimate_ratio(s, i, &bg))?,
        Method::Optsub => {
            let t_hat = estimate_t0(&mean_image(&n), &bg)?.t_hat;
            per_frame(&|s, i| estimate_optsub(s, i, &t_hat, cfg.eta, cfg.mu_spdc, cfg.mu_stray, &bg))?
        }
        Method::Cov => estimate_cov(&n, &n_i, &bg, cfg.cov_frames)?,
        Method::Scov => per_frame(&|s, i| estimate_scov(s, i, cfg.bins, &bg))?,
    };
    let name = format!("estimate_{}", cfg.method.name());
    let mut out = c.outputs(&name)?;
    out.text("config.toml", &Config { estimate: Some(cfg.clone()), ..Default::default() }.to_toml()?)?;
    out.matrix("t_hat.csv", &est.t_hat)?;
    out.matrix("flags.csv", &est.flags.mapv(|b| if b { 1.0 } else { 0.0 }))?;
    out.pgm("t_hat.pgm", &est.t_hat.mapv(|v| if v.is_finite() { v } else { 0.0 }))?;
    println!("{}", c.output_dir.join(name).display());
    Ok(())
}

/// CSV matrices by extension, binary PGM otherwise.
fn read_image(path: &Path) -> Result<Array2<f64>, Error> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_matrix_csv(path)
    } else {
        read_pgm(path)
    }
}

fn biref(cfg: &BirefConfig, paths: &[PathBuf], c: &Common) -> Result<(), Error> {
    cfg.validate()?;
    let images = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    let bg = background_mask(cfg.background_px, images[0].dim(), "biref")?;
    let maps = birefringence_image([&images[0], &images[1], &images[2], &images[3]], &bg)?;
    let mut out = c.outputs("biref")?;
    for (name, m) in [("t", &maps.t), ("theta", &maps.theta), ("delta", &maps.delta)] {
        out.matrix(&format!("{name}_map.csv"), m)?;
        out.pgm(&format!("{name}_map.pgm"), m)?;
    }
    out.matrix("flags.csv", &maps.flags.mapv(|f| f as u8 as f64))?;
    println!("{}", c.output_dir.join("biref").display());
    Ok(())
}

fn read_xy(path: &Path) -> Result<Vec<(f64, f64)>, Error> {
    let (header, rows) = read_table_csv(path)?;
    let bad = |reason: String| Error::Format { path: path.display().to_string(), reason };
    if header.len() != 2 {
        return Err(bad(format!("expected two columns, found {}", header.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            let v = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("row {}: not a number: {s:?}", k + 1)));
            Ok((v(&r[0])?, v(&r[1])?))
        })
        .collect()
}

fn fit_rows(fit: &FitResult) -> Vec<Vec<String>> {
    fit.names
        .iter()
        .zip(&fit.params)
        .zip(&fit.ci95)
        .map(|((n, p), ci)| vec![n.clone(), p.to_string(), ci.to_string()])
        .collect()
}

fn fit(kind: FitKind, input: &Path, c: &Common) -> Result<(), Error> {
    let points = read_xy(input)?;
    let mut out = c.outputs("fit")?;
    let (name, rows, summary) = match kind {
        FitKind::Esf => {
            let f = fit_esf(&points)?;
            let r = resolution_from_fit(&f)?;
            let mut rows = fit_rows(&f);
            rows.push(vec!["resolution".into(), r.mean.to_string(), (1.96 * r.stderr).to_string()]);
            ("esf_fit.csv", rows, format!("resolution {} +- {}", r.mean, r.stderr))
        }
        FitKind::Dof => {
            let f = fit_dof(&points)?;
            let mut rows = fit_rows(&f.fit);
            rows.push(vec!["dof".into(), f.dof.mean.to_string(), (1.96 * f.dof.stderr).to_string()]);
            ("dof_fit.csv", rows, format!("dof {} +- {}", f.dof.mean, f.dof.stderr))
        }
    };
    out.table(name, &["parameter", "value", "ci95"], &rows)?;
    println!("{summary}");
    Ok(())
}
