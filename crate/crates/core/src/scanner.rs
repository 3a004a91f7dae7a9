//! Virtual raster-scanning microscope.
//!
//! The object is blurred once per acquisition with the classical (signal
//! beam) and the coincidence (signal beam times entanglement pinhole) PSFs,
//! both Gaussian, and each scan pixel then draws photon counts through the
//! resulting survival probabilities.

use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{autoscale_levels, read_matrix_csv, write_matrix_csv, write_pgm16};
use crate::phantom::{Layer, Phantom};
use crate::photon_model::{
    expected_for_channel, sample_dwell, PairChannel, SourceParams,
};
use crate::polarimetry::{coincidence_rate, BirefringencePoint};
use crate::rng::{stream, Domain};

/// Gaussian beam parameters of the signal arm and of the entanglement
/// pinhole, all in micrometres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfModel {
    pub w_s: f64,
    pub z0_s: f64,
    pub zr_s: f64,
    /// May be infinite: no pinhole filtering.
    pub w_ep: f64,
    pub z0_ep: f64,
    pub zr_ep: f64,
}

/// Focal offset of the pinhole relative to the signal focus.
pub const PINHOLE_FOCAL_OFFSET: f64 = 43.0;

impl PsfModel {
    /// Preset whose fitted focal resolutions are 14.4 um (classical) and
    /// 10.4 um (coincidence) with depths of field of 92 um and 95 um.
    /// Reproduced by `metrology::calibrate_psf` with the default targets.
    pub fn calibrated() -> Self {
        PsfModel {
            w_s: 14.4 / (2.0 * std::f64::consts::LN_2.sqrt()),
            z0_s: 0.0,
            zr_s: 46.0,
            w_ep: 9.613_21,
            z0_ep: PINHOLE_FOCAL_OFFSET,
            zr_ep: 51.241_4,
        }
    }

    /// Signal beam only; the coincidence PSF equals the classical one.
    pub fn without_pinhole(w_s: f64, z0_s: f64, zr_s: f64) -> Self {
        PsfModel { w_s, z0_s, zr_s, w_ep: f64::INFINITY, z0_ep: z0_s, zr_ep: zr_s }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64, allow_inf: bool| {
            if v > 0.0 && (v.is_finite() || (allow_inf && v == f64::INFINITY)) {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("w_s", self.w_s, false)?;
        positive("zr_s", self.zr_s, false)?;
        positive("w_ep", self.w_ep, true)?;
        positive("zr_ep", self.zr_ep, false)?;
        if !(self.z0_s.is_finite() && self.z0_ep.is_finite()) {
            return Err(Error::param("focal offsets must be finite"));
        }
        Ok(())
    }
}

impl Default for PsfModel {
    fn default() -> Self {
        PsfModel::calibrated()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub pixels_x: usize,
    pub pixels_y: usize,
    /// Scan step in micrometres.
    pub step: f64,
    /// Axial position of the object relative to the signal focus, um.
    pub z: f64,
    pub frames: usize,
    pub stray_probability: f64,
    /// Mean extra stray photons per dwell at pixels where the LED fires.
    pub stray_mu: f64,
    /// Idler analyser angle in degrees; `None` means no polarisation optics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer_beta: Option<f64>,
}

impl ScanConfig {
    /// One scan pixel per phantom pixel, in focus, one frame, no LED.
    pub fn covering(phantom: &Phantom) -> Self {
        ScanConfig {
            pixels_x: phantom.width(),
            pixels_y: phantom.height(),
            step: phantom.field.pitch,
            z: 0.0,
            frames: 1,
            stray_probability: 0.0,
            stray_mu: 0.0,
            analyzer_beta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels_x == 0 || self.pixels_y == 0 {
            return Err(Error::param("scan needs at least one pixel"));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::param(format!("scan step must be > 0, got {}", self.step)));
        }
        if !self.z.is_finite() {
            return Err(Error::param("scan z must be finite"));
        }
        if self.frames == 0 {
            return Err(Error::param("scan needs at least one frame"));
        }
        if !(0.0..=1.0).contains(&self.stray_probability) {
            return Err(Error::param(format!(
                "stray_probability must lie in [0, 1], got {}",
                self.stray_probability
            )));
        }
        if !(self.stray_mu.is_finite() && self.stray_mu >= 0.0) {
            return Err(Error::param(format!("stray_mu must be >= 0, got {}", self.stray_mu)));
        }
        if let Some(b) = self.analyzer_beta {
            if !b.is_finite() {
                return Err(Error::param("analyzer_beta must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub scan: ScanConfig,
    pub source: SourceParams,
    pub seed: u64,
    pub frame: usize,
}

/// Counts of one temporal frame. Images are indexed `[y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountFrame {
    pub n_s: Array2<u64>,
    pub n_i: Array2<u64>,
    pub n_c: Array2<u64>,
    pub meta: FrameMeta,
}

impl CountFrame {
    pub fn dim(&self) -> (usize, usize) {
        self.n_s.dim()
    }
}

/// Writes `frameNNN_{s,i,c}.csv` per frame and a `stack.toml` sidecar.
pub fn save_stack(dir: &Path, frames: &[CountFrame]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in frames {
        let k = f.meta.frame;
        write_matrix_csv(&dir.join(format!("frame{k:03}_s.csv")), &f.n_s)?;
        write_matrix_csv(&dir.join(format!("frame{k:03}_i.csv")), &f.n_i)?;
        write_matrix_csv(&dir.join(format!("frame{k:03}_c.csv")), &f.n_c)?;
    }
    let meta = StackMeta { frames: frames.iter().map(|f| f.meta.clone()).collect() };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("stack.toml"), text)?;
    Ok(())
}

pub fn load_stack(dir: &Path) -> Result<Vec<CountFrame>> {
    let path = dir.join("stack.toml");
    let text = std::fs::read_to_string(&path)?;
    let meta: StackMeta = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    meta.frames
        .into_iter()
        .map(|m| {
            let k = m.frame;
            Ok(CountFrame {
                n_s: read_matrix_csv(&dir.join(format!("frame{k:03}_s.csv")))?,
                n_i: read_matrix_csv(&dir.join(format!("frame{k:03}_i.csv")))?,
                n_c: read_matrix_csv(&dir.join(format!("frame{k:03}_c.csv")))?,
                meta: m,
            })
        })
        .collect()
}

/// Writes the three channels of one frame as autoscaled 16-bit PGMs.
pub fn export_pgm(dir: &Path, frame: &CountFrame) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let k = frame.meta.frame;
    for (tag, img) in [("s", &frame.n_s), ("i", &frame.n_i), ("c", &frame.n_c)] {
        write_pgm16(
            &dir.join(format!("frame{k:03}_{tag}.pgm")),
            &autoscale_levels(&img.mapv(|v| v as f64)),
        )?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StackMeta {
    frames: Vec<FrameMeta>,
}

/// Gaussian beam radius at `z`.
pub fn beam_width(w0: f64, z0: f64, zr: f64, z: f64) -> f64 {
    let u = (z - z0) / zr;
    w0 * (1.0 + u * u).sqrt()
}

/// `(w_classical, w_ice)` at axial position `z`.
pub fn effective_widths(psf: &PsfModel, z: f64) -> (f64, f64) {
    let w_c = beam_width(psf.w_s, psf.z0_s, psf.zr_s, z);
    let w_p = beam_width(psf.w_ep, psf.z0_ep, psf.zr_ep, z);
    let w_ice = (w_c.powi(-2) + w_p.powi(-2)).powf(-0.5);
    (w_c, w_ice)
}

/// Half-sample symmetric index folding: `-1 -> 0`, `n -> n - 1`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Unit-mass discrete Gaussian `exp(-x^2 / width^2)` sampled at pixel
/// offsets, truncated at four widths.
pub fn gaussian_kernel(width: f64, pitch: f64) -> Result<Vec<f64>> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::param(format!("blur width must be finite and > 0, got {width}")));
    }
    let r = (4.0 * width / pitch).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|j| {
            let x = j as f64 * pitch / width;
            (-x * x).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

fn convolve_axis(img: &Array2<f64>, kernel: &[f64], axis: Axis) -> Array2<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = Array2::zeros(img.dim());
    Zip::from(out.lanes_mut(axis))
        .and(img.lanes(axis))
        .par_for_each(|mut o, lane| {
            let n = lane.len();
            for (i, o) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &kv) in kernel.iter().enumerate() {
                    acc += kv * lane[reflect(i as isize + j as isize - r, n)];
                }
                *o = acc;
            }
        });
    out
}

/// Separable Gaussian blur of a map with 1/e radius `width` (um), reflective
/// boundary. Fails when the kernel is wider than the map's longer side.
pub fn render_blurred(map: &Array2<f64>, width: f64, pitch: f64) -> Result<Array2<f64>> {
    let kernel = gaussian_kernel(width, pitch)?;
    let (h, w) = map.dim();
    if kernel.len() > h.max(w) {
        return Err(Error::param(format!(
            "blur kernel of {} px exceeds the {w} x {h} image",
            kernel.len()
        )));
    }
    let rows = convolve_axis(map, &kernel, Axis(1));
    Ok(convolve_axis(&rows, &kernel, Axis(0)))
}

/// Blurred transmittance of a phantom.
pub fn render_blurred_t(phantom: &Phantom, width: f64) -> Result<Array2<f64>> {
    render_blurred(&phantom.t, width, phantom.field.pitch)
}

/// Per-phantom-pixel survival maps for one axial position.
struct ChannelMaps {
    signal: Array2<f64>,
    idler: f64,
    both: Array2<f64>,
    joint: Array2<f64>,
    /// Fraction of surviving pairs that the pinhole accepts, already
    /// applied to `joint`.
    pinhole: f64,
}

/// Overlap of the normalised signal spot with the unit-peak pinhole
/// acceptance at `z`: `(w_ice / w_classical)^2`. Scaling the coincidence
/// blur by it keeps `joint <= signal` pixel by pixel.
pub fn pinhole_efficiency(psf: &PsfModel, z: f64) -> f64 {
    let (w_c, w_q) = effective_widths(psf, z);
    (w_q / w_c).powi(2)
}

fn channel_maps(layers: &[Layer], psf: &PsfModel, scan: &ScanConfig) -> Result<ChannelMaps> {
    let first = &layers.first().ok_or_else(|| Error::param("no layers to scan"))?.phantom;
    for l in layers {
        l.phantom.validate()?;
        if l.phantom.field != first.field {
            return Err(Error::param("all layers must share one pixel grid"));
        }
    }
    let blur = |map: &Array2<f64>, z: f64| -> Result<(Array2<f64>, Array2<f64>)> {
        let (w_c, w_q) = effective_widths(psf, z);
        Ok((render_blurred(map, w_c, first.field.pitch)?, render_blurred(map, w_q, first.field.pitch)?))
    };
    match scan.analyzer_beta {
        None => {
            let mut signal = Array2::ones(first.t.dim());
            let mut joint = Array2::ones(first.t.dim());
            let mut pinhole = 1f64;
            for l in layers {
                let (c, q) = blur(&l.phantom.t, scan.z + l.z)?;
                signal *= &c;
                joint *= &q;
                pinhole = pinhole.min(pinhole_efficiency(psf, scan.z + l.z));
            }
            joint *= pinhole;
            Ok(ChannelMaps { both: signal.clone(), signal, idler: 1.0, joint, pinhole })
        }
        Some(beta) => {
            if layers.len() != 1 {
                return Err(Error::param("polarisation analysis supports a single thin layer"));
            }
            let p = &layers[0].phantom;
            let z = scan.z + layers[0].z;
            // Signal polariser at 0 degrees passes half of the (unpolarised)
            // marginal; the idler analyser likewise.
            let half_t = p.t.mapv(|t| 0.5 * t);
            let mut rate = Array2::zeros(p.t.dim());
            Zip::from(&mut rate)
                .and(&p.t)
                .and(&p.theta)
                .and(&p.delta)
                .for_each(|r, &t, &theta, &delta| {
                    *r = 0.5 * coincidence_rate(BirefringencePoint { t, theta, delta }, beta);
                });
            let (w_c, w_q) = effective_widths(psf, z);
            let pinhole = pinhole_efficiency(psf, z);
            Ok(ChannelMaps {
                signal: render_blurred(&half_t, w_c, p.field.pitch)?,
                idler: 0.5,
                both: render_blurred(&rate, w_c, p.field.pitch)?,
                joint: render_blurred(&rate, w_q, p.field.pitch)? * pinhole,
                pinhole,
            })
        }
    }
}

/// Phantom pixel index under each scan pixel.
fn sample_index(phantom: &Phantom, scan: &ScanConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let map = |n_scan: usize, n_obj: usize, axis: &str| -> Result<Vec<usize>> {
        (0..n_scan)
            .map(|k| {
                let pos = (k as f64 + 0.5) * scan.step;
                let idx = (pos / phantom.field.pitch).floor() as usize;
                if idx < n_obj {
                    Ok(idx)
                } else {
                    Err(Error::param(format!(
                        "scan extends beyond the object along {axis} ({n_scan} px at {} um)",
                        scan.step
                    )))
                }
            })
            .collect()
    };
    Ok((
        map(scan.pixels_x, phantom.width(), "x")?,
        map(scan.pixels_y, phantom.height(), "y")?,
    ))
}

/// Pair channel under every scan pixel, with the pinhole efficiency.
fn pixel_channels_with_pinhole(
    layers: &[Layer],
    psf: &PsfModel,
    scan: &ScanConfig,
) -> Result<(Array2<PairChannel>, f64)> {
    psf.validate()?;
    scan.validate()?;
    let maps = channel_maps(layers, psf, scan)?;
    let (xs, ys) = sample_index(&layers[0].phantom, scan)?;
    let channels = Array2::from_shape_fn((scan.pixels_y, scan.pixels_x), |(y, x)| {
        let (r, c) = (ys[y], xs[x]);
        let signal = maps.signal[[r, c]].clamp(0.0, 1.0);
        let both = maps.both[[r, c]].clamp(0.0, 1.0).min(signal).min(maps.idler);
        PairChannel {
            signal,
            idler: maps.idler,
            both,
            joint: maps.joint[[r, c]].clamp(0.0, 1.0).min(both),
        }
    });
    Ok((channels, maps.pinhole))
}

fn pixel_channels(layers: &[Layer], psf: &PsfModel, scan: &ScanConfig) -> Result<Array2<PairChannel>> {
    Ok(pixel_channels_with_pinhole(layers, psf, scan)?.0)
}

/// Whether the stray LED fires at each scan pixel.
pub fn led_schedule(scan: &ScanConfig, seed: u64) -> Array2<bool> {
    use rand::Rng;
    Array2::from_shape_fn((scan.pixels_y, scan.pixels_x), |(y, x)| {
        let idx = (y * scan.pixels_x + x) as u64;
        stream(seed, Domain::StrayLed, idx, 0).random::<f64>() < scan.stray_probability
    })
}

/// Scans a stack of thin layers whose transmittances multiply.
pub fn acquire_scan_layers(
    layers: &[Layer],
    source: &SourceParams,
    psf: &PsfModel,
    scan: &ScanConfig,
    seed: u64,
) -> Result<Vec<CountFrame>> {
    source.validate()?;
    let channels = pixel_channels(layers, psf, scan)?;
    let led = led_schedule(scan, seed);
    let (ny, nx) = channels.dim();
    (0..scan.frames)
        .map(|frame| {
            let counts: Vec<_> = (0..ny * nx)
                .into_par_iter()
                .map(|idx| {
                    let (y, x) = (idx / nx, idx % nx);
                    let extra = if led[[y, x]] { scan.stray_mu } else { 0.0 };
                    let mut rng = stream(seed, Domain::PixelCounts, idx as u64, frame as u64);
                    sample_dwell(source, channels[[y, x]], extra, &mut rng)
                })
                .collect();
            let pick = |f: fn(&crate::photon_model::CountSample) -> u64| {
                Array2::from_shape_vec((ny, nx), counts.iter().map(f).collect()).expect("shape")
            };
            Ok(CountFrame {
                n_s: pick(|c| c.n_s),
                n_i: pick(|c| c.n_i),
                n_c: pick(|c| c.n_c),
                meta: FrameMeta { scan: *scan, source: *source, seed, frame },
            })
        })
        .collect()
}

/// Scans a single thin phantom.
pub fn acquire_scan(
    phantom: &Phantom,
    source: &SourceParams,
    psf: &PsfModel,
    scan: &ScanConfig,
    seed: u64,
) -> Result<Vec<CountFrame>> {
    acquire_scan_layers(&[Layer::at_focus(phantom.clone())], source, psf, scan, seed)
}

/// One scan per axial position; frame stacks are returned in `z_list` order.
pub fn acquire_z_stack(
    layers: &[Layer],
    source: &SourceParams,
    psf: &PsfModel,
    scan: &ScanConfig,
    z_list: &[f64],
    seed: u64,
) -> Result<Vec<Vec<CountFrame>>> {
    if z_list.is_empty() {
        return Err(Error::param("z_list is empty"));
    }
    z_list
        .iter()
        .map(|&z| acquire_scan_layers(layers, source, psf, &ScanConfig { z, ..*scan }, seed))
        .collect()
}

/// Mean counts per scan pixel, without the stray LED.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedFrame {
    pub s: Array2<f64>,
    pub i: Array2<f64>,
    pub c: Array2<f64>,
}

/// Noiseless counterpart of [`acquire_scan_layers`]: exact means of every
/// channel with the LED schedule ignored.
pub fn expected_scan(
    layers: &[Layer],
    source: &SourceParams,
    psf: &PsfModel,
    scan: &ScanConfig,
) -> Result<ExpectedFrame> {
    source.validate()?;
    let channels = pixel_channels(layers, psf, scan)?;
    let e = channels.mapv(|ch| expected_for_channel(source, ch, 0.0));
    Ok(ExpectedFrame {
        s: e.mapv(|v| v.s),
        i: e.mapv(|v| v.i),
        c: e.mapv(|v| v.c),
    })
}

/// Classical and coincidence survival images without any photon model:
/// the blurred transmittances seen by each scan pixel. The coincidence
/// image is divided by the pinhole efficiency, so both equal 1 for a clear
/// object.
pub fn transmittance_images(
    layers: &[Layer],
    psf: &PsfModel,
    scan: &ScanConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (ch, pinhole) = pixel_channels_with_pinhole(layers, psf, scan)?;
    Ok((ch.mapv(|c| c.signal), ch.mapv(|c| c.joint / pinhole)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_edge_target, Field};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use statrs::function::erf::erf;

    #[test]
    fn beam_width_examples() {
        assert_eq!(beam_width(10.0, 5.0, 40.0, 5.0), 10.0);
        assert_relative_eq!(beam_width(10.0, 5.0, 40.0, 45.0), 10.0 * 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(beam_width(10.0, 5.0, 40.0, 85.0), 10.0 * 5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn effective_width_limits() {
        let psf = PsfModel::without_pinhole(8.0, 0.0, 40.0);
        let (c, q) = effective_widths(&psf, 17.0);
        assert_eq!(c, q);
        let psf = PsfModel { w_s: 8.0, z0_s: 0.0, zr_s: 40.0, w_ep: 8.0, z0_ep: 0.0, zr_ep: 40.0 };
        let (c, q) = effective_widths(&psf, 13.0);
        assert_relative_eq!(q, c / 2f64.sqrt(), max_relative = 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]
        #[test]
        fn pinhole_always_narrows(z in -500.0..500.0f64, w_ep in 1.0..100.0f64) {
            let psf = PsfModel { w_ep, ..PsfModel::calibrated() };
            let (c, q) = effective_widths(&psf, z);
            prop_assert!(q < c);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let m = Array2::from_elem((20, 30), 0.37);
        let b = render_blurred(&m, 3.0, 1.0).unwrap();
        assert!(b.iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn blur_matches_direct_summation() {
        // Single opaque pixel in the middle, compared with an explicit 2-D
        // Gaussian sum over the same truncated support.
        let (n, w, pitch) = (41usize, 3.0, 1.0);
        let mut m = Array2::ones((n, n));
        m[[20, 20]] = 0.0;
        let b = render_blurred(&m, w, pitch).unwrap();
        let r = (4.0 * w / pitch).ceil() as i64;
        let g = |d: i64| (-(d as f64 * pitch / w).powi(2)).exp();
        let norm: f64 = (-r..=r).map(g).sum::<f64>().powi(2);
        for (y, x) in [(20usize, 20usize), (20, 23), (18, 24), (5, 5)] {
            let (dy, dx) = (y as i64 - 20, x as i64 - 20);
            let dip = if dy.abs() <= r && dx.abs() <= r { g(dy) * g(dx) / norm } else { 0.0 };
            assert_relative_eq!(b[[y, x]], 1.0 - dip, epsilon = 1e-14);
        }
    }

    #[test]
    fn blurred_edge_is_an_erf() {
        let w = 7.5;
        let f = Field::new(400, 3, 0.5);
        let p = make_edge_target(f, 100.0).unwrap();
        let b = render_blurred_t(&p, w).unwrap();
        for col in (150..250).step_by(7) {
            let x = (col as f64 + 0.5) * 0.5;
            let want = 0.5 + 0.5 * erf((x - 100.0) / w);
            // Pixel sampling of a continuous step: error well below 1%.
            assert!((b[[1, col]] - want).abs() < 5e-3, "x={x}");
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let m = Array2::ones((10, 10));
        assert!(render_blurred(&m, 5.0, 1.0).is_err());
        assert!(render_blurred(&m, 0.0, 1.0).is_err());
    }

    fn clear(n: usize) -> Phantom {
        Phantom::transparent(Field::new(n, n, 1.0))
    }

    #[test]
    fn open_field_mean_counts() {
        let p = clear(16);
        let source = SourceParams::entangled(400.0, 0.0, 0.6);
        let scan = ScanConfig { frames: 4, ..ScanConfig::covering(&p) };
        let frames = acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 50.0), &scan, 3).unwrap();
        let total: u64 = frames.iter().map(|f| f.n_s.sum()).sum();
        let mean = total as f64 / (4.0 * 256.0);
        let se = (240.0f64 / (4.0 * 256.0)).sqrt();
        assert!((mean - 240.0).abs() < 4.0 * se, "mean {mean}");
        for f in &frames {
            Zip::from(&f.n_c).and(&f.n_s).and(&f.n_i).for_each(|&c, &s, &i| assert!(c <= s.min(i)));
        }
    }

    #[test]
    fn scans_are_deterministic() {
        let p = clear(12);
        let source = SourceParams::entangled(50.0, 5.0, 0.7);
        let scan = ScanConfig { frames: 2, stray_probability: 0.2, stray_mu: 100.0, ..ScanConfig::covering(&p) };
        let a = acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 10.0), &scan, 11).unwrap();
        let b = acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 10.0), &scan, 11).unwrap();
        assert_eq!(a, b);
        let c = acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 10.0), &scan, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn led_is_held_across_frames() {
        let p = clear(32);
        let source = SourceParams::entangled(10.0, 0.0, 1.0);
        let scan = ScanConfig { frames: 3, stray_probability: 0.2, stray_mu: 1e4, ..ScanConfig::covering(&p) };
        let frames = acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 10.0), &scan, 5).unwrap();
        let led = led_schedule(&scan, 5);
        let lit = led.iter().filter(|&&v| v).count() as f64 / led.len() as f64;
        assert!((lit - 0.2).abs() < 0.05, "fraction {lit}");
        for f in &frames {
            Zip::from(&f.n_s).and(&led).for_each(|&s, &on| assert_eq!(s > 1000, on));
        }
    }

    #[test]
    fn single_z_stack_equals_scan() {
        let p = clear(16);
        let source = SourceParams::entangled(30.0, 0.0, 0.5);
        let psf = PsfModel::without_pinhole(1.0, 0.0, 10.0);
        let scan = ScanConfig { z: 4.0, ..ScanConfig::covering(&p) };
        let stack = acquire_z_stack(&[Layer::at_focus(p.clone())], &source, &psf, &scan, &[4.0], 2).unwrap();
        assert_eq!(stack[0], acquire_scan(&p, &source, &psf, &scan, 2).unwrap());
        assert!(acquire_z_stack(&[Layer::at_focus(p)], &source, &psf, &scan, &[], 2).is_err());
    }

    #[test]
    fn scan_outside_object_is_rejected() {
        let p = clear(8);
        let scan = ScanConfig { pixels_x: 9, ..ScanConfig::covering(&p) };
        let source = SourceParams::entangled(1.0, 0.0, 0.5);
        assert!(acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 10.0), &scan, 0).is_err());
    }

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = clear(16);
        let source = SourceParams::entangled(30.0, 1.0, 0.5);
        let scan = ScanConfig { frames: 2, ..ScanConfig::covering(&p) };
        let frames = acquire_scan(&p, &source, &PsfModel::without_pinhole(1.0, 0.0, 10.0), &scan, 2).unwrap();
        save_stack(dir.path(), &frames).unwrap();
        assert_eq!(load_stack(dir.path()).unwrap(), frames);
        export_pgm(dir.path(), &frames[0]).unwrap();
        assert!(dir.path().join("frame000_c.pgm").exists());
    }

    #[test]
    fn analyzer_leaves_signal_unchanged() {
        let mut p = clear(10);
        p.theta.fill(30.0);
        p.delta.fill(1.2);
        let psf = PsfModel::without_pinhole(1.0, 0.0, 10.0);
        let layers = [Layer::at_focus(p.clone())];
        let mut signals = Vec::new();
        let mut joints = Vec::new();
        for beta in [0.0, 45.0, 90.0, 135.0] {
            let scan = ScanConfig { analyzer_beta: Some(beta), ..ScanConfig::covering(&p) };
            let (s, j) = transmittance_images(&layers, &psf, &scan).unwrap();
            signals.push(s);
            joints.push(j[[5, 5]]);
        }
        assert!(signals.iter().all(|s| *s == signals[0]));
        assert_relative_eq!(signals[0][[5, 5]], 0.5, epsilon = 1e-12);
        // Joint survivals sum to T over the four analyser angles.
        assert_relative_eq!(joints.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
