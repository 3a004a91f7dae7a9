//! Synthetic objects: per-pixel transmittance plus birefringence maps.
//!
//! Maps are `ndarray` arrays indexed `[row, col] = [y, x]`. Pixel `(x, y)` is
//! centred at `((x + 0.5) * pitch, (y + 0.5) * pitch)` micrometres.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_matrix_csv, write_matrix_csv};
use crate::rng::{stream, Domain};

/// Pixel grid of a phantom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in micrometres.
    pub pitch: f64,
}

impl Field {
    pub fn new(width: usize, height: usize, pitch: f64) -> Self {
        Field { width, height, pitch }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("field must have at least one pixel"));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(Error::param(format!("pixel pitch must be > 0, got {}", self.pitch)));
        }
        Ok(())
    }

    fn center(&self, col: usize, row: usize) -> (f64, f64) {
        ((col as f64 + 0.5) * self.pitch, (row as f64 + 0.5) * self.pitch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub field: Field,
    /// Intensity transmittance in [0, 1].
    pub t: Array2<f64>,
    /// Principal-axis angle in degrees, [0, 90).
    pub theta: Array2<f64>,
    /// Retardation in radians, [0, pi].
    pub delta: Array2<f64>,
    /// Axial thickness in micrometres; 0 for thin objects.
    pub z_extent: f64,
}

impl Phantom {
    /// Clear, non-birefringent object.
    pub fn transparent(field: Field) -> Self {
        let shape = (field.height, field.width);
        Phantom {
            field,
            t: Array2::ones(shape),
            theta: Array2::zeros(shape),
            delta: Array2::zeros(shape),
            z_extent: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.field.width
    }

    pub fn height(&self) -> usize {
        self.field.height
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        let shape = [self.field.height, self.field.width];
        for (name, map) in [("t", &self.t), ("theta", &self.theta), ("delta", &self.delta)] {
            if map.shape() != shape {
                return Err(Error::param(format!(
                    "{name} map has shape {:?}, field is {:?}",
                    map.shape(),
                    shape
                )));
            }
        }
        if let Some(v) = self.t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("transmittance {v} outside [0, 1]")));
        }
        if let Some(v) = self.theta.iter().find(|v| !(0.0..90.0).contains(*v)) {
            return Err(Error::param(format!("theta {v} outside [0, 90) degrees")));
        }
        if let Some(v) = self
            .delta
            .iter()
            .find(|v| !(0.0..=std::f64::consts::PI).contains(*v))
        {
            return Err(Error::param(format!("retardation {v} outside [0, pi]")));
        }
        if !(self.z_extent.is_finite() && self.z_extent >= 0.0) {
            return Err(Error::param("z_extent must be >= 0"));
        }
        Ok(())
    }

    /// Writes `t.csv`, `theta.csv`, `delta.csv` and `phantom.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("t.csv"), &self.t)?;
        write_matrix_csv(&dir.join("theta.csv"), &self.theta)?;
        write_matrix_csv(&dir.join("delta.csv"), &self.delta)?;
        let meta = PhantomMeta { pitch: self.field.pitch, z_extent: self.z_extent };
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("phantom.toml"), text)?;
        Ok(())
    }

    /// Reads a phantom written by [`Phantom::save`]. `theta.csv` and
    /// `delta.csv` are optional and default to zero; `phantom.toml` is
    /// optional and defaults to a 1 um pitch.
    pub fn load(dir: &Path) -> Result<Self> {
        let t = read_matrix_csv(&dir.join("t.csv"))?;
        let (height, width) = t.dim();
        let optional = |name: &str| -> Result<Array2<f64>> {
            let p = dir.join(name);
            if p.exists() {
                read_matrix_csv(&p)
            } else {
                Ok(Array2::zeros((height, width)))
            }
        };
        let meta_path = dir.join("phantom.toml");
        let meta = if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path)?;
            toml::from_str(&text).map_err(|e| Error::Format {
                path: meta_path.display().to_string(),
                reason: e.to_string(),
            })?
        } else {
            PhantomMeta { pitch: 1.0, z_extent: 0.0 }
        };
        let phantom = Phantom {
            field: Field::new(width, height, meta.pitch),
            t,
            theta: optional("theta.csv")?,
            delta: optional("delta.csv")?,
            z_extent: meta.z_extent,
        };
        phantom.validate()?;
        Ok(phantom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhantomMeta {
    pitch: f64,
    z_extent: f64,
}

/// USAF-style target: one group of three vertical opaque bars per entry of
/// `bar_widths` (micrometres), laid out left to right. Bars are five widths
/// tall, separated by one width, and groups are separated by twice the
/// widest bar. An empty list yields an 8 x 8 clear field.
pub fn make_bar_target(bar_widths: &[f64], pitch: f64) -> Result<Phantom> {
    Field::new(1, 1, pitch).validate()?;
    if bar_widths.is_empty() {
        return Ok(Phantom::transparent(Field::new(8, 8, pitch)));
    }
    let mut px = Vec::with_capacity(bar_widths.len());
    for &w in bar_widths {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::param(format!("bar width must be > 0, got {w}")));
        }
        if w < pitch {
            return Err(Error::param(format!(
                "bar width {w} um is below the pixel pitch {pitch} um"
            )));
        }
        px.push((w / pitch).round() as usize);
    }
    let widest = *px.iter().max().expect("non-empty");
    let margin = 2 * widest;
    let width = margin + px.iter().map(|&w| 5 * w + margin).sum::<usize>();
    let height = 5 * widest + 2 * margin;
    let mut phantom = Phantom::transparent(Field::new(width, height, pitch));
    let mut x = margin;
    for &w in &px {
        let top = margin + (5 * widest - 5 * w) / 2;
        for bar in 0..3 {
            let x0 = x + 2 * bar * w;
            phantom
                .t
                .slice_mut(ndarray::s![top..top + 5 * w, x0..x0 + w])
                .fill(0.0);
        }
        x += 5 * w + margin;
    }
    Ok(phantom)
}

/// Opaque half-plane left of `edge_x` (micrometres), clear to the right.
pub fn make_edge_target(field: Field, edge_x: f64) -> Result<Phantom> {
    field.validate()?;
    let extent = field.width as f64 * field.pitch;
    if !(edge_x.is_finite() && (0.0..=extent).contains(&edge_x)) {
        return Err(Error::param(format!(
            "edge at {edge_x} um lies outside the field [0, {extent}]"
        )));
    }
    let mut phantom = Phantom::transparent(field);
    for ((_, col), v) in phantom.t.indexed_iter_mut() {
        if field.center(col, 0).0 < edge_x {
            *v = 0.0;
        }
    }
    Ok(phantom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberVolumeSpec {
    pub field: Field,
    pub n_fibers: usize,
    /// Fibre diameter in micrometres.
    pub diameter: f64,
    /// Axial extent of the volume in micrometres.
    pub z_extent: f64,
    pub n_slices: usize,
}

/// A thin slice of a thick specimen together with its axial position.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub phantom: Phantom,
    /// Axial position in micrometres.
    pub z: f64,
}

impl Layer {
    pub fn at_focus(phantom: Phantom) -> Self {
        Layer { phantom, z: 0.0 }
    }
}

/// Randomly placed and oriented straight opaque fibres distributed over
/// `n_slices` evenly spaced slices spanning `[0, z_extent]`.
pub fn make_fiber_volume(spec: &FiberVolumeSpec, seed: u64) -> Result<Vec<Layer>> {
    spec.field.validate()?;
    if spec.n_slices == 0 {
        return Err(Error::param("fibre volume needs at least one slice"));
    }
    if !(spec.diameter.is_finite() && spec.diameter > 0.0) {
        return Err(Error::param("fibre diameter must be > 0"));
    }
    if !(spec.z_extent.is_finite() && spec.z_extent >= 0.0) {
        return Err(Error::param("z_extent must be >= 0"));
    }
    let f = spec.field;
    let (w_um, h_um) = (f.width as f64 * f.pitch, f.height as f64 * f.pitch);
    let diagonal = w_um.hypot(h_um);
    let mut layers: Vec<Layer> = (0..spec.n_slices)
        .map(|k| {
            let z = if spec.n_slices == 1 {
                0.0
            } else {
                spec.z_extent * k as f64 / (spec.n_slices - 1) as f64
            };
            let mut phantom = Phantom::transparent(f);
            phantom.z_extent = spec.z_extent;
            Layer { phantom, z }
        })
        .collect();

    let mut rng = stream(seed, Domain::Fibers, 0, 0);
    let radius = 0.5 * spec.diameter;
    for _ in 0..spec.n_fibers {
        let slice = rng.random_range(0..spec.n_slices);
        let cx = rng.random::<f64>() * w_um;
        let cy = rng.random::<f64>() * h_um;
        let angle = rng.random::<f64>() * std::f64::consts::PI;
        let half_len = 0.5 * diagonal * (0.5 + 0.5 * rng.random::<f64>());
        let (ux, uy) = (angle.cos(), angle.sin());
        let t = &mut layers[slice].phantom.t;
        for ((row, col), v) in t.indexed_iter_mut() {
            let (px, py) = f.center(col, row);
            let (dx, dy) = (px - cx, py - cy);
            let along = (dx * ux + dy * uy).clamp(-half_len, half_len);
            let dist = (dx - along * ux).hypot(dy - along * uy);
            if dist <= radius {
                *v = 0.0;
            }
        }
    }
    Ok(layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Full,
    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in micrometres.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Full => true,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disk { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub shape: Shape,
    pub t: f64,
    /// Degrees, [0, 90).
    pub theta: f64,
    /// Radians, [0, pi].
    pub delta: f64,
}

/// Piecewise-constant birefringent object on a clear, isotropic background.
/// Later regions overwrite earlier ones where they overlap.
pub fn make_birefringent_phantom(field: Field, regions: &[Region]) -> Result<Phantom> {
    field.validate()?;
    for r in regions {
        if !(0.0..=1.0).contains(&r.t)
            || !(0.0..90.0).contains(&r.theta)
            || !(0.0..=std::f64::consts::PI).contains(&r.delta)
        {
            return Err(Error::param(format!(
                "region values out of range: T={}, theta={}, delta={}",
                r.t, r.theta, r.delta
            )));
        }
    }
    let mut p = Phantom::transparent(field);
    for ((row, col), &k) in region_owner(field, regions).indexed_iter() {
        if k > 0 {
            let r = &regions[k - 1];
            p.t[[row, col]] = r.t;
            p.theta[[row, col]] = r.theta;
            p.delta[[row, col]] = r.delta;
        }
    }
    Ok(p)
}

/// Which region owns each pixel: 0 for the background, `k + 1` for
/// `regions[k]`, with later regions taking precedence.
pub fn region_owner(field: Field, regions: &[Region]) -> Array2<usize> {
    Array2::from_shape_fn((field.height, field.width), |(row, col)| {
        let (x, y) = field.center(col, row);
        regions.iter().rposition(|r| r.shape.contains(x, y)).map_or(0, |k| k + 1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn zero_runs(row: ndarray::ArrayView1<f64>) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut cur = 0;
        for &v in row {
            if v == 0.0 {
                cur += 1;
            } else if cur > 0 {
                runs.push(cur);
                cur = 0;
            }
        }
        if cur > 0 {
            runs.push(cur);
        }
        runs
    }

    #[test]
    fn bar_target_has_exact_bar_widths() {
        let p = make_bar_target(&[10.0], 1.0).unwrap();
        p.validate().unwrap();
        let mid = p.height() / 2;
        assert_eq!(zero_runs(p.t.row(mid)), vec![10, 10, 10]);
        assert!(p.theta.iter().all(|&v| v == 0.0));
        assert!(p.delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bar_target_groups() {
        // USAF group 4 element 1 through group 7 element 1 bar widths.
        let widths = [31.25, 15.63, 7.81, 3.91];
        let p = make_bar_target(&widths, 0.5).unwrap();
        let mid = p.height() / 2;
        let runs = zero_runs(p.t.row(mid));
        assert_eq!(runs.len(), 12);
        assert_eq!(&runs[..3], &[63, 63, 63]);
    }

    #[test]
    fn empty_bar_target_is_clear() {
        let p = make_bar_target(&[], 1.0).unwrap();
        assert!(p.t.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bar_narrower_than_pixel_is_rejected() {
        assert!(make_bar_target(&[0.5], 1.0).is_err());
    }

    #[test]
    fn centered_edge_is_half_dark() {
        let f = Field::new(64, 5, 2.0);
        let p = make_edge_target(f, 64.0).unwrap();
        assert_eq!(p.t.sum(), (32 * 5) as f64);
        assert!(make_edge_target(f, 200.0).is_err());
        assert!(make_edge_target(f, -1.0).is_err());
    }

    #[test]
    fn no_fibers_means_clear_slices() {
        let spec = FiberVolumeSpec {
            field: Field::new(32, 32, 1.0),
            n_fibers: 0,
            diameter: 6.0,
            z_extent: 300.0,
            n_slices: 4,
        };
        let layers = make_fiber_volume(&spec, 1).unwrap();
        assert_eq!(layers.len(), 4);
        assert_eq!(layers[3].z, 300.0);
        assert!(layers.iter().all(|l| l.phantom.t.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn single_fiber_has_requested_diameter() {
        let spec = FiberVolumeSpec {
            field: Field::new(200, 200, 0.5),
            n_fibers: 1,
            diameter: 6.0,
            z_extent: 0.0,
            n_slices: 1,
        };
        let layers = make_fiber_volume(&spec, 3).unwrap();
        let t = &layers[0].phantom.t;
        // Measure the stripe width by probing perpendicular to the fibre at
        // every dark pixel: dark area divided by in-field length.
        let dark = t.iter().filter(|&&v| v == 0.0).count() as f64 * 0.25;
        assert!(dark > 0.0);
        // Longest chord through a 100 um square is ~141 um; the fibre spans
        // at least half the diagonal, so area / 6 um is a length in range.
        let length = dark / 6.0;
        assert!(length > 20.0 && length < 150.0, "length {length}");
        // Width check along the dark pixel with the most dark neighbours in
        // a straight probe: take rows and columns crossing the fibre and
        // convert the run length to the perpendicular width.
        let mut widths = Vec::new();
        for row in t.rows() {
            widths.extend(zero_runs(row));
        }
        let row_run = widths.iter().copied().max().unwrap() as f64 * 0.5;
        widths.clear();
        for col in t.columns() {
            widths.extend(zero_runs(col));
        }
        let col_run = widths.iter().copied().max().unwrap() as f64 * 0.5;
        // For a stripe of width d at angle a, row runs are d/|sin a| and
        // column runs d/|cos a|, so 1/r^2 + 1/c^2 = 1/d^2.
        let d = 1.0 / (1.0 / (row_run * row_run) + 1.0 / (col_run * col_run)).sqrt();
        assert!((d - 6.0).abs() < 1.0, "width {d}");
    }

    #[test]
    fn fiber_volume_is_reproducible() {
        let spec = FiberVolumeSpec {
            field: Field::new(64, 64, 1.0),
            n_fibers: 12,
            diameter: 6.0,
            z_extent: 300.0,
            n_slices: 5,
        };
        assert_eq!(make_fiber_volume(&spec, 9).unwrap(), make_fiber_volume(&spec, 9).unwrap());
        assert_ne!(make_fiber_volume(&spec, 9).unwrap(), make_fiber_volume(&spec, 10).unwrap());
    }

    #[test]
    fn birefringent_regions() {
        let f = Field::new(10, 10, 1.0);
        let p = make_birefringent_phantom(
            f,
            &[Region { shape: Shape::Full, t: 1.0, theta: 45.0, delta: PI }],
        )
        .unwrap();
        assert!(p.theta.iter().all(|&v| v == 45.0));
        assert!(p.delta.iter().all(|&v| v == PI));
        let p = make_birefringent_phantom(
            f,
            &[
                Region { shape: Shape::Rect { x0: 0.0, y0: 0.0, x1: 5.0, y1: 10.0 }, t: 0.5, theta: 10.0, delta: 1.0 },
                Region { shape: Shape::Disk { cx: 5.0, cy: 5.0, r: 1.0 }, t: 0.2, theta: 30.0, delta: 2.0 },
            ],
        )
        .unwrap();
        assert_eq!(p.t[[4, 4]], 0.2);
        assert_eq!(p.t[[0, 0]], 0.5);
        assert_eq!(p.t[[0, 9]], 1.0);
        assert!(make_birefringent_phantom(
            f,
            &[Region { shape: Shape::Full, t: 1.0, theta: 95.0, delta: 0.0 }]
        )
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = make_bar_target(&[3.0], 1.5).unwrap();
        p.theta.fill(12.5);
        p.delta.fill(0.25);
        p.save(dir.path()).unwrap();
        assert_eq!(Phantom::load(dir.path()).unwrap(), p);
    }
}
