//! Plain-text and image file formats: CSV matrices and tables, binary PGM
//! (8 or 16 bit) and SVG line plots.

use std::fmt::{Display, Write as _};
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.into() }
}

/// Writes a matrix as headerless CSV, one image row per line. Floats use
/// the shortest representation that round-trips exactly.
pub fn write_matrix_csv<T: Display>(path: &Path, m: &Array2<T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless CSV matrix; all rows must have equal length.
pub fn read_matrix_csv<T: FromStr>(path: &Path) -> Result<Array2<T>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(format_err(path, format!("row {rows} has {} columns, expected {c}", rec.len())))
            }
            _ => {}
        }
        for field in rec.iter() {
            data.push(
                field
                    .parse()
                    .map_err(|_| format_err(path, format!("cannot parse {field:?} in row {rows}")))?,
            );
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| format_err(path, "empty matrix"))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| format_err(path, e.to_string()))
}

/// Writes a table with a header row.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::param(format!(
                "table row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed CSV table as (header, rows of strings).
pub fn read_table_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

/// Writes a binary (P5) PGM with maxval 65535.
pub fn write_pgm16(path: &Path, img: &Array2<u16>) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{w} {h}\n65535\n")?;
    for &v in img.iter() {
        out.write_all(&v.to_be_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Linearly maps `img` onto 0..=65535 with `lo` and `hi` at the ends.
/// Non-finite values map to 0.
pub fn to_levels(img: &Array2<f64>, lo: f64, hi: f64) -> Array2<u16> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.mapv(|v| {
        if v.is_finite() {
            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        }
    })
}

/// Maps `img` onto the full 16-bit range using its own finite min and max.
pub fn autoscale_levels(img: &Array2<f64>) -> Array2<u16> {
    let (lo, hi) = img
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        to_levels(img, lo, hi)
    } else {
        Array2::zeros(img.dim())
    }
}

/// Reads a binary (P5) PGM of any maxval as raw integer levels.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(format_err(path, "only binary P5 PGM is supported"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format_err(path, format!("bad header field {s:?}")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = &bytes[pos + 1..];
    let depth = if maxval < 256 { 1 } else { 2 };
    if data.len() < w * h * depth {
        return Err(format_err(path, "raster shorter than header dimensions"));
    }
    let values = (0..w * h)
        .map(|k| {
            if depth == 1 {
                data[k] as f64
            } else {
                u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as f64
            }
        })
        .collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points }
    }
}

#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            series: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    /// Renders the plot as a standalone SVG document. Points with a
    /// non-finite coordinate (or non-positive x on a log axis) are skipped.
    pub fn to_svg(&self) -> String {
        let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 150.0, 40.0, 50.0);
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .map(|&(x, y)| (tx(x), y))
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .collect()
            })
            .collect();
        let all = pts.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let (pw, ph) = (w - ml - mr, h - mt - mb);
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            ml + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let xl = if self.log_x { format!("1e{xv:.1}") } else { format!("{xv:.3}") };
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xl}</text>"#,
                px(xv),
                mt + ph + 16.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#,
                ml - 4.0,
                py(yv) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            h - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
            mt + ph / 2.0,
            mt + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, (series, p)) in self.series.iter().zip(&pts).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
            let ly = mt + 14.0 + 18.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
                w - mr + 10.0,
                w - mr + 30.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                w - mr + 35.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn float_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = array![[0.1, 1.0 / 3.0, -2.5e-17], [f64::MAX, 0.0, 7.0]];
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv::<f64>(&p).unwrap(), m);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix_csv::<f64>(&p), Err(Error::Format { .. }) | Err(Error::Csv(_))));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.pgm");
        let m = array![[0u16, 1, 65535], [256, 10, 42]];
        write_pgm16(&p, &m).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), m.mapv(|v| v as f64));
    }

    #[test]
    fn eight_bit_pgm_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.pgm");
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend([7u8, 200]);
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), array![[7.0, 200.0]]);
    }

    #[test]
    fn levels_cover_range() {
        let m = array![[1.0, 2.0], [3.0, f64::NAN]];
        assert_eq!(autoscale_levels(&m), array![[0u16, 32768], [65535, 0]]);
    }

    #[test]
    fn svg_contains_one_polyline_per_series() {
        let svg = Plot::new("t", "x", "y")
            .log_x()
            .with(Series::new("a", vec![(1.0, 1.0), (10.0, 2.0)]))
            .with(Series::new("b<", vec![(0.0, 1.0), (100.0, 3.0)]))
            .to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;"));
    }
}
