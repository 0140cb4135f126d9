//! Text and image formats for grids, dose traces and measurements.
//!
//! Every CSV begins with a `# <kind> key=value ...` line. Floats are written
//! with shortest round-trip formatting, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::acquisition::TRMeasurement;
use crate::beam_model::{ARParams, DoseField};
use crate::error::{Error, Result};
use crate::grid::YieldImage;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Header<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Header<'a> {
    fn parse(line: &'a str, kind: &str) -> std::result::Result<Self, String> {
        let rest = line
            .strip_prefix("# ")
            .and_then(|l| l.strip_prefix(kind))
            .ok_or_else(|| format!("expected header '# {kind} ...'"))?;
        let pairs = rest
            .split_whitespace()
            .map(|kv| {
                kv.split_once('=')
                    .ok_or_else(|| format!("bad header field '{kv}'"))
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { pairs })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<T, String> {
        let raw = self
            .pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("header is missing '{key}'"))?;
        raw.parse()
            .map_err(|_| format!("header field {key}={raw} is malformed"))
    }
}

fn format_err<'a>(what: &'static str, path: &'a Path) -> impl Fn(String) -> Error + 'a {
    move |reason| Error::Format {
        what,
        path: path.to_path_buf(),
        reason,
    }
}

pub fn dose_field_to_csv(field: &DoseField) -> String {
    let p = &field.params;
    let mut out = format!(
        "# dose_field width={} height={} a={:?} c={:?} sigma_x_sq={:?} lambda_nominal={:?} clamped={}\nlambda\n",
        field.width, field.height, p.a, p.c, p.sigma_x_sq, p.lambda_nominal, field.clamped
    );
    for v in &field.values {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn read_dose_field(path: &Path) -> Result<DoseField> {
    let text = read_text(path)?;
    let err = format_err("dose field", path);
    let mut lines = text.lines();
    let header = Header::parse(lines.next().unwrap_or(""), "dose_field").map_err(&err)?;
    let width: usize = header.get("width").map_err(&err)?;
    let height: usize = header.get("height").map_err(&err)?;
    let params = ARParams::new(
        header.get("a").map_err(&err)?,
        header.get("c").map_err(&err)?,
        header.get("sigma_x_sq").map_err(&err)?,
        header.get("lambda_nominal").map_err(&err)?,
    )?;
    let clamped = header.get("clamped").map_err(&err)?;
    if lines.next() != Some("lambda") {
        return Err(err("missing 'lambda' column header".into()));
    }
    let values: Vec<f64> = lines
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| err(format!("line {}: {e}", i + 3)))
        })
        .collect::<Result<_>>()?;
    if values.len() != width * height {
        return Err(err(format!(
            "expected {} values, found {}",
            width * height,
            values.len()
        )));
    }
    Ok(DoseField {
        width,
        height,
        values,
        params,
        clamped,
    })
}

/// Sparse form: only nonzero counts are listed as `pixel,k,count`.
pub fn measurement_to_csv(tr: &TRMeasurement) -> String {
    let mut out = format!(
        "# tr_measurement width={} height={} n={}\npixel,k,count\n",
        tr.width, tr.height, tr.n
    );
    for (p, px) in tr.iter_pixels().enumerate() {
        for (k, &c) in px.iter().enumerate() {
            if c > 0 {
                let _ = writeln!(out, "{p},{k},{c}");
            }
        }
    }
    out
}

pub fn read_measurement(path: &Path) -> Result<TRMeasurement> {
    let text = read_text(path)?;
    let err = format_err("measurement", path);
    let mut lines = text.lines();
    let header = Header::parse(lines.next().unwrap_or(""), "tr_measurement").map_err(&err)?;
    let width: usize = header.get("width").map_err(&err)?;
    let height: usize = header.get("height").map_err(&err)?;
    let n: usize = header.get("n").map_err(&err)?;
    if lines.next() != Some("pixel,k,count") {
        return Err(err("missing 'pixel,k,count' column header".into()));
    }
    let total = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(n))
        .ok_or_else(|| err("dimensions overflow".into()))?;
    let mut counts = vec![0u32; total];
    for (i, line) in lines.enumerate() {
        let mut it = line.split(',').map(str::trim);
        let mut next = |name: &str| -> Result<u64> {
            it.next()
                .ok_or_else(|| err(format!("line {}: missing {name}", i + 3)))?
                .parse::<u64>()
                .map_err(|e| err(format!("line {}: {name}: {e}", i + 3)))
        };
        let (p, k, c) = (next("pixel")? as usize, next("k")? as usize, next("count")?);
        if p >= width * height || k >= n {
            return Err(err(format!("line {}: index out of range", i + 3)));
        }
        counts[p * n + k] =
            u32::try_from(c).map_err(|_| err(format!("line {}: count too large", i + 3)))?;
    }
    TRMeasurement::from_counts(width, height, n, counts)
}

/// One image row per line.
pub fn yield_to_csv(img: &YieldImage) -> String {
    let mut out = format!("# yield_image width={} height={}\n", img.width, img.height);
    for row in img.values.chunks(img.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_yield_csv(path: &Path) -> Result<YieldImage> {
    let text = read_text(path)?;
    let err = format_err("yield image", path);
    let mut lines = text.lines();
    let header = Header::parse(lines.next().unwrap_or(""), "yield_image").map_err(&err)?;
    let width: usize = header.get("width").map_err(&err)?;
    let height: usize = header.get("height").map_err(&err)?;
    let mut values = Vec::with_capacity(width * height);
    for (i, line) in lines.enumerate() {
        for tok in line.split(',') {
            values.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("line {}: {e}", i + 2)))?,
            );
        }
    }
    YieldImage::new(width, height, values)
}

/// Plain comma-separated per-pixel values in raster order, one per line.
pub fn trace_to_csv(name: &str, values: &[f64]) -> String {
    let mut out = format!("{name}\n");
    for v in values {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

/// 16-bit binary PGM; values map linearly from `[min, max]` onto `[0, 65535]`.
pub fn pgm16_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n# min={lo:?} max={hi:?}\n{width} {height}\n65535\n").into_bytes();
    out.reserve(values.len() * 2);
    for &v in values {
        let q = if v.is_finite() {
            ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Raw totals as 16-bit PGM, saturating at 65535.
pub fn counts_pgm16_bytes(width: usize, height: usize, totals: &[u64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &t in totals {
        out.extend_from_slice(&(t.min(65535) as u16).to_be_bytes());
    }
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a grayscale image (PNG or PGM) as intensities in `[0, 1]`.
pub fn read_gray_image(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format {
            what: "image",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    let values = img
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    Ok((w as usize, h as usize, values))
}
