//! Trace to image: nearest-bin rasterisation into a 16-bit graymap plus a
//! CSV of the raw bin values.

use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Measured height `-p_z`.
    Topography,
    /// Regulation error `e_z`.
    Deflection,
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("trace has no data rows")]
    Empty,
    #[error("trace is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("image size must be at least 1")]
    ZeroSize,
    #[error("malformed trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Square grid of bin values; row 0 is the top (largest y). `None` marks
/// bins no sample landed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub extent: f64,
    pub bins: Vec<Option<f64>>,
}

impl Image {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.bins[row * self.size + col]
    }

    fn range(&self) -> Option<(f64, f64)> {
        self.bins.iter().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((f64::min(lo, v), f64::max(hi, v))),
        })
    }

    /// Gray levels: 0 for no data, data mapped linearly onto 1..=65535.
    /// A constant image maps to mid-gray.
    pub fn gray(&self) -> Vec<u16> {
        let range = self.range();
        self.bins
            .iter()
            .map(|b| match (b, range) {
                (None, _) | (_, None) => 0,
                (Some(v), Some((lo, hi))) if hi > lo => (1.0 + (v - lo) / (hi - lo) * 65534.0).round() as u16,
                (Some(_), Some(_)) => 32768,
            })
            .collect()
    }

    /// Binary 16-bit PGM, big-endian samples.
    pub fn write_pgm(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.size, self.size)?;
        let bytes: Vec<u8> = self.gray().iter().flat_map(|g| g.to_be_bytes()).collect();
        out.write_all(&bytes)?;
        out.flush()
    }

    /// Same orientation as the PGM; empty cells are no-data.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        for row in self.bins.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|b| b.map(|v| v.to_string()).unwrap_or_default()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()
    }
}

fn column(headers: &csv::StringRecord, name: &'static str) -> Result<usize, RenderError> {
    headers.iter().position(|h| h == name).ok_or(RenderError::MissingColumn(name))
}

fn bin(v: f64, extent: f64, size: usize) -> usize {
    if size == 1 || extent <= 0.0 {
        return 0;
    }
    let x = (v + extent) / (2.0 * extent) * (size - 1) as f64;
    (x.round().max(0.0) as usize).min(size - 1)
}

/// Bins the trace onto `size x size` over `[-A, A]^2`, where `A` is the
/// largest reference excursion. Later samples overwrite earlier ones.
pub fn rasterize(trace: impl Read, mode: RenderMode, size: usize) -> Result<Image, RenderError> {
    if size == 0 {
        return Err(RenderError::ZeroSize);
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(trace);
    let headers = reader.headers()?.clone();
    let cols = [
        column(&headers, "r_x")?,
        column(&headers, "r_y")?,
        column(&headers, "p_x")?,
        column(&headers, "p_y")?,
        column(&headers, match mode {
            RenderMode::Topography => "p_z",
            RenderMode::Deflection => "e_z",
        })?,
    ];
    let mut samples = Vec::new();
    let mut extent = 0.0f64;
    for record in reader.records() {
        let record = record?;
        let mut v = [0.0f64; 5];
        for (slot, &c) in v.iter_mut().zip(&cols) {
            let field = record.get(c).unwrap_or("");
            *slot = field.trim().parse().map_err(|_| {
                RenderError::Csv(csv::Error::from(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad number `{field}` on line {}", record.position().map_or(0, |p| p.line())),
                )))
            })?;
        }
        extent = extent.max(v[0].abs()).max(v[1].abs());
        let value = match mode {
            RenderMode::Topography => -v[4],
            RenderMode::Deflection => v[4],
        };
        samples.push((v[2], v[3], value));
    }
    if samples.is_empty() {
        return Err(RenderError::Empty);
    }
    let mut bins = vec![None; size * size];
    for (x, y, value) in samples {
        let col = bin(x, extent, size);
        let row = size - 1 - bin(y, extent, size);
        bins[row * size + col] = Some(value);
    }
    Ok(Image { size, extent, bins })
}

/// Writes `out` (PGM) and `out` with a `.csv` extension.
pub fn render_file(trace: &Path, mode: RenderMode, size: usize, out: &Path) -> Result<Image, RenderError> {
    let image = rasterize(std::io::BufReader::new(std::fs::File::open(trace)?), mode, size)?;
    image.write_pgm(std::io::BufWriter::new(std::fs::File::create(out)?))?;
    image.write_csv(std::io::BufWriter::new(std::fs::File::create(out.with_extension("csv"))?))?;
    Ok(image)
}
