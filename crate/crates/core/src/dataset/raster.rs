use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("not a binary PGM raster: {0}")]
    Format(String),
    #[error("raster declares {expected} pixels but holds {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("raster value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grayscale intensity map in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyRaster {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, RasterError> {
        if width * height != values.len() || width == 0 || height == 0 {
            return Err(RasterError::DimensionMismatch { expected: width * height, actual: values.len() });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::OutOfRange(bad));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, RasterError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Pull the next whitespace-delimited header token, skipping `#` comments.
fn header_token(data: &[u8], pos: &mut usize) -> Result<String, RasterError> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(RasterError::Format("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

fn header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize, RasterError> {
    let tok = header_token(data, pos)?;
    tok.parse().map_err(|_| RasterError::Format(format!("bad {what} `{tok}`")))
}

/// Decode a P5 raster (8- or 16-bit), scaling by the declared max value.
pub fn read_pgm<R: Read>(mut reader: R) -> Result<SaliencyRaster, RasterError> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    let mut pos = 0;
    let magic = header_token(&data, &mut pos)?;
    if magic != "P5" {
        return Err(RasterError::Format(format!("magic `{magic}`")));
    }
    let width = header_number(&data, &mut pos, "width")?;
    let height = header_number(&data, &mut pos, "height")?;
    let maxval = header_number(&data, &mut pos, "max value")?;
    if maxval == 0 || maxval > 65_535 {
        return Err(RasterError::Format(format!("max value {maxval}")));
    }
    // exactly one whitespace byte separates the header from the pixels
    pos += 1;
    let body = data.get(pos..).unwrap_or_default();
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let expected = width * height;
    if body.len() != expected * bytes_per {
        return Err(RasterError::DimensionMismatch { expected, actual: body.len() / bytes_per });
    }
    let max = maxval as f64;
    let values: Vec<f64> = if bytes_per == 1 {
        body.iter().map(|&b| f64::from(b) / max).collect()
    } else {
        body.chunks_exact(2).map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / max).collect()
    };
    if values.iter().any(|v| *v > 1.0) {
        return Err(RasterError::Format("sample exceeds max value".into()));
    }
    SaliencyRaster::new(width, height, values)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<SaliencyRaster, RasterError> {
    read_pgm(std::fs::File::open(path)?)
}

/// Encode as 8-bit P5, rounding each value to the nearest level.
pub fn write_pgm<W: Write>(raster: &SaliencyRaster, mut out: W) -> Result<(), RasterError> {
    write!(out, "P5\n{} {}\n255\n", raster.width, raster.height)?;
    let bytes: Vec<u8> = raster.values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm(raster: &SaliencyRaster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(raster, &mut file)?;
    file.flush()?;
    Ok(())
}
