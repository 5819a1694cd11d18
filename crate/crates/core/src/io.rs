//! File formats: PGM (P5) and 8-bit grayscale PNG input, PGM map export,
//! sparse-matrix triplet dumps and small CSV helpers.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;
use crate::sparse::SparseWeights;

/// Loads an 8-bit grayscale image. The format is sniffed from the magic
/// bytes, not the extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes).map_err(|reason| Error::format(path, reason))
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        load_png(path)
    } else if bytes.starts_with(b"P2") {
        Err(Error::format(path, "unsupported PGM variant P2 (only binary P5 is accepted)"))
    } else {
        Err(Error::format(path, "unrecognized image format (expected binary PGM or PNG)"))
    }
}

/// Parses a binary PGM. Intensities are copied verbatim; a maxval below 255
/// does not rescale them.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated or malformed PGM header".into());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?;
        *field = text.parse().map_err(|_| format!("header value {text:?} out of range"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after PGM header".into());
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported bit depth (maxval {maxval}; only 8-bit images are accepted)"));
    }
    if width == 0 || height == 0 {
        return Err(format!("degenerate dimensions {width}x{height}"));
    }
    let needed = width * height;
    let data = &bytes[pos..];
    if data.len() < needed {
        return Err(format!("expected {needed} pixel bytes, found {}", data.len()));
    }
    GrayImage::from_bytes(height, width, &data[..needed]).map_err(|e| e.to_string())
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("PNG decode failed: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(Error::format(
            path,
            format!("unsupported channel layout {color:?} (only single-channel grayscale is accepted)"),
        ));
    }
    if depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!("unsupported bit depth {} (only 8-bit images are accepted)", depth as u8),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("PNG decode failed: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut bytes = Vec::with_capacity(w * h);
    for row in buf.chunks(frame.line_size).take(h) {
        bytes.extend_from_slice(&row[..w]);
    }
    GrayImage::from_bytes(h, w, &bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_pgm(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), rows * cols, "pixel buffer does not match dimensions");
    let path = path.as_ref();
    fs::write(path, encode_pgm(rows, cols, pixels)).map_err(|e| Error::io(path, e))
}

/// Writes an image as-is, rounding intensities half-up to gray levels.
pub fn save_image(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    write_pgm(path, img.rows(), img.cols(), &img.quantized())
}

/// Min-max normalizes `values` to `0..=255` with round-half-up. A flat map
/// becomes all zeros.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !span.is_finite() || span <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / span * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Exports a real-valued map as a min-max normalized PGM.
pub fn save_map(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    write_pgm(path, rows, cols, &normalize_to_u8(values))
}

/// Formats a real the way C's `%.12g` does.
pub fn format_g12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    // exponent after rounding to 12 significant digits
    let sci = format!("{:.11e}", v);
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let e: i32 = e.parse().expect("exponent");
    if !(-4..12).contains(&e) {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    } else {
        let decimals = (11 - e).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Text triplet dump `i j w` (0-based, `%.12g` weights), one stored entry per
/// line in row-major order.
pub fn write_triplets(path: impl AsRef<Path>, w: &SparseWeights) -> Result<()> {
    let mut text = String::new();
    for (i, j, v) in w.entries() {
        let _ = writeln!(text, "{i} {j} {}", format_g12(v));
    }
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Eigenvalue listing `k,lambda` with 1-based `k`.
pub fn write_eigenvalues_csv(path: impl AsRef<Path>, eigenvalues: &[f64]) -> Result<()> {
    let mut text = String::from("k,lambda\n");
    for (k, l) in eigenvalues.iter().enumerate() {
        let _ = writeln!(text, "{},{l:e}", k + 1);
    }
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
