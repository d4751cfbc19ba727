//! Minimal netpbm support: grayscale P2/P5 in, P5 and P6 out.

use eelab_core::swcut::{Image, Labeling};

use crate::error::{CliError, CliResult};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    /// Offset of the first raster byte (P5) or the first sample token (P2).
    data: usize,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Output(format!("malformed PGM: {}", msg.into()))
}

/// Next whitespace-delimited token, skipping `#` comments to end of line.
fn token(bytes: &[u8], pos: &mut usize) -> Option<(usize, usize)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' && bytes[*pos] != b'\r' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then_some((start, *pos))
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> CliResult<usize> {
    let (a, b) = token(bytes, pos).ok_or_else(|| bad(format!("missing {what}")))?;
    std::str::from_utf8(&bytes[a..b])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("{what} is not a number")))
}

fn header(bytes: &[u8]) -> CliResult<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'5') {
        return Err(bad("expected P2 or P5 magic"));
    }
    let mut pos = 2;
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("maxval {maxval} is outside 1..=255")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    if bytes[1] == b'5' {
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(bad("missing raster"));
        }
        pos += 1;
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        maxval,
        data: pos,
    })
}

/// Decode a grayscale PGM; intensities are scaled by `1 / maxval`.
pub fn read_pgm(bytes: &[u8]) -> CliResult<Image> {
    let h = header(bytes)?;
    let n = h.width * h.height;
    let samples: Vec<u8> = if h.magic[1] == b'5' {
        let raster = bytes
            .get(h.data..h.data + n)
            .ok_or_else(|| bad("raster is truncated"))?;
        raster.to_vec()
    } else {
        let mut pos = h.data;
        (0..n)
            .map(|_| number(bytes, &mut pos, "sample"))
            .collect::<CliResult<Vec<_>>>()?
            .into_iter()
            .map(|v| u8::try_from(v).map_err(|_| bad("sample exceeds 255")))
            .collect::<CliResult<Vec<_>>>()?
    };
    if let Some(s) = samples.iter().find(|&&s| s as usize > h.maxval) {
        return Err(bad(format!("sample {s} exceeds maxval {}", h.maxval)));
    }
    Image::from_samples(h.width, h.height, &samples, h.maxval as u8).map_err(CliError::Runtime)
}

pub fn write_pgm(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

pub fn write_ppm(width: usize, height: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}

/// Gray level of label `l` among `L`: `l * 255 / (L - 1)`, integer division.
pub fn label_gray(label: usize, num_labels: usize) -> u8 {
    if num_labels <= 1 {
        0
    } else {
        (label * 255 / (num_labels - 1)) as u8
    }
}

pub fn label_map(w: &Labeling) -> Vec<u8> {
    let samples: Vec<u8> = w
        .labels()
        .iter()
        .map(|&l| label_gray(l, w.num_labels()))
        .collect();
    write_pgm(w.width(), w.height(), &samples)
}

/// The image in gray with region-boundary pixels painted red.
pub fn boundary_overlay(image: &Image, w: &Labeling) -> Vec<u8> {
    let mask = w.boundary_mask();
    let rgb: Vec<[u8; 3]> = image
        .to_samples()
        .into_iter()
        .zip(mask)
        .map(|(g, edge)| if edge { [255, 0, 0] } else { [g, g, g] })
        .collect();
    write_ppm(image.width(), image.height(), &rgb)
}
