//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("truncated PNM header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::format(format!("bad PNM {what} {tok:?}")))
}

/// Decodes P5 (one channel) or P6 (three channels); samples are divided by the maxval.
pub fn decode_pnm(bytes: &[u8]) -> Result<FeatureMap> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(format!("unsupported PNM magic {other:?}"))),
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PNM image has a zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(format!("only 8-bit PNM is supported, maxval {maxval}")));
    }
    pos += 1;
    let n = width * height * channels;
    let raw = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::format(format!("PNM pixel data truncated: need {n} bytes")))?;
    let data = raw.iter().map(|&b| b as f64 / maxval as f64).collect();
    FeatureMap::new(height, width, channels, data)
}

/// Encodes a one- or three-channel image; values are clipped to `[0, 1]` and scaled by 255.
pub fn encode_pnm(img: &FeatureMap) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn read_pnm(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn write_pnm(path: &Path, img: &FeatureMap) -> Result<()> {
    let bytes = encode_pnm(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
