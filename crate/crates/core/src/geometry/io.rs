//! Image files: 8-bit PNG for viewing, little-endian PFM for lossless floats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::image::ImageGrid;
use crate::error::{Error, Result};

/// Writes a 1- or 3-channel image as 8-bit PNG; values are clamped to [0,1].
pub fn write_png(path: impl AsRef<Path>, image: &ImageGrid) -> Result<()> {
    let color = match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::InvalidImage(format!("PNG export needs 1 or 3 channels, got {c}"))),
    };
    let file = BufWriter::new(File::create(path.as_ref())?);
    let mut encoder = png::Encoder::new(file, image.width() as u32, image.height() as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
    writer.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Writes a 1- or 3-channel PFM (negative scale ⇒ little-endian, rows bottom-up).
pub fn write_pfm(path: impl AsRef<Path>, image: &ImageGrid) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    encode_pfm(&mut out, image)?;
    out.flush()?;
    Ok(())
}

pub fn encode_pfm(out: &mut impl Write, image: &ImageGrid) -> Result<()> {
    let tag = match image.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidImage(format!("PFM needs 1 or 3 channels, got {c}"))),
    };
    write!(out, "{tag}\n{} {}\n-1.0\n", image.width(), image.height())?;
    let row_len = image.width() * image.channels();
    for row in (0..image.height()).rev() {
        for v in &image.data()[row * row_len..(row + 1) * row_len] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    decode_pfm(&mut reader).map_err(|reason| Error::MalformedFile {
        format: "PFM",
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_pfm(reader: &mut impl BufRead) -> std::result::Result<ImageGrid, String> {
    let mut line = String::new();
    let mut next_line = |reader: &mut dyn BufRead| -> std::result::Result<String, String> {
        line.clear();
        reader.read_line(&mut line).map_err(|e| e.to_string())?;
        Ok(line.trim().to_string())
    };
    let channels = match next_line(reader)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("unknown header {other:?}")),
    };
    let dims = next_line(reader)?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (width, height) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(format!("bad dimensions line {dims:?}")),
    };
    let scale: f32 = next_line(reader)?.parse().map_err(|_| "bad scale line".to_string())?;
    let little_endian = scale < 0.0;
    let row_len = width * channels;
    let mut raw = vec![0u8; row_len * height * 4];
    reader.read_exact(&mut raw).map_err(|e| format!("truncated data: {e}"))?;
    let mut data = vec![0.0f32; row_len * height];
    for (file_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            data[row * row_len + i] = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    ImageGrid::new(channels, height, width, data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
        let img = ImageGrid::new(3, 2, 3, data).unwrap();
        let mut buf = Vec::new();
        encode_pfm(&mut buf, &img).unwrap();
        let back = decode_pfm(&mut buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pfm_rejects_garbage() {
        assert!(decode_pfm(&mut &b"P6\n1 1\n255\n"[..]).is_err());
        assert!(decode_pfm(&mut &b"Pf\n2 2\n-1.0\n\0\0"[..]).is_err());
    }

    #[test]
    fn png_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        write_png(&p, &ImageGrid::filled(3, 4, 5, 0.5)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        assert!(write_png(dir.path().join("y.png"), &ImageGrid::filled(2, 1, 1, 0.0)).is_err());
    }
}
