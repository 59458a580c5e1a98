//! On-disk formats for supervision maps.
//!
//! Density maps use a small little-endian binary layout: the magic bytes
//! `FFDM`, `u32` width, `u32` height, then `width * height` `f32` values in
//! row-major order. PNG exports are 8-bit grayscale and meant for viewing.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{DensityMap, SegmentationMap};
use crate::error::{Error, Result};

pub const FFDM_MAGIC: &[u8; 4] = b"FFDM";

pub fn write_ffdm<W: Write>(map: &DensityMap, mut out: W) -> Result<()> {
    out.write_all(FFDM_MAGIC)?;
    out.write_all(&(map.width() as u32).to_le_bytes())?;
    out.write_all(&(map.height() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(map.values().len() * 4);
    for &v in map.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_ffdm<R: Read>(mut input: R) -> Result<DensityMap> {
    let mut header = [0u8; 12];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated FFDM header".into()))?;
    if &header[..4] != FFDM_MAGIC {
        return Err(Error::Format("missing FFDM magic".into()));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != width * height * 4 {
        return Err(Error::Format(format!(
            "FFDM body has {} bytes, expected {} for {width}x{height}",
            body.len(),
            width * height * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DensityMap::from_values(width, height, values)
}

pub fn save_ffdm(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ffdm(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_ffdm(path: impl AsRef<Path>) -> Result<DensityMap> {
    read_ffdm(std::io::BufReader::new(File::open(path)?))
}

/// Writes an 8-bit grayscale PNG.
pub fn write_gray_png<W: Write>(width: usize, height: usize, pixels: &[u8], out: W) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Linear scaling with the map maximum at 255; non-positive maps are black.
pub fn density_to_gray(map: &DensityMap) -> Vec<u8> {
    let peak = map.max();
    map.values()
        .iter()
        .map(|&v| {
            if peak > 0.0 {
                ((v.max(0.0) / peak) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn save_density_png(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_gray_png(map.width(), map.height(), &density_to_gray(map), f)
}

pub fn save_segmentation_png(mask: &SegmentationMap, path: impl AsRef<Path>) -> Result<()> {
    let pixels: Vec<u8> = mask.values().iter().map(|&v| v * 255).collect();
    let f = BufWriter::new(File::create(path)?);
    write_gray_png(mask.width(), mask.height(), &pixels, f)
}

/// Reads an 8-bit grayscale mask back; any non-zero pixel is foreground.
pub fn load_segmentation_png(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("expected an 8-bit grayscale PNG".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let values = buf[..w * h].iter().map(|&v| (v > 0) as u8).collect();
    SegmentationMap::from_values(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ffdm_layout_is_bit_exact() {
        let map = DensityMap::from_values(2, 1, vec![1.0, 0.5]).unwrap();
        let mut bytes = Vec::new();
        write_ffdm(&map, &mut bytes).unwrap();
        let mut want = b"FFDM".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&0.5f32.to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(read_ffdm(bytes.as_slice()).unwrap(), map);
    }

    #[test]
    fn ffdm_rejects_bad_input() {
        assert!(read_ffdm(&b"FFD"[..]).is_err());
        assert!(read_ffdm(&b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_ffdm(&b"FFDM\x02\0\0\0\x01\0\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn gray_scaling_maps_peak_to_white() {
        let map = DensityMap::from_values(3, 1, vec![0.0, 0.25, 0.5]).unwrap();
        assert_eq!(density_to_gray(&map), vec![0, 128, 255]);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = std::env::temp_dir().join(format!("ffcount-mask-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.png");
        let mask = SegmentationMap::from_values(3, 2, vec![0, 1, 1, 0, 0, 1]).unwrap();
        save_segmentation_png(&mask, &path).unwrap();
        assert_eq!(load_segmentation_png(&path).unwrap(), mask);
        std::fs::remove_dir_all(dir).ok();
    }
}
