//! Two-channel artery/vein masks and their PNG file convention.
//!
//! A mask pixel may be artery, vein, both (a crossing), or background. On
//! disk a mask is an RGB PNG: artery pixels have R=255, vein pixels B=255,
//! crossings both, background is black, and G is always 0. Only those four
//! pixel values are legal; anything else makes the file nonconforming.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Binary H x W raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        Bitmap { width, height, data: vec![false; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "bitmap {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Bitmap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Bounds-checked read; out-of-range coordinates are background.
    #[inline]
    pub fn get_clipped(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            false
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.data.len() as f64
    }
}

/// Two-channel binary mask: channel 0 is artery, channel 1 is vein.
/// Channels are independent; overlap marks an artery/vein crossing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvMask {
    pub artery: Bitmap,
    pub vein: Bitmap,
}

impl AvMask {
    pub fn new(artery: Bitmap, vein: Bitmap) -> Result<Self> {
        if artery.width != vein.width || artery.height != vein.height {
            return Err(Error::ShapeMismatch(format!(
                "artery {}x{} vs vein {}x{}",
                artery.width, artery.height, vein.width, vein.height
            )));
        }
        Ok(AvMask { artery, vein })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        AvMask { artery: Bitmap::new(width, height), vein: Bitmap::new(width, height) }
    }

    pub fn width(&self) -> usize {
        self.artery.width
    }

    pub fn height(&self) -> usize {
        self.artery.height
    }

    pub fn channel(&self, idx: usize) -> &Bitmap {
        match idx {
            0 => &self.artery,
            1 => &self.vein,
            _ => panic!("channel index {idx} out of range"),
        }
    }

    /// Pixels set in both channels.
    pub fn crossing_pixel_count(&self) -> usize {
        self.artery
            .data
            .iter()
            .zip(&self.vein.data)
            .filter(|(&a, &v)| a && v)
            .count()
    }

    /// Fraction of pixels set in either channel.
    pub fn combined_foreground_fraction(&self) -> f64 {
        let union = self
            .artery
            .data
            .iter()
            .zip(&self.vein.data)
            .filter(|(&a, &v)| a || v)
            .count();
        union as f64 / (self.width() * self.height()) as f64
    }
}

fn encode_rgb(mask: &AvMask) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    let mut rgb = vec![0u8; w * h * 3];
    for i in 0..w * h {
        if mask.artery.data[i] {
            rgb[3 * i] = 255;
        }
        if mask.vein.data[i] {
            rgb[3 * i + 2] = 255;
        }
    }
    rgb
}

/// Write a mask in the RGB convention.
pub fn write_mask_png(path: &Path, mask: &AvMask) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        mask.width() as u32,
        mask.height() as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, format!("png header: {e}")))?;
    writer
        .write_image_data(&encode_rgb(mask))
        .map_err(|e| Error::format(path, format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::format(path, format!("png finish: {e}")))?;
    Ok(())
}

/// Read a mask in the RGB convention, rejecting any pixel outside the four
/// legal values.
pub fn read_mask_png(path: &Path) -> Result<AvMask> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("png decode: {e}")))?;
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "png output size overflow"))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("png frame: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!(
                "expected 8-bit RGB, got {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut artery = Bitmap::new(w, h);
    let mut vein = Bitmap::new(w, h);
    for i in 0..w * h {
        let (r, g, b) = (buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
        let a_ok = r == 0 || r == 255;
        let v_ok = b == 0 || b == 255;
        if g != 0 || !a_ok || !v_ok {
            return Err(Error::format(
                path,
                format!(
                    "pixel {} has RGB ({r}, {g}, {b}); legal values are (0,0,0), (255,0,0), (0,0,255), (255,0,255)",
                    i
                ),
            ));
        }
        artery.data[i] = r == 255;
        vein.data[i] = b == 255;
    }
    AvMask::new(artery, vein)
}

/// Write one channel of raw sampler output as 8-bit grayscale, mapping
/// [-1, 1] onto [0, 255].
pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "grayscale {width}x{height} needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8)
        .collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, format!("png header: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path, format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::format(path, format!("png finish: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker_mask(w: usize, h: usize) -> AvMask {
        let mut m = AvMask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                if (x + y) % 2 == 0 {
                    m.artery.set(x, y, true);
                }
                if x % 3 == 0 {
                    m.vein.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = checker_mask(9, 7);
        write_mask_png(&path, &mask).unwrap();
        let back = read_mask_png(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn nonconforming_pixel_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        // green channel set: not a legal mask pixel
        let file = std::fs::File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 0, 0, 0, 128, 0]).unwrap();
        w.finish().unwrap();
        let err = read_mask_png(&path).unwrap_err().to_string();
        assert!(err.contains("128"), "{err}");
    }

    #[test]
    fn crossing_count() {
        let mut m = AvMask::empty(4, 4);
        m.artery.set(1, 1, true);
        m.vein.set(1, 1, true);
        m.artery.set(2, 2, true);
        assert_eq!(m.crossing_pixel_count(), 1);
        assert!((m.combined_foreground_fraction() - 2.0 / 16.0).abs() < 1e-12);
    }
}
