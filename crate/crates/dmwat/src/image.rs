//! Image samples and file I/O.
//!
//! Pixels are `f64` in `[0,1]`, row-major, 3 channels interleaved. PPM (P6,
//! 8-bit) is the native on-disk format; PNG read/write is supported too.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    height: usize,
    width: usize,
    pixels: Vec<f64>, // h * w * 3
}

impl ImageSample {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidData(format!(
                "pixel buffer of {} for {}x{}x3 image",
                pixels.len(),
                height,
                width
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(
                "pixel value outside [0,1]".to_string(),
            ));
        }
        Ok(ImageSample {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageSample {
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.pixels[(r * self.width + c) * 3 + ch]
    }

    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: f64) {
        self.pixels[(r * self.width + c) * 3 + ch] = v.clamp(0.0, 1.0);
    }

    /// Mean value per channel.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for px in self.pixels.chunks_exact(3) {
            for ch in 0..3 {
                m[ch] += px[ch];
            }
        }
        let n = (self.height * self.width) as f64;
        [m[0] / n, m[1] / n, m[2] / n]
    }

    /// Bilinear sample at fractional coordinates, zero outside the frame.
    pub fn sample_bilinear(&self, r: f64, c: f64, ch: usize) -> f64 {
        let read = |ri: i64, ci: i64| -> f64 {
            if ri < 0 || ci < 0 || ri >= self.height as i64 || ci >= self.width as i64 {
                0.0
            } else {
                self.get(ri as usize, ci as usize, ch)
            }
        };
        let r0 = r.floor();
        let c0 = c.floor();
        let fr = r - r0;
        let fc = c - c0;
        let (r0, c0) = (r0 as i64, c0 as i64);
        read(r0, c0) * (1.0 - fr) * (1.0 - fc)
            + read(r0, c0 + 1) * (1.0 - fr) * fc
            + read(r0 + 1, c0) * fr * (1.0 - fc)
            + read(r0 + 1, c0 + 1) * fr * fc
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path.display().to_string(), e);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height).map_err(io_err)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        parse_ppm(&raw).map_err(|m| Error::InvalidData(format!("{}: {m}", path.display())))
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let w = BufWriter::new(file);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidData(format!("png encode: {e}")))?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::InvalidData(format!("png encode: {e}")))?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::InvalidData(format!("png decode: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::InvalidData(format!("png decode: {e}")))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::InvalidData("png: only 8-bit supported".into()));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let stride = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            other => {
                return Err(Error::InvalidData(format!(
                    "png: unsupported color type {other:?}"
                )))
            }
        };
        let mut pixels = Vec::with_capacity(h * w * 3);
        for px in buf[..h * w * stride].chunks_exact(stride) {
            match stride {
                1 => {
                    let v = f64::from(px[0]) / 255.0;
                    pixels.extend_from_slice(&[v, v, v]);
                }
                _ => {
                    for ch in 0..3 {
                        pixels.push(f64::from(px[ch]) / 255.0);
                    }
                }
            }
        }
        ImageSample::new(h, w, pixels)
    }

    /// Load by extension: `.ppm` native, `.png` optional.
    pub fn read(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => Self::read_ppm(path),
            Some("png") => Self::read_png(path),
            other => Err(Error::InvalidData(format!(
                "unsupported image extension {other:?} for {}",
                path.display()
            ))),
        }
    }
}

fn parse_ppm(raw: &[u8]) -> std::result::Result<ImageSample, String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    // header: magic, width, height, maxval; '#' starts a comment to EOL
    while fields.len() < 4 {
        match raw.get(pos) {
            None => return Err("truncated header".into()),
            Some(b'#') => {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while pos < raw.len() && !raw[pos].is_ascii_whitespace() && raw[pos] != b'#' {
                    pos += 1;
                }
                fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|e| e.to_string())?);
            }
        }
    }
    if fields[0] != "P6" {
        return Err(format!("expected P6, got {}", fields[0]));
    }
    let width: usize = fields[1].parse().map_err(|_| "bad width")?;
    let height: usize = fields[2].parse().map_err(|_| "bad height")?;
    let maxval: usize = fields[3].parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("only maxval 255 supported, got {maxval}"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if raw.len() < pos + need {
        return Err("truncated pixel data".into());
    }
    let pixels = raw[pos..pos + need]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ImageSample::new(height, width, pixels).map_err(|e| e.to_string())
}

/// Bilinear resize of a single-channel grid (used for saliency upsampling).
pub fn bilinear_resize_grid(
    grid: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        for c in 0..out_w {
            // align corners of pixel centers
            let sr = (r as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5;
            let sc = (c as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5;
            let r0 = sr.floor().clamp(0.0, (in_h - 1) as f64);
            let c0 = sc.floor().clamp(0.0, (in_w - 1) as f64);
            let r1 = (r0 + 1.0).min((in_h - 1) as f64);
            let c1 = (c0 + 1.0).min((in_w - 1) as f64);
            let fr = (sr - r0).clamp(0.0, 1.0);
            let fc = (sc - c0).clamp(0.0, 1.0);
            let g = |ri: f64, ci: f64| grid[ri as usize * in_w + ci as usize];
            out[r * out_w + c] = g(r0, c0) * (1.0 - fr) * (1.0 - fc)
                + g(r0, c1) * (1.0 - fr) * fc
                + g(r1, c0) * fr * (1.0 - fc)
                + g(r1, c1) * fr * fc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("dmwat-img-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn ppm_roundtrip() {
        let mut img = ImageSample::filled(5, 7, 0.5);
        img.set(0, 0, 0, 1.0);
        img.set(4, 6, 2, 0.0);
        let path = tmpdir().join("roundtrip.ppm");
        img.write_ppm(&path).unwrap();
        let back = ImageSample::read_ppm(&path).unwrap();
        assert_eq!(back.height(), 5);
        assert_eq!(back.width(), 7);
        assert_eq!(back.get(0, 0, 0), 1.0);
        assert_eq!(back.get(4, 6, 2), 0.0);
        // 0.5 quantizes to 128/255
        assert!((back.get(2, 2, 1) - 128.0 / 255.0).abs() < 1e-12);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn png_roundtrip() {
        let mut img = ImageSample::filled(4, 4, 0.25);
        img.set(1, 2, 0, 1.0);
        let path = tmpdir().join("roundtrip.png");
        img.write_png(&path).unwrap();
        let back = ImageSample::read_png(&path).unwrap();
        assert_eq!(back.get(1, 2, 0), 1.0);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(ImageSample::new(1, 1, vec![0.0, 0.5, 1.1]).is_err());
    }

    #[test]
    fn bilinear_identity_resize() {
        let grid = vec![0.0, 1.0, 2.0, 3.0];
        let out = bilinear_resize_grid(&grid, 2, 2, 2, 2);
        assert_eq!(out, grid);
    }
}
