use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with values nominally in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be positive".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// 8-bit quantization used by PPM: clamp to `[0,1]`, scale by 255,
    /// round half up.
    pub fn quantize(v: f32) -> u8 {
        (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
    }

    /// The image as it will read back from a PPM file.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| Self::quantize(v) as f32 / 255.0).collect(),
        }
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| Self::quantize(v)));
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ascii header".to_string())?);
        }
        if fields[0] != "P6" {
            return Err(format!("expected P6 magic, found {:?}", fields[0]));
        }
        let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
        let width = parse(fields[1], "width")?;
        let height = parse(fields[2], "height")?;
        let maxval = parse(fields[3], "maxval")?;
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let expected = width * height * 3;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != expected {
            return Err(format!("expected {expected} raster bytes, found {}", raster.len()));
        }
        let data = raster.iter().map(|&b| b as f32 / 255.0).collect();
        Image::new(width, height, data).map_err(|e| e.to_string())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_ppm(&bytes).map_err(|msg| Error::Image {
            path: path.to_path_buf(),
            msg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(Image::quantize(0.0), 0);
        assert_eq!(Image::quantize(1.0), 255);
        assert_eq!(Image::quantize(-0.5), 0);
        assert_eq!(Image::quantize(2.0), 255);
        assert_eq!(Image::quantize(0.5), 128);
        assert_eq!(Image::quantize(0.5 / 255.0), 1);
    }

    #[test]
    fn header_and_errors() {
        let img = Image::filled(2, 1, [1.0, 0.0, 0.5]).unwrap();
        let bytes = img.to_ppm();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 128, 255, 0, 128]);
        assert!(Image::from_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(Image::from_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(Image::from_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        let commented = Image::from_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(commented.pixel(0, 0), [1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0]);
    }

    proptest! {
        #[test]
        fn ppm_round_trip_of_quantized_images(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let mut s = crate::seed::Stream::new(seed);
            let data: Vec<f32> = (0..w * h * 3).map(|_| s.next_f64() as f32).collect();
            let img = Image::new(w, h, data).unwrap().quantized();
            let back = Image::from_ppm(&img.to_ppm()).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(back.to_ppm(), img.to_ppm());
        }
    }
}
