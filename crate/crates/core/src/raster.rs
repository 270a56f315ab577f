//! 8-bit RGB images with PNG and binary PPM (P6) encoding.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved RGB, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                expected: width * height * 3,
                found: data.len(),
            });
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| Error::Image(e.to_string()))?;
            writer
                .write_image_data(&self.data)
                .map_err(|e| Error::Image(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes any 8-bit PNG, converting gray/palette/alpha to RGB.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("PNG too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Image(e.to_string()))?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width as usize, info.height as usize);
        let data = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0]])
                .collect(),
            png::ColorType::Indexed => {
                return Err(Error::Image("unexpanded palette PNG".into()));
            }
        };
        RgbImage::new(w, h, data)
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Binary PPM with maxval 255.
    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = std::io::Cursor::new(bytes);
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            fields.push(ppm_token(&mut cursor)?);
        }
        if fields[0] != "P6" {
            return Err(Error::Image(format!("unsupported PPM magic {:?}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Image(format!("bad PPM header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported PPM maxval {maxval}")));
        }
        let mut data = Vec::new();
        cursor
            .read_to_end(&mut data)
            .map_err(|e| Error::Image(e.to_string()))?;
        RgbImage::new(w, h, data)
    }

    /// Writes PNG unless the extension is `.ppm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if is_ppm(path) {
            self.encode_ppm()
        } else {
            self.encode_png()?
        };
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads PNG or PPM, sniffing the content.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P6") {
            Self::decode_ppm(&bytes)
        } else {
            Self::decode_png(&bytes)
        }
    }
}

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Next whitespace-delimited header token, skipping `#` comments. Consumes
/// exactly one whitespace byte after the token.
fn ppm_token(cursor: &mut std::io::Cursor<&[u8]>) -> Result<String> {
    let mut token = String::new();
    loop {
        let buf = cursor.fill_buf().map_err(|e| Error::Image(e.to_string()))?;
        let Some(&byte) = buf.first() else {
            return Err(Error::Image("truncated PPM header".into()));
        };
        cursor.consume(1);
        if byte == b'#' && token.is_empty() {
            let mut skipped = Vec::new();
            cursor
                .read_until(b'\n', &mut skipped)
                .map_err(|e| Error::Image(e.to_string()))?;
        } else if byte.is_ascii_whitespace() {
            if !token.is_empty() {
                return Ok(token);
            }
        } else {
            token.push(byte as char);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        let data = (0..2 * 3 * 3).map(|v| (v * 13) as u8).collect();
        RgbImage::new(3, 2, data).unwrap()
    }

    #[test]
    fn png_round_trip() {
        let img = sample();
        let bytes = img.encode_png().unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(RgbImage::decode_png(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_round_trip_and_comments() {
        let img = sample();
        let bytes = img.encode_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap(), img);

        let mut commented = b"P6\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(img.data());
        assert_eq!(RgbImage::decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn ppm_rejects_bad_input() {
        assert!(RgbImage::decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n1 1\n65535\n").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n2").is_err());
    }

    #[test]
    fn file_round_trip_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            sample().save(&path).unwrap();
            assert_eq!(RgbImage::load(&path).unwrap(), sample());
        }
    }
}
