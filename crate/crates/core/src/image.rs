//! 8-bit RGB images, binary masks, 16-bit label maps and their file formats.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default network input side.
pub const DEFAULT_SIDE: usize = 227;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"\x89PNG") {
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| Error::Image(e.to_string()))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            let pixels = img.pixels().map(|p| p.0).collect();
            return Image::new(w as usize, h as usize, pixels);
        }
        decode_ppm(&bytes)
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, encode_ppm(self)).map_err(|e| Error::io(path, e))
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} mask needs {} entries, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Set every pixel of the inclusive box.
    pub fn fill_box(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0..=y1.min(self.height - 1) {
            for x in x0..=x1.min(self.width - 1) {
                self.set(x, y, true);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Nearest-neighbour resample to another size.
    pub fn resized(&self, width: usize, height: usize) -> Mask {
        let mut out = Mask::new(width, height);
        for y in 0..height {
            let sy = (y * self.height) / height;
            for x in 0..width {
                let sx = (x * self.width) / width;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let data: Vec<u16> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_pgm(self.width, self.height, 255, &data)
    }
}

/// Per-pixel 16-bit labels (segment ids or annotation ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LabelImage {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"\x89PNG") {
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| Error::Image(e.to_string()))?
                .to_luma16();
            let (w, h) = img.dimensions();
            return Ok(LabelImage {
                width: w as usize,
                height: h as usize,
                labels: img.into_raw(),
            });
        }
        let (width, height, _, labels) = decode_pgm(&bytes)?;
        Ok(LabelImage {
            width,
            height,
            labels,
        })
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_pgm(self.width, self.height, 65535, &self.labels);
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, format!("{what} out of range")))
    }

    /// Exactly one whitespace byte separates the header from the payload.
    fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::format(self.pos, "expected whitespace after maxval")),
        }
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    let start = r.end_of_header()?;
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    Ok((width, height, maxval, start))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (width, height, maxval, start) = parse_header(bytes, b"P6")?;
    if maxval != 255 {
        return Err(Error::format(start - 1, format!("maxval {maxval}, expected 255")));
    }
    let need = width * height * 3;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let pixels = payload[..need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Image::new(width, height, pixels)
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() * 3);
    for p in &img.pixels {
        out.extend_from_slice(p);
    }
    out
}

/// Decode binary PGM ("P5"), 8- or 16-bit (big-endian per the format).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    let (width, height, maxval, start) = parse_header(bytes, b"P5")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(start - 1, format!("bad maxval {maxval}")));
    }
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let data = if wide {
        payload[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        payload[..need].iter().map(|&b| b as u16).collect()
    };
    Ok((width, height, maxval as u16, data))
}

pub fn encode_pgm(width: usize, height: usize, maxval: u16, data: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval > 255 {
        for v in data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(data.iter().map(|&v| v.min(255) as u8));
    }
    out
}

/// Grayscale float map to 8-bit PGM, scaled so the maximum maps to 255.
pub fn float_map_to_pgm(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    let data: Vec<u16> = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                ((v.max(0.0) / max) * 255.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    encode_pgm(width, height, 255, &data)
}

const CRC_POLY: u32 = 0xEDB8_8320;

fn crc32(chunks: &[&[u8]]) -> u32 {
    let mut table = [0u32; 256];
    for (n, slot) in table.iter_mut().enumerate() {
        let mut c = n as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { CRC_POLY ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for chunk in chunks {
        for &b in *chunk {
            crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
        }
    }
    crc ^ 0xFFFF_FFFF
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in data {
        a = (a + byte as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    out.extend_from_slice(&crc32(&[kind, data]).to_be_bytes());
}

/// Encode as 8-bit RGB PNG using only stored (uncompressed) deflate blocks.
/// Output is a pure function of the pixels.
pub fn encode_png_stored(img: &Image) -> Vec<u8> {
    let mut raw = Vec::with_capacity(img.height * (1 + img.width * 3));
    for row in img.pixels.chunks_exact(img.width) {
        raw.push(0); // filter: none
        for p in row {
            raw.extend_from_slice(p);
        }
    }

    let mut zlib = vec![0x78, 0x01];
    let mut blocks = raw.chunks(65535).peekable();
    if blocks.peek().is_none() {
        zlib.extend_from_slice(&[1, 0, 0, 0xFF, 0xFF]);
    }
    while let Some(block) = blocks.next() {
        let last = blocks.peek().is_none();
        zlib.push(last as u8);
        let len = block.len() as u16;
        zlib.extend_from_slice(&len.to_le_bytes());
        zlib.extend_from_slice(&(!len).to_le_bytes());
        zlib.extend_from_slice(block);
    }
    zlib.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(img.width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(img.height as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);

    let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
    png_chunk(&mut out, b"IHDR", &ihdr);
    png_chunk(&mut out, b"IDAT", &zlib);
    png_chunk(&mut out, b"IEND", &[]);
    out
}

/// Bilinear sample with half-pixel centre alignment and edge clamping.
fn bilinear(img: &Image, channel: usize, fx: f64, fy: f64) -> f64 {
    let x = fx.clamp(0.0, (img.width - 1) as f64);
    let y = fy.clamp(0.0, (img.height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: usize, yy: usize| img.get(xx, yy)[channel] as f64;
    let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
    let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Resize to `side` x `side` and subtract a per-channel mean.
/// Output is `3 x side x side`, channel-major.
pub fn preprocess(img: &Image, side: usize, mean: [f32; 3]) -> Tensor {
    assert!(side >= 1, "side must be >= 1");
    let sx = img.width as f64 / side as f64;
    let sy = img.height as f64 / side as f64;
    let plane = side * side;
    let mut data = vec![0f32; 3 * plane];
    for y in 0..side {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..side {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            for c in 0..3 {
                data[c * plane + y * side + x] = bilinear(img, c, fx, fy) as f32 - mean[c];
            }
        }
    }
    Tensor::from_raw(vec![3, side, side], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_single_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\x0a\x14\x1e").unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixels(), &[[10, 20, 30]]);
    }

    #[test]
    fn decode_two_by_two() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend(0u8..12);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(
            img.pixels(),
            &[[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]]
        );
    }

    #[test]
    fn comments_are_skipped() {
        let img = decode_ppm(b"P6\n# made by hand\n1 # width done\n1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(img.pixels(), &[[1, 2, 3]]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let err = decode_ppm(b"P5\n1 1\n255\n\x00").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn maxval_and_truncation_are_rejected() {
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"),
            Err(Error::Format { .. })
        ));
        let err = decode_ppm(b"P6\n2 1\n255\n\x00\x00\x00").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_ppm_round_trip() {
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend((0u8..18).map(|v| v * 7));
        assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()), bytes);
    }

    #[test]
    fn pgm_16_bit_round_trip() {
        let labels = vec![0u16, 1, 300, 65535, 7, 9];
        let bytes = encode_pgm(3, 2, 65535, &labels);
        let (w, h, maxval, data) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, maxval), (3, 2, 65535));
        assert_eq!(data, labels);
    }

    #[test]
    fn identity_resize_keeps_pixels() {
        let pixels = (0..16 * 16)
            .map(|i| [(i % 251) as u8, (i * 3 % 256) as u8, (i * 7 % 256) as u8])
            .collect();
        let img = Image::new(16, 16, pixels).unwrap();
        let t = preprocess(&img, 16, [0.0; 3]);
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..3 {
                    assert_eq!(t.at(&[c, y, x]), img.get(x, y)[c] as f32);
                }
            }
        }
    }

    #[test]
    fn mean_cancels_constant_image() {
        let img = Image::filled(40, 30, [100, 100, 100]);
        let t = preprocess(&img, 20, [100.0; 3]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stored_png_decodes_with_reference_decoder() {
        let pixels = (0..70 * 300)
            .map(|i| [(i % 256) as u8, (i / 256 % 256) as u8, 17])
            .collect();
        let img = Image::new(70, 300, pixels).unwrap();
        let png = encode_png_stored(&img);
        let decoded = image::load_from_memory_with_format(&png, image::ImageFormat::Png)
            .unwrap()
            .to_rgb8();
        assert_eq!(decoded.dimensions(), (70, 300));
        let back: Vec<[u8; 3]> = decoded.pixels().map(|p| p.0).collect();
        assert_eq!(back, img.pixels());
        assert_eq!(png, encode_png_stored(&img));
    }

    #[test]
    fn crc_matches_known_value() {
        // CRC-32 of "IEND" is the fixed trailer of every PNG.
        assert_eq!(crc32(&[b"IEND"]), 0xAE42_6082);
    }
}
