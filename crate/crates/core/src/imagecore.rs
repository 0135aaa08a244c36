//! Raster types, color conversion, resampling and PNG I/O.
//!
//! Color conversion is full-range BT.601 (the JPEG convention). All
//! float-to-byte conversions round half away from zero, then clamp.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of segmentation classes: background, 1L, 2L, 3L, 4-6L, 7-10L, bulk.
pub const NUM_CLASSES: usize = 7;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "1L", "2L", "3L", "4-6L", "7-10L", "bulk"];

pub const MIN_SIDE: usize = 3;

/// Rounds half away from zero and clamps into `0..=255`.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

/// A single 8-bit plane (luma, one chroma component, or one color channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BufferSize {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
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

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(u8) -> u8) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// An RGB raster with interleaved 8-bit channels, at least 3x3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::TooSmall { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(Error::BufferSize {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn channel(&self, c: Channel) -> Plane {
        let ci = c.index();
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.chunks_exact(3).map(|p| p[ci]).collect(),
        }
    }

    pub fn map_pixels(&self, f: impl Fn([u8; 3]) -> [u8; 3]) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.pixels() {
            data.extend_from_slice(&f(p));
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn luma(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels().map(|p| rgb_to_ycbcr_pixel(p)[0]).collect(),
        }
    }
}

/// Luma and chroma planes of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YCbCrImage {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
}

impl YCbCrImage {
    pub fn new(y: Plane, cb: Plane, cr: Plane) -> Result<Self> {
        let dims = (y.width, y.height);
        if (cb.width, cb.height) != dims || (cr.width, cr.height) != dims {
            return Err(Error::DimensionMismatch("luma and chroma planes differ in size".into()));
        }
        if dims.0 < MIN_SIDE || dims.1 < MIN_SIDE {
            return Err(Error::TooSmall {
                width: dims.0,
                height: dims.1,
            });
        }
        Ok(YCbCrImage { y, cb, cr })
    }

    pub fn width(&self) -> usize {
        self.y.width
    }

    pub fn height(&self) -> usize {
        self.y.height
    }
}

#[inline]
pub fn rgb_to_ycbcr_pixel([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    [to_u8(y), to_u8(cb), to_u8(cr)]
}

#[inline]
pub fn ycbcr_to_rgb_pixel([y, cb, cr]: [u8; 3]) -> [u8; 3] {
    let y = y as f64;
    let cb = cb as f64 - 128.0;
    let cr = cr as f64 - 128.0;
    [
        to_u8(y + 1.402 * cr),
        to_u8(y - 0.344136 * cb - 0.714136 * cr),
        to_u8(y + 1.772 * cb),
    ]
}

pub fn rgb_to_ycbcr(img: &Image) -> YCbCrImage {
    let n = img.pixel_count();
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for p in img.pixels() {
        let [a, b, c] = rgb_to_ycbcr_pixel(p);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    let (w, h) = (img.width, img.height);
    YCbCrImage {
        y: Plane {
            width: w,
            height: h,
            data: y,
        },
        cb: Plane {
            width: w,
            height: h,
            data: cb,
        },
        cr: Plane {
            width: w,
            height: h,
            data: cr,
        },
    }
}

pub fn ycbcr_to_rgb(img: &YCbCrImage) -> Image {
    let mut data = Vec::with_capacity(img.y.data.len() * 3);
    for ((&y, &cb), &cr) in img.y.data.iter().zip(&img.cb.data).zip(&img.cr.data) {
        data.extend_from_slice(&ycbcr_to_rgb_pixel([y, cb, cr]));
    }
    Image {
        width: img.width(),
        height: img.height(),
        data,
    }
}

/// Per-pixel class indices in `0..NUM_CLASSES`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be non-zero"));
        }
        if data.len() != width * height {
            return Err(Error::BufferSize {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|&v| v as usize >= NUM_CLASSES) {
            return Err(Error::MaskValue {
                x: i % width,
                y: i / width,
                value: data[i],
            });
        }
        Ok(LabelMask { width, height, data })
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Result<Self> {
        LabelMask::new(width, height, vec![class; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::TooSmall { width, height });
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| taps(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            let (p00, p10) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (p01, p11) = (img.pixel(x0, y1), img.pixel(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                data.push(to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(width, height, data)
}

/// Nearest-neighbor resampling; class indices are never interpolated.
pub fn resize_nearest(mask: &LabelMask, width: usize, height: usize) -> Result<LabelMask> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("target dimensions must be non-zero"));
    }
    let pick = |dst: usize, src_len: usize, dst_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize).min(src_len - 1)
    };
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = pick(y, mask.height, height);
        for x in 0..width {
            data.push(mask.get(pick(x, mask.width, width), sy));
        }
    }
    LabelMask::new(width, height, data)
}

// 256 MiB is far beyond any micrograph this tool handles.
const DECODE_LIMIT: usize = 256 << 20;

fn decode_png(bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>, Option<Vec<u8>>)> {
    let mut decoder = png::Decoder::new_with_limits(Cursor::new(bytes), png::Limits { bytes: DECODE_LIMIT });
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedPng("image too large".into()))?;
    if size > DECODE_LIMIT {
        return Err(Error::UnsupportedPng("image too large".into()));
    }
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    Ok((info, buf, palette))
}

/// Decodes an 8-bit RGB PNG.
pub fn decode_image_png(bytes: &[u8]) -> Result<Image> {
    let (info, buf, _) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng(format!(
            "expected 8-bit RGB, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    Image::new(info.width as usize, info.height as usize, buf)
}

/// Decodes a single-channel 8-bit mask PNG. Palette images are accepted when
/// they store raw indices; the palette colors themselves are ignored.
pub fn decode_mask_png(bytes: &[u8]) -> Result<LabelMask> {
    let (info, buf, _) = decode_png(bytes)?;
    let ok = matches!(
        (info.color_type, info.bit_depth),
        (png::ColorType::Grayscale, png::BitDepth::Eight) | (png::ColorType::Indexed, png::BitDepth::Eight)
    );
    if !ok {
        return Err(Error::UnsupportedPng(format!(
            "expected 8-bit single-channel mask, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    LabelMask::new(info.width as usize, info.height as usize, buf)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn encode_image_png(img: &Image) -> Result<Vec<u8>> {
    encode_png(img.width, img.height, png::ColorType::Rgb, &img.data)
}

pub fn encode_mask_png(mask: &LabelMask) -> Result<Vec<u8>> {
    encode_png(mask.width, mask.height, png::ColorType::Grayscale, &mask.data)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_image_png(&read(path)?).map_err(|e| with_path(e, path))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    decode_mask_png(&read(path)?).map_err(|e| with_path(e, path))
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_image_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask_png(mask)?).map_err(|e| Error::io(path, e))
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { .. } => err,
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_colors() {
        assert_eq!(rgb_to_ycbcr_pixel([0, 0, 0]), [0, 128, 128]);
        assert_eq!(rgb_to_ycbcr_pixel([255, 255, 255]), [255, 128, 128]);
        // Y = 76.245, Cb = 84.97, Cr = 255.5 -> clamped
        assert_eq!(rgb_to_ycbcr_pixel([255, 0, 0]), [76, 85, 255]);
        assert_eq!(ycbcr_to_rgb_pixel([0, 128, 128]), [0, 0, 0]);
        assert_eq!(ycbcr_to_rgb_pixel([255, 128, 128]), [255, 255, 255]);
    }

    #[test]
    fn exhaustive_round_trip_within_one_level() {
        let mut worst = 0i32;
        for r in 0..=255u8 {
            for g in 0..=255u8 {
                for b in 0..=255u8 {
                    let back = ycbcr_to_rgb_pixel(rgb_to_ycbcr_pixel([r, g, b]));
                    for (x, y) in [r, g, b].iter().zip(back) {
                        worst = worst.max((*x as i32 - y as i32).abs());
                    }
                }
            }
        }
        assert!(worst <= 1, "worst round-trip error {worst}");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_u8(127.5), 128);
        assert_eq!(to_u8(2.5), 3);
        assert_eq!(to_u8(-0.5), 0);
        assert_eq!(to_u8(300.0), 255);
    }

    #[test]
    fn small_images_rejected() {
        assert!(matches!(Image::filled(1, 1, [0; 3]), Err(Error::TooSmall { .. })));
        assert!(Image::filled(3, 3, [0; 3]).is_ok());
    }

    #[test]
    fn constant_resize_stays_constant() {
        let img = Image::filled(8, 8, [90, 91, 92]).unwrap();
        let big = resize_bilinear(&img, 256, 256).unwrap();
        assert!(big.pixels().all(|p| p == [90, 91, 92]));
        assert_eq!(resize_bilinear(&img, 8, 8).unwrap(), img);
    }

    #[test]
    fn checkerboard_center_pinned() {
        // 2x2 is below the public minimum; build it directly.
        let img = Image {
            width: 2,
            height: 2,
            data: vec![0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0],
        };
        let out = resize_bilinear(&img, 3, 3).unwrap();
        // Center samples the midpoint of all four pixels: 127.5 rounds to 128.
        assert_eq!(out.pixel(1, 1), [128, 128, 128]);
        assert_eq!(out.pixel(0, 0), [0, 0, 0]);
    }

    #[test]
    fn zero_target_rejected() {
        let img = Image::filled(4, 4, [1, 2, 3]).unwrap();
        assert!(resize_bilinear(&img, 0, 5).is_err());
        let mask = LabelMask::filled(4, 4, 1).unwrap();
        assert!(resize_nearest(&mask, 0, 5).is_err());
    }

    #[test]
    fn mask_value_seven_names_coordinate() {
        let mut data = vec![0u8; 12];
        data[7] = 7;
        match LabelMask::new(4, 3, data) {
            Err(Error::MaskValue { x, y, value }) => assert_eq!((x, y, value), (3, 1, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn png_round_trip() {
        let img = Image::from_fn(5, 4, |x, y| [(x * 40) as u8, (y * 60) as u8, 7]).unwrap();
        assert_eq!(decode_image_png(&encode_image_png(&img).unwrap()).unwrap(), img);
        let mask = LabelMask::new(3, 3, vec![0, 1, 2, 3, 4, 5, 6, 0, 1]).unwrap();
        assert_eq!(decode_mask_png(&encode_mask_png(&mask).unwrap()).unwrap(), mask);
    }

    #[test]
    fn mask_png_rejects_rgb_and_large_indices() {
        let img = Image::filled(3, 3, [1, 1, 1]).unwrap();
        let bytes = encode_image_png(&img).unwrap();
        assert!(matches!(decode_mask_png(&bytes), Err(Error::UnsupportedPng(_))));
        let bad = encode_png(3, 3, png::ColorType::Grayscale, &[0, 0, 0, 0, 9, 0, 0, 0, 0]).unwrap();
        assert!(matches!(
            decode_mask_png(&bad),
            Err(Error::MaskValue { x: 1, y: 1, value: 9 })
        ));
    }

    #[test]
    fn indexed_mask_read_as_raw_indices() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 3, 3);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_palette(vec![0u8; 7 * 3]);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 1, 2, 3, 4, 5, 6, 6, 6]).unwrap();
        }
        let mask = decode_mask_png(&out).unwrap();
        assert_eq!(mask.as_raw(), &[0, 1, 2, 3, 4, 5, 6, 6, 6]);
    }

    #[test]
    fn nearest_resize_keeps_labels() {
        let mask = LabelMask::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let big = resize_nearest(&mask, 4, 4).unwrap();
        assert_eq!(big.as_raw(), &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
    }
}
