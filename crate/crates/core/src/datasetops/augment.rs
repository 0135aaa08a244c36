//! Training-time augmentation: resize, random crop, flips, photometric
//! jitter. Geometric steps hit image and mask identically; photometric
//! steps touch only the image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{resize_bilinear, resize_nearest, to_u8, Image, LabelMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Expected (width, height) of incoming standardized pairs.
    pub input_size: (usize, usize),
    pub resize_to: (usize, usize),
    pub crop_to: (usize, usize),
    pub flip_prob: f64,
    pub photometric_prob: f64,
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
    pub saturation_range: (f64, f64),
    /// Hue shift bound in units of a 0..256 hue circle.
    pub hue_delta: f64,
    /// Pins the crop's top-left corner instead of drawing it.
    pub fixed_crop: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            input_size: (256, 256),
            resize_to: (320, 256),
            crop_to: (256, 256),
            flip_prob: 0.5,
            photometric_prob: 0.5,
            brightness_delta: 32.0,
            contrast_range: (0.5, 1.5),
            saturation_range: (0.5, 1.5),
            hue_delta: 18.0,
            fixed_crop: None,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (rw, rh) = self.resize_to;
        let (cw, ch) = self.crop_to;
        if cw > rw || ch > rh {
            return Err(Error::Config("augment: crop does not fit inside resize".into()));
        }
        for p in [self.flip_prob, self.photometric_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("augment: probabilities must lie in [0, 1]".into()));
            }
        }
        if let Some((x, y)) = self.fixed_crop {
            if x + cw > rw || y + ch > rh {
                return Err(Error::Config("augment: fixed crop leaves the resized frame".into()));
            }
        }
        Ok(())
    }
}

fn crop_image(img: &Image, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
    Image::from_fn(w, h, |x, y| img.pixel(x0 + x, y0 + y))
}

fn crop_mask(mask: &LabelMask, x0: usize, y0: usize, w: usize, h: usize) -> Result<LabelMask> {
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(mask.get(x0 + x, y0 + y));
        }
    }
    LabelMask::new(w, h, data)
}

fn flip_image(img: &Image, horizontal: bool) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    Image::from_fn(w, h, |x, y| {
        if horizontal {
            img.pixel(w - 1 - x, y)
        } else {
            img.pixel(x, h - 1 - y)
        }
    })
}

fn flip_mask(mask: &LabelMask, horizontal: bool) -> Result<LabelMask> {
    let (w, h) = (mask.width(), mask.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(if horizontal {
                mask.get(w - 1 - x, y)
            } else {
                mask.get(x, h - 1 - y)
            });
        }
    }
    LabelMask::new(w, h, data)
}

/// RGB in 0..=255 to (hue in [0, 256), saturation, value) with s, v in [0, 1].
fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let v = max / 255.0;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h6 = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    [h6 * 256.0 / 6.0, s, v]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = (h.rem_euclid(256.0)) * 6.0 / 256.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Brightness and contrast, then saturation and hue; each applied with
/// probability `photometric_prob`.
pub fn photometric<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let p = cfg.photometric_prob;
    let brightness = (rng.random::<f64>() < p).then(|| rng.random_range(-cfg.brightness_delta..=cfg.brightness_delta));
    let contrast = (rng.random::<f64>() < p).then(|| rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1));
    let saturation =
        (rng.random::<f64>() < p).then(|| rng.random_range(cfg.saturation_range.0..=cfg.saturation_range.1));
    let hue = (rng.random::<f64>() < p).then(|| rng.random_range(-cfg.hue_delta..=cfg.hue_delta));
    if brightness.is_none() && contrast.is_none() && saturation.is_none() && hue.is_none() {
        return img.clone();
    }
    img.map_pixels(|px| {
        let mut c = px.map(|v| v as f64);
        if let Some(b) = brightness {
            c = c.map(|v| (v + b).clamp(0.0, 255.0));
        }
        if let Some(k) = contrast {
            c = c.map(|v| (v * k).clamp(0.0, 255.0));
        }
        if saturation.is_some() || hue.is_some() {
            let mut hsv = rgb_to_hsv(c);
            if let Some(s) = saturation {
                hsv[1] = (hsv[1] * s).clamp(0.0, 1.0);
            }
            if let Some(dh) = hue {
                hsv[0] = (hsv[0] + dh).rem_euclid(256.0);
            }
            c = hsv_to_rgb(hsv);
        }
        c.map(to_u8)
    })
}

pub fn augment<R: Rng + ?Sized>(
    img: &Image,
    mask: &LabelMask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Image, LabelMask)> {
    cfg.validate()?;
    let dims = (img.width(), img.height());
    if dims != cfg.input_size || (mask.width(), mask.height()) != cfg.input_size {
        return Err(Error::DimensionMismatch(format!(
            "augment expects {:?} pairs, got image {:?} and mask {:?}",
            cfg.input_size,
            dims,
            (mask.width(), mask.height())
        )));
    }
    let (rw, rh) = cfg.resize_to;
    let (cw, ch) = cfg.crop_to;
    let img = resize_bilinear(img, rw, rh)?;
    let mask = resize_nearest(mask, rw, rh)?;
    let (x0, y0) = match cfg.fixed_crop {
        Some(c) => c,
        None => (rng.random_range(0..=rw - cw), rng.random_range(0..=rh - ch)),
    };
    let mut img = crop_image(&img, x0, y0, cw, ch)?;
    let mut mask = crop_mask(&mask, x0, y0, cw, ch)?;
    for horizontal in [true, false] {
        if rng.random::<f64>() < cfg.flip_prob {
            img = flip_image(&img, horizontal)?;
            mask = flip_mask(&mask, horizontal)?;
        }
    }
    let img = photometric(&img, cfg, rng);
    Ok((img, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn hsv_round_trip() {
        for rgb in [
            [10.0, 200.0, 30.0],
            [255.0, 0.0, 0.0],
            [12.0, 12.0, 12.0],
            [90.0, 40.0, 250.0],
        ] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for (a, b) in rgb.iter().zip(back) {
                assert!((a - b).abs() < 1e-9, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn rejects_wrong_input_size() {
        let img = Image::filled(10, 10, [1, 2, 3]).unwrap();
        let mask = LabelMask::filled(10, 10, 0).unwrap();
        let mut rng = stream(0, &[]);
        assert!(augment(&img, &mask, &AugmentConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn crop_must_fit() {
        let cfg = AugmentConfig {
            crop_to: (400, 256),
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
