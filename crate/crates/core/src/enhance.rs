//! Adaptive gamma correction on the negative luma plane.
//!
//! The luma plane is inverted, its histogram reshaped into a weighting
//! distribution, and the resulting cumulative distribution drives a
//! per-level exponent. Chroma planes pass through untouched, so color is
//! preserved while overexposed regions are pulled down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{rgb_to_ycbcr, to_u8, ycbcr_to_rgb, Channel, Image, Plane, YCbCrImage};

pub const LEVELS: usize = 256;

/// Alpha used when no swarm tuning has been run.
pub const DEFAULT_ALPHA: f64 = 0.561;
pub const DEFAULT_ALPHA_MAX: f64 = 10.0;

/// Intensity above which a channel value counts as oversaturated.
pub const SATURATION_LEVEL: u8 = 253;

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHistogram {
    pub counts: [u64; LEVELS],
    pub total: u64,
}

impl IntensityHistogram {
    pub fn from_plane(plane: &Plane) -> Self {
        let mut counts = [0u64; LEVELS];
        for &v in plane.data() {
            counts[v as usize] += 1;
        }
        IntensityHistogram {
            counts,
            total: plane.data().len() as u64,
        }
    }

    pub fn pdf(&self) -> [f64; LEVELS] {
        let mut pdf = [0.0; LEVELS];
        if self.total == 0 {
            return pdf;
        }
        let n = self.total as f64;
        for (p, &c) in pdf.iter_mut().zip(&self.counts) {
            *p = c as f64 / n;
        }
        pdf
    }

    /// Highest occupied level, if any pixel exists.
    pub fn max_level(&self) -> Option<usize> {
        self.counts.iter().rposition(|&c| c > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    alpha: f64,
}

impl GammaParams {
    pub fn new(alpha: f64) -> Result<Self> {
        GammaParams::with_max(alpha, DEFAULT_ALPHA_MAX)
    }

    pub fn with_max(alpha: f64, alpha_max: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= alpha_max) {
            return Err(Error::invalid(format!("alpha {alpha} outside (0, {alpha_max}]")));
        }
        Ok(GammaParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams { alpha: DEFAULT_ALPHA }
    }
}

pub fn negative_luma(y: &Plane) -> Plane {
    y.map(|v| 255 - v)
}

/// Reshapes the histogram PDF. Extremes are taken over occupied levels;
/// unoccupied levels carry zero weight.
pub fn weighting_distribution(hist: &IntensityHistogram, alpha: f64) -> Result<[f64; LEVELS]> {
    let pdf = hist.pdf();
    let occupied = || pdf.iter().copied().filter(|&p| p > 0.0);
    let pmax = occupied().fold(f64::NEG_INFINITY, f64::max);
    let pmin = occupied().fold(f64::INFINITY, f64::min);
    if !(pmax > pmin) {
        return Err(Error::DegenerateHistogram);
    }
    let mut w = [0.0; LEVELS];
    for (wl, &p) in w.iter_mut().zip(&pdf) {
        if p > 0.0 {
            *wl = pmax * ((p - pmin) / (pmax - pmin)).powf(alpha);
        }
    }
    Ok(w)
}

/// Normalized running sum of `w`, reaching exactly 1 at `l_max` and held
/// there above it.
pub fn cumulative_distribution(w: &[f64; LEVELS], l_max: usize) -> Result<[f64; LEVELS]> {
    if l_max >= LEVELS {
        return Err(Error::invalid(format!("l_max {l_max} out of range")));
    }
    let mut cum = [0.0; LEVELS];
    let mut acc = 0.0;
    for (c, &wl) in cum.iter_mut().zip(w) {
        acc += wl;
        *c = acc;
    }
    let total = cum[l_max];
    if !(total > 0.0) {
        return Err(Error::DegenerateHistogram);
    }
    let mut cdf = [1.0; LEVELS];
    for l in 0..=l_max {
        cdf[l] = cum[l] / total;
    }
    Ok(cdf)
}

/// Transfer curve `l -> l_max * (l / l_max)^(1 - cdf(l))` as a lookup table.
pub fn transfer_curve(cdf: &[f64; LEVELS], l_max: usize) -> Result<[u8; LEVELS]> {
    if l_max == 0 || l_max >= LEVELS {
        return Err(Error::invalid(format!("l_max must lie in 1..=255, got {l_max}")));
    }
    let lm = l_max as f64;
    let mut lut = [0u8; LEVELS];
    for (l, out) in lut.iter_mut().enumerate() {
        let v = lm * (l as f64 / lm).powf(1.0 - cdf[l]);
        *out = to_u8(v.min(lm));
    }
    Ok(lut)
}

pub fn gamma_transform(y_neg: &Plane, cdf: &[f64; LEVELS], l_max: usize) -> Result<Plane> {
    let lut = transfer_curve(cdf, l_max)?;
    Ok(y_neg.map(|v| lut[v as usize]))
}

/// Result of [`enhance_image`].
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub image: Image,
    /// Set when the histogram carried no contrast and the input was
    /// returned unchanged.
    pub degenerate: bool,
}

/// Precomputes the alpha-independent parts of the correction (color
/// conversion and the negative-luma histogram) so many alphas can be tried
/// cheaply.
#[derive(Debug, Clone)]
pub struct LumaCorrector {
    source: Image,
    ycc: YCbCrImage,
    hist: IntensityHistogram,
    l_max: usize,
}

impl LumaCorrector {
    pub fn new(img: &Image) -> Self {
        let ycc = rgb_to_ycbcr(img);
        let neg = negative_luma(&ycc.y);
        let hist = IntensityHistogram::from_plane(&neg);
        let l_max = hist.max_level().unwrap_or(0);
        LumaCorrector {
            source: img.clone(),
            ycc,
            hist,
            l_max,
        }
    }

    /// Luma lookup table for `alpha`, or `None` on the degenerate path.
    pub fn luma_lut(&self, alpha: f64) -> Option<[u8; LEVELS]> {
        let w = weighting_distribution(&self.hist, alpha).ok()?;
        let cdf = cumulative_distribution(&w, self.l_max).ok()?;
        let curve = transfer_curve(&cdf, self.l_max).ok()?;
        let mut lut = [0u8; LEVELS];
        for (y, out) in lut.iter_mut().enumerate() {
            *out = 255 - curve[255 - y];
        }
        Some(lut)
    }

    pub fn apply_ycbcr(&self, params: GammaParams) -> (YCbCrImage, bool) {
        match self.luma_lut(params.alpha()) {
            Some(lut) => (
                YCbCrImage {
                    y: self.ycc.y.map(|v| lut[v as usize]),
                    cb: self.ycc.cb.clone(),
                    cr: self.ycc.cr.clone(),
                },
                false,
            ),
            None => (self.ycc.clone(), true),
        }
    }

    pub fn apply(&self, params: GammaParams) -> Enhanced {
        match self.apply_ycbcr(params) {
            (ycc, false) => Enhanced {
                image: ycbcr_to_rgb(&ycc),
                degenerate: false,
            },
            (_, true) => Enhanced {
                image: self.source.clone(),
                degenerate: true,
            },
        }
    }
}

pub fn enhance_image(img: &Image, params: GammaParams) -> Enhanced {
    LumaCorrector::new(img).apply(params)
}

/// Fraction of pixels whose `channel` value exceeds 253.
pub fn oversaturation_index(img: &Image, channel: Channel) -> f64 {
    let c = channel.index();
    let over = img.as_raw().chunks_exact(3).filter(|p| p[c] > SATURATION_LEVEL).count();
    over as f64 / img.pixel_count() as f64
}

pub fn oversaturation_rgb(img: &Image) -> [f64; 3] {
    Channel::ALL.map(|c| oversaturation_index(img, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub alpha: f64,
    pub degenerate: bool,
    pub saturation_before: [f64; 3],
    pub saturation_after: [f64; 3],
}

impl EnhancementReport {
    pub fn new(before: &Image, outcome: &Enhanced, params: GammaParams) -> Self {
        EnhancementReport {
            alpha: params.alpha(),
            degenerate: outcome.degenerate,
            saturation_before: oversaturation_rgb(before),
            saturation_after: oversaturation_rgb(&outcome.image),
        }
    }
}
