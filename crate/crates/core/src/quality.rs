//! Noise-aware image quality score.
//!
//! `f(I) = A * M_gradient + B * M_entropy - C * M_noise`, where the gradient
//! term rewards evenly spread edge information over a grid, the entropy term
//! rewards a rich luma histogram, and the noise term estimates per-channel
//! Gaussian noise over homogeneous, well-exposed pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Image, Plane};

/// Largest Sobel magnitude an 8-bit 3x3 patch can produce: 255 * sqrt(20).
pub const SOBEL_MAX: f64 = 1140.3946685248927;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub lambda: f64,
    /// Activation threshold on normalized gradient magnitude.
    pub gamma_act: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub k_g: f64,
    pub k_e: f64,
    pub tau_l: u8,
    pub tau_u: u8,
    /// Homogeneity threshold on normalized gradient magnitude; `None` uses
    /// the image's mean gradient magnitude.
    pub delta_hom: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Noise value reported when no pixel survives the masks.
    pub noise_penalty: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            lambda: 1000.0,
            gamma_act: 0.06,
            grid_rows: 10,
            grid_cols: 10,
            k_g: 1.0,
            k_e: 1.0 / 8.0,
            tau_l: 5,
            tau_u: 250,
            delta_hom: None,
            a: 0.4,
            b: 0.6,
            c: 0.6,
            noise_penalty: 255.0 * 3.0,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("quality: {m}")));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.gamma_act > 0.0 && self.gamma_act < 1.0) {
            return bad("gamma_act must lie in (0, 1)");
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid must have at least one cell");
        }
        if !(self.a >= 0.0 && self.b >= 0.0 && self.c >= 0.0) {
            return bad("A, B, C must be non-negative");
        }
        if self.tau_l >= self.tau_u {
            return bad("tau_l must be below tau_u");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub m_gradient: f64,
    pub m_entropy: f64,
    pub m_noise: f64,
    pub score: f64,
    /// All grid cells carried the same gradient mass.
    pub gradient_degenerate: bool,
    /// No pixel passed the homogeneity and exposure masks.
    pub noise_degenerate: bool,
}

/// Sobel magnitude per pixel, divided by [`SOBEL_MAX`]. Borders replicate.
pub fn normalized_gradient(luma: &Plane) -> Vec<f64> {
    let (w, h) = (luma.width(), luma.height());
    let d = luma.data();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        d[y * w + x] as f64
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push((gx * gx + gy * gy).sqrt() / SOBEL_MAX);
        }
    }
    out
}

/// Log-compressed gradient information; zero at or below the activation
/// threshold, one at the maximum magnitude.
pub fn gradient_information(g: f64, cfg: &QualityConfig) -> f64 {
    if g <= cfg.gamma_act {
        return 0.0;
    }
    let norm = (cfg.lambda * (1.0 - cfg.gamma_act) + 1.0).ln();
    (cfg.lambda * (g - cfg.gamma_act) + 1.0).ln() / norm
}

/// Per-cell sums of gradient information over a `grid_rows x grid_cols`
/// partition (clamped to the image size).
pub fn cell_sums(grad: &[f64], width: usize, height: usize, cfg: &QualityConfig) -> Vec<f64> {
    let rows = cfg.grid_rows.min(height);
    let cols = cfg.grid_cols.min(width);
    let mut cells = vec![0.0; rows * cols];
    for y in 0..height {
        let r = y * rows / height;
        for x in 0..width {
            let c = x * cols / width;
            cells[r * cols + c] += gradient_information(grad[y * width + x], cfg);
        }
    }
    cells
}

/// `K_G * mean(G) / std(G)`; returns `(0, true)` when every cell is equal.
pub fn gradient_from_cells(cells: &[f64], k_g: f64) -> (f64, bool) {
    let first = cells[0];
    if cells.iter().all(|&c| c == first) {
        return (0.0, true);
    }
    let n = cells.len() as f64;
    let mean = cells.iter().sum::<f64>() / n;
    let var = cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    (k_g * mean / var.sqrt(), false)
}

pub fn gradient_metric(img: &Image, cfg: &QualityConfig) -> (f64, bool) {
    let luma = img.luma();
    let grad = normalized_gradient(&luma);
    gradient_from_cells(&cell_sums(&grad, img.width(), img.height(), cfg), cfg.k_g)
}

pub fn entropy_of(luma: &Plane, k_e: f64) -> f64 {
    let mut counts = [0u64; 256];
    for &v in luma.data() {
        counts[v as usize] += 1;
    }
    let n = luma.data().len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    k_e * h
}

pub fn entropy_metric(img: &Image, cfg: &QualityConfig) -> f64 {
    entropy_of(&img.luma(), cfg.k_e)
}

const NOISE_KERNEL: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];

/// Per-channel noise estimates plus the number of pixels used.
///
/// Only interior pixels with a full 3x3 neighborhood are considered. A
/// pixel is used when its normalized gradient magnitude is at most the
/// homogeneity threshold and its luma lies in `[tau_l, tau_u]`. For i.i.d.
/// Gaussian noise the kernel response has standard deviation `6 sigma`, so
/// `sqrt(pi/2) / 6` times the mean absolute response is unbiased for sigma.
pub fn noise_sigmas(img: &Image, cfg: &QualityConfig) -> ([f64; 3], usize) {
    let luma = img.luma();
    let grad = normalized_gradient(&luma);
    noise_sigmas_with(img, &luma, &grad, cfg)
}

fn noise_sigmas_with(img: &Image, luma: &Plane, grad: &[f64], cfg: &QualityConfig) -> ([f64; 3], usize) {
    let delta = cfg
        .delta_hom
        .unwrap_or_else(|| grad.iter().sum::<f64>() / grad.len() as f64);
    let (w, h) = (img.width(), img.height());
    let raw = img.as_raw();
    let mut sums = [0.0; 3];
    let mut n_p = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let l = luma.data()[i];
            if grad[i] > delta || l < cfg.tau_l || l > cfg.tau_u {
                continue;
            }
            n_p += 1;
            for (c, sum) in sums.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (ky, row) in NOISE_KERNEL.iter().enumerate() {
                    for (kx, k) in row.iter().enumerate() {
                        acc += k * raw[((y + ky - 1) * w + x + kx - 1) * 3 + c] as f64;
                    }
                }
                *sum += acc.abs();
            }
        }
    }
    if n_p == 0 {
        return ([f64::NAN; 3], 0);
    }
    let scale = (std::f64::consts::FRAC_PI_2).sqrt() / (6.0 * n_p as f64);
    (sums.map(|s| s * scale), n_p)
}

/// Sum of per-channel noise estimates, or the penalty when no pixel
/// qualifies. The flag reports the penalty path.
pub fn noise_metric(img: &Image, cfg: &QualityConfig) -> (f64, bool) {
    noise_from(noise_sigmas(img, cfg), cfg)
}

fn noise_from(sigmas: ([f64; 3], usize), cfg: &QualityConfig) -> (f64, bool) {
    match sigmas {
        (_, 0) => (cfg.noise_penalty, true),
        (s, _) => (s.iter().sum(), false),
    }
}

pub fn combine(cfg: &QualityConfig, m_gradient: f64, m_entropy: f64, m_noise: f64) -> f64 {
    cfg.a * m_gradient + cfg.b * m_entropy - cfg.c * m_noise
}

pub fn quality_score(img: &Image, cfg: &QualityConfig) -> QualityReport {
    let luma = img.luma();
    let grad = normalized_gradient(&luma);
    let (m_gradient, gradient_degenerate) =
        gradient_from_cells(&cell_sums(&grad, img.width(), img.height(), cfg), cfg.k_g);
    let m_entropy = entropy_of(&luma, cfg.k_e);
    let (m_noise, noise_degenerate) = noise_from(noise_sigmas_with(img, &luma, &grad, cfg), cfg);
    QualityReport {
        m_gradient,
        m_entropy,
        m_noise,
        score: combine(cfg, m_gradient, m_entropy, m_noise),
        gradient_degenerate,
        noise_degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sobel_max_matches_brute_force() {
        // Magnitude is convex in the patch values, so the maximum sits on a
        // vertex of the cube: enumerate all 0/255 patches.
        let mut best: f64 = 0.0;
        for bits in 0u32..512 {
            let v = |i: u32| if bits >> i & 1 == 1 { 255.0f64 } else { 0.0 };
            let (a, b, c, d, f, g, hh, i) = (v(0), v(1), v(2), v(3), v(5), v(6), v(7), v(8));
            let gx = (c + 2.0 * f + i) - (a + 2.0 * d + g);
            let gy = (g + 2.0 * hh + i) - (a + 2.0 * b + c);
            best = best.max((gx * gx + gy * gy).sqrt());
        }
        assert!((best - SOBEL_MAX).abs() < 1e-9);
    }

    #[test]
    fn constant_image_scores_zero() {
        let img = Image::filled(16, 16, [128, 128, 128]).unwrap();
        let r = quality_score(&img, &QualityConfig::default());
        assert_eq!(r.m_gradient, 0.0);
        assert!(r.gradient_degenerate);
        assert_eq!(r.m_entropy, 0.0);
        assert_eq!(r.m_noise, 0.0);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn full_information_normalizes_to_one() {
        let cfg = QualityConfig::default();
        assert!((gradient_information(1.0, &cfg) - 1.0).abs() < 1e-15);
        assert_eq!(gradient_information(cfg.gamma_act, &cfg), 0.0);
        assert_eq!(gradient_information(0.01, &cfg), 0.0);
        // uniform cells hit the degenerate rule
        assert_eq!(gradient_from_cells(&[3.0; 4], 1.0), (0.0, true));
    }

    #[test]
    fn single_busy_cell() {
        // G = (a, 0, 0, 0): mean a/4, std a*sqrt(3)/4
        let (m, deg) = gradient_from_cells(&[2.0, 0.0, 0.0, 0.0], 1.0);
        assert!(!deg);
        assert!((m - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let (even, _) = gradient_from_cells(&[2.0, 1.9, 2.1, 2.0], 1.0);
        assert!(even > 10.0 * m);
    }

    #[test]
    fn entropy_examples() {
        let two = Image::from_fn(4, 4, |x, _| if x < 2 { [0; 3] } else { [255; 3] }).unwrap();
        assert!((entropy_metric(&two, &QualityConfig::default()) - 0.125).abs() < 1e-15);
        let uniform = Image::from_fn(16, 16, |x, y| [(y * 16 + x) as u8; 3]).unwrap();
        assert!((entropy_metric(&uniform, &QualityConfig::default()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn white_image_hits_noise_penalty() {
        let img = Image::filled(8, 8, [255; 3]).unwrap();
        let cfg = QualityConfig::default();
        assert_eq!(noise_metric(&img, &cfg), (765.0, true));
        assert_eq!(
            noise_metric(&Image::filled(8, 8, [128; 3]).unwrap(), &cfg),
            (0.0, false)
        );
    }

    #[test]
    fn projection_onto_gradient() {
        let img = Image::from_fn(20, 20, |x, y| [((x * 13 + y * 7) % 256) as u8, 90, (x * 9) as u8]).unwrap();
        let cfg = QualityConfig {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            ..QualityConfig::default()
        };
        let r = quality_score(&img, &cfg);
        assert_eq!(r.score, r.m_gradient);
    }

    #[test]
    fn config_validation() {
        assert!(QualityConfig::default().validate().is_ok());
        let bad = QualityConfig {
            gamma_act: 1.0,
            ..QualityConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = QualityConfig {
            tau_l: 200,
            tau_u: 100,
            ..QualityConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
