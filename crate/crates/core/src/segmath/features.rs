//! Hand-crafted per-pixel features standing in for a learned backbone.
//!
//! Layout per pixel, all scaled to [0, 1]:
//! `R G B Y Cb Cr mean3(Y) mean3(Cb) mean3(Cr) std3(Y) std3(Cb) std3(Cr)`
//! where the 3x3 windows replicate the border.

use super::ocr::FeatureMap;
use crate::imagecore::{rgb_to_ycbcr, Image, Plane};

pub const FEATURE_DIM: usize = 12;

/// Identifier stored with models so a feature change invalidates them.
pub const FEATURE_SPEC: &str = "rgb-ycbcr-local3-v1";

fn local_stats(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (p.width(), p.height());
    let mut mean = Vec::with_capacity(w * h);
    let mut std = Vec::with_capacity(w * h);
    let mut win = [0.0; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1i64..=1 {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    win[n] = p.get(xx, yy) as f64 / 255.0;
                    n += 1;
                }
            }
            let m = win.iter().sum::<f64>() / 9.0;
            let var = win.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 9.0;
            mean.push(m);
            std.push(var.sqrt());
        }
    }
    (mean, std)
}

pub fn extract_features(img: &Image) -> FeatureMap {
    let ycc = rgb_to_ycbcr(img);
    let planes = [&ycc.y, &ycc.cb, &ycc.cr];
    let stats: Vec<(Vec<f64>, Vec<f64>)> = planes.iter().map(|p| local_stats(p)).collect();
    let n = img.pixel_count();
    let mut data = Vec::with_capacity(n * FEATURE_DIM);
    for (i, (rgb, ((y, cb), cr))) in img
        .pixels()
        .zip(ycc.y.data().iter().zip(ycc.cb.data()).zip(ycc.cr.data()))
        .enumerate()
    {
        data.extend(rgb.map(|v| v as f64 / 255.0));
        data.extend([*y, *cb, *cr].map(|v| v as f64 / 255.0));
        data.extend(stats.iter().map(|s| s.0[i]));
        data.extend(stats.iter().map(|s| s.1[i]));
    }
    FeatureMap::new(img.height(), img.width(), FEATURE_DIM, data).expect("features are finite")
}
