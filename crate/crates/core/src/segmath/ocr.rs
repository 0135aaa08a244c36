//! Object-contextual representation head.
//!
//! Coarse class maps are softmax-normalized over pixels and used to pool
//! pixel features into one region vector per class. Each pixel then attends
//! over the region vectors (softmax over classes of transformed dot
//! products), the attended context is transformed, concatenated with the
//! pixel's own feature and mapped to class scores.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel feature vectors, pixel-major (`data[i * dim + d]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if data.len() != height * width * dim {
            return Err(Error::BufferSize {
                expected: height * width * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map holds non-finite values"));
        }
        Ok(FeatureMap {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
}

/// Per-pixel class logits, pixel-major (`data[i * classes + k]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseMaps {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl CoarseMaps {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * classes {
            return Err(Error::BufferSize {
                expected: height * width * classes,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coarse maps hold non-finite values"));
        }
        Ok(CoarseMaps {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn logit(&self, pixel: usize, class: usize) -> f64 {
        self.data[pixel * self.classes + class]
    }
}

/// One pooled vector per class, row-major `classes x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRepresentations {
    pub classes: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl RegionRepresentations {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }
}

/// Pixel-to-class attention, pixel-major; each pixel's row sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationWeights {
    pub pixels: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl RelationWeights {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// A 1x1 linear map followed by inference-mode batch normalization and an
/// optional rectifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPsi {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_eps: f64,
    pub relu: bool,
}

impl TransformPsi {
    /// Linear map with pass-through normalization and no rectifier.
    pub fn linear(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let t = TransformPsi {
            in_dim,
            out_dim,
            weight,
            bias,
            bn_mean: vec![0.0; out_dim],
            bn_var: vec![1.0; out_dim],
            bn_gamma: vec![1.0; out_dim],
            bn_beta: vec![0.0; out_dim],
            bn_eps: 0.0,
            relu: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for d in 0..dim {
            w[d * dim + d] = 1.0;
        }
        TransformPsi::linear(dim, dim, w, vec![0.0; dim]).expect("identity is well-formed")
    }

    /// Gaussian weights, random normalization statistics, rectifier on.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        };
        let weight = (0..in_dim * out_dim)
            .map(|_| normal(1.0 / (in_dim as f64).sqrt()))
            .collect();
        let bias = (0..out_dim).map(|_| normal(0.1)).collect();
        let bn_mean = (0..out_dim).map(|_| normal(0.1)).collect();
        let bn_gamma = (0..out_dim).map(|_| 1.0 + normal(0.1)).collect();
        let bn_beta = (0..out_dim).map(|_| normal(0.1)).collect();
        let bn_var = (0..out_dim).map(|_| 0.5 + rng.random::<f64>()).collect();
        TransformPsi {
            in_dim,
            out_dim,
            weight,
            bias,
            bn_mean,
            bn_var,
            bn_gamma,
            bn_beta,
            bn_eps: 1e-5,
            relu: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = self.out_dim;
        let ok = self.weight.len() == o * self.in_dim
            && self.bias.len() == o
            && self.bn_mean.len() == o
            && self.bn_var.len() == o
            && self.bn_gamma.len() == o
            && self.bn_beta.len() == o;
        if !ok {
            return Err(Error::invalid("transform parameter shapes disagree"));
        }
        if self.bn_var.iter().any(|&v| v + self.bn_eps <= 0.0) {
            return Err(Error::invalid("normalization variance must be positive"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
                let n =
                    self.bn_gamma[o] * (z - self.bn_mean[o]) / (self.bn_var[o] + self.bn_eps).sqrt() + self.bn_beta[o];
                if self.relu {
                    n.max(0.0)
                } else {
                    n
                }
            })
            .collect()
    }
}

pub fn object_region_repr(x: &FeatureMap, m: &CoarseMaps) -> Result<RegionRepresentations> {
    if (x.height, x.width) != (m.height, m.width) {
        return Err(Error::DimensionMismatch(
            "features and coarse maps differ in size".into(),
        ));
    }
    let n = x.pixels();
    let mut data = vec![0.0; m.classes * x.dim];
    let mut weights = vec![0.0; n];
    for k in 0..m.classes {
        for (i, w) in weights.iter_mut().enumerate() {
            *w = m.logit(i, k);
        }
        softmax_in_place(&mut weights);
        let row = &mut data[k * x.dim..(k + 1) * x.dim];
        for (w, feat) in weights.iter().zip(x.rows()) {
            for (r, f) in row.iter_mut().zip(feat) {
                *r += w * f;
            }
        }
    }
    Ok(RegionRepresentations {
        classes: m.classes,
        dim: x.dim,
        data,
    })
}

pub fn pixel_region_relation(
    x: &FeatureMap,
    regions: &RegionRepresentations,
    psi_pixel: &TransformPsi,
    psi_region: &TransformPsi,
) -> Result<RelationWeights> {
    if psi_pixel.in_dim != x.dim || psi_region.in_dim != regions.dim || psi_pixel.out_dim != psi_region.out_dim {
        return Err(Error::DimensionMismatch(
            "relation transforms do not fit the features".into(),
        ));
    }
    let keys: Vec<Vec<f64>> = (0..regions.classes).map(|k| psi_region.apply(regions.row(k))).collect();
    let mut data = Vec::with_capacity(x.pixels() * regions.classes);
    for feat in x.rows() {
        let q = psi_pixel.apply(feat);
        let mut row: Vec<f64> = keys
            .iter()
            .map(|key| key.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        softmax_in_place(&mut row);
        data.extend(row);
    }
    Ok(RelationWeights {
        pixels: x.pixels(),
        classes: regions.classes,
        data,
    })
}

/// Context per pixel: `psi_out(sum_k w[i, k] * psi_value(f_k))`.
pub fn ocr_aggregate(
    relation: &RelationWeights,
    regions: &RegionRepresentations,
    psi_value: &TransformPsi,
    psi_out: &TransformPsi,
    height: usize,
    width: usize,
) -> Result<FeatureMap> {
    if relation.classes != regions.classes || psi_value.in_dim != regions.dim || psi_out.in_dim != psi_value.out_dim {
        return Err(Error::DimensionMismatch("aggregation shapes disagree".into()));
    }
    if relation.pixels != height * width {
        return Err(Error::DimensionMismatch("relation does not cover the map".into()));
    }
    let values: Vec<Vec<f64>> = (0..regions.classes).map(|k| psi_value.apply(regions.row(k))).collect();
    let mut data = Vec::with_capacity(relation.pixels * psi_out.out_dim);
    for i in 0..relation.pixels {
        let mut acc = vec![0.0; psi_value.out_dim];
        for (w, v) in relation.row(i).iter().zip(&values) {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += w * b;
            }
        }
        data.extend(psi_out.apply(&acc));
    }
    FeatureMap::new(height, width, psi_out.out_dim, data)
}

/// Final scores per pixel from the concatenation `[x_i, y_i]`.
pub fn augmented_repr(x: &FeatureMap, context: &FeatureMap, psi_final: &TransformPsi) -> Result<FeatureMap> {
    if (x.height, x.width) != (context.height, context.width) || psi_final.in_dim != x.dim + context.dim {
        return Err(Error::DimensionMismatch(
            "augmented representation shapes disagree".into(),
        ));
    }
    let mut data = Vec::with_capacity(x.pixels() * psi_final.out_dim);
    let mut cat = Vec::with_capacity(psi_final.in_dim);
    for (a, b) in x.rows().zip(context.rows()) {
        cat.clear();
        cat.extend_from_slice(a);
        cat.extend_from_slice(b);
        data.extend(psi_final.apply(&cat));
    }
    FeatureMap::new(x.height, x.width, psi_final.out_dim, data)
}

/// The five transforms of the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrHead {
    pub psi_pixel: TransformPsi,
    pub psi_region: TransformPsi,
    pub psi_value: TransformPsi,
    pub psi_out: TransformPsi,
    pub psi_final: TransformPsi,
}

impl OcrHead {
    /// Random head for features of width `dim`, relation width `key_dim`,
    /// context width `ctx_dim` and `classes` outputs.
    pub fn random<R: Rng + ?Sized>(dim: usize, key_dim: usize, ctx_dim: usize, classes: usize, rng: &mut R) -> Self {
        let psi_pixel = TransformPsi::random(dim, key_dim, rng);
        let psi_region = TransformPsi::random(dim, key_dim, rng);
        let psi_value = TransformPsi::random(dim, key_dim, rng);
        let psi_out = TransformPsi::random(key_dim, ctx_dim, rng);
        let mut psi_final = TransformPsi::random(dim + ctx_dim, classes, rng);
        // class scores must be free to go negative
        psi_final.relu = false;
        OcrHead {
            psi_pixel,
            psi_region,
            psi_value,
            psi_out,
            psi_final,
        }
    }

    /// Full forward pass returning per-pixel class scores.
    pub fn forward(&self, x: &FeatureMap, coarse: &CoarseMaps) -> Result<FeatureMap> {
        let regions = object_region_repr(x, coarse)?;
        let relation = pixel_region_relation(x, &regions, &self.psi_pixel, &self.psi_region)?;
        let context = ocr_aggregate(&relation, &regions, &self.psi_value, &self.psi_out, x.height, x.width)?;
        augmented_repr(x, &context, &self.psi_final)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn two_pixel_pooling() {
        let x = FeatureMap::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let m = CoarseMaps::new(1, 2, 1, vec![0.0, 3f64.ln()]).unwrap();
        let r = object_region_repr(&x, &m).unwrap();
        assert!((r.data[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_pool_to_mean() {
        let x = FeatureMap::new(2, 2, 2, vec![1.0, 0.0, 3.0, 4.0, -2.0, 2.0, 6.0, 2.0]).unwrap();
        let m = CoarseMaps::new(2, 2, 1, vec![0.7; 4]).unwrap();
        let r = object_region_repr(&x, &m).unwrap();
        assert!((r.data[0] - 2.0).abs() < 1e-12);
        assert!((r.data[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_selects_pixel() {
        let x = FeatureMap::new(1, 3, 1, vec![5.0, -1.0, 9.0]).unwrap();
        let m = CoarseMaps::new(1, 3, 1, vec![0.0, 1e4, 0.0]).unwrap();
        let r = object_region_repr(&x, &m).unwrap();
        assert!((r.data[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn relation_for_known_dot_products() {
        // identity transforms, D = 1: dot products are x * f_k
        let x = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let regions = RegionRepresentations {
            classes: 2,
            dim: 1,
            data: vec![0.0, 3f64.ln()],
        };
        let id = TransformPsi::identity(1);
        let w = pixel_region_relation(&x, &regions, &id, &id).unwrap();
        assert!((w.data[0] - 0.25).abs() < 1e-12);
        assert!((w.data[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn identical_regions_give_uniform_relation() {
        let mut rng = stream(9, &[]);
        let x = FeatureMap::new(2, 2, 3, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let regions = RegionRepresentations {
            classes: 7,
            dim: 3,
            data: [0.2, -0.4, 1.1].repeat(7),
        };
        let a = TransformPsi::random(3, 4, &mut rng);
        let b = TransformPsi::random(3, 4, &mut rng);
        let w = pixel_region_relation(&x, &regions, &a, &b).unwrap();
        assert!(w.data.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-12));
    }

    #[test]
    fn one_hot_relation_gives_constant_context() {
        let regions = RegionRepresentations {
            classes: 2,
            dim: 2,
            data: vec![1.0, 2.0, -3.0, 0.5],
        };
        let relation = RelationWeights {
            pixels: 4,
            classes: 2,
            data: [0.0, 1.0].repeat(4),
        };
        let id = TransformPsi::identity(2);
        let y = ocr_aggregate(&relation, &regions, &id, &id, 2, 2).unwrap();
        for row in y.rows() {
            assert_eq!(row, &[-3.0, 0.5]);
        }
        // mixed weights: 0.25 * f_0 + 0.75 * f_1
        let relation = RelationWeights {
            pixels: 1,
            classes: 2,
            data: vec![0.25, 0.75],
        };
        let y = ocr_aggregate(&relation, &regions, &id, &id, 1, 1).unwrap();
        assert_eq!(y.data, vec![0.25 - 2.25, 0.5 + 0.375]);
    }

    #[test]
    fn zero_context_block_reduces_to_linear() {
        let x = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let ctx = FeatureMap::new(1, 2, 1, vec![7.0, -7.0]).unwrap();
        // weights on the context column are zero
        let psi = TransformPsi::linear(3, 2, vec![1.0, -1.0, 0.0, 0.5, 2.0, 0.0], vec![0.1, 0.2]).unwrap();
        let z = augmented_repr(&x, &ctx, &psi).unwrap();
        assert_eq!(
            z.data,
            vec![1.0 - 2.0 + 0.1, 0.5 + 4.0 + 0.2, -1.0 - 0.5 + 0.1, -0.5 + 1.0 + 0.2]
        );
    }

    #[test]
    fn shape_errors() {
        let x = FeatureMap::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let m = CoarseMaps::new(2, 1, 1, vec![0.0; 2]).unwrap();
        assert!(object_region_repr(&x, &m).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureMap::new(1, 1, 0, vec![]).is_err());
    }
}
