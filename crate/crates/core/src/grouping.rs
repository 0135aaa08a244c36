//! Background-color grouping: k-means++ on per-image mean chroma.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{rgb_to_ycbcr, Image};
use crate::manifest::DatasetManifest;
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaPoint {
    pub cb_mean: f64,
    pub cr_mean: f64,
}

impl ChromaPoint {
    pub fn coords(&self) -> [f64; 2] {
        [self.cb_mean, self.cr_mean]
    }
}

pub fn chroma_features(img: &Image) -> ChromaPoint {
    let ycc = rgb_to_ycbcr(img);
    let mean = |d: &[u8]| d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
    ChromaPoint {
        cb_mean: mean(ycc.cb.data()),
        cr_mean: mean(ycc.cr.data()),
    }
}

#[inline]
pub fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_count<const D: usize>(points: &[[f64; D]]) -> usize {
    let mut seen: Vec<[f64; D]> = Vec::new();
    for p in points {
        if !seen.contains(p) {
            seen.push(*p);
        }
    }
    seen.len()
}

/// k-means++ seeding: the first centroid is uniform, each next one is drawn
/// with probability proportional to its squared distance to the nearest
/// chosen centroid.
pub fn kmeanspp_seed<const D: usize>(points: &[[f64; D]], k: usize, rng: &mut StreamRng) -> Result<Vec<[f64; D]>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::invalid(format!("k = {k} exceeds {distinct} distinct points")));
    }
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < d {
                break;
            }
            target -= d;
        }
        let c = points[pick.expect("distinct points remain")];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
    }
    Ok(centroids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping<const D: usize> {
    pub k: usize,
    #[serde(with = "centroid_serde")]
    pub centroids: Vec<[f64; D]>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment pass.
    pub inertia_history: Vec<f64>,
}

impl<const D: usize> Grouping<D> {
    /// Members per cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k];
        for &a in &self.assignment {
            n[a] += 1;
        }
        n
    }
}

mod centroid_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(v: &[[f64; D]], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|c| c.to_vec()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(d: De) -> Result<Vec<[f64; D]>, De::Error> {
        let raw = Vec::<Vec<f64>>::deserialize(d)?;
        raw.into_iter()
            .map(|c| {
                c.try_into()
                    .map_err(|_| serde::de::Error::custom("centroid dimension mismatch"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

fn assign<const D: usize>(points: &[[f64; D]], centroids: &[[f64; D]]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centroids)).unzip()
}

/// Lloyd iterations from a k-means++ start.
///
/// A cluster that empties is re-seeded at the point farthest from its
/// assigned centroid. The returned assignment always maps every point to its
/// nearest final centroid.
pub fn kmeans_cluster<const D: usize>(
    points: &[[f64; D]],
    k: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<Grouping<D>> {
    let mut rng = stream(seed, &[0x6b6d]);
    let mut centroids = kmeanspp_seed(points, k, &mut rng)?;
    let mut history = Vec::new();
    let (mut assignment, mut dists) = assign(points, &centroids);
    history.push(dists.iter().sum());
    for _ in 0..opts.max_iters {
        let mut sums = vec![[0.0; D]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                next[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
                    .0;
                next[c] = points[far];
                dists[far] = 0.0;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        (assignment, dists) = assign(points, &centroids);
        history.push(dists.iter().sum());
        if shift < opts.tol {
            break;
        }
    }
    Ok(Grouping {
        k,
        centroids,
        inertia: dists.iter().sum(),
        assignment,
        inertia_history: history,
    })
}

/// Mean silhouette coefficient; singleton clusters contribute zero.
pub fn silhouette<const D: usize>(points: &[[f64; D]], assignment: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n < 2 || k < 2 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = assignment[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignment[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub centroids: Vec<[f64; 2]>,
    pub inertia: f64,
    pub silhouette: f64,
}

/// Clusters chroma points, picking `k` in `candidates` by mean silhouette
/// when `fixed_k` is `None`. Fewer than three distinct points yield one group.
pub fn cluster_chroma(
    points: &[ChromaPoint],
    fixed_k: Option<usize>,
    candidates: std::ops::RangeInclusive<usize>,
    seed: u64,
    opts: KMeansOptions,
) -> Result<(Grouping<2>, ClusterReport)> {
    let coords: Vec<[f64; 2]> = points.iter().map(ChromaPoint::coords).collect();
    if coords.is_empty() {
        return Err(Error::EmptyInput("no images to cluster".into()));
    }
    let distinct = distinct_count(&coords);
    let best = match fixed_k {
        Some(k) => {
            let g = kmeans_cluster(&coords, k, seed, opts)?;
            let s = silhouette(&coords, &g.assignment, k);
            (g, s)
        }
        None if distinct < 3 => (kmeans_cluster(&coords, 1, seed, opts)?, 0.0),
        None => {
            let mut best: Option<(Grouping<2>, f64)> = None;
            for k in candidates.filter(|&k| k >= 2 && k < distinct) {
                let g = kmeans_cluster(&coords, k, seed, opts)?;
                let s = silhouette(&coords, &g.assignment, k);
                if best.as_ref().is_none_or(|(_, bs)| s > *bs) {
                    best = Some((g, s));
                }
            }
            match best {
                Some(b) => b,
                None => (kmeans_cluster(&coords, 1, seed, opts)?, 0.0),
            }
        }
    };
    let (g, s) = best;
    let report = ClusterReport {
        k: g.k,
        centroids: g.centroids.clone(),
        inertia: g.inertia,
        silhouette: s,
    };
    Ok((g, report))
}

/// Writes group ids into the manifest records, in record order.
pub fn assign_groups<const D: usize>(manifest: &DatasetManifest, grouping: &Grouping<D>) -> Result<DatasetManifest> {
    if grouping.assignment.len() != manifest.len() {
        return Err(Error::DimensionMismatch(format!(
            "grouping covers {} images, manifest has {}",
            grouping.assignment.len(),
            manifest.len()
        )));
    }
    let mut out = manifest.clone();
    for (r, &g) in out.records.iter_mut().zip(&grouping.assignment) {
        r.group = Some(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Record;

    #[test]
    fn gray_is_neutral() {
        let p = chroma_features(&Image::filled(4, 4, [77, 77, 77]).unwrap());
        assert_eq!((p.cb_mean, p.cr_mean), (128.0, 128.0));
    }

    #[test]
    fn red_blue_midpoint() {
        // red -> (Cb 85, Cr 255); blue -> (Cb 255 after clamp, Cr 107)
        let img = Image::from_fn(4, 4, |x, _| if x < 2 { [255, 0, 0] } else { [0, 0, 255] }).unwrap();
        let p = chroma_features(&img);
        assert_eq!((p.cb_mean, p.cr_mean), (170.0, 181.0));
    }

    #[test]
    fn k_equal_to_distinct_takes_every_point() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        for seed in 0..20 {
            let mut rng = stream(seed, &[]);
            let mut c = kmeanspp_seed(&pts, 3, &mut rng).unwrap();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(c, vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        }
        let mut rng = stream(0, &[]);
        assert!(kmeanspp_seed(&pts, 4, &mut rng).is_err());
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [4.0, 3.0]];
        let g = kmeans_cluster(&pts, 1, 3, KMeansOptions::default()).unwrap();
        assert_eq!(g.centroids[0], [2.0, 1.0]);
        // total variance * n
        assert!((g.inertia - (4.0 + 0.0 + 4.0 + 1.0 + 1.0 + 4.0)).abs() < 1e-12);
        let same = [[5.0, 5.0]; 4];
        assert_eq!(
            kmeans_cluster(&same, 1, 0, KMeansOptions::default()).unwrap().inertia,
            0.0
        );
    }

    #[test]
    fn assign_groups_checks_counts_and_is_idempotent() {
        let m = DatasetManifest::new(vec![Record::new("a", None), Record::new("b", None)]).unwrap();
        let g = Grouping::<2> {
            k: 2,
            centroids: vec![[0.0; 2], [1.0; 2]],
            assignment: vec![1, 0],
            inertia: 0.0,
            inertia_history: vec![],
        };
        let once = assign_groups(&m, &g).unwrap();
        assert_eq!(once.records[0].group, Some(1));
        assert_eq!(assign_groups(&once, &g).unwrap(), once);
        let empty = DatasetManifest::default();
        let g0 = Grouping::<2> {
            assignment: vec![],
            ..g.clone()
        };
        assert!(assign_groups(&empty, &g0).unwrap().is_empty());
        assert!(assign_groups(&empty, &g).is_err());
    }

    #[test]
    fn silhouette_prefers_true_k() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push([100.0 + i as f64 * 0.1, 120.0]);
            pts.push([150.0, 90.0 + i as f64 * 0.1]);
        }
        let cp: Vec<ChromaPoint> = pts
            .iter()
            .map(|p| ChromaPoint {
                cb_mean: p[0],
                cr_mean: p[1],
            })
            .collect();
        let (g, r) = cluster_chroma(&cp, None, 2..=8, 1, KMeansOptions::default()).unwrap();
        assert_eq!(g.k, 2);
        assert!(r.silhouette > 0.9);
    }
}
