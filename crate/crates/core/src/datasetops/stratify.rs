//! Iterative stratification for multi-label data.
//!
//! Each image's label set is the set of classes present in its mask. The
//! rarest label with unassigned images is handled first; each of its images
//! goes to the subset with the largest remaining demand for that label,
//! breaking ties by total remaining demand and then by a seeded draw.
//!
//! The greedy pass can strand a few images on small or awkward manifests,
//! so it is followed by a local search that moves or swaps single images
//! between subsets while that strictly lowers the worst per-class count
//! deviation (then the worst size deviation, then the summed squares).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::ClassWeights;
use crate::error::{Error, Result};
use crate::imagecore::NUM_CLASSES;
use crate::rng::stream;

const TIE_EPS: f64 = 1e-9;

/// Bit set of present classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet(pub u8);

impl LabelSet {
    pub fn from_weights(w: &ClassWeights) -> Self {
        LabelSet(w.present().fold(0u8, |acc, k| acc | 1 << k))
    }

    pub fn from_classes(classes: &[usize]) -> Self {
        LabelSet(classes.iter().fold(0u8, |acc, &k| acc | 1 << k))
    }

    pub fn contains(self, class: usize) -> bool {
        self.0 >> class & 1 == 1
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..NUM_CLASSES).filter(move |&k| self.contains(k))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSplit {
    pub subsets: Vec<Vec<usize>>,
    pub target_proportions: Vec<f64>,
}

impl StratifiedSplit {
    /// Subset index for each record.
    pub fn assignment(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (j, s) in self.subsets.iter().enumerate() {
            for &i in s {
                out[i] = j;
            }
        }
        out
    }

    /// Number of images carrying each label, per subset.
    pub fn label_counts(&self, labels: &[LabelSet]) -> Vec<[usize; NUM_CLASSES]> {
        self.subsets
            .iter()
            .map(|s| {
                let mut c = [0; NUM_CLASSES];
                for &i in s {
                    for k in labels[i].iter() {
                        c[k] += 1;
                    }
                }
                c
            })
            .collect()
    }

    /// Largest absolute gap between a subset's label count and its
    /// proportional share of that label.
    pub fn max_count_deviation(&self, labels: &[LabelSet]) -> f64 {
        count_deviation(&self.label_counts(labels), &self.target_proportions, labels)
    }
}

pub fn count_deviation(counts: &[[usize; NUM_CLASSES]], proportions: &[f64], labels: &[LabelSet]) -> f64 {
    let mut totals = [0usize; NUM_CLASSES];
    for l in labels {
        for k in l.iter() {
            totals[k] += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for (c, &r) in counts.iter().zip(proportions) {
        if r <= 0.0 {
            continue;
        }
        for k in 0..NUM_CLASSES {
            worst = worst.max((c[k] as f64 - r * totals[k] as f64).abs());
        }
    }
    worst
}

fn validate(proportions: &[f64]) -> Result<()> {
    if proportions.is_empty() {
        return Err(Error::invalid("no subsets requested"));
    }
    if proportions.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::invalid("proportions must be non-negative"));
    }
    let sum: f64 = proportions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("proportions sum to {sum}, not 1")));
    }
    Ok(())
}

pub fn iterative_stratify(labels: &[LabelSet], proportions: &[f64], seed: u64) -> Result<StratifiedSplit> {
    validate(proportions)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty manifest".into()));
    }
    let m = proportions.len();
    let n = labels.len();
    let mut rng = stream(seed, &[0x5354]);
    let active: Vec<usize> = (0..m).filter(|&j| proportions[j] > 0.0).collect();

    let mut label_totals = [0usize; NUM_CLASSES];
    for l in labels {
        for k in l.iter() {
            label_totals[k] += 1;
        }
    }
    let mut demand: Vec<f64> = proportions.iter().map(|r| r * n as f64).collect();
    let mut label_demand: Vec<[f64; NUM_CLASSES]> =
        proportions.iter().map(|r| label_totals.map(|t| r * t as f64)).collect();

    let mut assigned = vec![false; n];
    let mut subsets = vec![Vec::new(); m];
    let mut remaining = label_totals;
    let mut left = n;

    let mut place = |i: usize,
                     j: usize,
                     demand: &mut Vec<f64>,
                     label_demand: &mut Vec<[f64; NUM_CLASSES]>,
                     remaining: &mut [usize; NUM_CLASSES],
                     assigned: &mut Vec<bool>| {
        assigned[i] = true;
        subsets[j].push(i);
        demand[j] -= 1.0;
        for k in labels[i].iter() {
            label_demand[j][k] -= 1.0;
            remaining[k] -= 1;
        }
    };

    while left > 0 {
        let rarest = (0..NUM_CLASSES)
            .filter(|&k| remaining[k] > 0)
            .min_by_key(|&k| (remaining[k], k));
        let members: Vec<usize> = match rarest {
            Some(k) => (0..n).filter(|&i| !assigned[i] && labels[i].contains(k)).collect(),
            None => (0..n).filter(|&i| !assigned[i]).collect(),
        };
        for i in members {
            let mut cands = active.clone();
            if let Some(k) = rarest {
                let top = cands
                    .iter()
                    .map(|&j| label_demand[j][k])
                    .fold(f64::NEG_INFINITY, f64::max);
                cands.retain(|&j| label_demand[j][k] >= top - TIE_EPS);
            }
            let top = cands.iter().map(|&j| demand[j]).fold(f64::NEG_INFINITY, f64::max);
            cands.retain(|&j| demand[j] >= top - TIE_EPS);
            let j = if cands.len() == 1 {
                cands[0]
            } else {
                cands[rng.random_range(0..cands.len())]
            };
            place(i, j, &mut demand, &mut label_demand, &mut remaining, &mut assigned);
            left -= 1;
        }
    }
    refine(labels, proportions, &active, &mut subsets);
    for s in &mut subsets {
        s.sort_unstable();
    }
    Ok(StratifiedSplit {
        subsets,
        target_proportions: proportions.to_vec(),
    })
}

/// Deviations of one candidate split: worst per-class count deviation,
/// worst size deviation, and the sum of squares of both kinds.
#[derive(Clone, Copy)]
struct Cost(f64, f64, f64);

impl Cost {
    fn better_than(self, other: Cost) -> bool {
        let eps = TIE_EPS;
        if self.0 < other.0 - eps {
            return true;
        }
        if self.0 > other.0 + eps {
            return false;
        }
        if self.1 < other.1 - eps {
            return true;
        }
        if self.1 > other.1 + eps {
            return false;
        }
        self.2 < other.2 - eps
    }
}

/// Cost after moving one image of a label set between two subsets, and
/// optionally another back.
type Candidate = (Cost, usize, u8, usize, Option<u8>);

struct Tally {
    totals: [usize; NUM_CLASSES],
    n: usize,
    counts: Vec<[usize; NUM_CLASSES]>,
    sizes: Vec<usize>,
}

impl Tally {
    fn cost(&self, proportions: &[f64], active: &[usize]) -> Cost {
        let mut c = Cost(0.0, 0.0, 0.0);
        for &j in active {
            let r = proportions[j];
            for k in 0..NUM_CLASSES {
                let d = (self.counts[j][k] as f64 - r * self.totals[k] as f64).abs();
                c.0 = c.0.max(d);
                c.2 += d * d;
            }
            let d = (self.sizes[j] as f64 - r * self.n as f64).abs();
            c.1 = c.1.max(d);
            c.2 += d * d;
        }
        c
    }

    fn shift(&mut self, l: LabelSet, from: usize, to: usize) {
        for k in l.iter() {
            self.counts[from][k] -= 1;
            self.counts[to][k] += 1;
        }
        self.sizes[from] -= 1;
        self.sizes[to] += 1;
    }
}

/// Greedy local search over single moves and pairwise swaps. Images with
/// the same label set are interchangeable, so candidates are enumerated per
/// label set rather than per image.
fn refine(labels: &[LabelSet], proportions: &[f64], active: &[usize], subsets: &mut [Vec<usize>]) {
    let m = subsets.len();
    let mut tally = Tally {
        totals: [0; NUM_CLASSES],
        n: labels.len(),
        counts: vec![[0; NUM_CLASSES]; m],
        sizes: subsets.iter().map(Vec::len).collect(),
    };
    // per subset: label set -> member images
    let mut members: Vec<BTreeMap<u8, Vec<usize>>> = vec![BTreeMap::new(); m];
    for (j, s) in subsets.iter().enumerate() {
        for &i in s {
            members[j].entry(labels[i].0).or_default().push(i);
            for k in labels[i].iter() {
                tally.counts[j][k] += 1;
                tally.totals[k] += 1;
            }
        }
    }
    let mut current = tally.cost(proportions, active);
    loop {
        // (cost, from, label set, to, label set swapped back)
        let mut best: Option<Candidate> = None;
        for &a in active {
            let here: Vec<u8> = members[a].keys().copied().collect();
            for &b in active {
                if a == b {
                    continue;
                }
                let there: Vec<u8> = members[b].keys().copied().collect();
                for &p in &here {
                    tally.shift(LabelSet(p), a, b);
                    let c = tally.cost(proportions, active);
                    if c.better_than(best.map_or(current, |t| t.0)) {
                        best = Some((c, a, p, b, None));
                    }
                    if a < b {
                        for &q in there.iter().filter(|&&q| q != p) {
                            tally.shift(LabelSet(q), b, a);
                            let c = tally.cost(proportions, active);
                            if c.better_than(best.map_or(current, |t| t.0)) {
                                best = Some((c, a, p, b, Some(q)));
                            }
                            tally.shift(LabelSet(q), a, b);
                        }
                    }
                    tally.shift(LabelSet(p), b, a);
                }
            }
        }
        let Some((cost, a, p, b, swap)) = best else {
            break;
        };
        let mut relocate = |pattern: u8, from: usize, to: usize| {
            let list = members[from]
                .get_mut(&pattern)
                .expect("candidate comes from this subset");
            let i = list.pop().expect("non-empty member list");
            if list.is_empty() {
                members[from].remove(&pattern);
            }
            members[to].entry(pattern).or_default().push(i);
            tally.shift(LabelSet(pattern), from, to);
        };
        relocate(p, a, b);
        if let Some(q) = swap {
            relocate(q, b, a);
        }
        current = cost;
    }
    for (s, mem) in subsets.iter_mut().zip(&members) {
        *s = mem.values().flatten().copied().collect();
    }
}

/// Per-subset mean pixel weights against the whole-dataset mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub overall: [f64; NUM_CLASSES],
    pub subsets: Vec<[f64; NUM_CLASSES]>,
    pub label_counts: Vec<[usize; NUM_CLASSES]>,
    pub max_abs_divergence: f64,
}

pub fn weight_divergence(
    split: &StratifiedSplit,
    weights: &[ClassWeights],
    labels: &[LabelSet],
) -> Result<DivergenceReport> {
    let overall = ClassWeights::mean_of(weights)?.0;
    let mut subsets = Vec::new();
    let mut worst: f64 = 0.0;
    for s in &split.subsets {
        let sub: Vec<ClassWeights> = s.iter().map(|&i| weights[i]).collect();
        let mean = if sub.is_empty() {
            [0.0; NUM_CLASSES]
        } else {
            ClassWeights::mean_of(&sub)?.0
        };
        if !sub.is_empty() {
            for k in 0..NUM_CLASSES {
                worst = worst.max((mean[k] - overall[k]).abs());
            }
        }
        subsets.push(mean);
    }
    Ok(DivergenceReport {
        overall,
        subsets,
        label_counts: split.label_counts(labels),
        max_abs_divergence: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_split_evenly() {
        let labels = vec![LabelSet::from_classes(&[0, 2]); 10];
        let s = iterative_stratify(&labels, &[0.5, 0.5], 4).unwrap();
        assert_eq!(s.subsets[0].len(), 5);
        assert_eq!(s.subsets[1].len(), 5);
    }

    #[test]
    fn zero_proportion_subset_stays_empty() {
        let labels: Vec<LabelSet> = (0..9).map(|i| LabelSet::from_classes(&[0, i % 3 + 1])).collect();
        let s = iterative_stratify(&labels, &[0.6, 0.0, 0.4], 2).unwrap();
        assert!(s.subsets[1].is_empty());
        assert_eq!(s.subsets[0].len() + s.subsets[2].len(), 9);
    }

    #[test]
    fn partition_and_totals() {
        let labels: Vec<LabelSet> = (0..30u8).map(|i| LabelSet(1 | (i % 7) << 1 & 0x7e)).collect();
        let s = iterative_stratify(&labels, &[0.5, 0.3, 0.2], 11).unwrap();
        let a = s.assignment(labels.len());
        assert!(a.iter().all(|&j| j < 3));
        let counts = s.label_counts(&labels);
        for k in 0..NUM_CLASSES {
            let total: usize = counts.iter().map(|c| c[k]).sum();
            assert_eq!(total, labels.iter().filter(|l| l.contains(k)).count());
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(iterative_stratify(&[], &[1.0], 0).is_err());
        let l = [LabelSet(1)];
        assert!(iterative_stratify(&l, &[0.5, 0.4], 0).is_err());
        assert!(iterative_stratify(&l, &[1.5, -0.5], 0).is_err());
    }

    #[test]
    fn refinement_recovers_stranded_images() {
        // rarest-first alone puts three images in the small subset here
        let mut labels = vec![LabelSet::from_classes(&[0, 1]); 2];
        labels.push(LabelSet::from_classes(&[0, 2]));
        labels.extend(vec![LabelSet::from_classes(&[1, 2]); 6]);
        let s = iterative_stratify(&labels, &[0.8, 0.2], 0).unwrap();
        assert!(s.max_count_deviation(&labels) <= 0.4 + 1e-9);
        assert_eq!(s.subsets[1].len(), 2);
    }

    #[test]
    fn deterministic_under_seed() {
        let labels: Vec<LabelSet> = (0..40u32)
            .map(|i| LabelSet((1 | (i * 37 % 64) << 1 & 0x7e) as u8))
            .collect();
        let a = iterative_stratify(&labels, &[0.8, 0.2], 5).unwrap();
        let b = iterative_stratify(&labels, &[0.8, 0.2], 5).unwrap();
        assert_eq!(a, b);
    }
}
