//! Thresholding, gap clustering and scoring of label maps.

use std::fmt::Write as _;

use crate::error::SegmentError;
use crate::frequency::{bin_index, FrequencyMap, NodeStatus};
use crate::image::{write_pgm_bytes, GrayImage};

/// Per-pixel region labels `0..K`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    /// Fails unless the labels occupy exactly `0..K` for some `K`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, SegmentError> {
        if width * height != labels.len() || labels.is_empty() {
            return Err(SegmentError::DimensionMismatch { left: (width, height), right: (labels.len(), 1) });
        }
        let max = *labels.iter().max().expect("nonempty") as usize;
        let mut present = vec![false; max + 1];
        for &l in &labels {
            present[l as usize] = true;
        }
        if present.iter().any(|p| !p) {
            return Err(SegmentError::Degenerate("labels are not a contiguous range from 0"));
        }
        Ok(Self { width, height, labels })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn num_labels(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| *m as usize + 1)
    }

    pub fn is_binary(&self) -> bool {
        self.num_labels() <= 2
    }

    /// P5 PGM with labels spread evenly over `0..=255` (binary masks become
    /// `{0, 255}`).
    pub fn to_pgm(&self) -> Vec<u8> {
        let top = (self.num_labels().max(2) - 1) as f64;
        let raster = self.labels.iter().map(|&l| (f64::from(l) * 255.0 / top).round() as u8);
        write_pgm_bytes(self.width, self.height, raster)
    }

    /// Reads a reference mask: every distinct gray level becomes one label,
    /// numbered in ascending gray order.
    pub fn from_image(image: &GrayImage) -> Self {
        let mut levels: Vec<u8> = image.pixels().iter().map(|v| (v * 255.0).round() as u8).collect();
        let mut distinct = levels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = levels
            .drain(..)
            .map(|g| distinct.binary_search(&g).expect("level present") as u32)
            .collect();
        Self { width: image.width(), height: image.height(), labels }
    }

    /// `row,col,label` lines under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i / self.width, i % self.width, l);
        }
        out
    }
}

/// Something with a value per pixel that can be thresholded.
pub trait ValueGrid {
    fn dims(&self) -> (usize, usize);
    fn values(&self) -> &[f64];
    /// Pixels that are not valid are forced to label 0.
    fn valid(&self, _index: usize) -> bool {
        true
    }
}

impl ValueGrid for GrayImage {
    fn dims(&self) -> (usize, usize) {
        GrayImage::dims(self)
    }

    fn values(&self) -> &[f64] {
        self.pixels()
    }
}

impl ValueGrid for FrequencyMap {
    fn dims(&self) -> (usize, usize) {
        FrequencyMap::dims(self)
    }

    fn values(&self) -> &[f64] {
        self.freqs()
    }

    fn valid(&self, index: usize) -> bool {
        self.flags()[index].oscillates()
    }
}

/// Otsu's threshold over a `bins`-bin histogram spanning `[min, max]`.
///
/// Candidate thresholds are the interior bin edges `lo + k * w`,
/// `k = 1..bins`; class 0 holds bins `0..k`. Class means use bin centres.
/// The edge maximising `w0 * w1 * (mu0 - mu1)^2` wins, ties going to the
/// lowest edge.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64, SegmentError> {
    if bins < 2 {
        return Err(SegmentError::Degenerate("otsu needs at least two bins"));
    }
    let (lo, hi) = min_max(values).ok_or(SegmentError::Degenerate("no values"))?;
    if lo == hi {
        return Err(SegmentError::Degenerate("all values equal"));
    }
    let counts = histogram(values, lo, hi, bins);
    let width = (hi - lo) / bins as f64;
    let k = otsu_edge(&counts);
    Ok(lo + k as f64 * width)
}

/// Index `k` (1..bins) of the winning edge for a histogram.
pub(crate) fn otsu_edge(counts: &[u64]) -> usize {
    let total: f64 = counts.iter().sum::<u64>() as f64;
    let sum_all: f64 = counts.iter().enumerate().map(|(i, &c)| (i as f64 + 0.5) * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 1usize);
    for k in 1..counts.len() {
        let c = counts[k - 1] as f64;
        w0 += c;
        sum0 += (k as f64 - 0.5) * c;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
        if between > best.0 {
            best = (between, k);
        }
    }
    best.1
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        counts[bin_index(v, lo, hi, bins)] += 1;
    }
    counts
}

fn min_max(values: &[f64]) -> Option<(f64, f64)> {
    values.iter().fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Label 1 where the value exceeds `threshold`, else 0. Invalid pixels
/// (non-oscillating nodes) get 0.
pub fn segment_binary<G: ValueGrid + ?Sized>(grid: &G, threshold: f64) -> LabelMap {
    let (width, height) = grid.dims();
    let mut labels: Vec<u32> =
        grid.values().iter().enumerate().map(|(i, &v)| u32::from(grid.valid(i) && v > threshold)).collect();
    // An all-ones map is relabelled so labels stay contiguous from 0.
    if labels.iter().all(|&l| l == 1) {
        labels.iter_mut().for_each(|l| *l = 0);
    }
    LabelMap { width, height, labels }
}

/// Otsu threshold computed over the valid pixels of `grid`, then applied.
pub fn segment_otsu<G: ValueGrid + ?Sized>(grid: &G, bins: usize) -> Result<(f64, LabelMap), SegmentError> {
    let valid: Vec<f64> =
        grid.values().iter().enumerate().filter(|(i, _)| grid.valid(*i)).map(|(_, v)| *v).collect();
    let t = otsu_threshold(&valid, bins)?;
    Ok((t, segment_binary(grid, t)))
}

/// Splits the sorted distinct frequencies of oscillating nodes wherever
/// consecutive values differ by more than `gap_threshold`. Clusters are
/// numbered in ascending frequency; non-oscillating nodes join cluster 0.
pub fn cluster_by_gap(map: &FrequencyMap, gap_threshold: f64) -> Result<LabelMap, SegmentError> {
    if !(gap_threshold > 0.0) {
        return Err(SegmentError::Degenerate("gap threshold must be > 0"));
    }
    let mut distinct: Vec<f64> = map.freqs().iter().zip(map.flags()).filter(|(_, s)| s.oscillates()).map(|(f, _)| *f).collect();
    if distinct.is_empty() {
        return Err(SegmentError::Degenerate("no oscillating nodes"));
    }
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut cluster_of = Vec::with_capacity(distinct.len());
    let mut cluster = 0u32;
    for (i, f) in distinct.iter().enumerate() {
        if i > 0 && f - distinct[i - 1] > gap_threshold {
            cluster += 1;
        }
        cluster_of.push(cluster);
    }
    let labels = map
        .freqs()
        .iter()
        .zip(map.flags())
        .map(|(f, s)| match s {
            NodeStatus::NonOscillating => 0,
            _ => cluster_of[distinct.binary_search_by(|d| d.total_cmp(f)).expect("frequency present")],
        })
        .collect();
    let (width, height) = map.dims();
    Ok(LabelMap { width, height, labels })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentationMetrics {
    pub mislabeled_fraction: f64,
    pub pixel_count: usize,
}

/// Fraction of pixels labelled differently from `reference`.
///
/// Binary pairs are compared up to polarity (the cheaper of identity and
/// swap). When either map has more than two labels, each result label is
/// mapped to the reference label it overlaps most.
pub fn mislabel_rate(result: &LabelMap, reference: &LabelMap) -> Result<SegmentationMetrics, SegmentError> {
    check_dims(result, reference)?;
    let n = result.labels.len();
    let mislabeled = if result.is_binary() && reference.is_binary() {
        let differ = result.labels.iter().zip(&reference.labels).filter(|(a, b)| a != b).count();
        differ.min(n - differ)
    } else {
        let table = contingency(result, reference);
        let agree: u64 = table.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
        n - agree as usize
    };
    Ok(SegmentationMetrics { mislabeled_fraction: mislabeled as f64 / n as f64, pixel_count: n })
}

/// Best one-to-one agreement between result labels and reference regions:
/// the maximum, over injective assignments of reference regions to distinct
/// result labels, of the fraction of pixels whose result label is the one
/// assigned to their region. Merging two regions into one label therefore
/// costs the smaller region entirely.
pub fn matched_accuracy(result: &LabelMap, reference: &LabelMap) -> Result<f64, SegmentError> {
    check_dims(result, reference)?;
    let k = reference.num_labels();
    if k > 16 {
        return Err(SegmentError::Degenerate("matched accuracy supports at most 16 reference regions"));
    }
    let table = contingency(result, reference);
    // dp[mask] = best agreement using a prefix of result labels, with
    // `mask` the set of reference regions already claimed.
    let mut dp = vec![0u64; 1 << k];
    for row in &table {
        let mut next = dp.clone();
        for mask in 0..(1usize << k) {
            for (region, &count) in row.iter().enumerate() {
                if mask & (1 << region) == 0 {
                    let m = mask | (1 << region);
                    next[m] = next[m].max(dp[mask] + count);
                }
            }
        }
        dp = next;
    }
    Ok(*dp.iter().max().expect("nonempty") as f64 / result.labels.len() as f64)
}

fn contingency(result: &LabelMap, reference: &LabelMap) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; reference.num_labels()]; result.num_labels()];
    for (&a, &b) in result.labels.iter().zip(&reference.labels) {
        table[a as usize][b as usize] += 1;
    }
    table
}

fn check_dims(a: &LabelMap, b: &LabelMap) -> Result<(), SegmentError> {
    if a.dims() != b.dims() {
        return Err(SegmentError::DimensionMismatch { left: a.dims(), right: b.dims() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(freqs: Vec<f64>) -> FrequencyMap {
        let n = freqs.len();
        FrequencyMap::new(n, 1, freqs, vec![NodeStatus::Ok; n]).unwrap()
    }

    /// Brute force over every edge, computing each class's weight and mean
    /// from scratch.
    fn oracle_between(values: &[f64], bins: usize) -> f64 {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let idx: Vec<usize> = values.iter().map(|&v| bin_index(v, lo, hi, bins)).collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for k in 1..bins {
            let (c0, c1): (Vec<f64>, Vec<f64>) = {
                let a: Vec<f64> = idx.iter().filter(|&&i| i < k).map(|&i| i as f64 + 0.5).collect();
                let b: Vec<f64> = idx.iter().filter(|&&i| i >= k).map(|&i| i as f64 + 0.5).collect();
                (a, b)
            };
            if c0.is_empty() || c1.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let (w0, w1) = (c0.len() as f64 / n, c1.len() as f64 / n);
            let m0 = c0.iter().sum::<f64>() / c0.len() as f64;
            let m1 = c1.iter().sum::<f64>() / c1.len() as f64;
            let between = w0 * w1 * (m0 - m1).powi(2);
            if between > best.0 {
                best = (between, k);
            }
        }
        lo + best.1 as f64 * width
    }

    /// Same brute force, minimising the within-class variance instead.
    fn oracle_within(values: &[f64], bins: usize) -> f64 {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let centres: Vec<f64> = values.iter().map(|&v| bin_index(v, lo, hi, bins) as f64 + 0.5).collect();
        let sse = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, 0);
        for k in 1..bins {
            let a: Vec<f64> = centres.iter().copied().filter(|&c| c < k as f64).collect();
            let b: Vec<f64> = centres.iter().copied().filter(|&c| c > k as f64).collect();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let within = sse(&a) + sse(&b);
            if within < best.0 {
                best = (within, k);
            }
        }
        lo + best.1 as f64 * width
    }

    #[test]
    fn otsu_bimodal_examples() {
        let mut values = vec![0.2; 50];
        values.extend(vec![0.8; 50]);
        let t = otsu_threshold(&values, 256).unwrap();
        assert!(t > 0.2 && t < 0.8);
        let t = otsu_threshold(&[0.2, 0.8], 2).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        assert_eq!(otsu_threshold(&[0.4; 5], 256), Err(SegmentError::Degenerate("all values equal")));
    }

    #[test]
    fn otsu_matches_oracles_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(2..200);
            let bins = rng.gen_range(2..64);
            let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(rng.gen_range(1..4))).collect();
            if values.iter().all(|v| *v == values[0]) {
                continue;
            }
            let t = otsu_threshold(&values, bins).unwrap();
            assert_eq!(t, oracle_between(&values, bins));
            assert_eq!(t, oracle_within(&values, bins));
        }
    }

    #[test]
    fn binary_segmentation() {
        let m = map(vec![0.1, 0.2, 0.3]);
        assert_eq!(segment_binary(&m, 0.5).labels(), &[0, 0, 0]);
        let bimodal = map(vec![0.3, 0.31, 0.5, 0.52, 0.3, 0.51]);
        let (_, labels) = segment_otsu(&bimodal, 256).unwrap();
        assert_eq!(labels.labels(), &[0, 0, 1, 1, 0, 1]);
        let silent = FrequencyMap::new(2, 1, vec![0.0, 0.6], vec![NodeStatus::NonOscillating, NodeStatus::Ok]).unwrap();
        assert_eq!(segment_binary(&silent, -1.0).labels(), &[0, 1]);
    }

    #[test]
    fn gap_clustering_examples() {
        let two = map([vec![0.3; 5], vec![0.5; 5]].concat());
        let labels = cluster_by_gap(&two, 0.025).unwrap();
        assert_eq!(labels.num_labels(), 2);
        assert_eq!(labels.labels()[0], 0);
        assert_eq!(labels.labels()[9], 1);
        let close = map(vec![0.400, 0.405, 0.409, 0.401]);
        assert_eq!(cluster_by_gap(&close, 0.025).unwrap().num_labels(), 1);
        let silent = FrequencyMap::new(1, 1, vec![0.0], vec![NodeStatus::NonOscillating]).unwrap();
        assert!(cluster_by_gap(&silent, 0.025).is_err());
        assert!(cluster_by_gap(&two, 0.0).is_err());
    }

    #[test]
    fn mislabel_examples() {
        let a = LabelMap::new(32, 32, (0..1024).map(|i| u32::from(i % 32 >= 16)).collect()).unwrap();
        assert_eq!(mislabel_rate(&a, &a).unwrap().mislabeled_fraction, 0.0);
        let flipped = LabelMap::new(32, 32, a.labels().iter().map(|l| 1 - l).collect()).unwrap();
        assert_eq!(mislabel_rate(&a, &flipped).unwrap().mislabeled_fraction, 0.0);
        let mut one = a.labels().to_vec();
        one[5] = 1;
        let one = LabelMap::new(32, 32, one).unwrap();
        let m = mislabel_rate(&one, &a).unwrap();
        assert!((m.mislabeled_fraction - 1.0 / 1024.0).abs() < 1e-15);
        assert_eq!(m.pixel_count, 1024);
        let small = LabelMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        assert!(matches!(mislabel_rate(&small, &a), Err(SegmentError::DimensionMismatch { .. })));
    }

    #[test]
    fn matched_accuracy_penalises_merges() {
        let reference = LabelMap::new(4, 1, vec![0, 1, 2, 3]).unwrap();
        let perfect = LabelMap::new(4, 1, vec![2, 0, 3, 1]).unwrap();
        assert_eq!(matched_accuracy(&perfect, &reference).unwrap(), 1.0);
        let merged = LabelMap::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(matched_accuracy(&merged, &reference).unwrap(), 0.5);
    }

    #[test]
    fn label_map_contiguity_and_io() {
        assert!(LabelMap::new(3, 1, vec![0, 2, 2]).is_err());
        let m = LabelMap::new(3, 1, vec![0, 2, 1]).unwrap();
        assert_eq!(m.to_pgm(), b"P5\n3 1\n255\n\x00\xff\x80".to_vec());
        assert_eq!(m.to_csv(), "row,col,label\n0,0,0\n0,1,2\n0,2,1\n");
        let img = crate::image::read_pgm(&m.to_pgm()).unwrap();
        assert_eq!(LabelMap::from_image(&img), m);
    }

    fn dyadic_values() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..1024, 2..300).prop_map(|v| v.into_iter().map(|x| f64::from(x) / 1024.0).collect())
    }

    proptest! {
        #[test]
        fn otsu_affine_covariant(values in dyadic_values(), scale_pow in -3i32..4, offset in 0i32..8) {
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let scale = 2f64.powi(scale_pow);
            let moved: Vec<f64> = values.iter().map(|v| v * scale + f64::from(offset)).collect();
            let t = otsu_threshold(&values, 256).unwrap();
            let tm = otsu_threshold(&moved, 256).unwrap();
            prop_assert_eq!(tm, t * scale + f64::from(offset));
            let a = segment_binary(&map(values.clone()), t);
            let b = segment_binary(&map(moved), tm);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn gap_cluster_extremes(freqs in prop::collection::vec(0.2f64..0.6, 1..60)) {
            let m = map(freqs.clone());
            prop_assert_eq!(cluster_by_gap(&m, 1.0).unwrap().num_labels(), 1);
            let mut d = freqs.clone();
            d.sort_by(f64::total_cmp);
            d.dedup();
            let min_gap = d.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            if min_gap.is_finite() && min_gap > 1e-12 {
                prop_assert_eq!(cluster_by_gap(&m, min_gap / 2.0).unwrap().num_labels(), d.len());
            }
        }

        #[test]
        fn mislabel_symmetric_and_zero_iff_equal(a in prop::collection::vec(0u32..2, 16), b in prop::collection::vec(0u32..2, 16)) {
            let norm = |v: Vec<u32>| if v.iter().all(|&x| x == 1) { vec![0; 16] } else { v };
            let (a, b) = (norm(a), norm(b));
            let (ma, mb) = (LabelMap::new(4, 4, a.clone()).unwrap(), LabelMap::new(4, 4, b.clone()).unwrap());
            let ab = mislabel_rate(&ma, &mb).unwrap().mislabeled_fraction;
            let ba = mislabel_rate(&mb, &ma).unwrap().mislabeled_fraction;
            prop_assert_eq!(ab, ba);
            let same_up_to_polarity = a == b || a.iter().zip(&b).all(|(x, y)| x != y);
            prop_assert_eq!(ab == 0.0, same_up_to_polarity);
        }
    }
}
