//! Simulated object detector: perturbs ground-truth boxes with a seeded
//! parametric noise model (misses, jitter, label confusion, false positives).

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::panocam::{BoundingBox2D, MIN_EXTENT, VIEW_COUNT};
use crate::rng::{combine, seeded2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct NoiseModel {
    pub centroid_jitter_std: f64,
    pub size_jitter_std: f64,
    pub miss_rate: f64,
    /// Expected number of spurious boxes per view.
    pub false_positive_rate: f64,
    pub label_confusion_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            centroid_jitter_std: 0.02,
            size_jitter_std: 0.02,
            miss_rate: 0.1,
            false_positive_rate: 0.2,
            label_confusion_rate: 0.05,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            centroid_jitter_std: 0.0,
            size_jitter_std: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            label_confusion_rate: 0.0,
            seed: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |r: f64| (0.0..=1.0).contains(&r);
        self.centroid_jitter_std >= 0.0
            && self.size_jitter_std >= 0.0
            && unit(self.miss_rate)
            && unit(self.label_confusion_rate)
            && self.false_positive_rate >= 0.0
            && self.false_positive_rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox2D,
    /// Reported class id; may differ from the true class.
    pub label: u32,
    pub confidence: f64,
    /// `None` for false positives.
    pub source_object_id: Option<u32>,
}

impl Detection {
    /// A perfect detection of a ground-truth box.
    pub fn exact(bbox: BoundingBox2D) -> Self {
        Self { bbox, label: bbox.class, confidence: 1.0, source_object_id: bbox.object_id }
    }
}

/// Draw key for one sweep: the same `(episode, timestep)` always yields the
/// same detections.
pub fn draw_key(episode_id: u64, timestep: u32) -> u64 {
    combine(episode_id, u64::from(timestep))
}

fn clamp_box(b: &mut BoundingBox2D) {
    let lo = MIN_EXTENT / 2.0;
    b.c_x = b.c_x.clamp(lo, 1.0 - lo);
    b.c_y = b.c_y.clamp(lo, 1.0 - lo);
    b.w = b.w.clamp(MIN_EXTENT, 1.0).min(2.0 * b.c_x.min(1.0 - b.c_x));
    b.h = b.h.clamp(MIN_EXTENT, 1.0).min(2.0 * b.c_y.min(1.0 - b.c_y));
}

/// Runs the noisy detector over one panoramic sweep of ground-truth boxes.
///
/// True detections come first in input order, then false positives by view.
pub fn detect(ground_truth: &[BoundingBox2D], noise: &NoiseModel, key: u64, class_count: u32) -> Vec<Detection> {
    let mut rng = seeded2(noise.seed, key);
    let centroid = Normal::new(0.0, noise.centroid_jitter_std.max(0.0)).expect("finite std");
    let size = Normal::new(0.0, noise.size_jitter_std.max(0.0)).expect("finite std");
    let jitter = noise.centroid_jitter_std > 0.0 || noise.size_jitter_std > 0.0;
    let mut out = Vec::with_capacity(ground_truth.len());
    for gt in ground_truth {
        // fixed number of draws per box keeps later boxes independent of
        // earlier outcomes
        let miss = rng.random::<f64>() < noise.miss_rate;
        let d = [centroid.sample(&mut rng), centroid.sample(&mut rng), size.sample(&mut rng), size.sample(&mut rng)];
        let confused = rng.random::<f64>() < noise.label_confusion_rate && class_count > 1;
        let other = rng.random_range(0..class_count.max(2) - 1);
        if miss {
            continue;
        }
        let mut bbox = *gt;
        let mut confidence = 1.0;
        if jitter {
            bbox.c_x += d[0];
            bbox.c_y += d[1];
            bbox.w += d[2];
            bbox.h += d[3];
            clamp_box(&mut bbox);
            let (ex, ey) = (bbox.c_x - gt.c_x, bbox.c_y - gt.c_y);
            let err2 = ex * ex + ey * ey;
            confidence = libm::exp(-err2 / (2.0 * 0.05 * 0.05)).max(0.05);
        }
        let label = if confused {
            confidence *= 0.6;
            if other >= gt.class { other + 1 } else { other }
        } else {
            gt.class
        };
        out.push(Detection { bbox, label, confidence, source_object_id: gt.object_id });
    }
    if noise.false_positive_rate > 0.0 {
        let poisson = Poisson::new(noise.false_positive_rate).expect("positive rate");
        for p in 0..VIEW_COUNT {
            let n = poisson.sample(&mut rng) as u64;
            for _ in 0..n {
                let mut bbox = BoundingBox2D {
                    p,
                    c_x: rng.random::<f64>(),
                    c_y: rng.random::<f64>(),
                    w: rng.random_range(0.02..0.3),
                    h: rng.random_range(0.02..0.3),
                    object_id: None,
                    class: rng.random_range(0..class_count.max(1)),
                };
                clamp_box(&mut bbox);
                let confidence = rng.random_range(0.05..0.5);
                out.push(Detection { bbox, label: bbox.class, confidence, source_object_id: None });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn boxes(n: usize) -> Vec<BoundingBox2D> {
        (0..n)
            .map(|i| BoundingBox2D {
                p: (i % 8) as u8,
                c_x: 0.1 + 0.8 * ((i * 37 % 100) as f64 / 100.0),
                c_y: 0.2 + 0.6 * ((i * 53 % 100) as f64 / 100.0),
                w: 0.1,
                h: 0.05,
                object_id: Some(i as u32),
                class: (i % 32) as u32,
            })
            .collect()
    }

    #[test]
    fn zero_model_is_identity() {
        let gt = boxes(50);
        let out = detect(&gt, &NoiseModel::zero(), 17, 32);
        assert_eq!(out.len(), gt.len());
        for (d, g) in out.iter().zip(&gt) {
            assert_eq!(d.bbox, *g);
            assert_eq!(d.label, g.class);
            assert_eq!(d.confidence, 1.0);
            assert_eq!(d.source_object_id, g.object_id);
        }
    }

    #[test]
    fn full_miss_no_false_positives_is_empty() {
        let noise = NoiseModel { miss_rate: 1.0, false_positive_rate: 0.0, ..NoiseModel::default() };
        assert!(detect(&boxes(100), &noise, 3, 32).is_empty());
    }

    #[test]
    fn miss_rate_within_binomial_interval() {
        let noise = NoiseModel { miss_rate: 0.3, false_positive_rate: 0.0, ..NoiseModel::default() };
        let gt = boxes(100);
        let mut kept = 0usize;
        for key in 0..100 {
            kept += detect(&gt, &noise, key, 32).len();
        }
        let n = 10_000.0;
        let dropped = (n - kept as f64) / n;
        let sigma = libm::sqrt(0.3 * 0.7 / n);
        assert!((dropped - 0.3).abs() < 3.0 * sigma, "drop fraction {dropped}");
    }

    #[test]
    fn confused_labels_differ() {
        let noise = NoiseModel { label_confusion_rate: 1.0, ..NoiseModel::zero() };
        let gt = boxes(64);
        for d in detect(&gt, &noise, 9, 32) {
            let src = &gt[d.source_object_id.unwrap() as usize];
            assert_ne!(d.label, src.class);
            assert!(d.label < 32);
        }
    }

    proptest! {
        #[test]
        fn deterministic_and_inside(seed in 0u64..1000, key in 0u64..1000, n in 0usize..40) {
            let noise = NoiseModel { seed, centroid_jitter_std: 0.2, size_jitter_std: 0.2, false_positive_rate: 1.5, ..NoiseModel::default() };
            let gt = boxes(n);
            let a = detect(&gt, &noise, key, 32);
            prop_assert_eq!(&a, &detect(&gt, &noise, key, 32));
            for d in &a {
                prop_assert!(d.bbox.is_valid(), "{:?}", d.bbox);
                prop_assert!(d.confidence > 0.0 && d.confidence <= 1.0);
            }
            // the zero model after any model changes nothing
            let again: Vec<BoundingBox2D> = a.iter().map(|d| d.bbox).collect();
            let z = detect(&again, &NoiseModel::zero(), key, 32);
            let zb: Vec<BoundingBox2D> = z.iter().map(|d| d.bbox).collect();
            prop_assert_eq!(zb, again);
        }
    }
}
