use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrameSampling {
    /// `floor(i * total / horizon)`.
    #[default]
    Uniform,
    /// Uniform grid shifted by one random sub-stride offset per clip.
    RandomOffset,
}

/// Picks `horizon` frame indices spread over a clip of `total_frames`.
///
/// When the clip is at least `horizon` long the indices are strictly
/// increasing. Shorter clips repeat indices (still sorted) so the output
/// length is always `horizon`. Zero arguments are treated as one.
pub fn sample_frames(total_frames: usize, horizon: usize, seed: u64, mode: FrameSampling) -> Vec<usize> {
    let (total, horizon) = (total_frames.max(1), horizon.max(1));
    let offset = match mode {
        FrameSampling::Uniform => 0.0,
        FrameSampling::RandomOffset => seed::rng(seed, &[]).random::<f64>(),
    };
    let stride = total as f64 / horizon as f64;
    (0..horizon)
        .map(|i| (((i as f64 + offset) * stride).floor() as usize).min(total - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // independent linspace(0, total, horizon, endpoint=false), floored
    fn linspace_floor(total: usize, horizon: usize) -> Vec<usize> {
        let step = total as f64 / horizon as f64;
        let mut out = Vec::new();
        let mut acc = 0.0;
        for _ in 0..horizon {
            out.push(acc as usize);
            acc += step;
        }
        out
    }

    #[test]
    fn uniform_matches_linspace() {
        assert_eq!(sample_frames(16, 8, 0, FrameSampling::Uniform), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(sample_frames(16, 8, 0, FrameSampling::Uniform), linspace_floor(16, 8));
        assert_eq!(sample_frames(8, 8, 3, FrameSampling::Uniform), (0..8).collect::<Vec<_>>());
        for (total, h) in [(30, 8), (9, 8), (100, 7)] {
            assert_eq!(sample_frames(total, h, 0, FrameSampling::Uniform), linspace_floor(total, h));
        }
    }

    #[test]
    fn short_clips_repeat_indices() {
        let idx = sample_frames(4, 8, 0, FrameSampling::Uniform);
        assert_eq!(idx, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn random_offset_is_seeded_and_increasing() {
        for seed in 0..50 {
            let a = sample_frames(37, 8, seed, FrameSampling::RandomOffset);
            assert_eq!(a, sample_frames(37, 8, seed, FrameSampling::RandomOffset));
            assert!(a.windows(2).all(|w| w[0] < w[1]));
            assert!(*a.last().unwrap() < 37);
        }
    }

    proptest::proptest! {
        #[test]
        fn always_sorted_with_horizon_entries(total in 0usize..200, h in 0usize..40, seed in 0u64..1000, random in proptest::bool::ANY) {
            let mode = if random { FrameSampling::RandomOffset } else { FrameSampling::Uniform };
            let idx = sample_frames(total, h, seed, mode);
            proptest::prop_assert_eq!(idx.len(), h.max(1));
            proptest::prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            if total >= h {
                proptest::prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
