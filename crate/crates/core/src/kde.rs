//! Background suppression by Gaussian kernel density over point motion.
//!
//! Most tracked points lie on the background and share one motion, so their
//! motion features pile up in a dense cluster. Scoring every point by the
//! kernel density of its feature and keeping only the sparse tail leaves
//! mostly the independently moving foreground.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::{TrackError, TrackSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdeError {
    #[error("motion features need at least 2 frames, got {0}")]
    InsufficientFrames(usize),
    #[error("density estimation needs at least 2 points, got {0}")]
    InsufficientPoints(usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("quantile must lie strictly between 0 and 1, got {0}")]
    Quantile(f64),
    #[error("feature {0} is not finite")]
    NonFinite(usize),
    #[error("features have mixed dimensions")]
    Dimension,
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MotionFeature {
    /// `(p_last - p_first, mean |p_{t+1} - p_t|)` per axis: 4 values.
    /// The step magnitude keeps cyclic motion from looking static.
    #[default]
    DisplacementAndStep,
    /// `p_last - p_first` only.
    Displacement,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum Bandwidth {
    /// Scott's rule on the mean per-dimension standard deviation,
    /// `h = sigma * n^(-1/(d+4))`, floored at [`MIN_SCOTT_BANDWIDTH`].
    Scott,
    Fixed(f64),
}

/// Floor for the rule-of-thumb bandwidth, in normalized coordinate units.
/// Clusters that agree to within floating-point noise then score as exact ties.
pub const MIN_SCOTT_BANDWIDTH: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    /// Points whose density is strictly below this density quantile survive.
    pub quantile: f64,
    pub feature: MotionFeature,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::Scott, quantile: 0.5, feature: MotionFeature::DisplacementAndStep }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<(), KdeError> {
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(KdeError::Bandwidth(h));
            }
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(KdeError::Quantile(self.quantile));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionVector {
    pub point: usize,
    pub features: Vec<f64>,
}

/// One motion feature per point of a normalized track set.
pub fn motion_vectors(ts: &TrackSet, feature: MotionFeature) -> Result<Vec<MotionVector>, KdeError> {
    if !ts.is_normalized() {
        return Err(TrackError::ExpectedNormalized.into());
    }
    let t = ts.num_frames();
    if t < 2 {
        return Err(KdeError::InsufficientFrames(t));
    }
    ts.tracks()
        .iter()
        .enumerate()
        .map(|(point, track)| {
            let c = track.coords();
            let mut features = vec![c[t - 1].x - c[0].x, c[t - 1].y - c[0].y];
            if feature == MotionFeature::DisplacementAndStep {
                let (mut sx, mut sy) = (0.0, 0.0);
                for w in c.windows(2) {
                    sx += (w[1].x - w[0].x).abs();
                    sy += (w[1].y - w[0].y).abs();
                }
                let steps = (t - 1) as f64;
                features.extend([sx / steps, sy / steps]);
            }
            if features.iter().any(|v| !v.is_finite()) {
                return Err(KdeError::NonFinite(point));
            }
            Ok(MotionVector { point, features })
        })
        .collect()
}

/// Scott's rule bandwidth for `features`.
pub fn scott_bandwidth(features: &[Vec<f64>]) -> f64 {
    let n = features.len();
    let d = features.first().map_or(1, Vec::len).max(1);
    if n < 2 {
        return MIN_SCOTT_BANDWIDTH.max(1.0);
    }
    let mean_std = (0..d)
        .map(|k| {
            let mean = features.iter().map(|f| f[k]).sum::<f64>() / n as f64;
            let var = features.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            var.sqrt()
        })
        .sum::<f64>()
        / d as f64;
    (mean_std * (n as f64).powf(-1.0 / (d as f64 + 4.0))).max(MIN_SCOTT_BANDWIDTH)
}

/// Leave-in Gaussian KDE evaluated at every sample:
/// `density_i = (1/P) sum_j N(f_i - f_j; 0, h^2 I)`, summed over `j` in order.
pub fn kde_density(features: &[Vec<f64>], bandwidth: f64) -> Result<Vec<f64>, KdeError> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(KdeError::Bandwidth(bandwidth));
    }
    let n = features.len();
    if n < 2 {
        return Err(KdeError::InsufficientPoints(n));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(KdeError::Dimension);
    }
    let norm = (2.0 * std::f64::consts::PI * bandwidth * bandwidth).powf(-(d as f64) / 2.0) / n as f64;
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(features
        .iter()
        .map(|fi| {
            let mut sum = 0.0;
            for fj in features {
                let dist2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
                sum += (-dist2 * inv_two_h2).exp();
            }
            sum * norm
        })
        .collect())
}

/// Linear-interpolation quantile (type 7) of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos - pos.floor());
    if lo + 1 < sorted.len() {
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
    } else {
        sorted[lo]
    }
}

/// Indices (ascending) of the points that survive density filtering.
///
/// A point survives when its density is strictly below the `q`-quantile of all
/// densities. The lowest-density point (lowest index on ties) always survives.
pub fn retained_indices(densities: &[f64], q: f64) -> Vec<usize> {
    let threshold = quantile(densities, q);
    let argmin = densities
        .iter()
        .enumerate()
        .fold(0, |best, (i, &d)| if d < densities[best] { i } else { best });
    (0..densities.len()).filter(|&i| i == argmin || densities[i] < threshold).collect()
}

/// Result of [`filter_background`].
#[derive(Clone, Debug)]
pub struct FilterOutcome {
    pub tracks: TrackSet,
    /// Indices into the input track set, ascending.
    pub retained: Vec<usize>,
    pub densities: Vec<f64>,
    pub bandwidth: f64,
}

/// Removes the high-density (background) motion cluster from a normalized
/// track set, keeping point order and identity.
pub fn filter_background(ts: &TrackSet, config: &KdeConfig) -> Result<FilterOutcome, KdeError> {
    config.validate()?;
    if ts.len() < 2 {
        return Err(KdeError::InsufficientPoints(ts.len()));
    }
    let features: Vec<Vec<f64>> = motion_vectors(ts, config.feature)?.into_iter().map(|m| m.features).collect();
    let bandwidth = match config.bandwidth {
        Bandwidth::Scott => scott_bandwidth(&features),
        Bandwidth::Fixed(h) => h,
    };
    let densities = kde_density(&features, bandwidth)?;
    let retained = retained_indices(&densities, config.quantile);
    Ok(FilterOutcome { tracks: ts.select(&retained), retained, densities, bandwidth })
}
