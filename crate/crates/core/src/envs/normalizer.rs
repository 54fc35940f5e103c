use serde::{Deserialize, Serialize};

/// Smallest divisor used when scaling observations.
pub const MIN_SCALE: f64 = 1e-8;

/// Running observation statistics with a shared scale: observations are
/// centred per dimension and divided by the largest per-dimension standard
/// deviation, then clipped to `[-clip_bound, clip_bound]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub running_mean: Vec<f64>,
    /// Population variance per dimension.
    pub running_var: Vec<f64>,
    pub count: u64,
    pub clip_bound: f64,
    // Welford sum of squared deviations.
    m2: Vec<f64>,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        ObsNormalizer {
            running_mean: vec![0.0; dim],
            running_var: vec![0.0; dim],
            count: 0,
            clip_bound: 5.0,
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    /// Welford update with one observation.
    pub fn update(&mut self, state: &[f64]) {
        assert_eq!(state.len(), self.dim(), "observation dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        for (i, &x) in state.iter().enumerate() {
            let delta = x - self.running_mean[i];
            self.running_mean[i] += delta / n;
            self.m2[i] += delta * (x - self.running_mean[i]);
            self.running_var[i] = (self.m2[i] / n).max(0.0);
        }
    }

    pub fn scale(&self) -> f64 {
        self.running_var
            .iter()
            .map(|v| v.sqrt())
            .fold(0.0, f64::max)
            .max(MIN_SCALE)
    }

    /// Normalizes with frozen statistics.
    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return state.iter().map(|x| x.clamp(-self.clip_bound, self.clip_bound)).collect();
        }
        let scale = self.scale();
        state
            .iter()
            .zip(&self.running_mean)
            .map(|(x, m)| ((x - m) / scale).clamp(-self.clip_bound, self.clip_bound))
            .collect()
    }

    /// Training-time normalization: update with `state`, then normalize it.
    pub fn normalize_obs(&mut self, state: &[f64]) -> Vec<f64> {
        self.update(state);
        self.apply(state)
    }
}
