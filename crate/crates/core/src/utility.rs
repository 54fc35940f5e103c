//! Utility functions: per-step reward reshaping, or a distortion of the
//! quantile measure evaluated through its derivative weights.

use serde::{Deserialize, Serialize};

use crate::critic::{QuantileReturn, Quantiles};
use crate::error::{PacerError, Result};

/// Levels exercised by the risk experiments.
pub const CVAR_LEVELS: [f64; 5] = [0.25, 0.5, 0.75, 0.9, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum RewardReshape {
    Identity,
    Tanh,
    Scale { factor: f64 },
}

impl RewardReshape {
    pub fn apply(self, r: f64) -> f64 {
        match self {
            RewardReshape::Identity => r,
            RewardReshape::Tanh => r.tanh(),
            RewardReshape::Scale { factor } => factor * r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distortion", rename_all = "snake_case")]
pub enum Distortion {
    Identity,
    /// Mean of the worst `level` fraction of outcomes.
    Cvar { level: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityFunction {
    RewardReshape { reshape: RewardReshape },
    Distortion { distortion: Distortion },
}

impl Default for UtilityFunction {
    fn default() -> Self {
        UtilityFunction::Distortion {
            distortion: Distortion::Identity,
        }
    }
}

impl UtilityFunction {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn cvar(level: f64) -> Result<Self> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(PacerError::config(format!("cvar level must lie in (0, 1], got {level}")));
        }
        Ok(UtilityFunction::Distortion {
            distortion: Distortion::Cvar { level },
        })
    }

    pub fn reshape(map: RewardReshape) -> Self {
        UtilityFunction::RewardReshape { reshape: map }
    }

    /// `psi(r)` for reshape utilities; identity for distortions.
    pub fn reshape_reward(&self, r: f64) -> f64 {
        match self {
            UtilityFunction::RewardReshape { reshape } => reshape.apply(r),
            UtilityFunction::Distortion { .. } => r,
        }
    }

    /// `psi(tau)`; reshape utilities act on the undistorted measure.
    pub fn distortion(&self, tau: f64) -> f64 {
        match self {
            UtilityFunction::Distortion {
                distortion: Distortion::Cvar { level },
            } => (tau / level).min(1.0),
            _ => tau,
        }
    }

    /// `psi'(tau)`; for CVaR this is `1{tau <= level} / level`.
    pub fn distortion_derivative(&self, tau: f64) -> f64 {
        match self {
            UtilityFunction::Distortion {
                distortion: Distortion::Cvar { level },
            } => {
                if tau <= *level {
                    1.0 / level
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }

    pub fn is_distortion(&self) -> bool {
        matches!(self, UtilityFunction::Distortion { .. })
    }
}

/// Per-atom weights `(tau_{i+1} - tau_i) * psi'(tau_hat_i)`.
pub fn distortion_weights(u: &UtilityFunction, q: &Quantiles) -> Vec<f64> {
    q.weights()
        .iter()
        .zip(q.tau_hats())
        .map(|(w, t)| w * u.distortion_derivative(*t))
        .collect()
}

/// Distorted expectation of a Dirac mixture.
pub fn distorted_value(u: &UtilityFunction, q: &QuantileReturn) -> f64 {
    distortion_weights(u, &q.quantiles)
        .iter()
        .zip(&q.atoms)
        .map(|(w, z)| w * z)
        .sum()
}

/// Exact distorted expectation of the step quantile function,
/// `sum_i (psi(tau_{i+1}) - psi(tau_i)) * z_i`. With ascending atoms and the
/// CVaR distortion this is the mean of the lowest `level` mass.
pub fn distorted_expectation(u: &UtilityFunction, q: &QuantileReturn) -> f64 {
    q.quantiles
        .taus()
        .windows(2)
        .zip(&q.atoms)
        .map(|(t, z)| (u.distortion(t[1]) - u.distortion(t[0])) * z)
        .sum()
}

/// Total distortion weight over a partition; approaches 1 on fine grids.
pub fn distortion_weight_check(u: &UtilityFunction, taus: &[f64]) -> Result<f64> {
    if !u.is_distortion() {
        return Err(PacerError::Usage("weight check applies to distortion utilities".into()));
    }
    let q = Quantiles::from_partition(taus.to_vec())?;
    // Sum runs of equal psi' as one telescoped interval so that the identity
    // distortion gives exactly tau_{K+1} - tau_0.
    let taus = q.taus();
    let mut total = 0.0;
    let mut run_start = 0;
    for i in 0..q.tau_hats().len() {
        let d = u.distortion_derivative(q.tau_hats()[i]);
        let last = i + 1 == q.tau_hats().len();
        if last || u.distortion_derivative(q.tau_hats()[i + 1]) != d {
            total += d * (taus[i + 1] - taus[run_start]);
            run_start = i + 1;
        }
    }
    Ok(total)
}

/// Checks `psi(0) = 0`, `psi(1) = 1` and monotonicity on a `1e-3` grid.
pub fn validate_distortion(u: &UtilityFunction) -> Result<()> {
    if !u.is_distortion() {
        return Ok(());
    }
    if u.distortion(0.0) != 0.0 || (u.distortion(1.0) - 1.0).abs() > 1e-12 {
        return Err(PacerError::config("distortion must map 0 to 0 and 1 to 1"));
    }
    let mut prev = 0.0;
    for k in 1..=1000 {
        let v = u.distortion(k as f64 * 1e-3);
        if v < prev {
            return Err(PacerError::config("distortion must be non-decreasing"));
        }
        prev = v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn even(n: usize) -> Vec<f64> {
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn reshape_examples() {
        assert_eq!(UtilityFunction::identity().reshape_reward(3.0), 3.0);
        assert_eq!(UtilityFunction::reshape(RewardReshape::Tanh).reshape_reward(0.0), 0.0);
        let scale = UtilityFunction::reshape(RewardReshape::Scale { factor: 0.1 });
        for r in [5.0, -10.0, 3.3] {
            assert_eq!(scale.reshape_reward(r), 0.1 * r);
        }
        // distortions leave rewards alone
        assert_eq!(UtilityFunction::cvar(0.25).unwrap().reshape_reward(-7.0), -7.0);
    }

    #[test]
    fn identity_value_is_mean() {
        let q = QuantileReturn::new(Quantiles::from_partition(vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap(), vec![1.0, 2.0, 3.0]).unwrap();
        assert!((distorted_value(&UtilityFunction::identity(), &q) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cvar_half_hand_value() {
        let q = QuantileReturn::new(Quantiles::from_partition(even(4)).unwrap(), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let u = UtilityFunction::cvar(0.5).unwrap();
        let w = distortion_weights(&u, &q.quantiles);
        assert_eq!(w, vec![0.5, 0.5, 0.0, 0.0]);
        assert!((distorted_value(&u, &q) - 0.5).abs() < 1e-15);
        assert!((distorted_expectation(&u, &q) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weight_sums() {
        let id = UtilityFunction::identity();
        assert_eq!(distortion_weight_check(&id, &[0.0, 0.13, 0.5, 0.77, 1.0]).unwrap(), 1.0);
        let c = UtilityFunction::cvar(0.25).unwrap();
        let fine = distortion_weight_check(&c, &even(1000)).unwrap();
        assert!((fine - 1.0).abs() <= 0.01, "{fine}");
        // coarse grids are biased unless the level hits a grid point
        assert_eq!(distortion_weight_check(&c, &even(4)).unwrap(), 1.0);
        let c3 = UtilityFunction::cvar(0.3).unwrap();
        let coarse = distortion_weight_check(&c3, &even(4)).unwrap();
        assert!((coarse - 0.25 / 0.3).abs() < 1e-12);
        assert!(distortion_weight_check(&UtilityFunction::reshape(RewardReshape::Tanh), &even(4)).is_err());
    }

    #[test]
    fn cvar_level_validation() {
        assert!(UtilityFunction::cvar(0.0).is_err());
        assert!(UtilityFunction::cvar(1.5).is_err());
        for level in CVAR_LEVELS {
            validate_distortion(&UtilityFunction::cvar(level).unwrap()).unwrap();
        }
    }

    fn mixture() -> impl Strategy<Value = QuantileReturn> {
        (1usize..30)
            .prop_flat_map(|k| (proptest::collection::vec(0.0f64..1.0, k), proptest::collection::vec(-10.0f64..10.0, k + 1)))
            .prop_map(|(mut taus, atoms)| {
                taus.sort_by(f64::total_cmp);
                taus.dedup();
                let q = Quantiles::from_interior(taus);
                let atoms = atoms[..q.tau_hats().len()].to_vec();
                QuantileReturn::new(q, atoms).unwrap()
            })
    }

    proptest! {
        #[test]
        fn cvar_one_is_the_mean(q in mixture()) {
            let mean: f64 = q.quantiles.weights().iter().zip(&q.atoms).map(|(w, z)| w * z).sum();
            prop_assert_eq!(distorted_value(&UtilityFunction::cvar(1.0).unwrap(), &q), mean);
            prop_assert_eq!(distorted_value(&UtilityFunction::identity(), &q), mean);
            let exact = distorted_expectation(&UtilityFunction::cvar(1.0).unwrap(), &q);
            prop_assert!((exact - mean).abs() < 1e-12);
        }

        #[test]
        fn cvar_is_non_decreasing_in_level(q in mixture()) {
            let q = q.sorted();
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=100 {
                let v = distorted_expectation(&UtilityFunction::cvar(k as f64 / 100.0).unwrap(), &q);
                prop_assert!(v >= prev - 1e-9, "level {} gave {} after {}", k, v, prev);
                prev = v;
            }
        }

        #[test]
        fn value_is_linear_and_translation_equivariant(q in mixture(), c in -5.0f64..5.0, level in 0.05f64..1.0) {
            let u = UtilityFunction::cvar(level).unwrap();
            let shifted = QuantileReturn::new(q.quantiles.clone(), q.atoms.iter().map(|z| z + c).collect()).unwrap();
            let wsum: f64 = distortion_weights(&u, &q.quantiles).iter().sum();
            let lhs = distorted_value(&u, &shifted);
            let rhs = distorted_value(&u, &q) + c * wsum;
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let id = UtilityFunction::identity();
            let d = distorted_value(&id, &shifted) - distorted_value(&id, &q);
            prop_assert!((d - c).abs() < 1e-9);
        }
    }
}
