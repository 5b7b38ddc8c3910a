use serde::{Deserialize, Serialize};

/// Hinge on the score difference: `max(0, gamma (s1 - s2) + eps)`.
///
/// `gamma = +1` states that image 1 is the better one, so the loss vanishes
/// once `s1 <= s2 - eps`; lower scores mean better quality.
pub fn margin_rank_loss(s1: f64, s2: f64, gamma: f64, eps: f64) -> f64 {
    (gamma * (s1 - s2) + eps).max(0.0)
}

/// `(d/ds1, d/ds2)` of [`margin_rank_loss`]; zero at and beyond the kink.
pub fn margin_rank_grad(s1: f64, s2: f64, gamma: f64, eps: f64) -> (f64, f64) {
    if gamma * (s1 - s2) + eps > 0.0 {
        (gamma, -gamma)
    } else {
        (0.0, 0.0)
    }
}

pub fn regression_loss(s: f64, target: f64) -> f64 {
    (s - target).powi(2)
}

pub fn regression_grad(s: f64, target: f64) -> f64 {
    2.0 * (s - target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    MarginRank,
    /// Mean squared error against the raw metric values.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankLossConfig {
    pub epsilon: f64,
    pub mode: LossMode,
}

impl Default for RankLossConfig {
    fn default() -> Self {
        Self { epsilon: 0.5, mode: LossMode::MarginRank }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_examples() {
        assert_eq!(margin_rank_loss(0.0, 1.0, 1.0, 0.5), 0.0);
        assert_eq!(margin_rank_loss(1.0, 0.0, 1.0, 0.5), 1.5);
        for g in [1.0, -1.0] {
            assert_eq!(margin_rank_loss(0.3, 0.3, g, 0.5), 0.5);
        }
    }

    #[test]
    fn swap_identity() {
        for (a, b) in [(0.1, 0.9), (2.0, -1.0), (0.4, 0.45)] {
            assert_eq!(margin_rank_loss(a, b, 1.0, 0.5), margin_rank_loss(b, a, -1.0, 0.5));
        }
    }

    #[test]
    fn regression_examples() {
        assert_eq!(regression_loss(0.4, 0.4), 0.0);
        assert_eq!(regression_loss(3.0, 1.0), 4.0);
        assert!((regression_grad(0.7, 0.2) - 1.0).abs() < 1e-12);
    }
}
