use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Orientation;

/// Per-image scores of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method_id: String,
    pub scores: BTreeMap<String, f64>,
}

impl MethodScores {
    pub fn new(method_id: impl Into<String>, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self { method_id: method_id.into(), scores: scores.into_iter().collect() }
    }

    /// Scores with ids `"0"`, `"1"`, ... in order.
    pub fn from_values(method_id: impl Into<String>, values: &[f64]) -> Self {
        Self::new(method_id, values.iter().enumerate().map(|(i, &v)| (i.to_string(), v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub sr1: String,
    pub sr2: String,
    /// Always choosing SR2.
    pub ub_mc: f64,
    /// Choosing the better method per image.
    pub ub_mr: f64,
    pub mean_sr1: f64,
    pub mean_sr2: f64,
    pub per_image_choices: BTreeMap<String, String>,
    /// Images left out because either score was not finite.
    pub excluded: Vec<String>,
}

/// Single-method and per-image-best bounds over the images both methods
/// scored finitely. A tie chooses SR2.
pub fn compute_upper_bounds(sr1: &MethodScores, sr2: &MethodScores, orientation: Orientation) -> Result<UpperBoundReport> {
    if !sr1.scores.keys().eq(sr2.scores.keys()) {
        let only1 = sr1.scores.keys().filter(|k| !sr2.scores.contains_key(*k)).count();
        let only2 = sr2.scores.keys().filter(|k| !sr1.scores.contains_key(*k)).count();
        return Err(Error::Alignment(format!(
            "`{}` has {only1} images not in `{}`, which has {only2} of its own",
            sr1.method_id, sr2.method_id
        )));
    }
    let mut choices = BTreeMap::new();
    let mut excluded = Vec::new();
    let (mut s1, mut s2, mut best) = (0.0, 0.0, 0.0);
    for (id, &a) in &sr1.scores {
        let b = sr2.scores[id];
        if !(a.is_finite() && b.is_finite()) {
            excluded.push(id.clone());
            continue;
        }
        s1 += a;
        s2 += b;
        if orientation.prefers(a, b) {
            best += a;
            choices.insert(id.clone(), sr1.method_id.clone());
        } else {
            best += b;
            choices.insert(id.clone(), sr2.method_id.clone());
        }
    }
    let n = choices.len();
    if n == 0 {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let n = n as f64;
    Ok(UpperBoundReport {
        sr1: sr1.method_id.clone(),
        sr2: sr2.method_id.clone(),
        ub_mc: s2 / n,
        ub_mr: best / n,
        mean_sr1: s1 / n,
        mean_sr2: s2 / n,
        per_image_choices: choices,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_example() {
        let r = compute_upper_bounds(
            &MethodScores::from_values("sr1", &[3.0, 1.0]),
            &MethodScores::from_values("sr2", &[2.0, 2.0]),
            Orientation::LowerIsBetter,
        )
        .unwrap();
        assert_eq!(r.ub_mc, 2.0);
        assert_eq!(r.ub_mr, 1.5);
        assert_eq!(r.per_image_choices["0"], "sr2");
        assert_eq!(r.per_image_choices["1"], "sr1");
    }

    #[test]
    fn non_finite_excluded_pairwise() {
        let r = compute_upper_bounds(
            &MethodScores::from_values("a", &[f64::NAN, 1.0, 4.0]),
            &MethodScores::from_values("b", &[0.0, 2.0, f64::INFINITY]),
            Orientation::LowerIsBetter,
        )
        .unwrap();
        assert_eq!(r.excluded, vec!["0".to_string(), "2".to_string()]);
        assert_eq!((r.ub_mr, r.ub_mc), (1.0, 2.0));
    }

    #[test]
    fn misaligned_ids() {
        let a = MethodScores::from_values("a", &[1.0, 2.0]);
        let b = MethodScores::from_values("b", &[1.0]);
        assert!(matches!(compute_upper_bounds(&a, &b, Orientation::LowerIsBetter), Err(Error::Alignment(_))));
    }
}
