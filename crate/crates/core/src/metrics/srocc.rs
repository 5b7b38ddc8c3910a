use super::Orientation;
use crate::error::{Error, Result};

/// Two rankings of the same `N` items, each a permutation of `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankOrdering {
    reference: Vec<usize>,
    predicted: Vec<usize>,
}

impl RankOrdering {
    pub fn new(reference: Vec<usize>, predicted: Vec<usize>) -> Result<Self> {
        if reference.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} reference ranks vs {} predicted",
                reference.len(),
                predicted.len()
            )));
        }
        for ranks in [&reference, &predicted] {
            if !is_permutation(ranks) {
                return Err(Error::ShapeMismatch(format!(
                    "ranks {ranks:?} are not a permutation of 1..={}",
                    ranks.len()
                )));
            }
        }
        Ok(Self { reference, predicted })
    }

    pub fn reference_ranks(&self) -> &[usize] {
        &self.reference
    }

    pub fn predicted_ranks(&self) -> &[usize] {
        &self.predicted
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}

fn is_permutation(r: &[usize]) -> bool {
    let mut seen = vec![false; r.len()];
    r.iter().all(|&v| {
        if v == 0 || v > r.len() || seen[v - 1] {
            false
        } else {
            seen[v - 1] = true;
            true
        }
    })
}

/// Ranks `1..=N` with rank 1 for the best score; ties keep input order.
pub fn ranks_from_scores(scores: &[f64], orientation: Orientation) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        let o = x.total_cmp(&y);
        match orientation {
            Orientation::LowerIsBetter => o,
            Orientation::HigherIsBetter => o.reverse(),
        }
    });
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Spearman rank-order correlation `1 - 6 sum d^2 / (N (N^2 - 1))`.
pub fn srocc(ord: &RankOrdering) -> Result<f64> {
    let n = ord.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, need: 2 });
    }
    let d2: u64 = ord
        .reference
        .iter()
        .zip(&ord.predicted)
        .map(|(&a, &b)| {
            let d = a.abs_diff(b) as u64;
            d * d
        })
        .sum();
    let nf = n as f64;
    Ok(1.0 - 6.0 * d2 as f64 / (nf * (nf * nf - 1.0)))
}

/// SROCC between two score vectors ranked under the given orientations.
pub fn srocc_from_scores(
    reference: &[f64],
    reference_orientation: Orientation,
    predicted: &[f64],
    predicted_orientation: Orientation,
) -> Result<f64> {
    let ord = RankOrdering::new(
        ranks_from_scores(reference, reference_orientation),
        ranks_from_scores(predicted, predicted_orientation),
    )?;
    srocc(&ord)
}
