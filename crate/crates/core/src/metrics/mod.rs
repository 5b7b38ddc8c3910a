//! Fidelity and no-reference quality metrics plus rank-correlation statistics.

mod niqe;
mod psnr;
mod registry;
mod srocc;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use niqe::{niqe, NiqeModel};
pub use psnr::psnr;
pub use registry::{ExternalScorer, MetricRegistry, NiqeScorer, PsnrScorer, Scorer};
pub use srocc::{ranks_from_scores, srocc, srocc_from_scores, RankOrdering};

pub const NIQE: &str = "niqe";
pub const PSNR: &str = "psnr";
pub const PI: &str = "pi";
pub const MA: &str = "ma";

/// Which direction of a metric counts as better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerIsBetter,
    HigherIsBetter,
}

impl Orientation {
    pub fn from_lower_is_better(lower: bool) -> Self {
        if lower {
            Orientation::LowerIsBetter
        } else {
            Orientation::HigherIsBetter
        }
    }

    /// Strict preference of `a` over `b`.
    pub fn prefers(self, a: f64, b: f64) -> bool {
        match self {
            Orientation::LowerIsBetter => a < b,
            Orientation::HigherIsBetter => a > b,
        }
    }

    /// The preferred of two values.
    pub fn best(self, a: f64, b: f64) -> f64 {
        if self.prefers(b, a) {
            b
        } else {
            a
        }
    }
}

/// Orientation of the built-in and well-known metric names.
pub fn known_orientation(metric_name: &str) -> Option<Orientation> {
    match metric_name {
        NIQE | PI => Some(Orientation::LowerIsBetter),
        PSNR | MA => Some(Orientation::HigherIsBetter),
        _ => None,
    }
}

/// A single metric evaluation. `value` may be `+inf` only for PSNR of identical images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric_name: String,
    #[serde(with = "sentinel_f64")]
    pub value: f64,
    pub lower_is_better: bool,
}

impl MetricScore {
    pub fn new(metric_name: impl Into<String>, value: f64, lower_is_better: bool) -> Self {
        Self { metric_name: metric_name.into(), value, lower_is_better }
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::from_lower_is_better(self.lower_is_better)
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Serializes `±inf` as the strings `"inf"` / `"-inf"` so JSON stays valid.
pub mod sentinel_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => other.parse().map_err(serde::de::Error::custom),
            },
        }
    }
}

/// Perceptual index `((10 - Ma) + NIQE) / 2`; lower is better.
pub fn perceptual_index(niqe_score: &MetricScore, ma_score: &MetricScore) -> Result<MetricScore> {
    if niqe_score.metric_name != NIQE {
        return Err(Error::MissingMetric(format!("{NIQE} (got `{}`)", niqe_score.metric_name)));
    }
    if ma_score.metric_name != MA {
        return Err(Error::MissingMetric(format!("{MA} (got `{}`)", ma_score.metric_name)));
    }
    Ok(MetricScore::new(PI, 0.5 * ((10.0 - ma_score.value) + niqe_score.value), true))
}

/// Writes `(image_id, metric_name, value)` rows.
pub fn write_score_csv<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a MetricScore)>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["image_id", "metric_name", "value"])?;
    for (id, s) in rows {
        w.write_record([id, s.metric_name.as_str(), &format_value(s.value)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a score CSV written by [`write_score_csv`], keeping rows for `metric`
/// (or every row when `metric` is `None`) in file order.
pub fn read_score_csv(path: impl AsRef<Path>, metric: Option<&str>) -> Result<Vec<(String, MetricScore)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Manifest(format!("{}: expected 3 columns", path.display())));
        }
        if metric.is_some_and(|m| m != &rec[1]) {
            continue;
        }
        let value = parse_value(&rec[2])
            .ok_or_else(|| Error::Manifest(format!("{}: bad value `{}`", path.display(), &rec[2])))?;
        let lower = known_orientation(&rec[1]).map_or(true, |o| o == Orientation::LowerIsBetter);
        out.push((rec[0].to_string(), MetricScore::new(&rec[1], value, lower)));
    }
    Ok(out)
}

pub(crate) fn format_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

pub(crate) fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn s(name: &str, v: f64) -> MetricScore {
        MetricScore::new(name, v, known_orientation(name) == Some(Orientation::LowerIsBetter))
    }

    #[test]
    fn perceptual_index_matches_table_rows() {
        // (10 - Ma) is given, so Ma = 10 - value.
        let pi = perceptual_index(&s(NIQE, 2.51), &s(MA, 10.0 - 1.39)).unwrap();
        assert!((pi.value - 1.95).abs() < 1e-9);
        assert!(pi.lower_is_better);
        let pi = perceptual_index(&s(NIQE, 2.56), &s(MA, 10.0 - 1.40)).unwrap();
        assert!((pi.value - 1.98).abs() < 1e-9);
        let pi = perceptual_index(&s(NIQE, 0.0), &s(MA, 10.0)).unwrap();
        assert_eq!(pi.value, 0.0);
    }

    #[test]
    fn perceptual_index_requires_named_inputs() {
        assert!(matches!(
            perceptual_index(&s(NIQE, 2.0), &s(PSNR, 3.0)),
            Err(Error::MissingMetric(_))
        ));
    }

    #[test]
    fn orientation_preference() {
        assert!(Orientation::LowerIsBetter.prefers(1.0, 2.0));
        assert!(!Orientation::LowerIsBetter.prefers(2.0, 2.0));
        assert!(Orientation::HigherIsBetter.prefers(3.0, 2.0));
        assert_eq!(Orientation::HigherIsBetter.best(3.0, 5.0), 5.0);
    }

    #[test]
    fn infinite_scores_survive_json_and_csv() {
        let inf = MetricScore::new(PSNR, f64::INFINITY, false);
        let j = serde_json::to_string(&inf).unwrap();
        assert!(j.contains("\"inf\""));
        let back: MetricScore = serde_json::from_str(&j).unwrap();
        assert!(back.is_infinite());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let n = s(NIQE, 3.25);
        write_score_csv(&p, [("a", &inf), ("b", &n)]).unwrap();
        let all = read_score_csv(&p, None).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all[0].1.is_infinite());
        let only = read_score_csv(&p, Some(NIQE)).unwrap();
        assert_eq!(only, vec![("b".to_string(), n)]);
    }
}
