//! Run configuration: a profile's defaults, deep-merged with a TOML file and
//! then with `--set key=value` overrides, deserialized with unknown keys rejected.

use std::path::{Path, PathBuf};

use ranksurge::rankdata::RankgenConfig;
use ranksurge::ranker::RankerConfig;
use ranksurge::srgan::SrganConfig;
use ranksurge::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub dataset_id: String,
    pub metrics: Vec<String>,
    /// NIQE block size override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub niqe_block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Metric column read from score CSVs.
    pub metric: String,
}

/// Every key a run can set; all sections are always present after resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Worker cap for parallel stages; 0 means one per core.
    pub workers: usize,
    pub rankgen: RankgenConfig,
    pub train_ranker: RankerConfig,
    pub train_sr: SrganConfig,
    pub evaluate: EvaluateConfig,
    pub bounds: BoundsConfig,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let (rankgen, train_ranker, train_sr) = match profile {
            Profile::Desk => (RankgenConfig::desk(), RankerConfig::desk(), SrganConfig::desk()),
            Profile::Paper => (RankgenConfig::paper(), RankerConfig::paper(), SrganConfig::paper()),
        };
        let niqe_block = match profile {
            Profile::Desk => Some(48),
            Profile::Paper => None,
        };
        Self {
            profile,
            seed: 0,
            workers: 0,
            rankgen,
            train_ranker,
            train_sr,
            evaluate: EvaluateConfig { dataset_id: "default".into(), metrics: vec!["niqe".into(), "psnr".into()], niqe_block },
            bounds: BoundsConfig { metric: "niqe".into() },
        }
    }

    /// Resolves `file` (if any) and `overrides` over the defaults of the selected
    /// profile. The profile comes from `profile`, else the file, else desk.
    pub fn resolve(file: Option<&Path>, profile: Option<Profile>, overrides: &[String]) -> Result<Self> {
        let file_table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        let mut override_table = Table::new();
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_dotted(&mut override_table, &key, value)?;
        }
        let profile = match profile {
            Some(p) => p,
            None => match override_table.get("profile").or_else(|| file_table.get("profile")) {
                Some(Value::String(s)) => s.parse().map_err(Error::Config)?,
                Some(other) => return Err(Error::Config(format!("profile must be a string, got {other}"))),
                None => Profile::Desk,
            },
        };
        let mut merged = to_table(&Self::defaults(profile))?;
        merge(&mut merged, file_table);
        merge(&mut merged, override_table);
        merged.insert("profile".into(), Value::String(profile_name(profile).into()));
        let cfg: Self = Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.rankgen.validate()?;
        self.train_ranker.validate()?;
        self.train_sr.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Rank-generation settings with the run-level worker cap applied.
    pub fn rankgen_config(&self) -> RankgenConfig {
        let mut c = self.rankgen.clone();
        if self.workers > 0 {
            c.workers = self.workers;
        }
        c
    }
}

fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Desk => "desk",
        Profile::Paper => "paper",
    }
}

fn to_table(cfg: &RunConfig) -> Result<Table> {
    match Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))? {
        Value::Table(t) => Ok(t),
        _ => unreachable!("structs serialize to tables"),
    }
}

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as TOML, falling back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{s}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{key}`: `{p}` is not a table"))),
        };
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// `path` relative to `root` unless already absolute.
pub fn under_root(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values_are_typed() {
        assert_eq!(parse_override("seed=7").unwrap().1, Value::Integer(7));
        assert_eq!(parse_override("a.b = 0.5").unwrap(), ("a.b".into(), Value::Float(0.5)));
        assert_eq!(parse_override("rankgen.metric=niqe").unwrap().1, Value::String("niqe".into()));
        assert_eq!(parse_override("x=[1, 2]").unwrap().1, Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut base: Table = "[a]\nx = 1\ny = 2".parse().unwrap();
        merge(&mut base, "[a]\ny = 3\n[b]\nz = 4".parse().unwrap());
        assert_eq!(base.to_string(), "[a]\nx = 1\ny = 3\n\n[b]\nz = 4\n");
    }

    #[test]
    fn defaults_resolve_for_both_profiles() {
        for p in [Profile::Desk, Profile::Paper] {
            let cfg = RunConfig::resolve(None, Some(p), &[]).unwrap();
            assert_eq!(cfg, RunConfig::defaults(p));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::resolve(None, None, &["train_ranker.train.lr=0.1".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(RunConfig::resolve(None, None, &["bogus=1".into()]).is_err());
    }

    #[test]
    fn overrides_win() {
        let cfg = RunConfig::resolve(None, None, &["seed=9".into(), "train_sr.weights.w_rank=0".into()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train_sr.weights.w_rank, 0.0);
    }
}
