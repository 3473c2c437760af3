//! Flat key=value pipeline configuration with CLI overrides.
//!
//! Every subcommand reads the same key space; each consumes the subset it
//! needs. The fully resolved map (defaults materialized) is echoed into
//! every output artifact for provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use hotspot_core::changepoint::SegmentCost;
use hotspot_core::density::{BandwidthRule, Kernel};
use hotspot_core::ingest::FillPolicy;

/// Raw configuration map plus typed accessors.
#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

pub const KNOWN_KEYS: &[&str] = &[
    "accidents",
    "bandwidth",
    "beta",
    "categories",
    "cell_size_m",
    "change_date",
    "colors",
    "cost",
    "days_after",
    "days_before",
    "fill_policy",
    "from",
    "grid",
    "height_m",
    "kernel",
    "margin_m",
    "min_seg_len",
    "mobility",
    "n_permutations",
    "null_distribution",
    "origin_lat",
    "origin_lon",
    "osm",
    "out_dir",
    "quantile_q",
    "region",
    "schema",
    "seed",
    "to",
    "width_m",
];

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("failed to read config {}", path.display()))?;
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "config {} line {}: expected key=value",
                    path.display(),
                    lineno + 1
                );
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            bail!("unknown config key {key:?}");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_if_absent(&mut self, key: &str, value: String) {
        self.values.entry(key.to_string()).or_insert(value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .with_context(|| format!("missing required config key {key:?}"))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }

    /// Checks that a configured input file actually exists.
    pub fn require_existing_path(&self, key: &str) -> Result<PathBuf> {
        let path = self.require_path(key)?;
        if !path.exists() {
            bail!("config key {key:?} points to a missing file: {}", path.display());
        }
        Ok(path)
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .with_context(|| format!("config key {key:?}: bad number {v:?}"))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .with_context(|| format!("config key {key:?}: bad integer {v:?}"))
            })
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .with_context(|| format!("config key {key:?}: bad integer {v:?}"))
            })
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    pub fn u32_or(&self, key: &str, default: u32) -> Result<u32> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .with_context(|| format!("config key {key:?}: bad integer {v:?}"))
            })
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => bail!("config key {key:?}: expected true/false, got {other:?}"),
        }
    }

    pub fn date(&self, key: &str) -> Result<Option<NaiveDate>> {
        self.get(key)
            .map(|v| {
                NaiveDate::parse_from_str(v, "%Y-%m-%d")
                    .with_context(|| format!("config key {key:?}: bad date {v:?} (want YYYY-MM-DD)"))
            })
            .transpose()
    }

    pub fn categories(&self) -> Result<Vec<String>> {
        let raw = self.require("categories")?;
        let list: Vec<String> = raw
            .split(',')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        if list.is_empty() {
            bail!("config key \"categories\" is empty");
        }
        Ok(list)
    }

    pub fn fill_policy(&self) -> Result<FillPolicy> {
        match self.get("fill_policy").unwrap_or("fail") {
            "fail" => Ok(FillPolicy::Fail),
            "interpolate" | "linear-interpolate" => Ok(FillPolicy::LinearInterpolate),
            other => bail!("config key \"fill_policy\": expected fail or interpolate, got {other:?}"),
        }
    }

    pub fn cost(&self) -> Result<SegmentCost> {
        match self.get("cost").unwrap_or("l2-mean") {
            "l2" | "l2-mean" => Ok(SegmentCost::L2Mean),
            other => {
                if let Some(reference) = other.strip_prefix("l2-const:") {
                    let reference: f64 = reference
                        .parse()
                        .with_context(|| format!("bad l2-const reference {reference:?}"))?;
                    Ok(SegmentCost::L2ConstantRef { reference })
                } else {
                    bail!("config key \"cost\": expected l2-mean or l2-const:<ref>, got {other:?}")
                }
            }
        }
    }

    pub fn bandwidth_rule(&self) -> Result<BandwidthRule> {
        Ok(BandwidthRule::from_name(
            self.get("bandwidth").unwrap_or("silverman"),
        )?)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Ok(Kernel::from_name(self.get("kernel").unwrap_or("gaussian"))?)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir").unwrap_or("."))
    }

    /// The resolved parameter set to echo into every output artifact.
    /// `out_dir` is excluded: it is I/O placement, not an analysis
    /// parameter, and identical runs into different directories must
    /// produce identical bytes.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "out_dir")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Fills in the standard defaults so the echoed config is the resolved
    /// parameter set, not just what the user typed.
    pub fn materialize_defaults(&mut self) {
        for (key, value) in [
            ("bandwidth", "silverman"),
            ("cell_size_m", "250"),
            ("cost", "l2-mean"),
            ("days_after", "30"),
            ("days_before", "30"),
            ("fill_policy", "fail"),
            ("kernel", "gaussian"),
            ("margin_m", "1000"),
            ("min_seg_len", "2"),
            ("n_permutations", "199"),
            ("null_distribution", "false"),
            ("out_dir", "."),
            ("quantile_q", "0.95"),
            ("seed", "0"),
        ] {
            self.set_if_absent(key, value.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut config = Config::default();
        config.set("seed", "7").unwrap();
        config.set("seed", "9").unwrap();
        assert_eq!(config.u64_or("seed", 0).unwrap(), 9);
        assert!(config.set("bogus", "1").is_err());
    }

    #[test]
    fn typed_accessors() {
        let mut config = Config::default();
        config.set("quantile_q", "0.9").unwrap();
        config.set("categories", "retail, transit").unwrap();
        config.set("cost", "l2-const:-10").unwrap();
        assert_eq!(config.f64_or("quantile_q", 0.95).unwrap(), 0.9);
        assert_eq!(config.categories().unwrap(), vec!["retail", "transit"]);
        assert_eq!(
            config.cost().unwrap(),
            SegmentCost::L2ConstantRef { reference: -10.0 }
        );
    }

    #[test]
    fn defaults_materialize_for_echo() {
        let mut config = Config::default();
        config.materialize_defaults();
        assert_eq!(config.get("quantile_q"), Some("0.95"));
        assert_eq!(config.get("n_permutations"), Some("199"));
    }
}
