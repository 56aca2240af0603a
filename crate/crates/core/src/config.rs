//! Scenario configuration: TOML schema, defaults and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::CanonicalMode;
use crate::metrics::Granularity;
use crate::strategy::ConsensusParams;
use crate::topology::DEFAULT_INTRA_REGION_MS;

pub const DEFAULT_VALIDATORS: usize = 1000;
pub const DEFAULT_SLOTS: u64 = 10_000;
pub const DEFAULT_MIGRATION_COST: f64 = 0.002;
pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 1;
/// Total value growth rate and initial value across all sources (the relay baseline).
pub const BASELINE_A: f64 = 0.4;
pub const BASELINE_B: f64 = 0.04;
/// Homogeneous source placement puts one source in each macro-region.
pub const DEFAULT_HOMOGENEOUS_SOURCES: usize = 14;
pub const DEFAULT_MC_SAMPLES: usize = 4096;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0} missing")]
    Missing(&'static str),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Multi-source: the proposer aggregates signals and broadcasts the block.
    Msp,
    /// Single-source: a relay supplies and propagates the block.
    Ssp,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Msp => "msp",
            Paradigm::Ssp => "ssp",
        })
    }
}

impl std::str::FromStr for Paradigm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(Paradigm::Msp),
            "ssp" => Ok(Paradigm::Ssp),
            other => Err(invalid("paradigm", format!("expected msp or ssp, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SspCdfMode {
    /// Fenton-Wilkinson moment matching.
    #[default]
    Fw,
    /// Monte Carlo over a fixed sample of normal pairs.
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologySpec {
    pub dataset: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub sigma: f64,
    pub intra_region_ms: f64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            dataset: None,
            regions: None,
            sigma: DEFAULT_SIGMA,
            intra_region_ms: DEFAULT_INTRA_REGION_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "placement", content = "shares")]
pub enum Placement {
    /// Equal counts per macro-region, then uniform over each macro's regions.
    Homogeneous,
    /// Fractions keyed by region or macro-region name.
    Shares(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatorSpec {
    pub count: usize,
    #[serde(flatten)]
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "placement")]
pub enum SourcePlacement {
    Homogeneous { count: usize },
    Regions { regions: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceSpec {
    #[serde(flatten)]
    pub placement: SourcePlacement,
    /// Growth rate of one relay, or of all signals combined.
    pub a: f64,
    /// Initial value of one relay, or of all signals combined.
    pub b: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            placement: SourcePlacement::Homogeneous {
                count: DEFAULT_HOMOGENEOUS_SOURCES,
            },
            a: BASELINE_A,
            b: BASELINE_B,
        }
    }
}

impl SourceSpec {
    pub fn count(&self) -> usize {
        match &self.placement {
            SourcePlacement::Homogeneous { count } => *count,
            SourcePlacement::Regions { regions } => regions.len(),
        }
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub paradigm: Paradigm,
    pub seed: u64,
    pub slots: u64,
    pub migration_cost: f64,
    pub metrics_granularity: Granularity,
    /// Attesters per slot; `None` means every validator except the proposer.
    pub committee_size: Option<usize>,
    pub canonical: CanonicalMode,
    pub ssp_latency_cdf: SspCdfMode,
    pub mc_samples: usize,
    pub topology: TopologySpec,
    pub validators: ValidatorSpec,
    pub sources: SourceSpec,
    pub consensus: ConsensusParams,
}

impl ScenarioConfig {
    pub fn new(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            seed: DEFAULT_SEED,
            slots: DEFAULT_SLOTS,
            migration_cost: DEFAULT_MIGRATION_COST,
            metrics_granularity: Granularity::GcpRegion,
            committee_size: None,
            canonical: CanonicalMode::Exact,
            ssp_latency_cdf: SspCdfMode::Fw,
            mc_samples: DEFAULT_MC_SAMPLES,
            topology: TopologySpec::default(),
            validators: ValidatorSpec {
                count: DEFAULT_VALIDATORS,
                placement: Placement::Homogeneous,
            },
            sources: SourceSpec::default(),
            consensus: ConsensusParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slots == 0 {
            return Err(invalid("slots", "must be at least 1"));
        }
        if !(self.migration_cost >= 0.0) {
            return Err(invalid("migration_cost", format!("must be nonnegative, got {}", self.migration_cost)));
        }
        if self.validators.count < 2 {
            return Err(invalid("validators.count", "need at least two validators (a proposer and an attester)"));
        }
        if let Some(k) = self.committee_size {
            if k == 0 {
                return Err(invalid("committee_size", "must be at least 1"));
            }
        }
        if let Placement::Shares(shares) = &self.validators.placement {
            if shares.is_empty() {
                return Err(invalid("validators.shares", "share table is empty"));
            }
            for (k, v) in shares {
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(invalid(format!("validators.shares.{k}"), format!("must be nonnegative, got {v}")));
                }
            }
            let total: f64 = shares.values().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(invalid("validators.shares", format!("shares sum to {total}, expected 1")));
            }
        }
        if self.sources.count() == 0 {
            return Err(invalid("sources", "at least one source is required"));
        }
        if !(self.sources.a > 0.0 && self.sources.b > 0.0) {
            return Err(invalid("sources", "a and b must both be positive"));
        }
        if !(self.topology.sigma >= 0.0 && self.topology.sigma.is_finite()) {
            return Err(invalid("topology.sigma", format!("must be nonnegative, got {}", self.topology.sigma)));
        }
        if !(self.topology.intra_region_ms > 0.0) {
            return Err(invalid("topology.intra_region_ms", "must be positive"));
        }
        if self.ssp_latency_cdf == SspCdfMode::Mc && self.mc_samples == 0 {
            return Err(invalid("mc_samples", "must be positive in Monte Carlo mode"));
        }
        self.consensus.validate().map_err(|e| match e {
            crate::strategy::StrategyError::InvalidParams { field, reason } => invalid(format!("consensus.{field}"), reason),
            other => invalid("consensus", other.to_string()),
        })
    }

    /// TOML rendering accepted by [`parse_config_str`].
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("paradigm = \"{}\"\n", self.paradigm));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("slots = {}\n", self.slots));
        out.push_str(&format!("migration_cost = {:?}\n", self.migration_cost));
        out.push_str(&format!(
            "metrics_granularity = \"{}\"\n",
            match self.metrics_granularity {
                Granularity::GcpRegion => "gcp-region",
                Granularity::MacroRegion => "macro-region",
            }
        ));
        if let Some(k) = self.committee_size {
            out.push_str(&format!("committee_size = {k}\n"));
        }
        out.push_str(&format!(
            "canonical = \"{}\"\n",
            match self.canonical {
                CanonicalMode::Exact => "exact",
                CanonicalMode::Lln => "lln",
            }
        ));
        out.push_str(&format!(
            "ssp_latency_cdf = \"{}\"\nmc_samples = {}\n",
            match self.ssp_latency_cdf {
                SspCdfMode::Fw => "fw",
                SspCdfMode::Mc => "mc",
            },
            self.mc_samples
        ));

        out.push_str("\n[topology]\n");
        if let Some(p) = &self.topology.dataset {
            out.push_str(&format!("dataset = {:?}\n", p.display().to_string()));
        }
        if let Some(p) = &self.topology.regions {
            out.push_str(&format!("regions = {:?}\n", p.display().to_string()));
        }
        out.push_str(&format!("sigma = {:?}\nintra_region_ms = {:?}\n", self.topology.sigma, self.topology.intra_region_ms));

        out.push_str(&format!("\n[validators]\ncount = {}\n", self.validators.count));
        match &self.validators.placement {
            Placement::Homogeneous => out.push_str("placement = \"homogeneous\"\n"),
            Placement::Shares(shares) => {
                out.push_str("placement = \"shares\"\n\n[validators.shares]\n");
                for (k, v) in shares {
                    out.push_str(&format!("{k:?} = {v:?}\n"));
                }
            }
        }

        out.push_str("\n[sources]\n");
        match &self.sources.placement {
            SourcePlacement::Homogeneous { count } => {
                out.push_str(&format!("placement = \"homogeneous\"\ncount = {count}\n"))
            }
            SourcePlacement::Regions { regions } => {
                out.push_str(&format!("placement = \"regions\"\nregions = {regions:?}\n"))
            }
        }
        out.push_str(&format!("a = {:?}\nb = {:?}\n", self.sources.a, self.sources.b));

        let c = &self.consensus;
        out.push_str(&format!(
            "\n[consensus]\nslot_duration = {:?}\ncutoff = {:?}\ngamma = {:?}\nrisk_tolerance = {:?}\ntime_step = {:?}\n",
            c.slot_duration, c.cutoff, c.threshold, c.risk_tolerance, c.time_step
        ));
        out
    }
}

/// A number written either as a float or as a fraction string like `"2/3"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Number {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Number {
    fn value(&self, field: &str) -> Result<f64, ConfigError> {
        match self {
            Number::Float(x) => Ok(*x),
            Number::Int(x) => Ok(*x as f64),
            Number::Text(s) => {
                let parse = |t: &str| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| invalid(field, format!("not a number: {s:?}")))
                };
                match s.split_once('/') {
                    Some((num, den)) => {
                        let d = parse(den)?;
                        if d == 0.0 {
                            return Err(invalid(field, "zero denominator"));
                        }
                        Ok(parse(num)? / d)
                    }
                    None => parse(s),
                }
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    dataset: Option<PathBuf>,
    regions: Option<PathBuf>,
    sigma: Option<Number>,
    intra_region_ms: Option<Number>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidators {
    count: Option<usize>,
    placement: Option<String>,
    shares: Option<BTreeMap<String, Number>>,
    shares_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSources {
    placement: Option<String>,
    count: Option<usize>,
    regions: Option<Vec<String>>,
    a: Option<Number>,
    b: Option<Number>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConsensus {
    slot_duration: Option<Number>,
    cutoff: Option<Number>,
    gamma: Option<Number>,
    risk_tolerance: Option<Number>,
    time_step: Option<Number>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    paradigm: Option<String>,
    seed: Option<u64>,
    slots: Option<u64>,
    migration_cost: Option<Number>,
    metrics_granularity: Option<Granularity>,
    committee_size: Option<usize>,
    canonical: Option<CanonicalMode>,
    ssp_latency_cdf: Option<SspCdfMode>,
    mc_samples: Option<usize>,
    #[serde(default)]
    topology: RawTopology,
    #[serde(default)]
    validators: RawValidators,
    #[serde(default)]
    sources: RawSources,
    #[serde(default)]
    consensus: RawConsensus,
}

fn opt_num(n: &Option<Number>, field: &str, default: f64) -> Result<f64, ConfigError> {
    n.as_ref().map_or(Ok(default), |n| n.value(field))
}

/// Reads a `key,share` table (region or macro-region names).
pub fn read_share_table(text: &str) -> Result<BTreeMap<String, f64>, ConfigError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| invalid("validators.shares_file", e.to_string()))?;
        let key = rec.get(0).unwrap_or_default().to_string();
        let value: f64 = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| invalid("validators.shares_file", format!("bad share for {key}")))?;
        out.insert(key, value);
    }
    Ok(out)
}

/// Parses TOML text. Relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: Option<&Path>) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    let paradigm: Paradigm = raw.paradigm.as_deref().ok_or(ConfigError::Missing("paradigm"))?.parse()?;
    let resolve = |p: PathBuf| match base_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    };

    let mut cfg = ScenarioConfig::new(paradigm);
    cfg.seed = raw.seed.unwrap_or(DEFAULT_SEED);
    cfg.slots = raw.slots.unwrap_or(DEFAULT_SLOTS);
    cfg.migration_cost = opt_num(&raw.migration_cost, "migration_cost", DEFAULT_MIGRATION_COST)?;
    cfg.metrics_granularity = raw.metrics_granularity.unwrap_or_default();
    cfg.committee_size = raw.committee_size;
    cfg.canonical = raw.canonical.unwrap_or_default();
    cfg.ssp_latency_cdf = raw.ssp_latency_cdf.unwrap_or_default();
    cfg.mc_samples = raw.mc_samples.unwrap_or(DEFAULT_MC_SAMPLES);

    cfg.topology = TopologySpec {
        dataset: raw.topology.dataset.map(resolve),
        regions: raw.topology.regions.map(resolve),
        sigma: opt_num(&raw.topology.sigma, "topology.sigma", DEFAULT_SIGMA)?,
        intra_region_ms: opt_num(&raw.topology.intra_region_ms, "topology.intra_region_ms", DEFAULT_INTRA_REGION_MS)?,
    };

    let v = raw.validators;
    let placement = match v.placement.as_deref().unwrap_or(if v.shares.is_some() || v.shares_file.is_some() {
        "shares"
    } else {
        "homogeneous"
    }) {
        "homogeneous" => Placement::Homogeneous,
        "shares" => {
            let mut table = BTreeMap::new();
            if let Some(path) = v.shares_file {
                let path = resolve(path);
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?;
                table = read_share_table(&text)?;
            }
            for (k, n) in v.shares.unwrap_or_default() {
                let field = format!("validators.shares.{k}");
                table.insert(k, n.value(&field)?);
            }
            Placement::Shares(table)
        }
        other => {
            return Err(invalid(
                "validators.placement",
                format!("expected homogeneous or shares, got {other:?}"),
            ))
        }
    };
    cfg.validators = ValidatorSpec {
        count: v.count.unwrap_or(DEFAULT_VALIDATORS),
        placement,
    };

    let s = raw.sources;
    let placement = match s.placement.as_deref().unwrap_or(if s.regions.is_some() { "regions" } else { "homogeneous" }) {
        "homogeneous" => SourcePlacement::Homogeneous {
            count: s.count.unwrap_or(DEFAULT_HOMOGENEOUS_SOURCES),
        },
        "regions" => SourcePlacement::Regions {
            regions: s.regions.ok_or(ConfigError::Missing("sources.regions"))?,
        },
        other => {
            return Err(invalid(
                "sources.placement",
                format!("expected homogeneous or regions, got {other:?}"),
            ))
        }
    };
    cfg.sources = SourceSpec {
        placement,
        a: opt_num(&s.a, "sources.a", BASELINE_A)?,
        b: opt_num(&s.b, "sources.b", BASELINE_B)?,
    };

    let c = raw.consensus;
    let d = ConsensusParams::default();
    cfg.consensus = ConsensusParams {
        slot_duration: opt_num(&c.slot_duration, "consensus.slot_duration", d.slot_duration)?,
        cutoff: opt_num(&c.cutoff, "consensus.cutoff", d.cutoff)?,
        threshold: opt_num(&c.gamma, "consensus.gamma", d.threshold)?,
        risk_tolerance: opt_num(&c.risk_tolerance, "consensus.risk_tolerance", d.risk_tolerance)?,
        time_step: opt_num(&c.time_step, "consensus.time_step", d.time_step)?,
    };

    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_paradigm() {
        let err = parse_config_str("", None).unwrap_err();
        assert_eq!(err.to_string(), "paradigm missing");
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse_config_str("paradigm = \"msp\"", None).unwrap();
        assert_eq!(cfg.paradigm, Paradigm::Msp);
        assert_eq!(cfg.consensus, ConsensusParams::default());
        assert_eq!(cfg.consensus.slot_duration, 12.0);
        assert_eq!(cfg.consensus.cutoff, 4.0);
        assert_eq!(cfg.consensus.risk_tolerance, 0.99);
        assert_eq!(cfg.consensus.time_step, 0.05);
        assert_eq!(cfg.topology.sigma, 0.5);
        assert_eq!(cfg.migration_cost, 0.002);
        assert_eq!(cfg.validators.count, 1000);
        assert_eq!(cfg.slots, 10_000);
    }

    #[test]
    fn gamma_out_of_range() {
        let err = parse_config_str("paradigm = \"ssp\"\n[consensus]\ngamma = 1.5\n", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("consensus.gamma"), "{msg}");
    }

    #[test]
    fn fractions_accepted() {
        let cfg = parse_config_str("paradigm = \"ssp\"\n[consensus]\ngamma = \"4/5\"\n", None).unwrap();
        assert!((cfg.consensus.threshold - 0.8).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_config_str("paradigm = \"ssp\"\nbogus = 1\n", None).is_err());
    }

    #[test]
    fn shares_must_sum_to_one() {
        let text = "paradigm = \"msp\"\n[validators]\nshares = { Europe = 0.5, NorthAmerica = 0.4 }\n";
        let err = parse_config_str(text, None).unwrap_err();
        assert!(err.to_string().contains("validators.shares"));
    }

    #[test]
    fn zero_slots_rejected() {
        assert!(parse_config_str("paradigm = \"msp\"\nslots = 0\n", None).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ScenarioConfig::new(Paradigm::Ssp);
        cfg.committee_size = Some(50);
        cfg.validators.placement = Placement::Shares(BTreeMap::from([
            ("Europe".to_string(), 0.25),
            ("us-east4".to_string(), 0.75),
        ]));
        cfg.sources.placement = SourcePlacement::Regions {
            regions: vec!["europe-west1".into(), "us-east4".into()],
        };
        cfg.consensus.threshold = 2.0 / 3.0;
        let back = parse_config_str(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
    }
}
