//! Named experiment presets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{read_share_table, Paradigm, Placement, ScenarioConfig, SourcePlacement};

pub const REAL_WORLD_SHARES_CSV: &str = include_str!("../data/real_world_shares.csv");

pub const ALIGNED_REGIONS: [&str; 3] = ["asia-northeast1", "europe-west1", "us-east4"];
pub const MISALIGNED_REGIONS: [&str; 3] = ["africa-south1", "australia-southeast1", "southamerica-east1"];
pub const SWEEP_COSTS: [f64; 4] = [0.0, 0.001, 0.002, 0.003];
/// Attestation thresholds as (numerator, denominator).
pub const SWEEP_GAMMAS: [(u32, u32); 4] = [(1, 3), (1, 2), (2, 3), (4, 5)];

#[derive(Debug, Error, PartialEq)]
pub enum PresetError {
    #[error("unknown preset {0:?} (known: {known})", known = Preset::ALL.map(|p| p.name()).join(", "))]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    BaselineHomogeneous,
    SourcesAligned,
    SourcesMisaligned,
    RealWorld,
    CostSweep,
    GammaSweep,
    SlotTime6s,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::BaselineHomogeneous,
        Preset::SourcesAligned,
        Preset::SourcesMisaligned,
        Preset::RealWorld,
        Preset::CostSweep,
        Preset::GammaSweep,
        Preset::SlotTime6s,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BaselineHomogeneous => "baseline-homogeneous",
            Preset::SourcesAligned => "sources-aligned",
            Preset::SourcesMisaligned => "sources-misaligned",
            Preset::RealWorld => "real-world",
            Preset::CostSweep => "cost-sweep",
            Preset::GammaSweep => "gamma-sweep",
            Preset::SlotTime6s => "slot-time-6s",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PresetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PresetError::UnknownPreset(s.to_string()))
    }
}

/// One scenario of an expanded preset; `name` doubles as the output subdirectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedScenario {
    pub name: String,
    pub config: ScenarioConfig,
}

/// Macro-region shares shipped with the crate.
pub fn real_world_shares() -> BTreeMap<String, f64> {
    read_share_table(REAL_WORLD_SHARES_CSV).expect("bundled share table parses")
}

fn regions(names: &[&str]) -> SourcePlacement {
    SourcePlacement::Regions {
        regions: names.iter().map(|s| s.to_string()).collect(),
    }
}

fn format_cost(c: f64) -> String {
    format!("cost-{c}")
}

/// Expands a preset into its scenarios for one paradigm.
pub fn expand_preset(preset: Preset, paradigm: Paradigm) -> Vec<NamedScenario> {
    let base = ScenarioConfig::new(paradigm);
    let one = |name: &str, config: ScenarioConfig| vec![NamedScenario { name: name.to_string(), config }];
    match preset {
        Preset::BaselineHomogeneous => [0.0, base.migration_cost]
            .into_iter()
            .map(|c| NamedScenario {
                name: format_cost(c),
                config: ScenarioConfig { migration_cost: c, ..base.clone() },
            })
            .collect(),
        Preset::SourcesAligned => {
            let mut cfg = base;
            cfg.sources.placement = regions(&ALIGNED_REGIONS);
            one("aligned", cfg)
        }
        Preset::SourcesMisaligned => {
            let mut cfg = base;
            cfg.sources.placement = regions(&MISALIGNED_REGIONS);
            one("misaligned", cfg)
        }
        Preset::RealWorld => {
            let mut cfg = base;
            cfg.validators.placement = Placement::Shares(real_world_shares());
            let mut aligned = cfg.clone();
            aligned.sources.placement = regions(&ALIGNED_REGIONS);
            let mut misaligned = cfg.clone();
            misaligned.sources.placement = regions(&MISALIGNED_REGIONS);
            vec![
                NamedScenario { name: "even-sources".into(), config: cfg },
                NamedScenario { name: "aligned".into(), config: aligned },
                NamedScenario { name: "misaligned".into(), config: misaligned },
            ]
        }
        Preset::CostSweep => SWEEP_COSTS
            .into_iter()
            .map(|c| NamedScenario {
                name: format_cost(c),
                config: ScenarioConfig { migration_cost: c, ..base.clone() },
            })
            .collect(),
        Preset::GammaSweep => SWEEP_GAMMAS
            .into_iter()
            .map(|(num, den)| {
                let mut cfg = base.clone();
                cfg.consensus.threshold = num as f64 / den as f64;
                NamedScenario {
                    name: format!("gamma-{num}_{den}"),
                    config: cfg,
                }
            })
            .collect(),
        Preset::SlotTime6s => {
            let mut cfg = base;
            cfg.consensus.slot_duration = 6.0;
            cfg.consensus.cutoff = 3.0;
            one("slot-6s", cfg)
        }
    }
}

pub fn expand_preset_by_name(name: &str, paradigm: Paradigm) -> Result<Vec<NamedScenario>, PresetError> {
    Ok(expand_preset(name.parse()?, paradigm))
}
