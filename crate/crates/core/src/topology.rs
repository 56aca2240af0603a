//! Geographic substrate: regions, macro-regions and the pairwise log-normal
//! latency model calibrated from measured mean latencies.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled inter-region latency snapshot (long form, milliseconds).
pub const BUNDLED_LATENCY_CSV: &str = include_str!("../data/gcp_latency.csv");
/// Bundled `name,macro` region table.
pub const BUNDLED_REGIONS_CSV: &str = include_str!("../data/gcp_regions.csv");

/// Expected latency used for a region talking to itself when the dataset has no diagonal.
pub const DEFAULT_INTRA_REGION_MS: f64 = 2.0;

pub type RegionId = usize;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("missing latency entry for pair ({0}, {1})")]
    MissingPair(String, String),
    #[error("non-positive latency {value} for pair ({from}, {to})")]
    NonPositiveLatency { from: String, to: String, value: f64 },
    #[error("duplicate latency entry for pair ({0}, {1})")]
    DuplicatePair(String, String),
    #[error("region {0} has no macro-region assignment")]
    UnknownRegion(String),
    #[error("unknown macro-region name {0:?}")]
    UnknownMacro(String),
    #[error("duplicate region name {0}")]
    DuplicateRegion(String),
    #[error("sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("dataset contains no regions")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The seven continental groupings used for aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MacroRegion {
    Africa,
    Asia,
    Oceania,
    Europe,
    MiddleEast,
    SouthAmerica,
    NorthAmerica,
}

impl MacroRegion {
    pub const ALL: [MacroRegion; 7] = [
        MacroRegion::Africa,
        MacroRegion::Asia,
        MacroRegion::Oceania,
        MacroRegion::Europe,
        MacroRegion::MiddleEast,
        MacroRegion::SouthAmerica,
        MacroRegion::NorthAmerica,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MacroRegion::Africa => "Africa",
            MacroRegion::Asia => "Asia",
            MacroRegion::Oceania => "Oceania",
            MacroRegion::Europe => "Europe",
            MacroRegion::MiddleEast => "MiddleEast",
            MacroRegion::SouthAmerica => "SouthAmerica",
            MacroRegion::NorthAmerica => "NorthAmerica",
        }
    }
}

impl fmt::Display for MacroRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MacroRegion {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match key.as_str() {
            "africa" => MacroRegion::Africa,
            "asia" => MacroRegion::Asia,
            "oceania" => MacroRegion::Oceania,
            "europe" => MacroRegion::Europe,
            "middleeast" => MacroRegion::MiddleEast,
            "southamerica" => MacroRegion::SouthAmerica,
            "northamerica" => MacroRegion::NorthAmerica,
            _ => return Err(TopologyError::UnknownMacro(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub id: RegionId,
    pub name: String,
    pub macro_region: MacroRegion,
}

/// Dense, ordered set of simulation regions.
#[derive(Debug, Clone, Default)]
pub struct RegionTable {
    regions: Vec<Region>,
    by_name: HashMap<String, RegionId>,
}

impl RegionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, macro_region: MacroRegion) -> Result<RegionId, TopologyError> {
        if self.by_name.contains_key(name) {
            return Err(TopologyError::DuplicateRegion(name.to_string()));
        }
        let id = self.regions.len();
        self.regions.push(Region {
            id,
            name: name.to_string(),
            macro_region,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, id: RegionId) -> &Region {
        &self.regions[id]
    }

    pub fn id_of(&self, name: &str) -> Option<RegionId> {
        self.by_name.get(name).copied()
    }

    pub fn macro_of(&self, id: RegionId) -> MacroRegion {
        self.regions[id].macro_region
    }

    pub fn iter(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter()
    }

    /// Region ids belonging to `macro_region`, ascending.
    pub fn in_macro(&self, macro_region: MacroRegion) -> Vec<RegionId> {
        self.regions
            .iter()
            .filter(|r| r.macro_region == macro_region)
            .map(|r| r.id)
            .collect()
    }

    pub fn macro_counts(&self) -> [usize; 7] {
        let mut counts = [0; 7];
        for r in &self.regions {
            counts[r.macro_region.index()] += 1;
        }
        counts
    }
}

/// Reads a `name,macro` table into a lookup map.
pub fn read_macro_assignments<R: Read>(reader: R) -> Result<HashMap<String, MacroRegion>, TopologyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let name = record.get(0).unwrap_or_default().to_string();
        let macro_region: MacroRegion = record.get(1).unwrap_or_default().parse()?;
        out.insert(name, macro_region);
    }
    Ok(out)
}

pub fn bundled_macro_assignments() -> HashMap<String, MacroRegion> {
    read_macro_assignments(BUNDLED_REGIONS_CSV.as_bytes()).expect("bundled region table is well formed")
}

/// Log-normal parameters of a single latency leg, in log-milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    /// Parameters whose expectation equals `mean` for the given shape.
    pub fn from_mean(mean: f64, sigma: f64) -> Self {
        Self {
            mu: mean.ln() - 0.5 * sigma * sigma,
            sigma,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        (s2.exp() - 1.0) * (2.0 * self.mu + s2).exp()
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let ln_t = t.ln();
        if self.sigma == 0.0 {
            return if ln_t >= self.mu { 1.0 } else { 0.0 };
        }
        std_normal_cdf((ln_t - self.mu) / self.sigma)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu + self.sigma * z).exp()
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Pairwise log-normal latency model with a shared shape parameter.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    m: usize,
    mu: Vec<f64>,
    sigma: f64,
}

impl LatencyModel {
    /// Builds a model from a dense row-major matrix of expected latencies (ms).
    pub fn from_expected(means: &[Vec<f64>], sigma: f64) -> Result<Self, TopologyError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(TopologyError::InvalidSigma(sigma));
        }
        let m = means.len();
        let mut mu = Vec::with_capacity(m * m);
        for (j, row) in means.iter().enumerate() {
            assert_eq!(row.len(), m, "latency matrix must be square");
            for (k, &mean) in row.iter().enumerate() {
                if !(mean > 0.0 && mean.is_finite()) {
                    return Err(TopologyError::NonPositiveLatency {
                        from: j.to_string(),
                        to: k.to_string(),
                        value: mean,
                    });
                }
                mu.push(LogNormalParams::from_mean(mean, sigma).mu);
            }
        }
        Ok(Self { m, mu, sigma })
    }

    /// Every pair (including the diagonal) at the same expected latency.
    pub fn uniform(m: usize, mean_ms: f64, sigma: f64) -> Result<Self, TopologyError> {
        Self::from_expected(&vec![vec![mean_ms; m]; m], sigma)
    }

    pub fn num_regions(&self) -> usize {
        self.m
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self, j: RegionId, k: RegionId) -> f64 {
        assert!(j < self.m && k < self.m, "region id out of bounds");
        self.mu[j * self.m + k]
    }

    pub fn params(&self, j: RegionId, k: RegionId) -> LogNormalParams {
        LogNormalParams::new(self.mu(j, k), self.sigma)
    }

    /// `E[d(j,k)]` in milliseconds.
    pub fn expected_latency(&self, j: RegionId, k: RegionId) -> f64 {
        (self.mu(j, k) + 0.5 * self.sigma * self.sigma).exp()
    }

    /// `Pr[d(j,k) <= t]` for `t` in milliseconds.
    pub fn latency_cdf(&self, j: RegionId, k: RegionId, t: f64) -> f64 {
        self.params(j, k).cdf(t)
    }

    pub fn sample_latency<R: Rng + ?Sized>(&self, j: RegionId, k: RegionId, rng: &mut R) -> f64 {
        self.params(j, k).sample(rng)
    }

    /// Median over expected latencies of all region pairs between each pair of macro-regions.
    /// Entries for macro-regions without any region are `NaN`.
    pub fn macro_median_latency(&self, table: &RegionTable) -> [[f64; 7]; 7] {
        let mut out = [[f64::NAN; 7]; 7];
        for a in MacroRegion::ALL {
            let rows = table.in_macro(a);
            for b in MacroRegion::ALL {
                let cols = table.in_macro(b);
                let mut values: Vec<f64> = rows
                    .iter()
                    .flat_map(|&j| cols.iter().map(move |&k| (j, k)))
                    .map(|(j, k)| self.expected_latency(j, k))
                    .collect();
                if !values.is_empty() {
                    out[a.index()][b.index()] = median(&mut values);
                }
            }
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Options for dataset ingestion.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub sigma: f64,
    pub intra_region_ms: f64,
    pub macros: HashMap<String, MacroRegion>,
}

impl LoadOptions {
    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            intra_region_ms: DEFAULT_INTRA_REGION_MS,
            macros: bundled_macro_assignments(),
        }
    }
}

/// Reads a `source,destination,mean_rtt_ms` table. Regions are numbered in order
/// of first appearance; the diagonal falls back to `intra_region_ms`.
pub fn read_latency_dataset<R: Read>(
    reader: R,
    opts: &LoadOptions,
) -> Result<(RegionTable, LatencyModel), TopologyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut table = RegionTable::new();
    let mut entries: HashMap<(RegionId, RegionId), f64> = HashMap::new();
    let intern = |table: &mut RegionTable, name: &str| -> Result<RegionId, TopologyError> {
        if let Some(id) = table.id_of(name) {
            return Ok(id);
        }
        let macro_region = *opts
            .macros
            .get(name)
            .ok_or_else(|| TopologyError::UnknownRegion(name.to_string()))?;
        table.push(name, macro_region)
    };

    for record in rdr.records() {
        let record = record?;
        let from = record.get(0).unwrap_or_default();
        let to = record.get(1).unwrap_or_default();
        let value: f64 = record
            .get(2)
            .unwrap_or_default()
            .parse()
            .map_err(|_| TopologyError::NonPositiveLatency {
                from: from.to_string(),
                to: to.to_string(),
                value: f64::NAN,
            })?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(TopologyError::NonPositiveLatency {
                from: from.to_string(),
                to: to.to_string(),
                value,
            });
        }
        let j = intern(&mut table, from)?;
        let k = intern(&mut table, to)?;
        if entries.insert((j, k), value).is_some() {
            return Err(TopologyError::DuplicatePair(from.to_string(), to.to_string()));
        }
    }

    let m = table.len();
    if m == 0 {
        return Err(TopologyError::Empty);
    }
    let mut means = vec![vec![0.0; m]; m];
    for (j, row) in means.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = match entries.get(&(j, k)) {
                Some(&v) => v,
                None if j == k => opts.intra_region_ms,
                None => {
                    return Err(TopologyError::MissingPair(
                        table.get(j).name.clone(),
                        table.get(k).name.clone(),
                    ))
                }
            };
        }
    }
    let model = LatencyModel::from_expected(&means, opts.sigma)?;
    Ok((table, model))
}

pub fn load_latency_dataset(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(RegionTable, LatencyModel), TopologyError> {
    let file = std::fs::File::open(path)?;
    read_latency_dataset(file, opts)
}

/// The bundled 40-region snapshot.
pub fn bundled_topology(sigma: f64, intra_region_ms: f64) -> Result<(RegionTable, LatencyModel), TopologyError> {
    let opts = LoadOptions {
        sigma,
        intra_region_ms,
        macros: bundled_macro_assignments(),
    };
    read_latency_dataset(BUNDLED_LATENCY_CSV.as_bytes(), &opts)
}
