//! Result files written after a run.
//!
//! | file | columns |
//! |------|---------|
//! | `metrics.csv` | `slot,gini,hhi,cv,lc` (slot 0 is the initial state; `cv` is blank when undefined) |
//! | `slots.jsonl` | one slot outcome per line |
//! | `population_final.csv` | `validator,region,macro_region` |
//! | `region_histogram.csv` | `slot` then one column per macro-region |
//! | `marginal_benefit.csv` | `slot,marginal_benefit,moved` |
//! | `summary.json` | config echo, terminal metrics, run wall time |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::engine::{macro_counts_by_name, SimulationResult};
use crate::metrics::MetricsSnapshot;
use crate::sources::SourceKind;
use crate::topology::MacroRegion;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SLOTS_FILE: &str = "slots.jsonl";
pub const POPULATION_FILE: &str = "population_final.csv";
pub const HISTOGRAM_FILE: &str = "region_histogram.csv";
pub const MARGINAL_BENEFIT_FILE: &str = "marginal_benefit.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Serialize)]
struct SourceRecord<'a> {
    kind: SourceKind,
    region: &'a str,
    a: f64,
    b: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub config: &'a ScenarioConfig,
    pub regions: usize,
    sources: Vec<SourceRecord<'a>>,
    pub initial: &'a MetricsSnapshot,
    #[serde(rename = "final")]
    pub last: &'a MetricsSnapshot,
    pub mean_cv: Option<f64>,
    pub moves: usize,
    pub canonical_rate: f64,
    pub initial_macro_counts: std::collections::BTreeMap<&'static str, u32>,
    pub final_macro_counts: std::collections::BTreeMap<&'static str, u32>,
    pub wall_time_secs: f64,
}

pub fn summary(result: &SimulationResult) -> Summary<'_> {
    let cvs: Vec<f64> = result.metrics.iter().filter_map(|m| m.cv).collect();
    let n = result.outcomes.len().max(1) as f64;
    Summary {
        config: &result.config,
        regions: result.region_names.len(),
        sources: result
            .sources
            .iter()
            .map(|s| SourceRecord {
                kind: s.kind,
                region: &result.region_names[s.region],
                a: s.a,
                b: s.b,
            })
            .collect(),
        initial: &result.initial_metrics,
        last: result.final_metrics(),
        mean_cv: (!cvs.is_empty()).then(|| cvs.iter().sum::<f64>() / cvs.len() as f64),
        moves: result.outcomes.iter().filter(|o| o.decision.moves).count(),
        canonical_rate: result.outcomes.iter().filter(|o| o.canonical).count() as f64 / n,
        initial_macro_counts: macro_counts_by_name(&result.macro_histograms[0]),
        final_macro_counts: macro_counts_by_name(result.macro_histograms.last().expect("initial histogram")),
        wall_time_secs: result.wall_time_secs,
    }
}

fn csv_writer(path: &Path) -> std::io::Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn write_metrics(result: &SimulationResult, path: &Path) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["slot", "gini", "hhi", "cv", "lc"])?;
    for m in std::iter::once(&result.initial_metrics).chain(&result.metrics) {
        w.write_record([
            m.slot.to_string(),
            m.gini.to_string(),
            m.hhi.to_string(),
            m.cv.map(|c| c.to_string()).unwrap_or_default(),
            m.lc.to_string(),
        ])?;
    }
    w.flush()
}

fn write_slots(result: &SimulationResult, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for o in &result.outcomes {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn write_population(result: &SimulationResult, path: &Path) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["validator", "region", "macro_region"])?;
    for (id, &r) in result.final_population.iter().enumerate() {
        w.write_record([id.to_string().as_str(), &result.region_names[r], result.region_macros[r].name()])?;
    }
    w.flush()
}

fn write_histogram(result: &SimulationResult, path: &Path) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["slot"];
    header.extend(MacroRegion::ALL.iter().map(|m| m.name()));
    w.write_record(&header)?;
    for (slot, h) in result.macro_histograms.iter().enumerate() {
        let mut row = vec![slot.to_string()];
        row.extend(h.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

fn write_marginal_benefit(result: &SimulationResult, path: &Path) -> std::io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["slot", "marginal_benefit", "moved"])?;
    for o in &result.outcomes {
        w.write_record([o.slot.to_string(), o.marginal_benefit.to_string(), o.decision.moves.to_string()])?;
    }
    w.flush()
}

/// Writes every result file into `out_dir`, creating it if needed.
pub fn export_results(result: &SimulationResult, out_dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_metrics(result, &out_dir.join(METRICS_FILE))?;
    write_slots(result, &out_dir.join(SLOTS_FILE))?;
    write_population(result, &out_dir.join(POPULATION_FILE))?;
    write_histogram(result, &out_dir.join(HISTOGRAM_FILE))?;
    write_marginal_benefit(result, &out_dir.join(MARGINAL_BENEFIT_FILE))?;
    let mut w = BufWriter::new(File::create(out_dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut w, &summary(result))?;
    w.write_all(b"\n")?;
    w.flush()
}
