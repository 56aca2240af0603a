use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use geodec::config::{parse_config, Paradigm, ScenarioConfig};
use geodec::engine::{run_scenario, Simulation};
use geodec::export::export_results;
use geodec::preset::{expand_preset_by_name, NamedScenario};
use geodec::topology::{bundled_macro_assignments, load_latency_dataset, read_macro_assignments, LoadOptions, MacroRegion};

const WORKERS_ENV: &str = "GEODEC_WORKERS";

#[derive(Parser)]
#[command(name = "geodec", version, about = "Validator geography simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario from a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named preset (every scenario goes to its own subdirectory).
    Preset {
        name: String,
        #[arg(long)]
        paradigm: Paradigm,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        validators: Option<usize>,
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long)]
        committee_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print macro-region median latencies of a dataset as CSV.
    LatencyHeatmap {
        dataset: PathBuf,
        /// `name,macro` table; defaults to the bundled assignments.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
}

fn init_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run_one(config: &ScenarioConfig, out: &Path) -> Result<()> {
    let result = run_scenario(config)?;
    export_results(&result, out).with_context(|| format!("writing results to {}", out.display()))?;
    let last = result.final_metrics();
    println!(
        "{}: {} slots in {:.1}s, final gini {:.4} hhi {:.4} lc {}",
        out.display(),
        result.outcomes.len(),
        result.wall_time_secs,
        last.gini,
        last.hhi,
        last.lc
    );
    Ok(())
}

fn heatmap(dataset: &Path, regions: Option<&Path>) -> Result<()> {
    let macros = match regions {
        Some(p) => read_macro_assignments(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => bundled_macro_assignments(),
    };
    let opts = LoadOptions {
        macros,
        ..LoadOptions::new(0.5)
    };
    let (table, model) = load_latency_dataset(dataset, &opts).with_context(|| format!("loading {}", dataset.display()))?;
    let grid = model.macro_median_latency(&table);
    let mut header = vec!["from".to_string()];
    header.extend(MacroRegion::ALL.iter().map(|m| m.name().to_string()));
    println!("{}", header.join(","));
    for m in MacroRegion::ALL {
        let row: Vec<String> = grid[m.index()]
            .iter()
            .map(|v| if v.is_nan() { String::new() } else { format!("{v:.1}") })
            .collect();
        println!("{},{}", m.name(), row.join(","));
    }
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    init_workers()?;
    match cli.command {
        Command::Run { config, out } => {
            let cfg = parse_config(&config).with_context(|| format!("invalid config {}", config.display()))?;
            run_one(&cfg, &out)
        }
        Command::Preset {
            name,
            paradigm,
            seed,
            validators,
            slots,
            committee_size,
            out,
        } => {
            let mut scenarios: Vec<NamedScenario> = expand_preset_by_name(&name, paradigm)?;
            for s in &mut scenarios {
                let c = &mut s.config;
                if let Some(v) = seed {
                    c.seed = v;
                }
                if let Some(v) = validators {
                    c.validators.count = v;
                }
                if let Some(v) = slots {
                    c.slots = v;
                }
                if committee_size.is_some() {
                    c.committee_size = committee_size;
                }
                c.validate().with_context(|| format!("preset {name}/{}", s.name))?;
            }
            let failures: Vec<String> = scenarios
                .par_iter()
                .filter_map(|s| {
                    let dir = out.join(&s.name);
                    let res = std::fs::create_dir_all(&dir)
                        .map_err(anyhow::Error::from)
                        .and_then(|_| std::fs::write(dir.join("config.toml"), s.config.to_toml()).map_err(Into::into))
                        .and_then(|_| run_one(&s.config, &dir));
                    res.err().map(|e| format!("{}: {e:#}", s.name))
                })
                .collect();
            if !failures.is_empty() {
                bail!("{} scenario(s) failed:\n{}", failures.len(), failures.join("\n"));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config).with_context(|| format!("invalid config {}", config.display()))?;
            let sim = Simulation::new(cfg.clone()).with_context(|| format!("invalid config {}", config.display()))?;
            println!(
                "ok: {} with {} validators over {} regions, {} sources, {} slots",
                cfg.paradigm,
                cfg.validators.count,
                sim.table().len(),
                sim.sources().len(),
                cfg.slots
            );
            Ok(())
        }
        Command::LatencyHeatmap { dataset, regions } => heatmap(&dataset, regions.as_deref()),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
