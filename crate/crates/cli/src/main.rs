//! `tilesim` command line: single runs, parameter sweeps, graph generation
//! and configuration checks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tilesim::config::RunConfig;
use tilesim::harness::{self, RunReport};
use tilesim::workload::GraphSpec;

#[derive(Parser)]
#[command(name = "tilesim", version, about = "Cycle-approximate mesh hierarchy simulator with a near-LLC accelerator engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and write `<label>.report.json`.
    Run {
        config: PathBuf,
        /// Override a config key or axis alias; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (default: $TILESIM_OUT, else the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one configuration per axis value plus engine-off baselines and
    /// write `sweep.csv` and every report.
    Sweep {
        config: PathBuf,
        /// Config key or alias (K, engine_tlb, engine_cache, translation, stride, n).
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a graph (`kron:scale=S,degree=D,seed=N`) and write it as an
    /// edge list, or as binary CSR when the file ends in `.csr1`.
    GenGraph {
        spec: String,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Parse and validate a configuration, then print it with defaults filled in.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn load(path: &Path, set: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    for kv in set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg = cfg.with(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(harness::output_dir)
}

fn summary(r: &RunReport) -> String {
    let speedup = r.speedup.map_or("-".to_string(), |s| format!("{s:.3}"));
    format!(
        "{:<32} cycles {:>12}  speedup {:>7}  load-to-use {:>7.2}",
        r.label, r.cycles, speedup, r.core.load_to_use.mean
    )
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { config, set, out } => {
            let cfg = load(&config, &set)?;
            let dir = out_dir(out);
            let mut report = harness::run(&cfg)?;
            // an empty name (`--set baseline=`) means no baseline
            if let Some(b) = cfg.baseline.as_deref().filter(|b| !b.is_empty()) {
                let base = RunReport::read(&dir, b)
                    .with_context(|| format!("baseline `{b}` must be run first into {}", dir.display()))?;
                report.attach_baseline(&base);
            }
            let path = report.write(&dir)?;
            println!("{}", summary(&report));
            println!("wrote {}", path.display());
        }
        Cmd::Sweep { config, axis, values, set, out } => {
            let cfg = load(&config, &set)?;
            let dir = out_dir(out);
            let result = harness::sweep(&cfg, &axis, &values)?;
            for row in result.baselines.iter().chain(&result.rows) {
                row.report.write(&dir)?;
                println!("{}", summary(&row.report));
            }
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("sweep.csv");
            std::fs::write(&path, result.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        Cmd::GenGraph { spec, output } => {
            let spec: GraphSpec = spec.parse()?;
            let g = spec.build()?;
            let mut w = BufWriter::new(File::create(&output).with_context(|| format!("creating {}", output.display()))?);
            if output.extension().is_some_and(|e| e == "csr1") {
                g.write_csr1(&mut w)?;
            } else {
                g.write_edge_list(&mut w)?;
            }
            w.flush()?;
            let r = g.report();
            println!(
                "nodes {} edges {} avg_degree {:.1} over_128 {:.1}%",
                r.nodes,
                r.edges,
                r.avg_degree,
                r.frac_over_128 * 100.0
            );
            println!("wrote {}", output.display());
        }
        Cmd::Validate { config, set } => {
            let cfg = load(&config, &set)?;
            print!("{}", cfg.to_toml_string());
            eprintln!("{}: ok", config.display());
        }
    }
    Ok(())
}
