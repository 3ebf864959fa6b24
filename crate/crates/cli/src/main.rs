//! `ctcadapt`: simulate channels, train decoders, run and compare sessions.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctc_adapt::harness::{
    compare, read_session, render_summary, replay_session, rerender_report, run_experiment, train_on_trace,
    write_comparison, write_run, write_session, DecoderKind, ExperimentConfig, ScenarioChoice,
};
use ctc_adapt::trace::Trace;

#[derive(Parser)]
#[command(
    name = "ctcadapt",
    version,
    about = "Adaptive decoding for packet-level cross-technology links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an open-loop session and write its JSONL trace and sender logs.
    Simulate(Common),
    /// Train a model offline on the bootstrap sequence of a trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Session directory or trace.jsonl; simulated from the scenario when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one decoder end to end.
    Run {
        #[command(flatten)]
        common: Common,
        /// Replay a recorded session directory instead of the live generator
        /// (non-adaptive decoders only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score several decoders on one paired session.
    Compare(Common),
    /// Re-render summaries and rolling SER from a run or comparison directory.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Preset name: static, walking, moving-rx, abrupt, four-phase, drift, confusion, quiet.
    #[arg(long)]
    scenario: Option<String>,
    /// adaptive, frozen-model or variance-threshold; comma-separated or repeated for compare.
    #[arg(long, value_delimiter = ',')]
    decoder: Vec<DecoderKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Length of preset scenarios in seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// TOML experiment file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn base(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scenario {
            cfg.scenario = ScenarioChoice::Preset(s.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d > 0.0) {
                bail!("--duration-s must be positive");
            }
            cfg.duration_ms = (d * 1000.0).round() as u64;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration for a single decoder.
    fn single(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.base()?;
        match self.decoder.as_slice() {
            [] => {}
            [d] => cfg.decoder = *d,
            _ => bail!("this subcommand takes a single --decoder"),
        }
        Ok(cfg)
    }

    fn all(&self) -> Result<Vec<ExperimentConfig>> {
        let base = self.base()?;
        let decoders = if self.decoder.is_empty() {
            DecoderKind::ALL.to_vec()
        } else {
            self.decoder.clone()
        };
        Ok(decoders
            .into_iter()
            .map(|decoder| ExperimentConfig {
                decoder,
                ..base.clone()
            })
            .collect())
    }
}

fn load_trace(path: &Path) -> Result<Trace> {
    let file = if path.is_dir() {
        path.join("trace.jsonl")
    } else {
        path.to_path_buf()
    };
    let f = fs::File::open(&file).with_context(|| format!("opening {}", file.display()))?;
    Ok(Trace::read_jsonl(std::io::BufReader::new(f))?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.single()?;
            let open = ExperimentConfig {
                decoder: DecoderKind::FrozenModel,
                ..cfg
            };
            let session = ctc_adapt::harness::reference_session(&open, false)?;
            write_session(&c.out_dir, &session)?;
            println!(
                "wrote {} samples, {} packets to {}",
                session.trace.samples.len(),
                session.packets.len(),
                c.out_dir.display()
            );
        }
        Command::Train { common, trace } => {
            let cfg = common.single()?;
            let trace = match trace {
                Some(p) => load_trace(&p)?,
                None => {
                    let open = ExperimentConfig {
                        decoder: DecoderKind::FrozenModel,
                        ..cfg.clone()
                    };
                    ctc_adapt::harness::reference_session(&open, false)?.trace
                }
            };
            let boot = train_on_trace(&cfg, &trace)?;
            fs::create_dir_all(&common.out_dir)?;
            boot.params.save(&common.out_dir.join("checkpoint.json"))?;
            println!(
                "holdout accuracy {:.4}; checkpoint written to {}",
                boot.holdout_accuracy,
                common.out_dir.join("checkpoint.json").display()
            );
        }
        Command::Run { common, trace } => {
            let cfg = common.single()?;
            let run = match trace {
                Some(dir) => {
                    let session = read_session(&dir)?;
                    replay_session(&cfg, &session)?
                }
                None => {
                    let (session, run) = run_experiment(&cfg)?;
                    write_session(&common.out_dir, &session)?;
                    run
                }
            };
            write_run(&common.out_dir, &run)?;
            print!("{}", render_summary(&run.report));
        }
        Command::Compare(c) => {
            let cmp = compare(&c.all()?)?;
            write_comparison(&c.out_dir, &cmp)?;
            println!(
                "{:<20} {:>10} {:>14} {:>10} {:>12}",
                "decoder", "SER", "throughput", "crc pass", "T_I (s)"
            );
            for r in &cmp.table.rows {
                println!(
                    "{:<20} {:>10.4} {:>14.1} {:>10} {:>12}",
                    r.decoder.name(),
                    r.overall_ser,
                    r.throughput_bps,
                    r.packets_crc_pass,
                    ctc_adapt::harness::format_seconds(r.t_i_us)
                );
            }
            for p in &cmp.table.pairs {
                if let Some(red) = p.relative_reduction {
                    println!(
                        "{} vs {}: relative SER reduction {:.1}%",
                        p.decoder,
                        p.versus,
                        red * 100.0
                    );
                }
            }
        }
        Command::Report { out_dir } => {
            let mut dirs = Vec::new();
            if out_dir.join("summary.json").exists() {
                dirs.push(out_dir.clone());
            }
            for d in DecoderKind::ALL {
                let sub = out_dir.join(d.name());
                if sub.join("summary.json").exists() {
                    dirs.push(sub);
                }
            }
            if dirs.is_empty() {
                bail!("no summary.json under {}", out_dir.display());
            }
            for d in dirs {
                print!("{}", rerender_report(&d)?);
            }
        }
    }
    Ok(())
}
