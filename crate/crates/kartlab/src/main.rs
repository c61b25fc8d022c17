//! Batch experiment pipeline. Thin wrapper over the library:
//!
//! ```text
//! kartlab pretrain    --out ckpt.json
//! kartlab finetune    --ckpt ckpt.json --out tuned.json
//! kartlab record-log  --ckpt tuned.json --out runs/
//! kartlab infer-exp   --ckpt tuned.json --logs runs/ --out runs/
//! kartlab control-exp --ckpt tuned.json --out runs/
//! kartlab report      --dir runs/
//! ```

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use kartlab::config::ExperimentConfig;
use kartlab::harness;
use kartlab::logfile;
use kartlab::nn::Checkpoint;
use kartlab::pretrain;
use kartlab::Result;

#[derive(Parser)]
#[command(name = "kartlab", version, about = "Adaptive kart-dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults cover everything if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed list, e.g. --seeds 1,2,3.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::desk_default(),
        };
        if let Some(seeds) = &self.seeds {
            cfg.run.seeds = seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collect cement-floor excitation data and train the network offline.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional CSV of the per-epoch training curve.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Settle a pre-trained checkpoint on the cement oval under the
    /// controller with gradient-descent adaptation.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record seeded 60 s drive logs on the two-mat course with the fixed
    /// model.
    RecordLog {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory for log_seed<N>.csv files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay recorded logs through fixed/gd/cmaml and compare window
    /// losses.
    InferExp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory holding log_seed<N>.csv files.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop multi-lap comparison of the three models.
    ControlExp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the tables from previously written experiment summaries.
    Report {
        /// Directory holding *_summary.json files.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Pretrain {
            common,
            out,
            seed,
            curve,
        } => {
            let cfg = common.load()?;
            eprintln!(
                "collecting {:.0} s of excitation data on {}",
                cfg.pretrain.collect_duration, cfg.pretrain_surface.default_id
            );
            let raw = pretrain::collect_data(
                &cfg.sim,
                &cfg.pretrain_surface,
                &cfg.pretrain,
                cfg.control.dt,
                seed,
            )?;
            let ds = pretrain::decimate(&raw, cfg.control.dt)?;
            eprintln!(
                "training on {} samples in {} segments",
                ds.total_samples(),
                ds.segments.len()
            );
            let trained = pretrain::train_offline(&ds, &cfg.pretrain, seed)?;
            eprintln!(
                "loss: initial {:.4} -> final {:.4}",
                trained.curve[0],
                trained.curve.last().unwrap()
            );
            Checkpoint::new(&trained.params, &trained.norm).save(&out)?;
            eprintln!("checkpoint written to {}", out.display());
            if let Some(curve_path) = curve {
                let mut csv = String::from("epoch,mean_window_loss\n");
                for (i, l) in trained.curve.iter().enumerate() {
                    csv.push_str(&format!("{i},{l}\n"));
                }
                std::fs::write(curve_path, csv)?;
            }
            Ok(())
        }
        Command::Finetune {
            common,
            ckpt,
            out,
            seed,
        } => {
            let cfg = common.load()?;
            let (params, norm) = Checkpoint::load(&ckpt)?.into_parts()?;
            let tuned = pretrain::finetune_on_track(&cfg, &params, &norm, seed)?;
            Checkpoint::new(&tuned, &norm).save(&out)?;
            eprintln!("fine-tuned checkpoint written to {}", out.display());
            Ok(())
        }
        Command::RecordLog { common, ckpt, out } => {
            let cfg = common.load()?;
            let (params, norm) = Checkpoint::load(&ckpt)?.into_parts()?;
            std::fs::create_dir_all(&out)?;
            for &seed in &cfg.run.seeds {
                let log = harness::record_drive_log(&cfg, &params, &norm, seed)?;
                let path = out.join(format!("log_seed{seed}.csv"));
                logfile::write_trajectory(&path, &log)?;
                eprintln!("recorded {} steps -> {}", log.len(), path.display());
            }
            Ok(())
        }
        Command::InferExp {
            common,
            ckpt,
            logs,
            out,
        } => {
            let cfg = common.load()?;
            let (params, norm) = Checkpoint::load(&ckpt)?.into_parts()?;
            let mut recorded = Vec::new();
            for &seed in &cfg.run.seeds {
                let path = logs.join(format!("log_seed{seed}.csv"));
                recorded.push((seed, logfile::read_trajectory(&path)?));
            }
            std::fs::create_dir_all(&out)?;
            let report =
                harness::run_inference_experiment(&cfg, &params, &norm, &recorded, Some(&out))?;
            print_inference(&report);
            Ok(())
        }
        Command::ControlExp { common, ckpt, out } => {
            let cfg = common.load()?;
            let (params, norm) = Checkpoint::load(&ckpt)?.into_parts()?;
            std::fs::create_dir_all(&out)?;
            let report = harness::run_control_experiment(&cfg, &params, &norm, Some(&out))?;
            print_control(&report);
            Ok(())
        }
        Command::Report { dir } => {
            if let Ok(report) = harness::read_inference_report(&dir) {
                print_inference(&report);
            }
            if let Ok(report) = harness::read_control_report(&dir) {
                print_control(&report);
            }
            Ok(())
        }
    }
}

fn print_inference(report: &harness::InferenceReport) {
    println!("cumulative mean window loss while replaying recorded drives");
    println!("{:>6} {:>12} {:>12} {:>12}  ordering", "seed", "fixed", "gd", "cmaml");
    for s in &report.seeds {
        println!(
            "{:>6} {:>12.4e} {:>12.4e} {:>12.4e}  {}",
            s.seed,
            s.fixed.mean_window_loss,
            s.gd.mean_window_loss,
            s.cmaml.mean_window_loss,
            if s.ordering_ok { "cmaml < gd < fixed" } else { "VIOLATED" }
        );
    }
    println!(
        "ordering holds on every seed: {}",
        report.ordering_ok_all_seeds
    );
}

fn print_control(report: &harness::ControlReport) {
    println!("mean per-lap control error (laps after the first)");
    println!("{:>6} {:>12} {:>12} {:>12}", "seed", "fixed", "gd", "cmaml");
    let seeds: Vec<u64> = report
        .runs
        .iter()
        .filter(|r| r.mode == "fixed")
        .map(|r| r.seed)
        .collect();
    for seed in seeds {
        let get = |mode: &str| {
            report
                .runs
                .iter()
                .find(|r| r.mode == mode && r.seed == seed)
                .map(|r| r.mean_lap_error)
                .unwrap_or(f64::NAN)
        };
        println!(
            "{:>6} {:>12.2} {:>12.2} {:>12.2}",
            seed,
            get("fixed"),
            get("gd"),
            get("cmaml")
        );
    }
    println!(
        "{:>6} {:>12.2} {:>12.2} {:>12.2}",
        "mean", report.mean_fixed, report.mean_gd, report.mean_cmaml
    );
    println!(
        "{:>6} {:>12.2} {:>12.2} {:>12.2}",
        "min", report.min_fixed, report.min_gd, report.min_cmaml
    );
    println!(
        "ordering cmaml < gd < fixed: {}; improvement over fixed: {:.1}%",
        report.ordering_ok,
        report.improvement_over_fixed * 100.0
    );
}
