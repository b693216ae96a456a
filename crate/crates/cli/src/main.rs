use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqgen::data::{DatasetStats, Partition};
use seqgen::runner::{self, ModelChoice, RunConfig};

#[derive(Parser)]
#[command(name = "seqgen", version, about = "Generation strategies for Top-K sequential recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and filter the raw interactions, write the dataset bundle.
    Preprocess(Common),
    /// Train the transformer and write the best checkpoint.
    Train(Common),
    /// Evaluate every configured strategy.
    Evaluate(Common),
    /// Evaluate the configured parameter grids.
    Sweep(Common),
    /// Measure per-user generation latency.
    Timing(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Partition to evaluate, overrides `eval.split`.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Checkpoint to load instead of `<out>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> seqgen::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.split {
            cfg.eval.split = match s {
                SplitArg::Validation => Partition::Validation,
                SplitArg::Test => Partition::Test,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn model(&self) -> ModelChoice {
        ModelChoice { checkpoint: self.checkpoint.clone() }
    }
}

fn run(cli: Cli) -> seqgen::Result<()> {
    match cli.command {
        Command::Preprocess(c) => {
            let cfg = c.load()?;
            let out = runner::cmd_preprocess(&cfg)?;
            println!("{}", DatasetStats::HEADER);
            println!("{}", out.stats);
            if !out.changed {
                eprintln!("bundle {} already up to date", out.bundle_dir.display());
            }
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let summary = runner::cmd_train(&cfg, |r| {
                println!("epoch {:>3}  loss {:.5}  val_ndcg@{} {:.5}", r.epoch, r.train_loss, cfg.train.eval_k, r.val_ndcg);
            })?;
            println!(
                "best epoch {} (val_ndcg {:.5}), {} parameters, checkpoint {}",
                summary.best_epoch,
                summary.best_val_ndcg,
                summary.parameter_count,
                cfg.checkpoint_path().display()
            );
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let ev = runner::cmd_evaluate(&cfg, &c.model(), cfg.eval.split)?;
            let k = ev.report.k;
            println!("strategy\tndcg@{k}\trecall@{k}\tmap@{k}\tp_ndcg\tper_user_secs");
            for (s, t) in ev.report.strategies.iter().zip(&ev.timings) {
                let p = s.vs_baseline.as_ref().map_or("-".to_owned(), |b| format!("{:.4}", b.ndcg.p));
                println!("{}\t{:.5}\t{:.5}\t{:.5}\t{}\t{:.6}", s.name, s.ndcg, s.recall, s.map, p, t.per_user_mean_secs);
            }
            eprintln!("report written to {}", ev.dir.display());
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            for p in runner::cmd_sweep(&cfg, &c.model())? {
                println!("{}\t{}\t{:.5}\t{:.5}\t{:.5}", p.sweep, p.strategy, p.ndcg, p.recall, p.map);
            }
        }
        Command::Timing(c) => {
            let cfg = c.load()?;
            println!("strategy\tsequences\tusers\tper_user_secs");
            for r in runner::cmd_timing(&cfg, &c.model())? {
                let s = r.sequences.map_or("-".to_owned(), |s| s.to_string());
                println!("{}\t{}\t{}\t{:.6}", r.strategy, s, r.users, r.per_user_mean_secs);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
