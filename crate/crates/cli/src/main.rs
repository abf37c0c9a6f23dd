//! Command-line front end for the proposal-generation pipeline. Each
//! subcommand maps to one pipeline stage; `run-all` chains them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tapgen_core::dataset::read_manifest;
use tapgen_core::pipeline::{
    load_config, run_all, stage_eval, stage_infer_tem, stage_nms, stage_propose, stage_score,
    stage_synth, stage_train_pem, stage_train_tem, PipelineConfig, Workdir,
};
use tapgen_core::{MetricReport, Result, Split};

#[derive(Parser)]
#[command(
    name = "tapgen",
    about = "Temporal action proposal generation on precomputed feature sequences",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Directory holding every pipeline artifact.
    #[arg(short, long)]
    workdir: PathBuf,

    /// TOML configuration file; missing sections fall back to defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Configuration override, repeatable: dotted.key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<(PipelineConfig, Workdir)> {
        let cfg = load_config(self.config.as_deref(), &self.set)?;
        Ok((cfg, Workdir::new(&self.workdir)))
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,

    /// Dataset split to process.
    #[arg(long, default_value = "val")]
    split: Split,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the working directory.
    Synth(Common),
    /// Train the boundary model on the train split.
    TrainTem(Common),
    /// Run boundary inference over one split.
    InferTem(SplitArgs),
    /// Generate candidate proposals for one split.
    Propose(SplitArgs),
    /// Train the confidence model on the train split's proposals.
    TrainPem(Common),
    /// Attach confidence scores to one split's proposals.
    Score(SplitArgs),
    /// Fuse scores and suppress redundant proposals for one split.
    Nms(SplitArgs),
    /// Evaluate one split's final proposals.
    Eval(SplitArgs),
    /// Run every stage in order and evaluate val and test.
    RunAll(Common),
}

fn print_report(label: &str, report: &MetricReport) {
    print!(
        "{label}: videos={} auc={}",
        report.videos, report.auc
    );
    for (an, ar) in &report.ar_at_an {
        print!(" ar@{an}={ar}");
    }
    println!();
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(common) => {
            let (cfg, work) = common.load()?;
            let out = stage_synth(&cfg, &work)?;
            for (split, path) in &out.manifests {
                let manifest = read_manifest(path)?;
                println!("synth[{split}]: videos={} manifest={}", manifest.videos.len(), path.display());
            }
            println!(
                "synth: train_families={} holdout_families={}",
                out.train_families, out.holdout_families
            );
        }
        Command::TrainTem(common) => {
            let (cfg, work) = common.load()?;
            let s = stage_train_tem(&cfg, &work)?;
            println!(
                "train-tem: videos={} epochs={} final_loss={} degenerate_task_windows={}",
                s.videos, s.epochs, s.final_loss, s.degenerate_task_windows
            );
        }
        Command::InferTem(args) => {
            let (cfg, work) = args.common.load()?;
            let videos = stage_infer_tem(&cfg, &work, args.split)?;
            println!("infer-tem[{}]: videos={videos}", args.split);
        }
        Command::Propose(args) => {
            let (cfg, work) = args.common.load()?;
            let s = stage_propose(&cfg, &work, args.split)?;
            println!(
                "propose[{}]: videos={} proposals={}",
                args.split, s.videos, s.proposals
            );
        }
        Command::TrainPem(common) => {
            let (cfg, work) = common.load()?;
            let s = stage_train_pem(&cfg, &work)?;
            println!(
                "train-pem: videos={} labeled={} positives={} negatives={} epochs={} final_mse={}",
                s.videos, s.labeled, s.positives, s.negatives, s.epochs, s.final_mse
            );
        }
        Command::Score(args) => {
            let (cfg, work) = args.common.load()?;
            let videos = stage_score(&cfg, &work, args.split)?;
            println!("score[{}]: videos={videos}", args.split);
        }
        Command::Nms(args) => {
            let (cfg, work) = args.common.load()?;
            let videos = stage_nms(&cfg, &work, args.split)?;
            println!("nms[{}]: videos={videos}", args.split);
        }
        Command::Eval(args) => {
            let (cfg, work) = args.common.load()?;
            let report = stage_eval(&cfg, &work, args.split)?;
            print_report(&format!("eval[{}]", args.split), &report);
        }
        Command::RunAll(common) => {
            let (cfg, work) = common.load()?;
            let s = run_all(&cfg, &work)?;
            print_report("run-all[val]", &s.val);
            print_report("run-all[test]", &s.test);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
