//! `hdbn`: run the emotion-aware recommender pipeline from the command line.
//!
//! Every command reads the same flat `key = value` configuration (optionally
//! from `--config`, then `--preset`, `--output` and `--set` overrides) and
//! writes its reports into the configured output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdbn::evaluation::MetricsReport;
use hdbn::experiment::{self as ex, ExperimentConfig, Session};
use hdbn::Error;

#[derive(Debug, Parser)]
#[command(name = "hdbn", version, about = "Emotion-aware music recommendation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file with one `key = value` per line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named hyperparameter preset: emomusiclj or emomusiclj-small.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory (overrides the `output` key).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Root seed (overrides the `seed` key).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate interaction and music CSVs.
    Ingest,
    /// Generate the configured synthetic dataset.
    Synth,
    /// Cluster users into preference groups.
    Group,
    /// Train the global mood network.
    Pretrain,
    /// Fine-tune one mood network per group.
    Finetune,
    /// Train the full recommender end to end.
    Train,
    /// Evaluate HDBN and baselines on the test split.
    Evaluate,
    /// Print top-T recommendations for one user and emotion as JSON.
    Recommend {
        #[arg(long)]
        user: String,
        #[arg(long)]
        emotion: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Train and evaluate the full model and each ablation variant.
    Ablate,
    /// Export mood curves along each latent dimension.
    SweepLed,
    /// Export one user's history and recommendations with their moods.
    CaseStudy,
    /// Run data, group, pretrain, finetune, train and evaluate in order.
    Pipeline,
}

fn config(common: &Common) -> hdbn::Result<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_pairs(&[])?,
    };
    let mut overrides = Vec::new();
    if let Some(p) = &common.preset {
        overrides.push(format!("preset={p}"));
    }
    if let Some(o) = &common.output {
        overrides.push(format!("output={}", o.display()));
    }
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend(common.set.iter().cloned());
    base.with_overrides(&overrides)
}

fn print_table(reports: &[MetricsReport], cutoffs: &[usize]) {
    println!("{}", MetricsReport::table_header(cutoffs).join("\t"));
    for r in reports {
        println!("{}", r.table_row().join("\t"));
    }
}

fn run(cli: Cli) -> hdbn::Result<()> {
    let s = Session::open(config(&cli.common)?)?;
    let out = s.dir.root().display().to_string();
    match cli.command {
        Command::Ingest => {
            let st = ex::cmd_ingest(&s)?;
            println!("{} users, {} tracks, {} interactions -> {out}", st.users, st.music, st.interactions);
        }
        Command::Synth => {
            let st = ex::cmd_synth(&s)?;
            println!("{} users, {} tracks, {} interactions -> {out}", st.users, st.music, st.interactions);
        }
        Command::Group => {
            let r = ex::cmd_group(&s)?;
            println!("{} groups, sizes {:?}", r.groups.n_groups, r.sizes);
        }
        Command::Pretrain => {
            let log = ex::cmd_pretrain(&s)?;
            if let Some(last) = log.last() {
                println!("global data KL {:.4} after {} epochs", last.data_kl, log.len());
            }
        }
        Command::Finetune => {
            let set = ex::cmd_finetune(&s)?;
            println!("fine-tuned {} group networks", set.n_groups());
        }
        Command::Train => {
            ex::cmd_train(&s)?;
            println!("model written to {}", s.dir.path("train.bin").display());
        }
        Command::Evaluate => print_table(&ex::cmd_evaluate(&s)?, &s.cfg.cutoffs),
        Command::Recommend { user, emotion, top } => {
            let rec = ex::cmd_recommend(&s, &user, &emotion, top)?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Ablate => print_table(&ex::cmd_ablate(&s)?, &s.cfg.cutoffs),
        Command::SweepLed => {
            let dims = ex::cmd_sweep_led(&s)?;
            println!("{dims} dimension curves -> {}", s.dir.path("sweep_led.csv").display());
        }
        Command::CaseStudy => {
            let r = ex::cmd_case_study(&s)?;
            println!("user {} emotion {} -> {}", r.study.user, r.study.emotion, s.dir.path("case_study.csv").display());
        }
        Command::Pipeline => print_table(&ex::cmd_pipeline(&s)?, &s.cfg.cutoffs),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
