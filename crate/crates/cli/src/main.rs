use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use merge_cli::{pipeline, reports, CliError, PipelineConfig};
use merge_core::variant::AblationMode;

#[derive(Parser)]
#[command(name = "merge", version, about = "Generate and score minimal NLI variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one mode: STANDARD, UNION_PH, POS_ONLY, PROB_ONLY, NONE or SCRAMBLED.
    #[arg(long)]
    mode: Option<AblationMode>,
    /// Override the subsampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract shared open-class words.
    Analyze(Common),
    /// Harvest suggestion sets from the scorers.
    Suggest(Common),
    /// Build seed and variant datasets.
    Build(Common),
    /// Score predictions and write reports.
    Evaluate(Common),
    /// Run significance tests on the predictions.
    Stats(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Analyze(c)
        | Command::Suggest(c)
        | Command::Build(c)
        | Command::Evaluate(c)
        | Command::Stats(c) => c,
    };
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(w) = common.workers {
        cfg.workers = w.max(1);
    }
    match &cli.command {
        Command::Analyze(_) => {
            let s = pipeline::analyze(&cfg)?;
            println!("problems\t{}", s.problems);
            println!("shared_words\t{}", s.shared_words);
            for (class, n) in &s.seeds_by_class {
                let words = s.words_by_class.get(class).copied().unwrap_or(0);
                println!("{class}\tseeds {n}\twords {words}");
            }
        }
        Command::Suggest(_) => {
            let s = pipeline::suggest(&cfg, None)?;
            println!("words\t{}\tresumed\t{}\tcomputed\t{}", s.words, s.resumed, s.computed);
        }
        Command::Build(c) => {
            let m = pipeline::build(&cfg, c.mode, c.seed)?;
            println!("eligible_seeds\t{}", m.seeds.eligible);
            for mode in &m.modes {
                println!("{}\tvariants {}\tseeds {}", mode.mode, mode.variants, mode.seeds_with_variants);
            }
        }
        Command::Evaluate(c) => {
            for (mode, rows) in reports::evaluate(&cfg, c.mode)? {
                for r in rows {
                    let mt = r.mt.map_or_else(|| "-".to_string(), |t| format!("{t:.0}"));
                    println!(
                        "{mode}\t{}\tSA_seed {:.1}\tSA_var {:.1}\tPA@90 {:.1}\tQT {:+.1}\tMT {mt}",
                        r.nli_model_id,
                        r.sa_seed * 100.0,
                        r.sa_var * 100.0,
                        r.pa_at_90 * 100.0,
                        r.qt
                    );
                }
            }
        }
        Command::Stats(c) => {
            for (mode, rows) in reports::stats(&cfg, c.mode)? {
                for r in rows {
                    match r.p {
                        Some(p) => println!("{mode}\t{}\tt {:.4}\tp {p:.4}", r.comparison, r.t.unwrap_or(f64::NAN)),
                        None => println!("{mode}\t{}\t{}", r.comparison, r.note),
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("merge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
