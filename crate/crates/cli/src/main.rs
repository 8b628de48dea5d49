//! Single entry point tying the lab together: train, curate, analyze,
//! theory, report.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use aepo_core::config::ExperimentConfig;
use aepo_core::curator;
use aepo_core::entropy::{batch_threshold, hwe_detect_parts, SemanticVocab};
use aepo_core::report;
use aepo_core::theory;
use aepo_core::train;
use aepo_core::TrajectoryRecord;

#[derive(Parser)]
#[command(name = "aepo", about = "Entropy-guided policy optimization lab")]
struct Cli {
    /// Print the resolved configuration (defaults merged with --config) and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the training mode (aepo, grpo, dapo).
    #[arg(long, global = true)]
    mode: Option<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment and write metrics plus checkpoints.
    Train {
        /// Output directory.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Curate a cold-start corpus from logged responses.
    Curate {
        /// Input corpus JSONL: {problem_id, source, pass_rate, responses}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "runs/curate")]
        out: PathBuf,
        /// Number of equal-width pass-rate brackets.
        #[arg(long, default_value_t = 9)]
        brackets: usize,
        /// Problems kept per bracket.
        #[arg(long, default_value_t = 64)]
        quota: usize,
    },
    /// Compute entropy profiles for a trajectory JSONL dump.
    Analyze {
        /// Input trajectory JSONL: {prompt, tokens, logprobs, entropies, accuracy, seed}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "runs/analyze")]
        out: PathBuf,
    },
    /// Run the numerical validation suite and write a report JSON.
    Theory {
        #[arg(long, default_value = "runs/theory")]
        out: PathBuf,
    },
    /// Emit CSV series bundles from a metrics log.
    Report {
        /// metrics.jsonl produced by `train`.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "runs/report")]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_flat_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = &cli.mode {
        config.mode = mode.parse()?;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = resolve_config(&cli)?;

    if cli.print_config {
        print!("{}", config.to_flat_string());
        return Ok(());
    }

    match cli.command {
        None => bail!("no subcommand given; see --help"),
        Some(Command::Train { out, resume }) => {
            let artifacts = train::run_train(&config, &out, resume.as_deref())?;
            println!(
                "trained {} iterations; metrics at {}",
                artifacts.iterations_run,
                artifacts.metrics_path.display()
            );
        }
        Some(Command::Curate {
            input,
            out,
            brackets,
            quota,
        }) => run_curate(&config, &input, &out, brackets, quota)?,
        Some(Command::Analyze { input, out }) => run_analyze(&config, &input, &out)?,
        Some(Command::Theory { out }) => {
            fs::create_dir_all(&out)?;
            let report = theory::run_all(config.seed)?;
            let path = out.join("theory_report.json");
            let file = File::create(&path)?;
            serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
            for check in &report.checks {
                println!(
                    "{}: {} (estimate {:.6}, expected {:.6}, tolerance {:.6})",
                    check.name,
                    if check.pass { "pass" } else { "FAIL" },
                    check.estimate,
                    check.expected,
                    check.tolerance
                );
            }
            if !report.all_pass {
                bail!("theory checks failed; see {}", path.display());
            }
            println!("report at {}", path.display());
        }
        Some(Command::Report { metrics, out }) => {
            let files = report::run_report(&metrics, &out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn run_curate(
    config: &ExperimentConfig,
    input: &Path,
    out: &Path,
    brackets: usize,
    quota: usize,
) -> Result<()> {
    let reader = BufReader::new(File::open(input)?);
    let mut problems = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        problems.push(serde_json::from_str::<curator::ProblemEntry>(&line)?);
    }
    let corpus = curator::select_responses(&problems, brackets, quota, config.seed)?;

    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("curated.jsonl"))?);
    for entry in &corpus.entries {
        writeln!(w, "{}", serde_json::to_string(entry)?)?;
    }
    w.flush()?;

    let mut csv = BufWriter::new(File::create(out.join("bracket_summary.csv"))?);
    writeln!(csv, "bracket,count,mean_chosen_length,mean_target")?;
    for s in curator::bracket_summaries(&corpus) {
        writeln!(
            csv,
            "{},{},{},{}",
            s.bracket, s.count, s.mean_chosen_length, s.mean_target
        )?;
    }
    csv.flush()?;

    for (source, reason) in &corpus.rejected_sources {
        eprintln!("source '{source}' rejected: {reason}");
    }
    if !corpus.empty_brackets.is_empty() {
        eprintln!("empty brackets: {:?}", corpus.empty_brackets);
    }
    println!(
        "curated {} problems across {} brackets into {}",
        corpus.entries.len(),
        brackets,
        out.display()
    );
    Ok(())
}

fn run_analyze(config: &ExperimentConfig, input: &Path, out: &Path) -> Result<()> {
    let reader = BufReader::new(File::open(input)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str::<TrajectoryRecord>(&line)?);
    }
    if records.is_empty() {
        bail!("no trajectories in {}", input.display());
    }
    let vocab = if config.semantic_allowlist.is_empty() {
        SemanticVocab::all_but_stop(config.vocab_size)
    } else {
        SemanticVocab::new(
            config.semantic_allowlist.iter().copied(),
            (config.vocab_size - 1) as u32,
        )?
    };
    let entropy_refs: Vec<&[f64]> = records
        .iter()
        .filter(|r| !r.entropies.is_empty())
        .map(|r| r.entropies.as_slice())
        .collect();
    let tau = batch_threshold(&entropy_refs, config.quantile)?;

    fs::create_dir_all(out)?;
    let mut profiles = BufWriter::new(File::create(out.join("profiles.jsonl"))?);
    let mut csv = BufWriter::new(File::create(out.join("trajectory_stats.csv"))?);
    writeln!(csv, "length,nhe,accuracy")?;
    for r in &records {
        let profile = hwe_detect_parts(
            &r.entropies,
            &r.tokens,
            tau,
            config.window,
            &vocab,
            config.hwe_mode,
        )?;
        writeln!(csv, "{},{},{}", r.tokens.len(), profile.hwe_count, r.accuracy)?;
        writeln!(profiles, "{}", serde_json::to_string(&profile)?)?;
    }
    profiles.flush()?;
    csv.flush()?;
    println!(
        "analyzed {} trajectories (tau_high = {tau:.6}) into {}",
        records.len(),
        out.display()
    );
    Ok(())
}
