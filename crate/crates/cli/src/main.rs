use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use reach_irl::data::save_dataset_json;
use reach_irl::eval::{
    export_weights, generate, load_models, read_report, save_runs, write_report, Experiment, ExperimentConfig,
    GenerateConfig, RmseReport, Split, TrainedModel, ALL_POSTURES,
};

/// Learn and evaluate time-varying cost weights of two-link reaching movements.
#[derive(Debug, Parser)]
#[command(name = "reach-irl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Generate(GenerateArgs),
    /// Learn weights per posture and section count.
    Train(ExperimentArgs),
    /// Evaluate learned weights on held-out trials.
    Crossval(ExperimentArgs),
    /// Evaluate learned weights on another subject.
    Iscv(ExperimentArgs),
    /// Recompute and print the report from its per-trial values.
    Report(OutputArgs),
    /// Write column-normalized weights for plotting.
    ExportWeights(ExportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// JSON generation config; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "data")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON experiment config; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated section counts, e.g. `1,6,8`.
    #[arg(long, value_delimiter = ',')]
    sections: Option<Vec<usize>>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, default_value = "results")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, default_value = "results")]
    output: PathBuf,
    /// Also write `weights_normalized.json`.
    #[arg(long)]
    json: bool,
}

impl ExperimentArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            config.dataset = d.clone();
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(s) = &self.sections {
            config.sections = s.clone();
        }
        if let Some(o) = &self.output {
            config.output = o.clone();
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<reach_irl::Error>().map_or("cli", |e| e.kind());
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let body = json!({ "error": { "kind": kind, "message": e.to_string(), "causes": causes } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Train(args) => cmd_train(&args.config()?),
        Command::Crossval(args) => cmd_crossval(&args.config()?),
        Command::Iscv(args) => cmd_iscv(&args.config()?),
        Command::Report(args) => cmd_report(&args.output),
        Command::ExportWeights(args) => {
            let models = load_models(&args.output)?;
            if models.is_empty() {
                bail!("no learned weights in {}", args.output.display());
            }
            let table = export_weights(&models, &args.output, args.json)?;
            println!("wrote {} weight entries for {} models", table.len(), models.len());
            Ok(())
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let mut config: GenerateConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => GenerateConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let (dataset, truth) = generate(&config)?;
    fs::create_dir_all(&args.output)?;
    save_dataset_json(&dataset, &args.output.join("dataset.json"))?;
    fs::write(args.output.join("ground_truth.json"), serde_json::to_string_pretty(&truth)?)?;
    println!(
        "wrote {} trials for {} subjects to {}",
        dataset.len(),
        dataset.subjects.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_train(config: &ExperimentConfig) -> anyhow::Result<()> {
    let experiment = Experiment::load(config.clone())?;
    let out = experiment.train();
    for d in &out.diagnostics {
        log::warn!("{d}");
    }
    if out.runs.is_empty() {
        bail!("no run produced weights: {}", out.diagnostics.join("; "));
    }
    save_runs(&out.runs, &config.output)?;
    let mut report = read_report(&config.output)?;
    report.set_split(Split::Train, out.runs.iter().map(|r| r.train_row.clone()).collect(), out.diagnostics);
    write_report(&report, &config.output)?;
    print_rows(&report, Split::Train);
    Ok(())
}

/// Learned models matching the config's postures and section counts.
fn selected_models(experiment: &Experiment) -> anyhow::Result<Vec<TrainedModel>> {
    let postures = experiment.postures();
    let models: Vec<TrainedModel> = load_models(&experiment.config.output)?
        .into_iter()
        .filter(|m| postures.contains(&m.posture) && experiment.config.sections.contains(&m.sections))
        .collect();
    if models.is_empty() {
        bail!("no learned weights in {}; run `train` first", experiment.config.output.display());
    }
    Ok(models)
}

fn cmd_crossval(config: &ExperimentConfig) -> anyhow::Result<()> {
    let experiment = Experiment::load(config.clone())?;
    let models = selected_models(&experiment)?;
    let rows = experiment.cross_validate(&models);
    let mut report = read_report(&config.output)?;
    report.set_split(Split::CrossVal, rows, Vec::new());
    write_report(&report, &config.output)?;
    print_rows(&report, Split::CrossVal);
    Ok(())
}

fn cmd_iscv(config: &ExperimentConfig) -> anyhow::Result<()> {
    let experiment = Experiment::load(config.clone())?;
    let models = selected_models(&experiment)?;
    let (other, subject) = experiment.iscv_target()?;
    let (rows, skipped) = experiment.iscv(&models, &other, &subject)?;
    for s in &skipped {
        log::warn!("{s}");
    }
    let mut report = read_report(&config.output)?;
    report.set_split(Split::Iscv, rows, skipped);
    write_report(&report, &config.output)?;
    print_rows(&report, Split::Iscv);
    Ok(())
}

fn cmd_report(dir: &Path) -> anyhow::Result<()> {
    let report = read_report(dir)?;
    if report.rows.is_empty() {
        bail!("no report rows in {}", dir.display());
    }
    let report = report.reaggregated();
    write_report(&report, dir)?;
    for split in [Split::Train, Split::CrossVal, Split::Iscv] {
        print_rows(&report, split);
    }
    for d in &report.diagnostics {
        println!("[{}] {}", d.split, d.message);
    }
    Ok(())
}

fn print_rows(report: &RmseReport, split: Split) {
    let rows: Vec<_> = report.rows.iter().filter(|r| r.split == split).collect();
    if rows.is_empty() {
        return;
    }
    println!("{split}");
    println!("{:>8} {:>8} {:>4} {:>16} {:>16} {:>16} {:>6}", "posture", "sections", "n", "q1 (deg)", "q2 (deg)", "q (deg)", "failed");
    let cell = |m: &Option<reach_irl::eval::MeanStd>| match m {
        Some(m) => format!("{:.3} ± {:.3}", m.mean, m.std),
        None => "-".to_owned(),
    };
    for r in rows {
        let label = if r.posture == ALL_POSTURES { "ALL" } else { r.posture.as_str() };
        println!(
            "{:>8} {:>8} {:>4} {:>16} {:>16} {:>16} {:>6}",
            label,
            r.sections,
            r.n_trials,
            cell(&r.q1),
            cell(&r.q2),
            cell(&r.q),
            r.failed.len()
        );
    }
}
