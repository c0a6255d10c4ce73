use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stablept::harness::{self, emit_csv, ExperimentPlan, Runner};
use stablept::metrics::{EmbeddingDump, Phase};
use stablept::model::save_checkpoint;
use stablept::model::{Backbone, ModelState, SoftInit, Variant};
use stablept::rng;
use stablept::taskgen::{build_templates, generate_task};
use stablept::trainer::{grad_check_total_loss, pooled_embeddings, train, EncodedTask, TrainConfig};
use stablept::{Error, Result};

#[derive(Parser)]
#[command(name = "stablept", version, about = "Input-separated prompt tuning on synthetic few-shot tasks")]
struct Cli {
    /// JSON file with plan, model and training settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunOpts {
    /// Number of seeds (0..n); overrides the config.
    #[arg(long)]
    seeds: Option<u64>,
    /// Training epochs; overrides the config.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    task_seed: Option<u64>,
}

#[derive(Args, Clone)]
struct SingleRun {
    #[command(flatten)]
    run: RunOpts,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value = "random")]
    strategy: SoftInit,
    #[arg(long, default_value_t = 0)]
    template_id: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Before,
    After,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task and write it as JSON lines plus a manifest.
    GenTask {
        #[command(flatten)]
        run: RunOpts,
    },
    /// Train one model and write its history and checkpoint.
    Train(SingleRun),
    /// Accuracy spread across soft-prompt initializations.
    StabilitySoft(RunOpts),
    /// Accuracy spread across hard templates.
    StabilityHard(RunOpts),
    /// All five variants over seeds.
    Ablate(RunOpts),
    /// Full variant over prompt lengths.
    SweepLength {
        #[command(flatten)]
        run: RunOpts,
        /// Comma-separated prompt lengths.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
    },
    /// Export pooled prompt embeddings of the test split and their metrics.
    ExportEmbeddings {
        #[command(flatten)]
        single: SingleRun,
        #[arg(long, value_enum, default_value = "after")]
        phase: PhaseArg,
    },
    /// Check analytic gradients of the total loss on a random micro-batch.
    GradCheck {
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value = "full")]
        variant: Variant,
    },
}

fn load_plan(cli: &Cli, run: Option<&RunOpts>) -> Result<ExperimentPlan> {
    let mut plan = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        }
        None => ExperimentPlan::default(),
    };
    if let Some(s) = cli.seed {
        plan.master_seed = s;
    }
    if let Some(w) = cli.workers {
        plan.workers = w;
    }
    plan.out_dir = cli.out_dir.clone();
    if let Some(run) = run {
        if let Some(n) = run.seeds {
            plan.seeds = (0..n).collect();
        }
        if let Some(e) = run.epochs {
            plan.train.epochs = e;
        }
        if let Some(x) = run.noise {
            plan.task.noise_level = x;
        }
        if let Some(s) = run.task_seed {
            plan.task.seed = s;
        }
    }
    Ok(plan)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_protocol(plan: &ExperimentPlan, name: &str, f: fn(&mut Runner, &ExperimentPlan) -> Result<harness::ResultsTable>) -> Result<()> {
    let mut runner = Runner::new(plan)?;
    let table = f(&mut runner, plan)?;
    let path = plan.out_dir.join(format!("{name}.csv"));
    emit_csv(&table, &path)?;
    for a in &table.aggregates {
        let std = a.std.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<40} n={:<3} mean={:.4} std={std}", a.group, a.n, a.mean);
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Trained (or freshly initialized) state for a single run, with the
/// encodings of its task.
fn single_state(plan: &ExperimentPlan, single: &SingleRun, do_train: bool) -> Result<(ModelState, EncodedTask, u64)> {
    let task = generate_task(plan.task.num_classes, plan.task.noise_level, plan.task.seed)?;
    let backbone = Arc::new(Backbone::new(&plan.model)?);
    let templates = build_templates(single.template_id + 1, plan.template_style_seed);
    let template = single.variant.effective_template(&templates[single.template_id], plan.model.mask_token_id);
    let data = EncodedTask::new(&backbone, &task, &template)?;
    let seed = rng::derive_seed(plan.master_seed, plan.seeds.first().copied().unwrap_or(0));
    let cfg = TrainConfig {
        seed,
        variant: single.variant,
        soft_init: single.strategy,
        ..plan.train.clone()
    };
    let state = ModelState::new(backbone, seed, single.strategy, &task)?;
    if !do_train {
        return Ok((state, data, seed));
    }
    let (state, history) = train(state, &data, &cfg)?;
    create_dir(&plan.out_dir)?;
    write(&plan.out_dir.join("history.json"), &history.to_json()?)?;
    save_checkpoint(&state, &plan.out_dir.join("checkpoint.json"))?;
    println!(
        "test_accuracy={:.6} selected_epoch={} wall_time={:.2}s",
        history.test_accuracy,
        history.selected_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into()),
        history.wall_time_secs
    );
    Ok((state, data, seed))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenTask { run } => {
            let plan = load_plan(&cli, Some(run))?;
            let task = generate_task(plan.task.num_classes, plan.task.noise_level, plan.task.seed)?;
            create_dir(&plan.out_dir)?;
            task.write_jsonl(&plan.out_dir.join("task.jsonl"))?;
            task.write_manifest(&plan.out_dir.join("task.manifest.json"))?;
            println!("wrote {} examples to {}", task.train.len() + task.dev.len() + task.test.len(), plan.out_dir.display());
        }
        Command::Train(single) => {
            let plan = load_plan(&cli, Some(&single.run))?;
            single_state(&plan, single, true)?;
        }
        Command::StabilitySoft(run) => run_protocol(&load_plan(&cli, Some(run))?, "stability_soft", Runner::stability_soft)?,
        Command::StabilityHard(run) => run_protocol(&load_plan(&cli, Some(run))?, "stability_hard", Runner::stability_hard)?,
        Command::Ablate(run) => {
            let mut plan = load_plan(&cli, Some(run))?;
            if cli.config.is_none() {
                plan.variants = Variant::ALL.to_vec();
            }
            run_protocol(&plan, "ablation", Runner::ablation)?
        }
        Command::SweepLength { run, lengths } => {
            let mut plan = load_plan(&cli, Some(run))?;
            if let Some(l) = lengths {
                plan.prompt_lengths = l.clone();
            } else if cli.config.is_none() {
                plan.prompt_lengths = vec![5, 10, 20, 50];
            }
            run_protocol(&plan, "length_sweep", Runner::length_sweep)?
        }
        Command::ExportEmbeddings { single, phase } => {
            if !single.variant.has_contrastive_head() {
                return Err(Error::Contract(format!("variant {} has no contrastive head", single.variant)));
            }
            let plan = load_plan(&cli, Some(&single.run))?;
            let phase = match phase {
                PhaseArg::Before => Phase::BeforeTuning,
                PhaseArg::After => Phase::AfterTuning,
            };
            let (state, data, seed) = single_state(&plan, single, phase == Phase::AfterTuning)?;
            let emb = pooled_embeddings(&state, &data.test, single.variant)?;
            let dump = EmbeddingDump::new(format!("seed{seed}"), phase, emb, data.test.labels.clone())?;
            create_dir(&plan.out_dir)?;
            let csv_path = plan.out_dir.join(format!("embeddings_{}.csv", phase.name()));
            dump.write_csv(&csv_path)?;
            let summary = dump.summary(seed)?;
            summary.write_json(&plan.out_dir.join(format!("metrics_{}.json", phase.name())))?;
            println!("sc={:.6} kl={:.6} mmd={:.6} wrote {}", summary.sc, summary.kl, summary.mmd, csv_path.display());
        }
        Command::GradCheck { batch, step, variant } => {
            let plan = load_plan(&cli, None)?;
            let task = generate_task(plan.task.num_classes, plan.task.noise_level, plan.task.seed)?;
            let backbone = Arc::new(Backbone::new(&plan.model)?);
            let template = variant.effective_template(&build_templates(1, plan.template_style_seed)[0], plan.model.mask_token_id);
            let data = EncodedTask::new(&backbone, &task, &template)?;
            let idx: Vec<usize> = (0..*batch).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data.train.labels[i]).collect();
            let seed = rng::derive_seed(plan.master_seed, 0);
            let state = ModelState::new(backbone, seed, SoftInit::Random, &task)?;
            let report = grad_check_total_loss(&state, &data.train.batch.select(&idx), &labels, *variant, *step)?;
            println!(
                "max_rel_error={:e} entries={} worst={:?} analytic={:e} numeric={:e}",
                report.max_rel_error, report.entries_checked, report.worst, report.worst_values.0, report.worst_values.1
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={msg}", e.kind());
            ExitCode::from(2)
        }
    }
}
