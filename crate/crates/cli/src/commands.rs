use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use coe_core::analysis::{
    compare_attention, evaluate_judge, evaluate_mcq, run_ablation, AblationAxis, AblationSetup,
    SftSharing, FINAL_WINDOW, METRICS_SCHEMA,
};
use coe_core::policy::{load_checkpoint, PolicyParams};
use coe_core::reward::{OracleSimilarity, RemoteEmbeddingClient, SimilarityModel};
use coe_core::trainer::{train as run_training, RunPaths, TaskEncoder, TrainConfig, TrainingCurvePoint};
use coe_core::world::{generate_dataset, read_dataset_jsonl, write_dataset_jsonl, Sample};
use coe_core::CoeError;
use serde::Serialize;

use crate::config::ConfigArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestHandle;

#[derive(Debug, Args)]
pub struct WorldGenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of tasks.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Output file; relative paths land inside the run directory.
    #[arg(long, default_value = "dataset.jsonl")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Train on this dataset instead of generating one; its world config
    /// replaces the configured one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Continue the run in the run directory from its last checkpoint.
    #[arg(long)]
    resume: bool,
    /// Embedding service for the similarity reward instead of the oracle.
    #[arg(long)]
    embedding_url: Option<String>,
    #[arg(long, default_value = "10s")]
    embedding_timeout: humantime::Duration,
    #[arg(long, default_value_t = 2)]
    embedding_retries: u32,
}

/// Held-out tasks: read from a file or generated from the eval seed.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of tasks (defaults to the config's `eval_tasks`, or the whole file).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(subcommand)]
    mode: EvalMode,
}

#[derive(Debug, Subcommand)]
enum EvalMode {
    /// Greedy MCQ accuracy of one checkpoint.
    Mcq {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Open-set answers from every candidate, one oracle verdict per task.
    Judge {
        /// `NAME=CHECKPOINT`, at least twice.
        #[arg(long = "candidate", value_name = "NAME=PATH")]
        candidates: Vec<String>,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// group-size, event-length, similarity-mode or no-rs.
    #[arg(long)]
    axis: String,
    /// Comma-separated values (defaults depend on the axis).
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Fine-tune separately in every cell instead of once.
    #[arg(long)]
    per_cell_sft: bool,
    /// Held-out tasks per cell (defaults to the config's `eval_tasks`).
    #[arg(long)]
    eval_count: Option<usize>,
}

/// Errors reading user-named inputs are configuration errors.
fn input<T>(r: coe_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        CoeError::Io { path, source } => CliError::Config(format!("cannot read {}: {source}", path.display())),
        other => CliError::Core(other),
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        writeln!(w, "{}", serde_json::to_string(row)?).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Runs `work` between an opening and a closing manifest write.
fn with_manifest(
    run_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    work: impl FnOnce() -> CliResult<Vec<String>>,
) -> CliResult<()> {
    let handle = ManifestHandle::begin(run_dir, command, config, seed)?;
    let outcome = work();
    handle.finish(&outcome)?;
    outcome.map(|_| ())
}

fn load_policy(path: &Path, encoder: &TaskEncoder) -> CliResult<PolicyParams> {
    let params = input(load_checkpoint(path))?;
    if params.config.vocab_size != encoder.vocab.len() {
        return Err(CliError::Config(format!(
            "{} has vocabulary {} but the world needs {}",
            path.display(),
            params.config.vocab_size,
            encoder.vocab.len()
        )));
    }
    Ok(params)
}

pub fn world_gen(run_dir: &Path, args: WorldGenArgs) -> CliResult<()> {
    let config = args.config.resolve()?;
    let world = config.world.clone();
    let out = run_dir.join(&args.out);
    let snapshot = serde_json::json!({ "world": world, "count": args.count });
    with_manifest(run_dir, "world-gen", snapshot, Some(world.seed), || {
        let samples = generate_dataset(&world, args.count)?;
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_dataset_jsonl(&out, &world, &samples)?;
        println!("wrote {} tasks to {}", samples.len(), out.display());
        Ok(vec![out.display().to_string()])
    })
}

fn existing(run_dir: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .filter(|n| run_dir.join(n).exists())
        .map(|n| n.to_string())
        .collect()
}

pub fn train(run_dir: &Path, args: TrainArgs) -> CliResult<()> {
    let mut config = args.config.resolve()?;
    let samples = match &args.dataset {
        Some(path) => {
            let (world, samples) = input(read_dataset_jsonl(path))?;
            config.world = world;
            config.train_tasks = samples.len();
            config.validate()?;
            samples
        }
        None => generate_dataset(&config.world, config.train_tasks)?,
    };
    let similarity: Box<dyn SimilarityModel> = match &args.embedding_url {
        Some(url) => Box::new(RemoteEmbeddingClient::new(
            url,
            args.embedding_timeout.into(),
            args.embedding_retries,
        )?),
        None => Box::new(OracleSimilarity::new(&config.world)),
    };
    let snapshot = serde_json::to_value(&config)?;
    with_manifest(run_dir, "train", snapshot, Some(config.seed), || {
        let paths = RunPaths::new(run_dir);
        let out = run_training(&config, &samples, &paths, args.resume, similarity.as_ref())?;
        for (i, loss) in out.sft_losses.iter().enumerate() {
            println!("sft epoch {} loss {loss:.4}", i + 1);
        }
        let tail = &out.curves[out.curves.len().saturating_sub(FINAL_WINDOW)..];
        if !tail.is_empty() {
            let mean = |f: fn(&TrainingCurvePoint) -> f64| {
                tail.iter().map(f).sum::<f64>() / tail.len() as f64
            };
            println!(
                "last {} steps: r_a {:.3} r_e {:.3} r_s {:.3} kl {:.4}",
                tail.len(),
                mean(|p| p.r_a),
                mean(|p| p.r_e),
                mean(|p| p.r_s),
                mean(|p| p.kl)
            );
        }
        println!("run written to {}", run_dir.display());
        Ok(existing(
            run_dir,
            &[
                "config.json",
                "curves.csv",
                "sft.csv",
                "checkpoints/init.bin",
                "checkpoints/sft.bin",
                "checkpoints/final.bin",
            ],
        ))
    })
}

fn held_out(data: &DataArgs) -> CliResult<(TrainConfig, Vec<Sample>)> {
    let mut config = data.config.resolve()?;
    let samples = match &data.dataset {
        Some(path) => {
            let (world, mut samples) = input(read_dataset_jsonl(path))?;
            config.world = world;
            if let Some(n) = data.count {
                samples.truncate(n);
            }
            samples
        }
        None => {
            let n = data.count.unwrap_or(config.eval_tasks);
            generate_dataset(&config.world.with_seed(config.eval_seed()), n)?
        }
    };
    config.validate()?;
    Ok((config, samples))
}

fn parse_candidate(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
        _ => Err(CliError::Config(format!("--candidate expects NAME=PATH, got {spec:?}"))),
    }
}

pub fn eval(run_dir: &Path, args: EvalArgs) -> CliResult<()> {
    match args.mode {
        EvalMode::Mcq { checkpoint, data } => {
            let (config, samples) = held_out(&data)?;
            let encoder = TaskEncoder::new(&config.world);
            let params = load_policy(&checkpoint, &encoder)?;
            let oracle = OracleSimilarity::new(&config.world);
            let snapshot = serde_json::json!({ "mode": "mcq", "checkpoint": checkpoint, "config": config });
            with_manifest(run_dir, "eval", snapshot, Some(config.seed), || {
                let (metrics, records) = evaluate_mcq(
                    &params,
                    &encoder,
                    &samples,
                    config.max_new,
                    &oracle,
                    config.similarity_mode,
                )?;
                write_json(&run_dir.join("metrics.json"), &metrics)?;
                write_jsonl(&run_dir.join("records.jsonl"), &records)?;
                write_text(&run_dir.join("metrics.schema.json"), METRICS_SCHEMA)?;
                println!(
                    "mcq accuracy {:.4} over {} tasks; tag-valid {:.4}, mean chain length {:.3}, mean r_s {:.4}",
                    metrics.accuracy,
                    metrics.tasks,
                    metrics.tag_valid_rate,
                    metrics.mean_chain_length,
                    metrics.mean_r_s
                );
                Ok(vec!["metrics.json".into(), "records.jsonl".into(), "metrics.schema.json".into()])
            })
        }
        EvalMode::Judge { candidates, data } => {
            let specs = candidates
                .iter()
                .map(|s| parse_candidate(s))
                .collect::<CliResult<Vec<_>>>()?;
            if specs.len() < 2 {
                return Err(CoeError::FewerThanTwoCandidates(specs.len()).into());
            }
            let (config, samples) = held_out(&data)?;
            let encoder = TaskEncoder::new(&config.world);
            let loaded = specs
                .iter()
                .map(|(name, path)| Ok((name.clone(), load_policy(path, &encoder)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let oracle = OracleSimilarity::new(&config.world);
            let snapshot = serde_json::json!({ "mode": "judge", "candidates": candidates, "config": config });
            with_manifest(run_dir, "eval", snapshot, Some(config.seed), || {
                let (metrics, verdicts) = evaluate_judge(
                    &loaded,
                    &encoder,
                    &samples,
                    config.max_new,
                    &oracle,
                    config.similarity_mode,
                    &config.rewards,
                )?;
                write_json(&run_dir.join("metrics.json"), &metrics)?;
                write_jsonl(&run_dir.join("verdicts.jsonl"), &verdicts)?;
                write_text(&run_dir.join("metrics.schema.json"), METRICS_SCHEMA)?;
                for (name, rate) in &metrics.win_rates {
                    println!("{name}: win rate {rate:.4}");
                }
                Ok(vec!["metrics.json".into(), "verdicts.jsonl".into(), "metrics.schema.json".into()])
            })
        }
    }
}

pub fn attention(run_dir: &Path, args: AttentionArgs) -> CliResult<()> {
    let (config, samples) = held_out(&args.data)?;
    let encoder = TaskEncoder::new(&config.world);
    let base = load_policy(&args.base, &encoder)?;
    let candidate = load_policy(&args.candidate, &encoder)?;
    let snapshot = serde_json::json!({
        "base": args.base,
        "candidate": args.candidate,
        "config": config,
    });
    with_manifest(run_dir, "attention", snapshot, Some(config.seed), || {
        let cmp = compare_attention(&base, &candidate, &encoder, &samples)?;
        let report = cmp.to_string();
        write_json(
            &run_dir.join("attention.json"),
            &serde_json::json!({
                "report": report,
                "win_rate": cmp.win_rate,
                "improvement": cmp.improvement,
                "samples": cmp.samples,
            }),
        )?;
        println!("{report}");
        Ok(vec!["attention.json".into()])
    })
}

pub fn ablate(run_dir: &Path, args: AblateArgs) -> CliResult<()> {
    let axis: AblationAxis = args.axis.parse()?;
    let config = args.config.resolve()?;
    let values: Vec<String> = if args.values.is_empty() {
        axis.default_values().iter().map(|s| s.to_string()).collect()
    } else {
        args.values.clone()
    };
    for v in &values {
        axis.apply(&config, v)?;
    }
    let train_set = generate_dataset(&config.world, config.train_tasks)?;
    let eval_n = args.eval_count.unwrap_or(config.eval_tasks);
    let eval_set = generate_dataset(&config.world.with_seed(config.eval_seed()), eval_n)?;
    let oracle = OracleSimilarity::new(&config.world);
    let snapshot = serde_json::json!({
        "axis": axis,
        "values": values,
        "per_cell_sft": args.per_cell_sft,
        "eval_count": eval_n,
        "config": config,
    });
    with_manifest(run_dir, "ablate", snapshot, Some(config.seed), || {
        let setup = AblationSetup {
            base: &config,
            train_set: &train_set,
            eval_set: &eval_set,
            similarity: &oracle,
            root: run_dir,
            sft: if args.per_cell_sft {
                SftSharing::PerCell
            } else {
                SftSharing::FirstCell
            },
        };
        let table = run_ablation(&setup, axis, &values)?;
        write_text(&run_dir.join("ablation.csv"), &table.to_csv()?)?;
        let text = table.to_text();
        write_text(&run_dir.join("ablation.txt"), &text)?;
        print!("{text}");
        let mut artifacts = vec!["ablation.csv".to_string(), "ablation.txt".to_string()];
        artifacts.extend(values.iter().map(|v| format!("{axis}_{v}")));
        Ok(artifacts)
    })
}
