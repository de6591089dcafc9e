use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grpo::{grpo_step, GrpoContext, TrainingCurvePoint};
use super::optim::Optimizer;
use super::sft::{build_sft_dataset, sft_step};
use super::{TaskEncoder, TrainConfig};
use crate::error::{CoeError, Result};
use crate::policy::{load_checkpoint, save_checkpoint, PolicyParams};
use crate::reward::SimilarityModel;
use crate::world::Sample;

pub const CURVES_HEADER: &str = "step,r_a,r_e,r_s,total,kl,objective,ms";

/// Fixed layout of a training run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn curves(&self) -> PathBuf {
        self.root.join("curves.csv")
    }
    pub fn sft_log(&self) -> PathBuf {
        self.root.join("sft.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn init(&self) -> PathBuf {
        self.checkpoints().join("init.bin")
    }
    /// Post-SFT weights; also the frozen reference policy.
    pub fn sft(&self) -> PathBuf {
        self.checkpoints().join("sft.bin")
    }
    pub fn step(&self, step: usize) -> PathBuf {
        self.checkpoints().join(format!("step_{step}.bin"))
    }
    pub fn final_weights(&self) -> PathBuf {
        self.checkpoints().join("final.bin")
    }
    fn optimizer_state(&self, step: usize) -> PathBuf {
        self.checkpoints().join(format!("step_{step}.state.json"))
    }
    fn optimizer_moment(&self, step: usize, which: &str) -> PathBuf {
        self.checkpoints().join(format!("step_{step}.adam_{which}.bin"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StepState {
    step: usize,
    optimizer_t: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub paths: RunPaths,
    pub params: PolicyParams,
    pub sft_params: PolicyParams,
    pub sft_losses: Vec<f64>,
    pub sft_dropped: usize,
    /// Every GRPO row in `curves.csv`, including rows from before a resume.
    pub curves: Vec<TrainingCurvePoint>,
}

fn save_step(paths: &RunPaths, step: usize, params: &PolicyParams, opt: &Optimizer) -> Result<()> {
    save_checkpoint(params, &paths.step(step))?;
    save_checkpoint(&opt.m, &paths.optimizer_moment(step, "m"))?;
    save_checkpoint(&opt.v, &paths.optimizer_moment(step, "v"))?;
    // written last: its presence marks the checkpoint as complete
    let state = StepState {
        step,
        optimizer_t: opt.t,
    };
    let path = paths.optimizer_state(step);
    fs::write(&path, serde_json::to_string(&state)?).map_err(|e| CoeError::io(&path, e))
}

fn latest_complete_step(paths: &RunPaths) -> Option<usize> {
    let entries = fs::read_dir(paths.checkpoints()).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("step_")?
                .strip_suffix(".state.json")?
                .parse::<usize>()
                .ok()
        })
        .max()
}

pub fn read_curves(path: &Path) -> Result<Vec<TrainingCurvePoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

fn write_curves_header(path: &Path) -> Result<()> {
    fs::write(path, format!("{CURVES_HEADER}\n")).map_err(|e| CoeError::io(path, e))
}

/// Keeps the header and the rows with `step <= last`.
fn truncate_curves(path: &Path, last: usize) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| CoeError::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CoeError::io(path, e))?;
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|s| s <= last);
        if keep {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| CoeError::io(path, e))
}

fn append_curve(path: &Path, p: &TrainingCurvePoint) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| CoeError::io(path, e))?;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{}",
        p.step, p.r_a, p.r_e, p.r_s, p.total, p.kl, p.objective, p.ms
    )
    .map_err(|e| CoeError::io(path, e))
}

fn run_sft(
    config: &TrainConfig,
    encoder: &TaskEncoder,
    dataset: &[Sample],
    params: &mut PolicyParams,
    paths: &RunPaths,
) -> Result<(Vec<f64>, usize)> {
    let sft = build_sft_dataset(
        dataset,
        dataset.len(),
        encoder,
        config.sft_chain_fraction,
        config.arch.context,
        config.seed,
    )?;
    let mut optimizer = Optimizer::new(config.optimizer, params);
    let mut losses = Vec::with_capacity(config.sft_epochs);
    let mut log = String::from("epoch,loss\n");
    let mut order: Vec<usize> = (0..sft.examples.len()).collect();
    for epoch in 0..config.sft_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1_000 + epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.sft_batch) {
            let batch: Vec<_> = chunk.iter().map(|&i| sft.examples[i].clone()).collect();
            sum += sft_step(params, &mut optimizer, &batch, config.sft_learning_rate, config.grad_clip)?;
            batches += 1;
        }
        let mean = sum / batches.max(1) as f64;
        log::info!("sft epoch {} loss {mean:.4}", epoch + 1);
        log.push_str(&format!("{},{mean}\n", epoch + 1));
        losses.push(mean);
    }
    let path = paths.sft_log();
    fs::write(&path, log).map_err(|e| CoeError::io(&path, e))?;
    Ok((losses, sft.dropped))
}

fn read_sft_log(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .map(|s| {
            s.lines()
                .skip(1)
                .filter_map(|l| l.split(',').nth(1)?.parse().ok())
                .collect()
        })
        .unwrap_or_default()
}

/// SFT for `sft_epochs`, then `steps` GRPO steps.
///
/// With `resume`, an existing run in `paths` continues from its last
/// complete checkpoint; curve rows after that checkpoint are discarded and
/// regenerated, so no step appears twice. Apart from `steps`, the config
/// must equal the run's frozen `config.json`.
pub fn train(
    config: &TrainConfig,
    dataset: &[Sample],
    paths: &RunPaths,
    resume: bool,
    similarity: &dyn SimilarityModel,
) -> Result<TrainOutcome> {
    train_inner(config, dataset, paths, resume, similarity, None)
}

/// GRPO only, starting from (and referencing) already fine-tuned weights.
/// Used when several runs share an identical SFT phase.
pub fn train_from_sft(
    config: &TrainConfig,
    dataset: &[Sample],
    paths: &RunPaths,
    similarity: &dyn SimilarityModel,
    sft: &PolicyParams,
) -> Result<TrainOutcome> {
    train_inner(config, dataset, paths, false, similarity, Some(sft))
}

fn train_inner(
    config: &TrainConfig,
    dataset: &[Sample],
    paths: &RunPaths,
    resume: bool,
    similarity: &dyn SimilarityModel,
    pretrained: Option<&PolicyParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(CoeError::InvalidConfig("training dataset is empty".into()));
    }
    fs::create_dir_all(paths.checkpoints()).map_err(|e| CoeError::io(paths.checkpoints(), e))?;
    let config_json = serde_json::to_string_pretty(config)?;
    if resume && paths.config().exists() {
        let text = fs::read_to_string(paths.config()).map_err(|e| CoeError::io(paths.config(), e))?;
        let frozen: TrainConfig = serde_json::from_str(&text)?;
        // only the step budget may change, which extends or shortens the run
        let comparable = TrainConfig {
            steps: config.steps,
            ..frozen
        };
        if &comparable != config {
            return Err(CoeError::InvalidConfig(
                "resume config differs from the run's frozen config.json".into(),
            ));
        }
        fs::write(paths.config(), &config_json).map_err(|e| CoeError::io(paths.config(), e))?;
    } else {
        fs::write(paths.config(), &config_json).map_err(|e| CoeError::io(paths.config(), e))?;
    }

    let encoder = TaskEncoder::new(&config.world);
    let policy_config = encoder.policy_config(&config.arch);

    let (sft_params, sft_losses, sft_dropped) = if let Some(p) = pretrained {
        if p.config != policy_config {
            return Err(CoeError::InvalidConfig(
                "pretrained weights do not match the configured architecture".into(),
            ));
        }
        save_checkpoint(p, &paths.sft())?;
        (p.clone(), Vec::new(), 0)
    } else if resume && paths.sft().exists() {
        (load_checkpoint(&paths.sft())?, read_sft_log(&paths.sft_log()), 0)
    } else {
        let mut params = PolicyParams::init(policy_config, config.seed)?;
        save_checkpoint(&params, &paths.init())?;
        let (losses, dropped) = run_sft(config, &encoder, dataset, &mut params, paths)?;
        save_checkpoint(&params, &paths.sft())?;
        (params, losses, dropped)
    };
    let ref_params = sft_params.clone();
    let ref_checksum = ref_params.checksum();

    let mut params = sft_params.clone();
    let mut optimizer = Optimizer::new(config.optimizer, &params);
    let mut start = 1;
    match latest_complete_step(paths).filter(|_| resume) {
        Some(last) => {
            params = load_checkpoint(&paths.step(last))?;
            optimizer.m = load_checkpoint(&paths.optimizer_moment(last, "m"))?;
            optimizer.v = load_checkpoint(&paths.optimizer_moment(last, "v"))?;
            let text = fs::read_to_string(paths.optimizer_state(last))
                .map_err(|e| CoeError::io(paths.optimizer_state(last), e))?;
            let state: StepState = serde_json::from_str(&text)?;
            optimizer.t = state.optimizer_t;
            truncate_curves(&paths.curves(), last)?;
            start = last + 1;
            log::info!("resuming after step {last}");
        }
        None => write_curves_header(&paths.curves())?,
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(7);
    order.shuffle(&mut order_rng);

    let ctx = GrpoContext {
        encoder: &encoder,
        similarity,
        config,
    };
    for step in start..=config.steps {
        let batch: Vec<Sample> = (0..config.batch_prompts)
            .map(|j| dataset[order[((step - 1) * config.batch_prompts + j) % order.len()]].clone())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(step as u64);
        let (point, _) = grpo_step(&ctx, &mut params, &ref_params, &mut optimizer, &batch, step, &mut rng)?;
        if ref_params.checksum() != ref_checksum {
            return Err(CoeError::InvariantViolation("reference policy changed during GRPO".into()));
        }
        append_curve(&paths.curves(), &point)?;
        log::info!(
            "step {step} r_a {:.3} r_e {:.3} r_s {:.3} kl {:.4}",
            point.r_a,
            point.r_e,
            point.r_s,
            point.kl
        );
        if step == config.steps || (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
            save_step(paths, step, &params, &optimizer)?;
        }
    }
    save_checkpoint(&params, &paths.final_weights())?;
    Ok(TrainOutcome {
        paths: paths.clone(),
        curves: read_curves(&paths.curves())?,
        params,
        sft_params,
        sft_losses,
        sft_dropped,
    })
}
