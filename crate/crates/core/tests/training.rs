//! Seeded determinism and resume behaviour of full training runs.

use std::fs;

use coe_core::policy::load_checkpoint;
use coe_core::reward::OracleSimilarity;
use coe_core::trainer::{read_curves, train, ArchConfig, RunPaths, TrainConfig, TrainingCurvePoint};
use coe_core::world::generate_dataset;

fn small_config() -> TrainConfig {
    TrainConfig {
        train_tasks: 16,
        arch: ArchConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            context: 256,
        },
        steps: 4,
        sft_epochs: 1,
        batch_prompts: 1,
        max_new: 12,
        checkpoint_every: 2,
        ..Default::default()
    }
}

/// Curve rows without the wall-clock column.
fn timeless(curves: &[TrainingCurvePoint]) -> Vec<TrainingCurvePoint> {
    curves.iter().map(|p| TrainingCurvePoint { ms: 0, ..*p }).collect()
}

#[test]
fn same_seed_same_run() {
    let config = small_config();
    let data = generate_dataset(&config.world, config.train_tasks).unwrap();
    let oracle = OracleSimilarity::new(&config.world);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = train(&config, &data, &RunPaths::new(a.path()), false, &oracle).unwrap();
    let rb = train(&config, &data, &RunPaths::new(b.path()), false, &oracle).unwrap();
    assert_eq!(ra.params.checksum(), rb.params.checksum());
    assert_eq!(timeless(&ra.curves), timeless(&rb.curves));
    assert_eq!(ra.sft_losses, rb.sft_losses);

    let other = TrainConfig { seed: 18, ..config };
    let c = tempfile::tempdir().unwrap();
    let rc = train(&other, &data, &RunPaths::new(c.path()), false, &oracle).unwrap();
    assert_ne!(ra.params.checksum(), rc.params.checksum());
}

#[test]
fn resume_continues_without_duplicating_steps() {
    let config = small_config();
    let data = generate_dataset(&config.world, config.train_tasks).unwrap();
    let oracle = OracleSimilarity::new(&config.world);
    let full = tempfile::tempdir().unwrap();
    let reference = train(&config, &data, &RunPaths::new(full.path()), false, &oracle).unwrap();

    // interrupt a second run after step 3: the last complete checkpoint is
    // step 2 and the curve already holds step 3
    let dir = tempfile::tempdir().unwrap();
    let paths = RunPaths::new(dir.path());
    train(&config, &data, &paths, false, &oracle).unwrap();
    let ckpt = paths.checkpoints();
    for name in ["step_4.bin", "step_4.state.json", "final.bin"] {
        fs::remove_file(ckpt.join(name)).unwrap();
    }
    let text = fs::read_to_string(paths.curves()).unwrap();
    let kept: Vec<&str> = text.lines().take(4).collect();
    fs::write(paths.curves(), kept.join("\n") + "\n").unwrap();

    let resumed = train(&config, &data, &paths, true, &oracle).unwrap();
    let steps: Vec<usize> = read_curves(&paths.curves()).unwrap().iter().map(|p| p.step).collect();
    assert_eq!(steps, vec![1, 2, 3, 4]);
    assert_eq!(timeless(&resumed.curves), timeless(&reference.curves));
    assert_eq!(resumed.params.checksum(), reference.params.checksum());
    assert_eq!(
        load_checkpoint(&paths.final_weights()).unwrap().checksum(),
        reference.params.checksum()
    );

    let changed = TrainConfig { seed: 5, ..config.clone() };
    assert!(train(&changed, &data, &paths, true, &oracle).is_err());
}

#[test]
fn resume_extends_the_step_budget() {
    let config = small_config();
    let data = generate_dataset(&config.world, config.train_tasks).unwrap();
    let oracle = OracleSimilarity::new(&config.world);
    let full = tempfile::tempdir().unwrap();
    let reference = train(&config, &data, &RunPaths::new(full.path()), false, &oracle).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let paths = RunPaths::new(dir.path());
    let short = TrainConfig { steps: 3, ..config.clone() };
    train(&short, &data, &paths, false, &oracle).unwrap();
    let extended = train(&config, &data, &paths, true, &oracle).unwrap();
    assert_eq!(extended.curves.iter().map(|p| p.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert_eq!(timeless(&extended.curves), timeless(&reference.curves));
    assert_eq!(extended.params.checksum(), reference.params.checksum());
}

#[test]
fn zero_steps_is_sft_only() {
    let config = TrainConfig { steps: 0, ..small_config() };
    let data = generate_dataset(&config.world, config.train_tasks).unwrap();
    let oracle = OracleSimilarity::new(&config.world);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config, &data, &RunPaths::new(dir.path()), false, &oracle).unwrap();
    assert!(out.curves.is_empty());
    assert_eq!(out.params.checksum(), out.sft_params.checksum());
    assert_eq!(out.sft_losses.len(), 1);
}
