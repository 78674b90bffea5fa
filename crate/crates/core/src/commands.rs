//! Batch entry points behind the command-line verbs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{write_annotations, write_feature_file, SyntheticSpec};
use crate::diagnostics::{
    convex_combination_angle_test, layernorm_modulus_test, rank_loss_experiment,
    two_point_mixing_test, PointSet,
};
use crate::error::{Error, Result};
use crate::eval::MapReport;
use crate::model::Detector;
use crate::train::{evaluate, Dataset, EpochLog, Trainer};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub logs: Vec<EpochLog>,
}

/// Trains (optionally resuming from a checkpoint) and writes
/// `checkpoint.bin` and `curve.csv` to `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate_data()?;
    let data = Dataset::load(&cfg.data)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    if let Some(path) = resume {
        trainer.resume(&Checkpoint::load(path)?)?;
    }
    create_dir(out)?;
    let logs = trainer.fit(&data, |log| {
        log::info!(
            "epoch {} lr {:.3e} loss {:.5}",
            log.epoch,
            log.lr,
            log.loss.total
        );
    })?;
    let mut curve = String::from(EpochLog::CSV_HEADER);
    curve.push('\n');
    for log in &logs {
        curve.push_str(&log.csv_row());
        curve.push('\n');
    }
    let checkpoint = out.join("checkpoint.bin");
    let curve_path = out.join("curve.csv");
    trainer.checkpoint().save(&checkpoint)?;
    write(&curve_path, &curve)?;
    Ok(TrainOutput {
        checkpoint,
        curve: curve_path,
        logs,
    })
}

/// Runs inference and evaluation; writes `metrics.csv` and
/// `detections.json` to `out`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<MapReport> {
    cfg.validate_data()?;
    let data = Dataset::load(&cfg.data)?;
    let mut detector = Detector::new(&cfg.model, cfg.seed)?;
    Checkpoint::load(checkpoint)?.restore_params(&mut detector.params)?;
    let (report, dets) = evaluate(&detector, &data, cfg)?;
    create_dir(out)?;
    write(&out.join("metrics.csv"), &report.to_csv())?;
    let per_video: Vec<serde_json::Value> = data
        .annotations
        .videos
        .iter()
        .zip(&dets)
        .map(|(v, d)| serde_json::json!({ "id": v.id, "detections": d }))
        .collect();
    let json =
        serde_json::to_string_pretty(&per_video).map_err(|e| Error::config(e.to_string()))?;
    write(&out.join("detections.json"), &json)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOutput {
    pub lines: Vec<String>,
    pub passed: bool,
}

/// Runs the diagnostics suites; writes `rank_loss.csv` and `summary.txt`.
pub fn cmd_diagnose(cfg: &RunConfig, out: &Path) -> Result<DiagnoseOutput> {
    cfg.validate()?;
    let d = &cfg.diagnostics;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lines = Vec::new();
    let mut passed = true;
    let mut verdict = |ok: bool| {
        passed &= ok;
        if ok {
            "pass"
        } else {
            "FAIL"
        }
    };

    for &dim in &d.modulus_dims {
        let r = layernorm_modulus_test(d.modulus_rows, dim, &mut rng)?;
        lines.push(format!(
            "layernorm modulus D={dim}: {} rows, max |‖x‖ − √(D−1)| = {:.3e}: {}",
            r.rows,
            r.max_deviation,
            verdict(r.passed())
        ));
    }

    let points = PointSet::random_positive(&mut rng, d.mixing_points, d.mixing_dim);
    let r = convex_combination_angle_test(&points, d.mixing_trials, &mut rng)?;
    lines.push(format!(
        "convex mixing n={} d={}: {} trials, {} violations (worst excess {:.3e}): {}",
        d.mixing_points,
        d.mixing_dim,
        r.trials,
        r.violations,
        r.worst_excess,
        verdict(r.passed())
    ));
    let r = two_point_mixing_test(d.mixing_trials, d.mixing_dim, &mut rng);
    lines.push(format!(
        "two-point mixing: {} trials, {} violations: {}",
        r.trials,
        r.violations,
        verdict(r.passed())
    ));

    let report = rank_loss_experiment(&d.rank_loss)?;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    lines.push(format!(
        "rank loss over {} seeds: attention S_c [{}], sgp S_c [{}]: {}",
        d.rank_loss.seeds,
        fmt(&report.mean_attention()),
        fmt(&report.mean_sgp()),
        verdict(report.ordering_holds())
    ));

    create_dir(out)?;
    write(&out.join("rank_loss.csv"), &report.to_csv())?;
    let mut summary = String::new();
    for l in &lines {
        writeln!(summary, "{l}").expect("write to string");
    }
    write(&out.join("summary.txt"), &summary)?;
    Ok(DiagnoseOutput { lines, passed })
}

/// Writes `annotations.json` and `features/<id>.tdf` for a synthetic spec.
pub fn cmd_generate(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let data = Dataset::synthetic(spec)?;
    let features = out.join("features");
    create_dir(&features)?;
    write_annotations(&data.annotations, &out.join("annotations.json"))?;
    for (v, a) in data.videos.iter().zip(&data.annotations.videos) {
        write_feature_file(&v.temporal, &features.join(format!("{}.tdf", a.id)))?;
    }
    Ok(())
}
