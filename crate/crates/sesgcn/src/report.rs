//! CSV tables and the aligned text summary.

use std::fmt::Write as _;
use std::path::Path;

use sesgcn_core::collision::CollisionReport;
use sesgcn_core::metrics::EvalReport;
use sesgcn_core::training::EpochRecord;

use crate::error::{AppError, AppResult};

fn csv_writer(path: &Path) -> AppResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> AppError {
    AppError::io(path, std::io::Error::other(e))
}

/// `epoch,train_loss_mm,val_loss_mm,lr`
pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record(["epoch", "train_loss_mm", "val_loss_mm", "lr"]).map_err(e)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss_mm.to_string(),
            r.val_loss_mm.to_string(),
            r.lr.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| AppError::io(path, err))
}

/// `joint,horizon_frames,mean_error_mm`, one row per joint and horizon.
pub fn write_per_joint(path: &Path, report: &EvalReport, joint_names: &[String]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record(["joint", "horizon_frames", "mean_error_mm"]).map_err(e)?;
    for r in &report.per_joint {
        let name = joint_names.get(r.joint).cloned().unwrap_or_else(|| r.joint.to_string());
        w.write_record([name, r.horizon_frames.to_string(), r.mean_error_mm.to_string()])
            .map_err(e)?;
    }
    w.flush().map_err(|err| AppError::io(path, err))
}

/// One row per scored window.
pub fn write_collision_log(path: &Path, report: &CollisionReport) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record([
        "sequence",
        "start_frame",
        "predicted",
        "truth",
        "min_clearance_m",
        "witness_frame",
        "witness_limb",
        "witness_link",
    ])
    .map_err(e)?;
    for l in &report.windows {
        w.write_record([
            l.sequence.clone(),
            l.start_frame.to_string(),
            l.predicted.to_string(),
            l.truth.to_string(),
            l.min_clearance_m.to_string(),
            l.witness_frame.to_string(),
            l.witness_limb.to_string(),
            l.witness_link.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| AppError::io(path, err))
}

/// Human-readable MPJPE table: one column per horizon, model then
/// zero-velocity.
pub fn format_eval(report: &EvalReport, fps: f64) -> String {
    let mut s = String::new();
    let label_w = report
        .per_action
        .iter()
        .map(|a| a.action.len())
        .chain([7])
        .max()
        .unwrap_or(7);
    let _ = write!(s, "{:<label_w$} {:>7}", "action", "windows");
    for h in &report.horizons {
        let ms = (*h as f64 / fps * 1000.0).round();
        let _ = write!(s, " {:>16}", format!("{h}f/{ms}ms"));
        let _ = write!(s, " {:>10}", "zero-vel");
    }
    s.push('\n');
    let mut row = |name: &str, n: usize, model: &[f64], zv: &[f64]| {
        let _ = write!(s, "{name:<label_w$} {n:>7}");
        for (m, z) in model.iter().zip(zv) {
            let _ = write!(s, " {m:>16.1} {z:>10.1}");
        }
        s.push('\n');
    };
    for a in &report.per_action {
        row(&a.action, a.windows, &a.mpjpe_mm, &a.zero_velocity_mm);
    }
    row(
        "overall",
        report.windows,
        &report.overall_mpjpe_mm,
        &report.zero_velocity_mpjpe_mm,
    );
    if let Some(p) = &report.parameters {
        let _ = writeln!(
            s,
            "parameters: {} (adjacency {}, weights {}, masked out {})",
            p.total, p.adjacency, p.weights, p.masked_out
        );
    }
    s.push_str("MPJPE in mm\n");
    s
}

pub fn format_collisions(report: &CollisionReport) -> String {
    format!(
        "windows {}\nTP {}  FP {}  FN {}  TN {}\nprecision {:.4}  recall {:.4}  F1 {:.4}\n",
        report.windows.len(),
        report.true_positives,
        report.false_positives,
        report.false_negatives,
        report.true_negatives,
        report.precision,
        report.recall,
        report.f1
    )
}
