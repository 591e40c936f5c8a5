//! `sesgcn <synth|train|sparsify|eval|collide|bench>`.
//!
//! Every subcommand resolves its configuration (defaults, then `--config`,
//! then flags), validates it, and writes it to `<out>/run_config.json` before
//! doing any work. Re-running with `--config <out>/run_config.json`
//! reproduces every output except measured latencies.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use sesgcn_core::collision::{evaluate_collisions, label_collisions, ClearanceMode, CollisionWindows};
use sesgcn_core::data::{make_split, synth_generate, window_sequences, DatasetSplit, Poses, SkeletonTopology, WindowedExample};
use sesgcn_core::metrics::evaluate;
use sesgcn_core::model::{count_parameters, ModelConfig, SesGcnModel, Variant};
use sesgcn_core::numerics::ParamRole;
use sesgcn_core::sparsify::teacher_student_train;
use sesgcn_core::training::train;

use crate::bench::benchmark_inference;
use crate::checkpoint::{load_model, save_model};
use crate::cobot::{load_cobots, CobotFile};
use crate::config::RunConfig;
use crate::corpus::{load_corpus, save_corpus, Corpus};
use crate::error::{AppError, AppResult};
use crate::masks::save_masks;
use crate::report;

pub const LOG_ENV: &str = "SESF_LOG";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Written by `bench`; the only output that differs between identical runs.
pub const LATENCY_FILE: &str = "latency.json";

#[derive(Debug, Parser)]
#[command(name = "sesgcn", version, about = "Separable sparse GCN pose forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; nothing is written outside it.
    #[arg(long)]
    out: PathBuf,
    /// Seed for generation, splitting, initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by `synth`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the run directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model variant.
    Train {
        #[command(flatten)]
        args: TrainArgs,
        /// vanilla, sts, sts_dw or ses.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Train a teacher, derive masks, train the sparse student.
    Sparsify {
        #[command(flatten)]
        args: TrainArgs,
    },
    /// MPJPE report on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Corpus directory written by `synth`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Model checkpoint (`.sesg`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate this single horizon, in frames.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Forecast-based collision scoring on the test split.
    Collide {
        #[command(flatten)]
        common: Common,
        /// Corpus directory written by `synth`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Model checkpoint (`.sesg`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cobot script; defaults to `cobot.json` inside the corpus.
        #[arg(long)]
        cobot: Option<PathBuf>,
        /// Collision distance threshold, meters.
        #[arg(long)]
        threshold_m: Option<f64>,
        /// axis or surface.
        #[arg(long, value_parser = parse_clearance)]
        clearance_mode: Option<ClearanceMode>,
    },
    /// Parameter counts and single-sequence latency.
    Bench {
        /// JSON run configuration; defaults apply to absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the results here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Initialization seed for a fresh model.
        #[arg(long)]
        seed: Option<u64>,
        /// vanilla, sts, sts_dw or ses.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Joint count.
        #[arg(long = "V")]
        joints: Option<usize>,
        /// Observed frames.
        #[arg(long = "T")]
        frames: Option<usize>,
        /// Benchmark a trained model instead of a fresh one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| format!("expected one of vanilla, sts, sts_dw, ses; got `{s}`"))
}

fn parse_clearance(s: &str) -> Result<ClearanceMode, String> {
    s.parse().map_err(|_| format!("expected axis or surface; got `{s}`"))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 1 invalid input, 2 runtime fault.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 1;
        }
    };
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() -> AppResult<()> {
    let level = match std::env::var(LOG_ENV) {
        Ok(v) => match v.as_str() {
            "error" => log::LevelFilter::Error,
            "info" => log::LevelFilter::Info,
            "debug" => log::LevelFilter::Debug,
            other => {
                return Err(AppError::Usage(format!(
                    "{LOG_ENV} must be error, info or debug; got `{other}`"
                )))
            }
        },
        Err(_) => log::LevelFilter::Info,
    };
    // A second call in the same process (tests) keeps the first logger.
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    Ok(())
}

fn base_config(path: Option<&Path>) -> AppResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn absolute(p: &Path) -> AppResult<PathBuf> {
    std::path::absolute(p).map_err(|e| AppError::io(p, e))
}

fn required(value: &Option<PathBuf>, flag: &str, what: &str) -> AppResult<PathBuf> {
    value
        .clone()
        .ok_or_else(|| AppError::Usage(format!("missing {flag}: {what} is required (or set it in the config)")))
}

/// Creates the run directory and echoes the resolved configuration into it.
fn start_run(out: &Path, cfg: &RunConfig) -> AppResult<()> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    crate::write_json(&out.join(RUN_CONFIG_FILE), cfg)
}

fn apply_common(cfg: &mut RunConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) -> AppResult<()> {
    if let Some(p) = flag {
        *slot = Some(p.clone());
    }
    if let Some(p) = slot.as_mut() {
        *p = absolute(p)?;
    }
    Ok(())
}

fn run(command: Command) -> AppResult<()> {
    match command {
        Command::Synth { common } => {
            let mut cfg = base_config(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            start_run(&common.out, &cfg)?;
            synth(&common.out, &cfg)
        }
        Command::Train { args, variant } => {
            let mut cfg = train_config(&args)?;
            if let Some(v) = variant {
                cfg.model.variant = v;
            }
            start_run(&args.common.out, &cfg)?;
            train_cmd(&args.common.out, &cfg)
        }
        Command::Sparsify { args } => {
            let cfg = train_config(&args)?;
            start_run(&args.common.out, &cfg)?;
            sparsify_cmd(&args.common.out, &cfg)
        }
        Command::Eval {
            common,
            corpus,
            checkpoint,
            horizon,
        } => {
            let mut cfg = base_config(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            set_path(&mut cfg.data.corpus, &corpus)?;
            set_path(&mut cfg.data.checkpoint, &checkpoint)?;
            if let Some(h) = horizon {
                cfg.eval.horizons = vec![h];
            }
            required(&cfg.data.checkpoint, "--checkpoint", "a model checkpoint")?;
            required(&cfg.data.corpus, "--corpus", "a corpus directory")?;
            start_run(&common.out, &cfg)?;
            eval_cmd(&common.out, &cfg)
        }
        Command::Collide {
            common,
            corpus,
            checkpoint,
            cobot,
            threshold_m,
            clearance_mode,
        } => {
            let mut cfg = base_config(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            set_path(&mut cfg.data.corpus, &corpus)?;
            set_path(&mut cfg.data.checkpoint, &checkpoint)?;
            set_path(&mut cfg.data.cobot, &cobot)?;
            if let Some(t) = threshold_m {
                cfg.collision.threshold_m = t;
            }
            if let Some(m) = clearance_mode {
                cfg.collision.clearance_mode = m;
            }
            required(&cfg.data.checkpoint, "--checkpoint", "a model checkpoint")?;
            let corpus_dir = required(&cfg.data.corpus, "--corpus", "a corpus directory")?;
            if cfg.data.cobot.is_none() {
                cfg.data.cobot = Some(corpus_dir.join(crate::corpus::COBOT_FILE));
            }
            start_run(&common.out, &cfg)?;
            collide_cmd(&common.out, &cfg)
        }
        Command::Bench {
            config,
            out,
            seed,
            variant,
            joints,
            frames,
            checkpoint,
        } => {
            let mut cfg = base_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if let Some(v) = variant {
                cfg.model.variant = v;
            }
            if let Some(v) = joints {
                cfg.model.joints = v;
            }
            if let Some(t) = frames {
                cfg.model.observed_frames = t;
            }
            set_path(&mut cfg.data.checkpoint, &checkpoint)?;
            match &out {
                Some(dir) => start_run(dir, &cfg)?,
                None => cfg.validate()?,
            }
            bench_cmd(out.as_deref(), &cfg)
        }
    }
}

fn train_config(args: &TrainArgs) -> AppResult<RunConfig> {
    let mut cfg = base_config(args.common.config.as_deref())?;
    apply_common(&mut cfg, &args.common);
    set_path(&mut cfg.data.corpus, &args.corpus)?;
    if args.no_clip {
        cfg.train.clip_norm = None;
    }
    required(&cfg.data.corpus, "--corpus", "a corpus directory")?;
    Ok(cfg)
}

fn synth(out: &Path, cfg: &RunConfig) -> AppResult<()> {
    let s = &cfg.synth;
    let topology = s.topology.clone().unwrap_or_else(SkeletonTopology::default_15);
    let mut seqs = synth_generate(&topology, s.sequences, s.length, s.fps, &s.motion, s.seed)?;
    let mut labeled = 0;
    if let Some(chains) = &s.cobot {
        let file = CobotFile {
            fps: s.fps,
            trajectories: seqs.iter().map(|q| (q.id.clone(), chains.clone())).collect(),
        };
        let cobots = file.trajectories()?;
        for seq in &mut seqs {
            seq.collision_frames = label_collisions(seq, &topology, &cobots[&seq.id], &cfg.collision)?;
            labeled += seq.collision_frames.len();
        }
        crate::write_json(&out.join(crate::corpus::COBOT_FILE), &file)?;
    }
    save_corpus(out, &topology, &seqs)?;
    println!(
        "wrote {} sequences of {} frames at {} fps to {}",
        seqs.len(),
        s.length,
        s.fps,
        out.display()
    );
    if s.cobot.is_some() {
        println!("cobot script written; {labeled} collision frames labeled");
    }
    Ok(())
}

struct Prepared {
    corpus: Corpus,
    split: DatasetSplit,
}

fn prepare(cfg: &RunConfig, out: &Path) -> AppResult<Prepared> {
    let dir = required(&cfg.data.corpus, "--corpus", "a corpus directory")?;
    let corpus = load_corpus(&dir)?;
    let split = make_split(&corpus.sequences, cfg.split.fractions, cfg.split.seed)?;
    crate::write_json(&out.join("split.json"), &split)?;
    Ok(Prepared { corpus, split })
}

fn check_joints(model: &ModelConfig, corpus: &Corpus) -> AppResult<()> {
    if model.joints != corpus.topology.joints() {
        return Err(AppError::Schema(format!(
            "model expects {} joints, corpus has {}",
            model.joints,
            corpus.topology.joints()
        )));
    }
    Ok(())
}

fn windows_of(
    cfg: &RunConfig,
    model: &ModelConfig,
    corpus: &Corpus,
    ids: &[String],
    what: &str,
) -> AppResult<Vec<WindowedExample>> {
    let seqs = DatasetSplit::select(&corpus.sequences, ids);
    let w = window_sequences(
        seqs,
        model.observed_frames,
        model.forecast_frames,
        cfg.windows.stride,
        cfg.windows.exclude_collisions,
    )?;
    log::info!("{what}: {} sequences, {} windows", ids.len(), w.len());
    Ok(w)
}

fn checkpoint_dir(out: &Path) -> AppResult<PathBuf> {
    let dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    Ok(dir)
}

/// Saves the restored model of a diverged run and names it in the error.
fn divergence(err: sesgcn_core::Error, model: &SesGcnModel, dir: &Path) -> AppError {
    if let sesgcn_core::Error::Diverged { .. } = err {
        let path = dir.join("last_good.sesg");
        if save_model(model, &path).is_ok() {
            eprintln!("last good parameters saved to {}", path.display());
        }
    }
    err.into()
}

fn train_cmd(out: &Path, cfg: &RunConfig) -> AppResult<()> {
    let p = prepare(cfg, out)?;
    check_joints(&cfg.model, &p.corpus)?;
    let train_w = windows_of(cfg, &cfg.model, &p.corpus, &p.split.train, "train")?;
    let val_w = windows_of(cfg, &cfg.model, &p.corpus, &p.split.validation, "validation")?;
    let dir = checkpoint_dir(out)?;
    let mut model = SesGcnModel::new(cfg.model.clone(), cfg.train.seed)?;
    let outcome = train(&mut model, &train_w, &val_w, &cfg.train).map_err(|e| divergence(e, &model, &dir))?;
    save_model(&outcome.best, &dir.join("best.sesg"))?;
    save_model(&model, &dir.join("final.sesg"))?;
    report::write_loss_history(&out.join("loss_history.csv"), &outcome.history)?;
    let summary = serde_json::json!({
        "variant": cfg.model.variant,
        "best_epoch": outcome.best_epoch,
        "best_val_loss_mm": outcome.best_val_loss_mm,
        "final_train_loss_mm": outcome.history.last().map(|r| r.train_loss_mm),
        "parameters": count_parameters(&outcome.best),
        "fingerprint": outcome.best.fingerprint(),
    });
    crate::write_json(&out.join("train_summary.json"), &summary)?;
    println!(
        "{}: best validation {:.3} mm at epoch {}; checkpoint {}",
        cfg.model.variant.name(),
        outcome.best_val_loss_mm,
        outcome.best_epoch,
        dir.join("best.sesg").display()
    );
    Ok(())
}

fn sparsify_cmd(out: &Path, cfg: &RunConfig) -> AppResult<()> {
    let p = prepare(cfg, out)?;
    check_joints(&cfg.model, &p.corpus)?;
    let train_w = windows_of(cfg, &cfg.model, &p.corpus, &p.split.train, "train")?;
    let val_w = windows_of(cfg, &cfg.model, &p.corpus, &p.split.validation, "validation")?;
    let dir = checkpoint_dir(out)?;
    let ts = teacher_student_train(&train_w, &val_w, &cfg.model, &cfg.train, &cfg.sparsify)?;
    save_model(&ts.teacher, &dir.join("teacher.sesg"))?;
    save_model(&ts.student, &dir.join("student.sesg"))?;
    save_masks(&ts.masks, &out.join("masks.json"))?;
    report::write_loss_history(&out.join("teacher_loss.csv"), &ts.report.teacher_history)?;
    report::write_loss_history(&out.join("student_loss.csv"), &ts.report.student_history)?;
    crate::write_json(&out.join("sparsify_report.json"), &ts.report)?;
    let r = &ts.report;
    println!(
        "teacher: best validation {:.3} mm, {} parameters",
        r.teacher_best_val_mm, r.teacher_parameters.total
    );
    println!(
        "student: best validation {:.3} mm, {} parameters ({} adjacency entries masked)",
        r.student_best_val_mm, r.student_parameters.total, r.student_parameters.masked_out
    );
    for l in &r.layers {
        println!(
            "layer {}: spatial {:.1}% zero, temporal {:.1}% zero",
            l.layer,
            100.0 * l.spatial,
            100.0 * l.temporal
        );
    }
    for w in &r.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn eval_cmd(out: &Path, cfg: &RunConfig) -> AppResult<()> {
    let ckpt = required(&cfg.data.checkpoint, "--checkpoint", "a model checkpoint")?;
    let model = load_model(&ckpt)?;
    let p = prepare(cfg, out)?;
    check_joints(model.config(), &p.corpus)?;
    let test_w = windows_of(cfg, model.config(), &p.corpus, &p.split.test, "test")?;
    let mut rep = evaluate(&model, &test_w, &cfg.eval.horizons, cfg.eval.batch_size)?;
    rep.parameters = Some(count_parameters(&model));
    crate::write_json(&out.join("report.json"), &rep)?;
    report::write_per_joint(&out.join("per_joint.csv"), &rep, &p.corpus.topology.joint_names)?;
    let text = report::format_eval(&rep, p.corpus.fps());
    fs::write(out.join("report.txt"), &text).map_err(|e| AppError::io(out.join("report.txt"), e))?;
    print!("{text}");
    Ok(())
}

fn collide_cmd(out: &Path, cfg: &RunConfig) -> AppResult<()> {
    let ckpt = required(&cfg.data.checkpoint, "--checkpoint", "a model checkpoint")?;
    let cobot_path = required(&cfg.data.cobot, "--cobot", "a cobot script")?;
    let model = load_model(&ckpt)?;
    let p = prepare(cfg, out)?;
    check_joints(model.config(), &p.corpus)?;
    let cobots = load_cobots(&cobot_path)?;
    let test: Vec<_> = p
        .split
        .test_set(&p.corpus.sequences)
        .into_iter()
        .cloned()
        .collect();
    let needed: BTreeMap<String, _> = test
        .iter()
        .filter_map(|s| cobots.get(&s.id).map(|c| (s.id.clone(), c.clone())))
        .collect();
    let windows = CollisionWindows {
        observed: model.config().observed_frames,
        forecast: model.config().forecast_frames,
        stride: cfg.windows.stride,
    };
    let rep = evaluate_collisions(
        &model,
        &test,
        &needed,
        &p.corpus.topology,
        &cfg.collision,
        windows,
        cfg.eval.batch_size,
    )?;
    crate::write_json(&out.join("collision_report.json"), &rep)?;
    report::write_collision_log(&out.join("collision_log.csv"), &rep)?;
    print!("{}", report::format_collisions(&rep));
    Ok(())
}

/// A fixed, smoothly varying input; latency does not depend on the values.
fn bench_input(frames: usize, joints: usize) -> AppResult<Poses> {
    let data = (0..frames * joints * 3)
        .map(|i| 300.0 * (0.37 * i as f64).sin())
        .collect();
    Ok(Poses::new(frames, joints, data)?)
}

/// Learnable adjacency entries of each encoder layer.
fn adjacency_per_layer(model: &SesGcnModel) -> Vec<usize> {
    (0..model.config().gcn_layers)
        .map(|l| {
            let prefix = format!("gcn.{l}.");
            model
                .store()
                .entries()
                .iter()
                .filter(|e| e.role == ParamRole::Adjacency && e.name.starts_with(&prefix))
                .map(|e| e.tensor.trainable_len())
                .sum()
        })
        .collect()
}

fn bench_cmd(out: Option<&Path>, cfg: &RunConfig) -> AppResult<()> {
    let model = match &cfg.data.checkpoint {
        Some(p) => load_model(p)?,
        None => SesGcnModel::new(cfg.model.clone(), cfg.bench.seed)?,
    };
    let mc = model.config();
    let params = count_parameters(&model);
    println!("variant: {}", mc.variant.name());
    println!("joints V: {}", mc.joints);
    println!("observed frames T: {}", mc.observed_frames);
    println!("forecast frames K: {}", mc.forecast_frames);
    let per_layer = adjacency_per_layer(&model);
    let listed: Vec<String> = per_layer.iter().map(usize::to_string).collect();
    if per_layer.windows(2).all(|w| w[0] == w[1]) {
        println!("adjacency parameters per layer: {}", listed[0]);
    } else {
        println!("adjacency parameters per layer: {}", listed.join(" "));
    }
    println!("adjacency parameters, all {} layers: {}", per_layer.len(), params.adjacency);
    println!("weight parameters: {}", params.weights);
    println!("masked-out adjacency entries: {}", params.masked_out);
    println!("total parameters: {}", params.total);
    let input = bench_input(mc.observed_frames, mc.joints)?;
    let lat = benchmark_inference(&model, &input, cfg.bench.warmup, cfg.bench.trials)?;
    println!(
        "latency: mean {:.3} ms, p95 {:.3} ms over {} trials",
        lat.mean_s * 1e3,
        lat.p95_s * 1e3,
        lat.trials
    );
    if let Some(dir) = out {
        crate::write_json(&dir.join("bench.json"), &params)?;
        crate::write_json(&dir.join(LATENCY_FILE), &lat)?;
    }
    Ok(())
}
