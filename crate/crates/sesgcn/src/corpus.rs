//! Directory corpus: `topology.json` plus one `<id>.seq` text file per
//! sequence.
//!
//! ```text
//! SEQ v1 fps=25 subject=s03 action=lift V=15
//! collisions=12,40
//! x0 y0 z0 x1 y1 z1 ...
//! ```
//!
//! The `collisions=` line is optional. Each following line holds one frame of
//! `3·V` millimetre values. Values are written with Rust's shortest
//! round-trip formatting, so save then load is bitwise exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sesgcn_core::data::{MotionSequence, Poses, SkeletonTopology};

use crate::error::{AppError, AppResult};

pub const TOPOLOGY_FILE: &str = "topology.json";
pub const SEQ_EXT: &str = "seq";
pub const COBOT_FILE: &str = "cobot.json";

/// A loaded corpus; sequences are ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub topology: SkeletonTopology,
    pub sequences: Vec<MotionSequence>,
}

impl Corpus {
    pub fn fps(&self) -> f64 {
        self.sequences[0].fps
    }
}

fn check_token(kind: &str, value: &str) -> AppResult<()> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(AppError::Schema(format!(
            "{kind} `{value}` must be non-empty and free of whitespace"
        )));
    }
    Ok(())
}

/// Renders one sequence in the `.seq` format.
pub fn format_sequence(seq: &MotionSequence) -> AppResult<String> {
    check_token("subject", &seq.subject_id)?;
    check_token("action", &seq.action_label)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "SEQ v1 fps={} subject={} action={} V={}",
        seq.fps,
        seq.subject_id,
        seq.action_label,
        seq.joints()
    );
    if !seq.collision_frames.is_empty() {
        let list: Vec<String> = seq.collision_frames.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "collisions={}", list.join(","));
    }
    for f in 0..seq.frames() {
        let mut first = true;
        for x in seq.poses.frame(f) {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{x}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes `dir/topology.json` and `dir/<id>.seq` for every sequence.
pub fn save_corpus(dir: &Path, topology: &SkeletonTopology, sequences: &[MotionSequence]) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    crate::write_json(&dir.join(TOPOLOGY_FILE), topology)?;
    for seq in sequences {
        check_token("sequence id", &seq.id)?;
        if seq.id.contains(['/', '\\']) {
            return Err(AppError::Schema(format!("sequence id `{}` contains a path separator", seq.id)));
        }
        let path = dir.join(format!("{}.{SEQ_EXT}", seq.id));
        fs::write(&path, format_sequence(seq)?).map_err(|e| AppError::io(&path, e))?;
    }
    Ok(())
}

struct Header {
    fps: f64,
    subject: String,
    action: String,
    joints: usize,
}

fn parse_header(line: &str, path: &Path) -> AppResult<Header> {
    let err = |m: String| AppError::parse(path, 1, m);
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("SEQ") || tokens.next() != Some("v1") {
        return Err(err("header must start with `SEQ v1`".into()));
    }
    let (mut fps, mut subject, mut action, mut joints) = (None, None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found `{tok}`")))?;
        let slot_taken = |taken: bool| {
            if taken {
                Err(err(format!("duplicate header key `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "fps" => {
                slot_taken(fps.is_some())?;
                let f: f64 = value.parse().map_err(|_| err(format!("bad fps `{value}`")))?;
                if !(f.is_finite() && f > 0.0) {
                    return Err(err(format!("fps must be positive, got `{value}`")));
                }
                fps = Some(f);
            }
            "subject" => {
                slot_taken(subject.is_some())?;
                subject = Some(value.to_string());
            }
            "action" => {
                slot_taken(action.is_some())?;
                action = Some(value.to_string());
            }
            "V" => {
                slot_taken(joints.is_some())?;
                joints = Some(value.parse().map_err(|_| err(format!("bad joint count `{value}`")))?);
            }
            other => return Err(err(format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| err(format!("header lacks `{k}=`"));
    Ok(Header {
        fps: fps.ok_or_else(|| missing("fps"))?,
        subject: subject.filter(|s| !s.is_empty()).ok_or_else(|| missing("subject"))?,
        action: action.filter(|s| !s.is_empty()).ok_or_else(|| missing("action"))?,
        joints: joints.ok_or_else(|| missing("V"))?,
    })
}

/// Parses one `.seq` file. `id` becomes the sequence id.
pub fn parse_sequence(text: &str, id: &str, path: &Path) -> AppResult<MotionSequence> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| AppError::parse(path, 1, "empty file"))?;
    let h = parse_header(header, path)?;
    if h.joints == 0 {
        return Err(AppError::Schema(format!("{}: V must be positive", path.display())));
    }
    let mut collisions = Vec::new();
    let mut data = Vec::new();
    let mut frames = 0usize;
    let mut peeked = lines.next();
    if let Some((n, line)) = peeked {
        if let Some(list) = line.strip_prefix("collisions=") {
            for item in list.split(',').filter(|s| !s.trim().is_empty()) {
                collisions.push(
                    item.trim()
                        .parse::<usize>()
                        .map_err(|_| AppError::parse(path, n, format!("bad collision frame `{item}`")))?,
                );
            }
            peeked = lines.next();
        }
    }
    let width = 3 * h.joints;
    for (n, line) in peeked.into_iter().chain(lines) {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| AppError::parse(path, n, format!("frame {frames}: bad number `{tok}`")))?;
            if !x.is_finite() {
                return Err(AppError::parse(
                    path,
                    n,
                    format!("frame {frames}: value {} is not finite", data.len() - before),
                ));
            }
            data.push(x);
        }
        if data.len() - before != width {
            return Err(AppError::parse(
                path,
                n,
                format!("frame {frames}: {} values, V={} needs {width}", data.len() - before, h.joints),
            ));
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(AppError::parse(path, 1, "sequence has no frames"));
    }
    let poses = Poses::new(frames, h.joints, data)?;
    MotionSequence::new(id, h.fps, h.subject, h.action, poses, collisions).map_err(|e| AppError::Schema(format!("{}: {e}", path.display())))
}

/// Loads every `.seq` file in `dir` (sorted by name) and the topology.
/// Other files are ignored.
pub fn load_corpus(dir: &Path) -> AppResult<Corpus> {
    let topo_path = dir.join(TOPOLOGY_FILE);
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AppError::io(dir, e))? {
        let entry = entry.map_err(|e| AppError::io(dir, e))?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == SEQ_EXT) && p.is_file() {
            names.push(p);
        }
    }
    if names.is_empty() {
        return Err(sesgcn_core::Error::Empty(format!("no .{SEQ_EXT} files in {}", dir.display())).into());
    }
    names.sort();
    let topology: SkeletonTopology = crate::read_json(&topo_path)?;
    topology
        .validate()
        .map_err(|e| AppError::Schema(format!("{}: {e}", topo_path.display())))?;
    let mut sequences = Vec::with_capacity(names.len());
    for p in names {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| AppError::Schema(format!("{}: file name is not UTF-8", p.display())))?
            .to_string();
        let text = fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?;
        let seq = parse_sequence(&text, &id, &p)?;
        if seq.joints() != topology.joints() {
            return Err(AppError::Schema(format!(
                "{}: V={} but the topology has {} joints",
                p.display(),
                seq.joints(),
                topology.joints()
            )));
        }
        if let Some(first) = sequences.first() {
            let first: &MotionSequence = first;
            if first.fps.to_bits() != seq.fps.to_bits() {
                return Err(AppError::Schema(format!(
                    "{}: fps {} differs from the corpus fps {}",
                    p.display(),
                    seq.fps,
                    first.fps
                )));
            }
        }
        sequences.push(seq);
    }
    Ok(Corpus { topology, sequences })
}
