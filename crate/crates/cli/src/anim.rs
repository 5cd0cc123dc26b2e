//! Plain-text motion interchange: CSV rows `frame,joint,x,y,z` or a JSON document.

use std::fmt::Write as _;
use std::path::Path;

use choreo_core::motion::{read_motion, write_motion, MotionSequence};
use choreo_core::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AnimFormat {
    Csv,
    Json,
}

impl AnimFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimDocument {
    pub skeleton: String,
    pub fps: f32,
    pub joints: usize,
    /// `frames[t][j] = [x, y, z]`.
    pub frames: Vec<Vec<[f32; 3]>>,
}

pub fn to_document(m: &MotionSequence) -> AnimDocument {
    AnimDocument {
        skeleton: m.skeleton_id().to_string(),
        fps: m.fps(),
        joints: m.joint_count(),
        frames: (0..m.frame_count())
            .map(|t| (0..m.joint_count()).map(|j| m.joint(t, j)).collect())
            .collect(),
    }
}

pub fn from_document(doc: &AnimDocument) -> Result<MotionSequence> {
    if let Some(t) = doc.frames.iter().position(|f| f.len() != doc.joints) {
        return Err(CliError::Data(format!("frame {t} does not have {} joints", doc.joints)));
    }
    let data = doc.frames.iter().flatten().flatten().copied().collect();
    Ok(MotionSequence::new(data, doc.frames.len(), doc.joints, doc.fps, doc.skeleton.clone())?)
}

/// The CSV form carries the skeleton and rate in a leading comment line.
pub fn to_csv(m: &MotionSequence) -> String {
    let mut s = format!("# skeleton={} fps={}\nframe,joint,x,y,z\n", m.skeleton_id(), m.fps());
    for t in 0..m.frame_count() {
        for j in 0..m.joint_count() {
            let p = m.joint(t, j);
            let _ = writeln!(s, "{t},{j},{},{},{}", p[0], p[1], p[2]);
        }
    }
    s
}

pub fn from_csv(text: &str) -> Result<MotionSequence> {
    let bad = |line: usize, what: &str| CliError::Data(format!("animation CSV line {}: {what}", line + 1));
    let mut lines = text.lines().enumerate();
    let (skeleton, fps) = match lines.next() {
        Some((_, l)) if l.starts_with('#') => {
            let mut sk = None;
            let mut fps = None;
            for kv in l.trim_start_matches('#').split_whitespace() {
                match kv.split_once('=') {
                    Some(("skeleton", v)) => sk = Some(v.to_string()),
                    Some(("fps", v)) => fps = v.parse::<f32>().ok(),
                    _ => {}
                }
            }
            (sk.ok_or_else(|| bad(0, "missing skeleton"))?, fps.ok_or_else(|| bad(0, "missing fps"))?)
        }
        _ => return Err(bad(0, "expected `# skeleton=<id> fps=<rate>`")),
    };
    match lines.next() {
        Some((_, "frame,joint,x,y,z")) => {}
        _ => return Err(bad(1, "expected header `frame,joint,x,y,z`")),
    }
    let mut rows: Vec<(usize, usize, [f32; 3])> = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 5 {
            return Err(bad(i, "expected 5 fields"));
        }
        let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(i, "bad index"));
        let num = |s: &str| s.trim().parse::<f32>().map_err(|_| bad(i, "bad coordinate"));
        rows.push((idx(f[0])?, idx(f[1])?, [num(f[2])?, num(f[3])?, num(f[4])?]));
    }
    let joints = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let frames = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    if rows.len() != frames * joints {
        return Err(CliError::Data(format!(
            "animation CSV has {} rows for {frames} frames x {joints} joints",
            rows.len()
        )));
    }
    let mut data = vec![f32::NAN; frames * joints * 3];
    let mut seen = vec![false; frames * joints];
    for (t, j, p) in rows {
        let k = t * joints + j;
        if std::mem::replace(&mut seen[k], true) {
            return Err(CliError::Data(format!("animation CSV repeats frame {t} joint {j}")));
        }
        data[k * 3..k * 3 + 3].copy_from_slice(&p);
    }
    Ok(MotionSequence::new(data, frames, joints, fps, skeleton)?)
}

pub fn export_anim(input: &Path, output: &Path, format: AnimFormat) -> Result<()> {
    let m = read_motion(input)?;
    let text = match format {
        AnimFormat::Csv => to_csv(&m),
        AnimFormat::Json => serde_json::to_string(&to_document(&m)).expect("document serializes"),
    };
    Ok(write_atomic(output, text.as_bytes())?)
}

pub fn import_anim(input: &Path, output: &Path, format: AnimFormat) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Core(choreo_core::CoreError::io(input, e)))?;
    let m = match format {
        AnimFormat::Csv => from_csv(&text)?,
        AnimFormat::Json => {
            let doc: AnimDocument = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
            from_document(&doc)?
        }
    };
    Ok(write_motion(output, &m)?)
}
