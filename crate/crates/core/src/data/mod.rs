//! Annotation schema, JSON-lines ingestion and multilabel target construction.

mod fixture;

pub use fixture::{generate_fixture, FixtureConfig, FLOW_CENTER, FLOW_SCALE};

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{NUM_CATEGORIES, NUM_VAD};

/// Default binarization threshold for crowd scores.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Axis-aligned body box in pixels, half-open: columns `x1..x2`, rows `y1..y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BodyBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BodyBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        self.x2.saturating_sub(self.x1)
    }

    pub fn height(&self) -> u32 {
        self.y2.saturating_sub(self.y1)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.is_valid() && self.x2 <= width && self.y2 <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }
}

impl From<[u32; 4]> for BodyBox {
    fn from(v: [u32; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BodyBox> for [u32; 4] {
    fn from(b: BodyBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// One annotated person in one clip. Serialized as one JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub clip_id: String,
    /// Directory holding the clip's frames, relative to the dataset root.
    pub frames_dir: String,
    pub person_id: u32,
    pub frame_start: usize,
    pub frame_end: usize,
    /// One box per frame in `frame_start..frame_end`.
    pub regions: Vec<BodyBox>,
    pub categorical: Vec<f64>,
    pub vad: Vec<f64>,
}

impl InstanceAnnotation {
    pub fn n_frames(&self) -> usize {
        self.frame_end - self.frame_start
    }

    pub fn key(&self) -> InstanceKey {
        InstanceKey {
            clip_id: self.clip_id.clone(),
            person_id: self.person_id,
        }
    }

    /// Region at frame `offset` relative to `frame_start`.
    pub fn region(&self, offset: usize) -> BodyBox {
        self.regions[offset.min(self.regions.len() - 1)]
    }

    /// Indices of labels whose crowd score clears `threshold`.
    pub fn positives(&self, threshold: f64) -> Vec<usize> {
        binarize_targets(&self.categorical, threshold)
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.frame_start >= self.frame_end {
            return Err(format!(
                "empty frame range [{}, {})",
                self.frame_start, self.frame_end
            ));
        }
        if self.regions.len() != self.n_frames() {
            return Err(format!(
                "{} regions for {} frames",
                self.regions.len(),
                self.n_frames()
            ));
        }
        if let Some(b) = self.regions.iter().find(|b| !b.is_valid()) {
            return Err(format!("degenerate region {:?}", <[u32; 4]>::from(*b)));
        }
        if self.categorical.len() != NUM_CATEGORIES {
            return Err(format!(
                "expected {NUM_CATEGORIES} categorical scores, found {}",
                self.categorical.len()
            ));
        }
        if self.vad.len() != NUM_VAD {
            return Err(format!(
                "expected {NUM_VAD} VAD values, found {}",
                self.vad.len()
            ));
        }
        if self
            .categorical
            .iter()
            .chain(&self.vad)
            .any(|s| !(0.0..=1.0).contains(s))
        {
            return Err("score out of range".into());
        }
        Ok(())
    }
}

/// Identifies an instance across annotation, prediction and fusion files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceKey {
    pub clip_id: String,
    pub person_id: u32,
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.clip_id, self.person_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub root: PathBuf,
    pub instances: Vec<InstanceAnnotation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn frames_dir(&self, inst: &InstanceAnnotation) -> PathBuf {
        self.root.join(&inst.frames_dir)
    }

    /// Writes the annotations as JSON lines.
    pub fn write_annotations(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Parses and validates a JSON-lines annotation file.
pub fn parse_annotations(file: &Path, root: &Path, split: Split) -> Result<Dataset> {
    let f = std::fs::File::open(file).map_err(|e| Error::io(file, e))?;
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        let lineno = i + 1;
        let fail = |msg: String| Error::Annotation {
            path: file.to_path_buf(),
            line: lineno,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let inst: InstanceAnnotation = serde_json::from_str(&line)
            .map_err(|e| fail(format!("malformed JSON line {lineno}: {e}")))?;
        inst.validate()
            .map_err(|msg| fail(format!("{msg}, line {lineno}")))?;
        if !seen.insert(inst.key()) {
            return Err(fail(format!(
                "duplicate instance {}, line {lineno}",
                inst.key()
            )));
        }
        instances.push(inst);
    }
    Ok(Dataset {
        split,
        root: root.to_path_buf(),
        instances,
    })
}

/// `1` where `score >= threshold`, else `0`.
pub fn binarize_targets(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

/// On-disk names of the per-frame files inside a clip directory.
pub fn frame_file(index: usize) -> String {
    format!("img_{index:05}.png")
}

pub fn flow_files(index: usize) -> (String, String) {
    (format!("flow_x_{index:05}.png"), format!("flow_y_{index:05}.png"))
}
