//! Canonical data model and file formats: i-vectors (IVEC binary
//! container), trial lists, and score files. Every other module consumes
//! and produces these types.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

const IVEC_MAGIC: &[u8; 4] = b"IVEC";
const IVEC_VERSION: u32 = 1;

/// A single utterance's i-vector with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub values: Vec<f32>,
    pub utterance_id: String,
    pub speaker_id: String,
    pub duration_sec: f64,
    pub channel_tag: Option<String>,
}

impl IVector {
    pub fn new(
        values: Vec<f32>,
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        duration_sec: f64,
    ) -> Self {
        IVector {
            values,
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            duration_sec,
            channel_tag: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// The vector widened to f64 for numerical work.
    pub fn as_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| v as f64))
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid(format!(
                "i-vector {:?} has zero dimension",
                self.utterance_id
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "i-vector {:?} contains non-finite values",
                self.utterance_id
            )));
        }
        if !self.duration_sec.is_finite() || self.duration_sec < 0.0 {
            return Err(Error::invalid(format!(
                "i-vector {:?} has invalid duration {}",
                self.utterance_id, self.duration_sec
            )));
        }
        Ok(())
    }
}

/// An ordered collection of i-vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct IVectorSet {
    dim: usize,
    entries: Vec<IVector>,
}

impl IVectorSet {
    /// Builds a set, enforcing equal dimensions, finite values, and
    /// unique utterance ids.
    pub fn new(dim: usize, entries: Vec<IVector>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("i-vector dimension must be positive"));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            e.validate()?;
            if e.dim() != dim {
                return Err(Error::dimension(format!(
                    "i-vector {:?} has dim {}, set dim is {}",
                    e.utterance_id,
                    e.dim(),
                    dim
                )));
            }
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate utterance_id {:?}",
                    e.utterance_id
                )));
            }
        }
        Ok(IVectorSet { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IVector] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, IVector> {
        self.entries.iter()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&IVector> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    utterance_id: String,
    speaker_id: String,
    duration_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    channel_tag: Option<String>,
}

/// Serializes a set into the IVEC container layout.
pub fn ivectors_to_bytes(set: &IVectorSet) -> Result<Vec<u8>> {
    let manifest: Vec<ManifestEntry> = set
        .entries
        .iter()
        .map(|e| ManifestEntry {
            utterance_id: e.utterance_id.clone(),
            speaker_id: e.speaker_id.clone(),
            duration_sec: e.duration_sec,
            channel_tag: e.channel_tag.clone(),
        })
        .collect();
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| Error::format(format!("manifest: {e}")))?;

    let mut out = Vec::with_capacity(20 + set.len() * set.dim * 4 + manifest_json.len());
    out.extend_from_slice(IVEC_MAGIC);
    out.extend_from_slice(&IVEC_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for e in &set.entries {
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    Ok(out)
}

pub fn write_ivectors(set: &IVectorSet, destination: &Path) -> Result<()> {
    atomic_write(destination, &ivectors_to_bytes(set)?)
}

/// Parses an IVEC container, rejecting bad magic, truncation, header
/// inconsistencies, and non-finite payloads.
pub fn ivectors_from_bytes(bytes: &[u8]) -> Result<IVectorSet> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(format!(
                "truncated IVEC file: need {} bytes at offset {}, have {}",
                n,
                *pos,
                bytes.len() - *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()))
    };

    let magic = take(&mut pos, 4)?;
    if magic != IVEC_MAGIC {
        return Err(Error::format(format!("bad magic {:?}, expected \"IVEC\"", magic)));
    }
    let version = read_u32(&mut pos)?;
    if version != IVEC_VERSION {
        return Err(Error::format(format!(
            "unsupported IVEC version {version}, expected {IVEC_VERSION}"
        )));
    }
    let dim = read_u32(&mut pos)? as usize;
    let count = read_u32(&mut pos)? as usize;
    if dim == 0 {
        return Err(Error::format("declared dim is 0"));
    }

    let payload = take(&mut pos, count.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or_else(
        || Error::format("header declares an impossibly large payload"),
    )?)?;
    let manifest_len = read_u32(&mut pos)? as usize;
    let manifest_bytes = take(&mut pos, manifest_len)?;
    if pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after manifest",
            bytes.len() - pos
        )));
    }
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::format(format!("manifest JSON: {e}")))?;
    if manifest.len() != count {
        return Err(Error::format(format!(
            "manifest has {} entries, header declares {}",
            manifest.len(),
            count
        )));
    }

    let mut entries = Vec::with_capacity(count);
    for (row, m) in manifest.into_iter().enumerate() {
        let start = row * dim * 4;
        let values: Vec<f32> = payload[start..start + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(IVector {
            values,
            utterance_id: m.utterance_id,
            speaker_id: m.speaker_id,
            duration_sec: m.duration_sec,
            channel_tag: m.channel_tag,
        });
    }
    IVectorSet::new(dim, entries)
}

pub fn read_ivectors(source: &Path) -> Result<IVectorSet> {
    ivectors_from_bytes(&std::fs::read(source)?)
}

/// Trial label: target (same speaker), nontarget, or unknown when the
/// trial list carries no key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    Nontarget,
    Unknown,
}

/// A single (enrollment, test) verification trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enrol_id: String,
    pub test_id: String,
    pub label: TrialLabel,
}

/// Parses a trial list: one `enrol_id test_id [target|nontarget]` per line.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 2 tokens, got {}", tokens.len()),
            });
        }
        let label = match tokens.get(2) {
            None => TrialLabel::Unknown,
            Some(&"target") => TrialLabel::Target,
            Some(&"nontarget") => TrialLabel::Nontarget,
            Some(other) => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown label {other:?}"),
                })
            }
        };
        if tokens[0].is_empty() || tokens[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty trial id".into(),
            });
        }
        trials.push(Trial {
            enrol_id: tokens[0].to_string(),
            test_id: tokens[1].to_string(),
            label,
        });
    }
    Ok(trials)
}

pub fn read_trials(source: &Path) -> Result<Vec<Trial>> {
    parse_trials(&std::fs::read_to_string(source)?)
}

pub fn write_trials(trials: &[Trial], destination: &Path) -> Result<()> {
    let mut text = String::new();
    for t in trials {
        match t.label {
            TrialLabel::Target => writeln!(text, "{} {} target", t.enrol_id, t.test_id),
            TrialLabel::Nontarget => writeln!(text, "{} {} nontarget", t.enrol_id, t.test_id),
            TrialLabel::Unknown => writeln!(text, "{} {}", t.enrol_id, t.test_id),
        }
        .expect("write to String cannot fail");
    }
    atomic_write(destination, text.as_bytes())
}

/// Per-trial scores, keyed by (enrol_id, test_id).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    entries: Vec<(String, String, f64)>,
}

impl ScoreSet {
    pub fn new(entries: Vec<(String, String, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (e, t, s) in &entries {
            if !s.is_finite() {
                return Err(Error::invalid(format!("non-finite score for ({e}, {t})")));
            }
            if !seen.insert((e.as_str(), t.as_str())) {
                return Err(Error::invalid(format!("duplicate score pair ({e}, {t})")));
            }
        }
        Ok(ScoreSet { entries })
    }

    pub fn entries(&self) -> &[(String, String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, _, s)| *s)
    }
}

/// Renders a score file: `enrol_id test_id score` with 6 decimal places.
pub fn scores_to_text(scores: &ScoreSet) -> String {
    let mut text = String::new();
    for (e, t, s) in &scores.entries {
        writeln!(text, "{e} {t} {s:.6}").expect("write to String cannot fail");
    }
    text
}

pub fn write_scores(scores: &ScoreSet, destination: &Path) -> Result<()> {
    atomic_write(destination, scores_to_text(scores).as_bytes())
}

pub fn parse_scores(text: &str) -> Result<ScoreSet> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 tokens, got {}", tokens.len()),
            });
        }
        let score: f64 = tokens[2].parse().map_err(|e| Error::Parse {
            line: line_no,
            msg: format!("bad score: {e}"),
        })?;
        entries.push((tokens[0].to_string(), tokens[1].to_string(), score));
    }
    ScoreSet::new(entries)
}

pub fn read_scores(source: &Path) -> Result<ScoreSet> {
    parse_scores(&std::fs::read_to_string(source)?)
}
