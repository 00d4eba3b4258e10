//! Joint-angle CSV ingestion.
//!
//! One recording per file, named `S<subject>_A<activity>_T<trial>_<modality>.csv`
//! (for example `S03_A05_T1_imu.csv`). The first row is a header
//! `time,<ch1>,...,<chJ>`; the first column is time in seconds and must be
//! strictly increasing. The sample rate is inferred from the median time step.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;

use super::{ActivityLabel, Dataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::{JointAngleSequence, Modality};

/// Fields encoded in a recording's file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileKey {
    pub subject: String,
    pub activity: String,
    pub trial: u32,
    pub modality: Modality,
}

impl FileKey {
    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_T{}_{}.csv",
            self.subject, self.activity, self.trial, self.modality
        )
    }
}

/// Parses `S<subject>_A<activity>_T<trial>_<modality>.csv`.
pub fn parse_file_name(name: &str) -> std::result::Result<FileKey, String> {
    let stem = name
        .strip_suffix(".csv")
        .ok_or_else(|| format!("'{name}' does not end in .csv"))?;
    let parts: Vec<&str> = stem.split('_').collect();
    let [subject, activity, trial, modality] = parts.as_slice() else {
        return Err(format!(
            "'{name}' does not match S<subject>_A<activity>_T<trial>_<modality>.csv"
        ));
    };
    let token_ok = |t: &str, prefix: char| {
        t.len() > 1 && t.starts_with(prefix) && t[1..].chars().all(|c| c.is_ascii_alphanumeric())
    };
    if !token_ok(subject, 'S') {
        return Err(format!("bad subject token '{subject}'"));
    }
    if !token_ok(activity, 'A') {
        return Err(format!("bad activity token '{activity}'"));
    }
    let trial = trial
        .strip_prefix('T')
        .and_then(|t| t.parse::<u32>().ok())
        .ok_or_else(|| format!("bad trial token '{trial}'"))?;
    let modality = modality
        .parse::<Modality>()
        .map_err(|_| format!("bad modality token '{modality}'"))?;
    Ok(FileKey {
        subject: subject.to_string(),
        activity: activity.to_string(),
        trial,
        modality,
    })
}

/// Parsed content of one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channels: Vec<String>,
    pub times: Vec<f64>,
    /// `T × J`, rows aligned with `times`.
    pub angles: Tensor,
}

impl Recording {
    /// Sample rate from the median time step, rounded to 1 µHz so that
    /// rates written as `i / rate` come back exactly.
    pub fn sample_rate_hz(&self) -> f64 {
        let mut deltas: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        deltas.sort_by(f64::total_cmp);
        let n = deltas.len();
        let median = if n % 2 == 1 {
            deltas[n / 2]
        } else {
            0.5 * (deltas[n / 2 - 1] + deltas[n / 2])
        };
        ((1.0 / median) * 1e6).round() / 1e6
    }

    /// Keeps only `wanted` channels, in that order.
    pub fn select(&self, wanted: &[String]) -> std::result::Result<Recording, String> {
        let idx: Vec<usize> = wanted
            .iter()
            .map(|w| {
                self.channels
                    .iter()
                    .position(|c| c == w)
                    .ok_or_else(|| format!("missing channel '{w}'"))
            })
            .collect::<std::result::Result<_, _>>()?;
        let j = self.channels.len();
        let data = self
            .angles
            .data()
            .chunks(j)
            .flat_map(|row| idx.iter().map(move |&i| row[i]))
            .collect();
        Ok(Recording {
            channels: wanted.to_vec(),
            times: self.times.clone(),
            angles: Tensor::new(vec![self.times.len(), wanted.len()], data)
                .map_err(|e| e.to_string())?,
        })
    }
}

/// Parses CSV text. Never panics; every failure is a message.
pub fn parse_recording(text: &str) -> std::result::Result<Recording, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or("empty file")?;
    let header: Vec<String> = header
        .trim_start_matches('\u{feff}')
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("time") {
        return Err("first column must be named 'time'".into());
    }
    let channels = header[1..].to_vec();
    if channels.is_empty() {
        return Err("no angle columns".into());
    }
    if channels.iter().any(String::is_empty) {
        return Err("empty column name".into());
    }
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(format!("duplicate column '{c}'"));
        }
    }
    let width = header.len();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(format!(
                "line {}: {} fields, header has {width}",
                lineno + 1,
                fields.len()
            ));
        }
        let mut row = Vec::with_capacity(width);
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| format!("line {}: cannot parse '{}'", lineno + 1, f.trim()))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite value", lineno + 1));
            }
            row.push(v);
        }
        if let Some(&prev) = times.last() {
            if row[0] <= prev {
                return Err(format!("line {}: time is not strictly increasing", lineno + 1));
            }
        }
        times.push(row[0]);
        data.extend_from_slice(&row[1..]);
    }
    if times.len() < 2 {
        return Err("need at least 2 samples to infer the sample rate".into());
    }
    let angles = Tensor::new(vec![times.len(), channels.len()], data).map_err(|e| e.to_string())?;
    Ok(Recording {
        channels,
        times,
        angles,
    })
}

/// Canonical CSV text for a sequence; times are `i / rate`.
pub fn write_recording(seq: &JointAngleSequence, channel_names: &[String]) -> String {
    let mut out = String::from("time");
    for c in channel_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    let j = seq.channels();
    for (i, row) in seq.angles().data().chunks(j).enumerate() {
        out.push_str(&format!("{}", i as f64 / seq.sample_rate_hz));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Activity tokens in class-index order.
    pub activities: Vec<String>,
    /// Channels to keep; when `None` the first file defines the set and
    /// every other file must match it exactly.
    pub channels: Option<Vec<String>>,
}

impl LoadOptions {
    pub fn new(activities: Vec<String>) -> Self {
        LoadOptions {
            activities,
            channels: None,
        }
    }
}

/// Loads every `*_<modality>.csv` recording in `dir`.
pub fn load_csv_dir(dir: &Path, modality: Modality, opts: &LoadOptions) -> Result<Dataset> {
    let mut files: Vec<(PathBuf, FileKey)> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let key = parse_file_name(name).map_err(|m| Error::load(&path, m))?;
        if key.modality != modality {
            debug!("skipping {} ({} recording)", path.display(), key.modality);
            continue;
        }
        files.push((path, key));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if files.is_empty() {
        warn!("no {modality} recordings found in {}", dir.display());
        let names = opts.channels.clone().unwrap_or_default();
        return Dataset::new(modality, opts.activities.clone(), names, Vec::new());
    }

    let parsed: Vec<(PathBuf, FileKey, Recording)> = files
        .into_par_iter()
        .map(|(path, key)| {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let rec = parse_recording(&text).map_err(|m| Error::load(&path, m))?;
            Ok((path, key, rec))
        })
        .collect::<Result<_>>()?;

    let channel_names = match &opts.channels {
        Some(c) => c.clone(),
        None => parsed[0].2.channels.clone(),
    };
    let mut sequences = Vec::with_capacity(parsed.len());
    for (path, key, rec) in parsed {
        let rec = if rec.channels == channel_names {
            rec
        } else if opts.channels.is_some() {
            let extra: Vec<&String> = rec
                .channels
                .iter()
                .filter(|c| !channel_names.contains(c))
                .collect();
            if !extra.is_empty() {
                warn!("{}: ignoring columns {extra:?}", path.display());
            }
            rec.select(&channel_names).map_err(|m| Error::load(&path, m))?
        } else {
            return Err(Error::load(
                &path,
                format!(
                    "channel set {:?} differs from {:?} in the first file",
                    rec.channels, channel_names
                ),
            ));
        };
        let index = opts
            .activities
            .iter()
            .position(|a| *a == key.activity)
            .ok_or_else(|| {
                Error::load(
                    &path,
                    format!(
                        "unknown activity token '{}' (known: {:?})",
                        key.activity, opts.activities
                    ),
                )
            })?;
        let rate = rec.sample_rate_hz();
        let seq = JointAngleSequence::new(
            key.subject,
            modality,
            ActivityLabel::new(index, key.activity),
            key.trial,
            rate,
            rec.angles,
        )
        .map_err(|e| Error::load(&path, e.to_string()))?;
        sequences.push(seq);
    }
    Dataset::new(modality, opts.activities.clone(), channel_names, sequences)
}

/// Writes every recording of `dataset` into `dir` in the canonical layout.
pub fn write_csv_dir(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(dataset.len());
    for seq in dataset.sequences() {
        let key = FileKey {
            subject: seq.subject_id.clone(),
            activity: seq.activity.name.clone(),
            trial: seq.trial,
            modality: seq.modality,
        };
        let path = dir.join(key.file_name());
        std::fs::write(&path, write_recording(seq, dataset.channel_names()))
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
