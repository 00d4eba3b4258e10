//! Recordings, their ingestion from CSV, the synthetic stand-in generator and
//! subject-wise fold planning.

mod csv;
mod folds;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use self::csv::{
    load_csv_dir, parse_file_name, parse_recording, write_csv_dir, write_recording, FileKey,
    LoadOptions, Recording,
};
pub use self::folds::{make_folds, Fold, FoldPlan};
pub use self::synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::features::{JointAngleSequence, Modality};

/// Class index plus its canonical name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivityLabel {
    pub index: usize,
    pub name: String,
}

impl ActivityLabel {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        ActivityLabel {
            index,
            name: name.into(),
        }
    }
}

/// Default activity tokens, `A01` … `A08`.
pub fn default_activity_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("A{i:02}")).collect()
}

/// Default channel names, `ch01` … .
pub fn default_channel_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("ch{i:02}")).collect()
}

/// Default subject token for a zero-based subject index.
pub fn subject_name(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Recordings of a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    modality: Modality,
    activities: Vec<String>,
    channel_names: Vec<String>,
    roster: Vec<String>,
    sequences: Vec<JointAngleSequence>,
}

impl Dataset {
    pub fn new(
        modality: Modality,
        activities: Vec<String>,
        channel_names: Vec<String>,
        sequences: Vec<JointAngleSequence>,
    ) -> Result<Self> {
        for s in &sequences {
            if s.modality != modality {
                return Err(Error::Contract(format!(
                    "{} recording in a {modality} dataset",
                    s.modality
                )));
            }
            match activities.get(s.activity.index) {
                Some(name) if *name == s.activity.name => {}
                _ => {
                    return Err(Error::Label(format!(
                        "activity {:?} not in label set {activities:?}",
                        s.activity
                    )))
                }
            }
        }
        if sequences.iter().any(|s| s.channels() != channel_names.len()) {
            return Err(Error::Contract(format!(
                "recordings disagree with the {} named channels",
                channel_names.len()
            )));
        }
        let roster: BTreeSet<String> = sequences.iter().map(|s| s.subject_id.clone()).collect();
        Ok(Dataset {
            modality,
            activities,
            channel_names,
            roster: roster.into_iter().collect(),
            sequences,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn activities(&self) -> &[String] {
        &self.activities
    }

    pub fn n_classes(&self) -> usize {
        self.activities.len()
    }

    /// Sorted, de-duplicated subject ids.
    pub fn roster(&self) -> &[String] {
        &self.roster
    }

    pub fn sequences(&self) -> &[JointAngleSequence] {
        &self.sequences
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }
}
