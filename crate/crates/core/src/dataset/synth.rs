//! Seeded synthetic joint-angle recordings.
//!
//! Channel `j` of subject `s` performing activity `a` is
//! `A[a,j]·sin(2π·f[a]·τ[s,a]·t + φ[s,j]) + offset[s,j] + noise`, with Gaussian noise
//! whose σ depends on the modality. Video recordings additionally sample the
//! signal at jittered instants while reporting the nominal frame times.
//!
//! Structural randomness (gains, phases, offsets) and measurement randomness
//! come from separate streams, so the same seed yields the same underlying
//! movements for both modalities and changing σ does not move anything else.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_activity_names, default_channel_names, subject_name, ActivityLabel, Dataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::{JointAngleSequence, Modality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_activities: usize,
    pub channels: usize,
    pub trials: usize,
    pub duration_seconds: f64,
    /// One per activity; empty selects `0.5 + 0.25·a` Hz.
    pub frequencies_hz: Vec<f64>,
    /// Base amplitude per activity in degrees; empty selects 2° for all, small
    /// enough that the modality noise levels separate the two modalities.
    pub amplitudes_deg: Vec<f64>,
    /// Per-(activity, channel) amplitude gain is `1 + spread·u`, `u ~ U(−1, 1)`.
    pub channel_gain_spread: f64,
    /// Per-(subject, activity) tempo: the activity frequency is scaled by
    /// `1 + spread·u`, `u ~ U(−1, 1)`.
    pub tempo_spread: f64,
    /// Subject/channel phases are drawn from `U(0, phase_spread_rad)`.
    pub phase_spread_rad: f64,
    /// Subject/channel offsets are drawn from `U(−spread, spread)` degrees.
    pub offset_spread_deg: f64,
    pub imu_noise_deg: f64,
    pub video_noise_deg: f64,
    /// Probability that a video frame is sampled off its nominal instant.
    pub video_jitter_prob: f64,
    /// Maximum timing error of a jittered frame, seconds.
    pub video_jitter_seconds: f64,
    pub imu_rate_hz: f64,
    pub video_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 16,
            n_activities: 8,
            channels: 14,
            trials: 1,
            duration_seconds: 4.0,
            frequencies_hz: Vec::new(),
            amplitudes_deg: Vec::new(),
            channel_gain_spread: 0.5,
            tempo_spread: 0.0,
            phase_spread_rad: 2.0 * PI,
            offset_spread_deg: 15.0,
            imu_noise_deg: 1.0,
            video_noise_deg: 3.0,
            video_jitter_prob: 0.3,
            video_jitter_seconds: 1.0 / 30.0,
            imu_rate_hz: 50.0,
            video_rate_hz: 30.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn frequencies(&self) -> Vec<f64> {
        if self.frequencies_hz.is_empty() {
            (0..self.n_activities).map(|a| 0.5 + 0.25 * a as f64).collect()
        } else {
            self.frequencies_hz.clone()
        }
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        if self.amplitudes_deg.is_empty() {
            vec![2.0; self.n_activities]
        } else {
            self.amplitudes_deg.clone()
        }
    }

    pub fn noise_deg(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Imu => self.imu_noise_deg,
            Modality::Video => self.video_noise_deg,
        }
    }

    pub fn rate_hz(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Imu => self.imu_rate_hz,
            Modality::Video => self.video_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.n_subjects == 0 || self.n_activities == 0 || self.channels == 0 || self.trials == 0 {
            return bad("n_subjects, n_activities, channels and trials must be ≥ 1".into());
        }
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return bad(format!("duration_seconds {}", self.duration_seconds));
        }
        let f = self.frequencies();
        if f.len() != self.n_activities {
            return bad(format!(
                "{} frequencies for {} activities",
                f.len(),
                self.n_activities
            ));
        }
        if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("frequencies must be positive".into());
        }
        for (i, a) in f.iter().enumerate() {
            if f[..i].contains(a) {
                return bad(format!("frequency {a} Hz used by two activities"));
            }
        }
        let amps = self.amplitudes();
        if amps.len() != self.n_activities || amps.iter().any(|a| !a.is_finite()) {
            return bad("one finite amplitude per activity required".into());
        }
        for (name, v) in [
            ("channel_gain_spread", self.channel_gain_spread),
            ("tempo_spread", self.tempo_spread),
            ("phase_spread_rad", self.phase_spread_rad),
            ("offset_spread_deg", self.offset_spread_deg),
            ("imu_noise_deg", self.imu_noise_deg),
            ("video_noise_deg", self.video_noise_deg),
            ("video_jitter_seconds", self.video_jitter_seconds),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be ≥ 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.video_jitter_prob) {
            return bad(format!("video_jitter_prob {}", self.video_jitter_prob));
        }
        for (name, v) in [("imu_rate_hz", self.imu_rate_hz), ("video_rate_hz", self.video_rate_hz)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0"));
            }
        }
        Ok(())
    }
}

/// Draws all noise-independent structure from `seed`.
struct Structure {
    gains: Vec<f64>,   // [activity × channel]
    phases: Vec<f64>,  // [subject × channel]
    offsets: Vec<f64>, // [subject × channel]
    tempos: Vec<f64>,  // [subject × activity]
}

impl Structure {
    fn draw(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let j = cfg.channels;
        let gains = (0..cfg.n_activities * j)
            .map(|_| 1.0 + cfg.channel_gain_spread * rng.random_range(-1.0..=1.0))
            .collect();
        let mut uniform = |scale: f64, centered: bool| -> Vec<f64> {
            (0..cfg.n_subjects * j)
                .map(|_| {
                    let u: f64 = rng.random();
                    if centered {
                        scale * (2.0 * u - 1.0)
                    } else {
                        scale * u
                    }
                })
                .collect()
        };
        let phases = uniform(cfg.phase_spread_rad, false);
        let offsets = uniform(cfg.offset_spread_deg, true);
        let tempos = (0..cfg.n_subjects * cfg.n_activities)
            .map(|_| 1.0 + cfg.tempo_spread * rng.random_range(-1.0..=1.0))
            .collect();
        Structure {
            gains,
            phases,
            offsets,
            tempos,
        }
    }
}

/// Samples per recording: the grid spans `duration_seconds` inclusively.
fn samples(cfg: &SynthConfig, modality: Modality) -> usize {
    (cfg.duration_seconds * cfg.rate_hz(modality)).round() as usize + 1
}

/// Generates one modality of the synthetic dataset.
pub fn synth_generate(cfg: &SynthConfig, modality: Modality) -> Result<Dataset> {
    cfg.validate()?;
    let structure = Structure::draw(cfg);
    let freqs = cfg.frequencies();
    let amps = cfg.amplitudes();
    let names = default_activity_names(cfg.n_activities);
    let sigma = cfg.noise_deg(modality);
    let rate = cfg.rate_hz(modality);
    let n = samples(cfg, modality);
    let j = cfg.channels;
    let stream = match modality {
        Modality::Imu => 0x1D0_u64,
        Modality::Video => 0x71DE0_u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stream.rotate_left(40));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut sequences = Vec::with_capacity(cfg.n_subjects * cfg.n_activities * cfg.trials);
    for s in 0..cfg.n_subjects {
        for (a, name) in names.iter().enumerate() {
            for trial in 1..=cfg.trials {
                let freq = freqs[a] * structure.tempos[s * cfg.n_activities + a];
                let mut data = Vec::with_capacity(n * j);
                for i in 0..n {
                    let mut t = i as f64 / rate;
                    if modality == Modality::Video
                        && cfg.video_jitter_prob > 0.0
                        && rng.random::<f64>() < cfg.video_jitter_prob
                    {
                        t += cfg.video_jitter_seconds * rng.random_range(-1.0..=1.0);
                    }
                    for c in 0..j {
                        let amp = amps[a] * structure.gains[a * j + c];
                        let phase = structure.phases[s * j + c];
                        let clean = amp * (2.0 * PI * freq * t + phase).sin()
                            + structure.offsets[s * j + c];
                        let noise = if sigma > 0.0 {
                            sigma * normal.sample(&mut rng)
                        } else {
                            0.0
                        };
                        data.push(clean + noise);
                    }
                }
                sequences.push(JointAngleSequence::new(
                    subject_name(s),
                    modality,
                    ActivityLabel::new(a, name.clone()),
                    trial as u32,
                    rate,
                    Tensor::new(vec![n, j], data)?,
                )?);
            }
        }
    }
    Dataset::new(modality, names, default_channel_names(j), sequences)
}
