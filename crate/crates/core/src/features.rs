//! From joint-angle recordings to classifier inputs: resampling onto the
//! canonical rate, fixed-length windowing, 2-D DFT magnitude features and
//! z-score normalisation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::ActivityLabel;
use crate::error::{Error, Result};

/// How the joint angles were acquired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Imu,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Imu, Modality::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Imu => "imu",
            Modality::Video => "video",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "imu" => Ok(Modality::Imu),
            "video" => Ok(Modality::Video),
            other => Err(Error::Config(format!("unknown modality '{other}'"))),
        }
    }
}

/// One recording: `T × J` joint angles in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngleSequence {
    pub subject_id: String,
    pub modality: Modality,
    pub activity: ActivityLabel,
    pub trial: u32,
    pub sample_rate_hz: f64,
    angles: Tensor,
}

impl JointAngleSequence {
    pub fn new(
        subject_id: impl Into<String>,
        modality: Modality,
        activity: ActivityLabel,
        trial: u32,
        sample_rate_hz: f64,
        angles: Tensor,
    ) -> Result<Self> {
        if angles.rank() != 2 {
            return Err(Error::Dimension(format!(
                "angles must be T×J, got {:?}",
                angles.shape()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Contract(format!("sample rate {sample_rate_hz} Hz")));
        }
        if !angles.all_finite() {
            return Err(Error::Numeric("non-finite joint angle".into()));
        }
        Ok(JointAngleSequence {
            subject_id: subject_id.into(),
            modality,
            activity,
            trial,
            sample_rate_hz,
            angles,
        })
    }

    pub fn angles(&self) -> &Tensor {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.angles.shape()[1]
    }

    fn with_angles(&self, angles: Tensor, sample_rate_hz: f64) -> Self {
        JointAngleSequence {
            angles,
            sample_rate_hz,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub window_seconds: f64,
    pub sample_rate_hz: f64,
    pub stride_fraction: f64,
    pub fft_enabled: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_seconds: 2.0,
            sample_rate_hz: 50.0,
            stride_fraction: 0.5,
            fft_enabled: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "features.sample_rate_hz must be > 0, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.stride_fraction > 0.0 && self.stride_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "features.stride_fraction must be in (0, 1], got {}",
                self.stride_fraction
            )));
        }
        let w = (self.window_seconds * self.sample_rate_hz).round();
        if !(w >= 2.0 && w.is_finite()) {
            return Err(Error::Config(format!(
                "window of {} s at {} Hz is {w} samples, need at least 2",
                self.window_seconds, self.sample_rate_hz
            )));
        }
        Ok(())
    }

    /// Window length `W` in samples.
    pub fn window_len(&self) -> usize {
        (self.window_seconds * self.sample_rate_hz).round() as usize
    }

    /// Hop between window starts, in samples.
    pub fn stride_len(&self) -> usize {
        ((self.window_len() as f64 * self.stride_fraction).round() as usize).max(1)
    }

    /// Feature columns for `channels` joint angles.
    pub fn feature_channels(&self, channels: usize) -> usize {
        if self.fft_enabled {
            2 * channels
        } else {
            channels
        }
    }
}

/// A raw `W × J` slice of a recording, before feature assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub angles: Tensor,
    pub label: ActivityLabel,
    pub subject_id: String,
    pub modality: Modality,
    pub trial: u32,
    pub offset: usize,
}

/// One classifier input: `W × 2J` (raw angles then DFT magnitudes), or
/// `W × J` with the spectral block disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub features: Tensor,
    pub label: ActivityLabel,
    pub subject_id: String,
    pub modality: Modality,
    pub trial: u32,
    pub offset: usize,
}

/// Linear interpolation onto a uniform grid at `target_hz` spanning the
/// original duration.
pub fn resample(seq: &JointAngleSequence, target_hz: f64) -> Result<JointAngleSequence> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::Contract(format!("target rate {target_hz} Hz")));
    }
    let t = seq.len();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "cannot resample {} sample(s) of subject {}",
            t, seq.subject_id
        )));
    }
    let j = seq.channels();
    let x = seq.angles.data();
    let ratio = seq.sample_rate_hz / target_hz;
    let duration = (t - 1) as f64 / seq.sample_rate_hz;
    let n = (duration * target_hz + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n * j);
    for k in 0..n {
        let pos = k as f64 * ratio;
        let i = pos.floor() as usize;
        if i >= t - 1 {
            out.extend_from_slice(&x[(t - 1) * j..t * j]);
            continue;
        }
        let frac = pos - i as f64;
        let (lo, hi) = (&x[i * j..(i + 1) * j], &x[(i + 1) * j..(i + 2) * j]);
        if frac == 0.0 {
            out.extend_from_slice(lo);
        } else {
            out.extend(lo.iter().zip(hi).map(|(a, b)| a * (1.0 - frac) + b * frac));
        }
    }
    Ok(seq.with_angles(Tensor::from_parts(vec![n, j], out), target_hz))
}

/// Cuts a recording into `W`-sample windows with hop `S`. Recordings shorter
/// than one window produce none.
pub fn segment(seq: &JointAngleSequence, cfg: &FeatureConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    if (seq.sample_rate_hz - cfg.sample_rate_hz).abs() > 1e-9 * cfg.sample_rate_hz {
        return Err(Error::Contract(format!(
            "segment needs {} Hz input, got {} Hz (resample first)",
            cfg.sample_rate_hz, seq.sample_rate_hz
        )));
    }
    let (w, s, t, j) = (cfg.window_len(), cfg.stride_len(), seq.len(), seq.channels());
    if t < w {
        return Ok(Vec::new());
    }
    let count = (t - w) / s + 1;
    let x = seq.angles.data();
    Ok((0..count)
        .map(|k| {
            let start = k * s;
            Window {
                angles: Tensor::from_parts(vec![w, j], x[start * j..(start + w) * j].to_vec()),
                label: seq.activity.clone(),
                subject_id: seq.subject_id.clone(),
                modality: seq.modality,
                trial: seq.trial,
                offset: start,
            }
        })
        .collect())
}

/// `|F[u,v]|` of the 2-D DFT of a `W × J` window, full resolution.
pub fn dft2_magnitude(window: &Tensor) -> Tensor {
    let (w, j) = (window.shape()[0], window.shape()[1]);
    let x = window.data();
    let table = |n: usize| -> Vec<(f64, f64)> {
        (0..n)
            .map(|m| {
                let a = 2.0 * PI * m as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .collect()
    };
    let (tw, tj) = (table(w), table(j));

    // Transform along channels: y[t,v] = Σ_j x[t,j]·e^{−2πi·vj/J}
    let mut yr = vec![0.0; w * j];
    let mut yi = vec![0.0; w * j];
    for t in 0..w {
        let row = &x[t * j..(t + 1) * j];
        for v in 0..j {
            let (mut re, mut im) = (0.0, 0.0);
            for (c, &xv) in row.iter().enumerate() {
                let (cs, sn) = tj[(v * c) % j];
                re += xv * cs;
                im -= xv * sn;
            }
            yr[t * j + v] = re;
            yi[t * j + v] = im;
        }
    }
    // Then along time.
    let mut out = vec![0.0; w * j];
    for u in 0..w {
        for v in 0..j {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..w {
                let (cs, sn) = tw[(u * t) % w];
                let (a, b) = (yr[t * j + v], yi[t * j + v]);
                re += a * cs + b * sn;
                im += b * cs - a * sn;
            }
            out[u * j + v] = re.hypot(im);
        }
    }
    Tensor::from_parts(vec![w, j], out)
}

/// `[raw | dft2_magnitude(raw)]`, or the raw block alone when the spectral
/// features are disabled.
pub fn assemble(window: &Window, cfg: &FeatureConfig) -> FeatureWindow {
    let features = if cfg.fft_enabled {
        let (w, j) = (window.angles.shape()[0], window.angles.shape()[1]);
        let spec = dft2_magnitude(&window.angles);
        let mut data = Vec::with_capacity(w * 2 * j);
        for t in 0..w {
            data.extend_from_slice(&window.angles.data()[t * j..(t + 1) * j]);
            data.extend_from_slice(&spec.data()[t * j..(t + 1) * j]);
        }
        Tensor::from_parts(vec![w, 2 * j], data)
    } else {
        window.angles.clone()
    };
    FeatureWindow {
        features,
        label: window.label.clone(),
        subject_id: window.subject_id.clone(),
        modality: window.modality,
        trial: window.trial,
        offset: window.offset,
    }
}

/// Resample (if needed), segment and assemble one recording.
pub fn extract(seq: &JointAngleSequence, cfg: &FeatureConfig) -> Result<Vec<FeatureWindow>> {
    let seq = if (seq.sample_rate_hz - cfg.sample_rate_hz).abs() > 1e-9 * cfg.sample_rate_hz {
        resample(seq, cfg.sample_rate_hz)?
    } else {
        seq.clone()
    };
    Ok(segment(&seq, cfg)?
        .iter()
        .map(|w| assemble(w, cfg))
        .collect())
}

pub const NORM_STD_FLOOR: f64 = 1e-8;

/// Per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Column means and population standard deviations over every row of every
/// window. Standard deviations are floored at [`NORM_STD_FLOOR`].
pub fn fit_norm(windows: &[FeatureWindow]) -> Result<NormStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("fit_norm needs at least one window".into()))?;
    let cols = first.features.shape()[1];
    if windows.iter().any(|w| w.features.shape()[1] != cols) {
        return Err(Error::Dimension("windows disagree on feature width".into()));
    }
    let mut mean = vec![0.0; cols];
    let mut rows = 0usize;
    for w in windows {
        for row in w.features.data().chunks(cols) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            rows += 1;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for w in windows {
        for row in w.features.data().chunks(cols) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / rows as f64).sqrt().max(NORM_STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

pub fn apply_norm(window: &FeatureWindow, stats: &NormStats) -> Result<FeatureWindow> {
    let cols = stats.mean.len();
    if window.features.shape()[1] != cols {
        return Err(Error::Dimension(format!(
            "window has {} columns, statistics have {cols}",
            window.features.shape()[1]
        )));
    }
    let data: Vec<f64> = window
        .features
        .data()
        .chunks(cols)
        .flat_map(|row| {
            row.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((v, m), s)| (v - m) / s)
        })
        .collect();
    Ok(FeatureWindow {
        features: Tensor::from_parts(window.features.shape().to_vec(), data),
        ..window.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn label() -> ActivityLabel {
        ActivityLabel::new(0, "A01")
    }

    fn seq(rate: f64, rows: Vec<Vec<f64>>) -> JointAngleSequence {
        JointAngleSequence::new("S01", Modality::Imu, label(), 1, rate, Tensor::from_rows(&rows).unwrap())
            .unwrap()
    }

    /// Direct double sum over all (t, j) for every (u, v).
    fn naive_dft2(x: &Tensor) -> Tensor {
        let (w, j) = (x.shape()[0], x.shape()[1]);
        Tensor::from_fn(&[w, j], |idx| {
            let (u, v) = (idx / j, idx % j);
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..w {
                for c in 0..j {
                    let a = -2.0 * PI * ((u * t) as f64 / w as f64 + (v * c) as f64 / j as f64);
                    re += x.at(&[t, c]) * a.cos();
                    im += x.at(&[t, c]) * a.sin();
                }
            }
            re.hypot(im)
        })
    }

    fn random_window(rng: &mut ChaCha8Rng, w: usize, j: usize) -> Tensor {
        Tensor::from_fn(&[w, j], |_| rng.random_range(-90.0..90.0))
    }

    #[test]
    fn resample_identity_at_same_rate() {
        let s = seq(50.0, (0..20).map(|i| vec![i as f64 * 0.3, (i as f64).sin()]).collect());
        let r = resample(&s, 50.0).unwrap();
        assert_eq!(r.angles(), s.angles());
    }

    #[test]
    fn resample_keeps_linear_ramp() {
        // 0..10 over one second sampled at 11 Hz
        let s = seq(11.0, (0..12).map(|i| vec![10.0 * i as f64 / 11.0]).collect());
        let r = resample(&s, 5.0).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r.sample_rate_hz, 5.0);
        for (k, v) in r.angles().data().iter().enumerate() {
            assert!((v - 2.0 * k as f64).abs() < 1e-12, "{k}: {v}");
        }
    }

    #[test]
    fn resample_sinusoid_tracks_closed_form() {
        // Linear interpolation error is bounded by (2πf/30)²/8: under 0.05 up
        // to 3 Hz, about 0.137 at 5 Hz.
        for (f, tol) in [(0.5, 0.05), (1.0, 0.05), (2.5, 0.05), (3.0, 0.05), (5.0, 0.14)] {
            let rows = (0..90)
                .map(|i| vec![(2.0 * PI * f * i as f64 / 30.0).sin()])
                .collect();
            let r = resample(&seq(30.0, rows), 50.0).unwrap();
            for (k, v) in r.angles().data().iter().enumerate() {
                let want = (2.0 * PI * f * k as f64 / 50.0).sin();
                assert!((v - want).abs() < tol, "f={f} k={k}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn resample_rejects_single_sample() {
        let s = seq(50.0, vec![vec![1.0, 2.0]]);
        assert!(matches!(resample(&s, 25.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn segment_counts() {
        let cfg = FeatureConfig::default();
        assert_eq!((cfg.window_len(), cfg.stride_len()), (100, 50));
        for (t, n) in [(300, 5), (100, 1), (99, 0)] {
            let s = seq(50.0, (0..t).map(|i| vec![i as f64]).collect());
            let ws = segment(&s, &cfg).unwrap();
            assert_eq!(ws.len(), n, "T={t}");
            if t == 100 {
                assert_eq!(&ws[0].angles, s.angles());
            }
        }
    }

    #[test]
    fn segment_windows_are_exact_submatrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..237).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
        let s = seq(50.0, rows.clone());
        for w in segment(&s, &FeatureConfig::default()).unwrap() {
            for t in 0..100 {
                for c in 0..3 {
                    assert_eq!(w.angles.at(&[t, c]).to_bits(), rows[w.offset + t][c].to_bits());
                }
            }
        }
    }

    #[test]
    fn segment_requires_canonical_rate() {
        let s = seq(30.0, (0..300).map(|i| vec![i as f64]).collect());
        assert!(segment(&s, &FeatureConfig::default()).is_err());
    }

    #[test]
    fn dft_of_constant_is_dc_only() {
        let x = Tensor::from_fn(&[100, 14], |_| 2.5);
        let f = dft2_magnitude(&x);
        for u in 0..100 {
            for v in 0..14 {
                let want = if (u, v) == (0, 0) { 2.5 * 1400.0 } else { 0.0 };
                assert!((f.at(&[u, v]) - want).abs() < 1e-9, "({u},{v})");
            }
        }
    }

    #[test]
    fn dft_of_time_cosine_has_two_peaks() {
        let (w, j, k) = (100, 14, 7);
        let x = Tensor::from_fn(&[w, j], |i| (2.0 * PI * (k * (i / j)) as f64 / w as f64).cos());
        let oracle = naive_dft2(&x);
        let f = dft2_magnitude(&x);
        assert!(f.max_abs_diff(&oracle) < 1e-9);
        for u in 0..w {
            for v in 0..j {
                let want = if v == 0 && (u == k || u == w - k) {
                    (w * j) as f64 / 2.0
                } else {
                    0.0
                };
                assert!((f.at(&[u, v]) - want).abs() < 1e-9, "({u},{v})");
            }
        }
    }

    #[test]
    fn dft_matches_naive_on_random_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_window(&mut rng, 100, 14);
        assert!(dft2_magnitude(&x).max_abs_diff(&naive_dft2(&x)) < 1e-9);
    }

    #[test]
    fn dft_offset_only_moves_dc_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_window(&mut rng, 20, 6);
        let shifted = Tensor::from_fn(&[20, 6], |i| x.data()[i] + 17.0);
        let (a, b) = (dft2_magnitude(&x), dft2_magnitude(&shifted));
        for i in 1..a.len() {
            assert!((a.data()[i] - b.data()[i]).abs() < 1e-9);
        }
        assert!((a.data()[0] - b.data()[0]).abs() > 1.0);
    }

    #[test]
    fn assemble_blocks() {
        let w = Window {
            angles: Tensor::zeros(&[4, 1]),
            label: label(),
            subject_id: "S01".into(),
            modality: Modality::Imu,
            trial: 1,
            offset: 0,
        };
        let cfg = FeatureConfig::default();
        assert_eq!(assemble(&w, &cfg).features, Tensor::zeros(&[4, 2]));
        let raw = FeatureConfig {
            fft_enabled: false,
            ..cfg.clone()
        };
        assert_eq!(assemble(&w, &raw).features.shape(), &[4, 1]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Window {
            angles: random_window(&mut rng, 10, 3),
            ..w
        };
        let fw = assemble(&w, &cfg);
        let spec = dft2_magnitude(&w.angles);
        for t in 0..10 {
            for c in 0..3 {
                assert_eq!(fw.features.at(&[t, c]).to_bits(), w.angles.at(&[t, c]).to_bits());
                assert_eq!(fw.features.at(&[t, 3 + c]).to_bits(), spec.at(&[t, c]).to_bits());
            }
        }
    }

    fn fw(rows: Vec<Vec<f64>>) -> FeatureWindow {
        FeatureWindow {
            features: Tensor::from_rows(&rows).unwrap(),
            label: label(),
            subject_id: "S01".into(),
            modality: Modality::Imu,
            trial: 1,
            offset: 0,
        }
    }

    #[test]
    fn norm_constant_columns_map_to_zero() {
        let ws = vec![fw(vec![vec![3.0, -1.0]; 4]); 3];
        let stats = fit_norm(&ws).unwrap();
        assert!(stats.std.iter().all(|&s| s >= NORM_STD_FLOOR));
        let n = apply_norm(&ws[0], &stats).unwrap();
        assert!(n.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norm_standardized_column_unchanged() {
        let ws = vec![fw(vec![vec![-1.0], vec![1.0]])];
        let stats = fit_norm(&ws).unwrap();
        assert_eq!((stats.mean[0], stats.std[0]), (0.0, 1.0));
        assert_eq!(apply_norm(&ws[0], &stats).unwrap().features, ws[0].features);
    }

    #[test]
    fn norm_requires_windows() {
        assert!(matches!(fit_norm(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn norm_standardizes_fitting_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ws: Vec<FeatureWindow> = (0..7)
            .map(|_| {
                fw((0..5)
                    .map(|_| vec![rng.random_range(-5.0..20.0), rng.random_range(100.0..101.0)])
                    .collect())
            })
            .collect();
        let stats = fit_norm(&ws).unwrap();
        let normed: Vec<FeatureWindow> = ws.iter().map(|w| apply_norm(w, &stats).unwrap()).collect();
        for c in 0..2 {
            let vals: Vec<f64> = normed
                .iter()
                .flat_map(|w| (0..5).map(move |t| w.features.at(&[t, c])))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
