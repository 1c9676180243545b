use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::frontend::{PcmBuffer, Spectrogram};
use crate::SAMPLE_RATE_HZ;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecAugmentConfig {
    pub n_time_masks: usize,
    pub time_mask_max: usize,
    pub time_prob: f64,
    pub n_freq_masks: usize,
    pub freq_mask_max: usize,
    pub freq_prob: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self { n_time_masks: 0, time_mask_max: 0, time_prob: 0.0, n_freq_masks: 0, freq_mask_max: 0, freq_prob: 0.0 }
    }
}

impl SpecAugmentConfig {
    pub fn kws() -> Self {
        Self { n_time_masks: 2, time_mask_max: 20, time_prob: 1.0, n_freq_masks: 2, freq_mask_max: 7, freq_prob: 1.0 }
    }

    pub fn emotion() -> Self {
        Self { n_time_masks: 1, time_mask_max: 50, time_prob: 0.2, n_freq_masks: 1, freq_mask_max: 4, freq_prob: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum absolute temporal shift.
    pub shift_ms: f64,
    pub noise_prob: f64,
    pub snr_db_range: (f64, f64),
    pub pitch_prob: f64,
    /// Bounds on the absolute shift; the sign is drawn separately.
    pub pitch_semitones: (f64, f64),
    pub rir_prob: f64,
    pub gaussian_prob: f64,
    /// Standard deviation relative to full scale.
    pub gaussian_sigma: f64,
    pub specaug: SpecAugmentConfig,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    /// Every stage disabled.
    fn default() -> Self {
        Self {
            shift_ms: 0.0,
            noise_prob: 0.0,
            snr_db_range: (0.0, 15.0),
            pitch_prob: 0.0,
            pitch_semitones: (1.0, 2.0),
            rir_prob: 0.0,
            gaussian_prob: 0.0,
            gaussian_sigma: 5e-3,
            specaug: SpecAugmentConfig::default(),
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn kws() -> Self {
        Self {
            shift_ms: 100.0,
            noise_prob: 0.8,
            pitch_prob: 0.3,
            rir_prob: 0.5,
            specaug: SpecAugmentConfig::kws(),
            ..Self::default()
        }
    }

    pub fn emotion() -> Self {
        Self {
            noise_prob: 0.2,
            rir_prob: 0.1,
            gaussian_prob: 0.15,
            specaug: SpecAugmentConfig::emotion(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let probs = [
            ("noise_prob", self.noise_prob),
            ("pitch_prob", self.pitch_prob),
            ("rir_prob", self.rir_prob),
            ("gaussian_prob", self.gaussian_prob),
            ("specaug.time_prob", self.specaug.time_prob),
            ("specaug.freq_prob", self.specaug.freq_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        let (lo, hi) = self.snr_db_range;
        if !(lo <= hi) {
            return Err(DataError::Config(format!("snr range {lo}..{hi} is empty")));
        }
        let (lo, hi) = self.pitch_semitones;
        if !(0.0 <= lo && lo <= hi) {
            return Err(DataError::Config(format!("pitch range {lo}..{hi} is invalid")));
        }
        if !(self.shift_ms >= 0.0 && self.gaussian_sigma >= 0.0) {
            return Err(DataError::Config("shift and sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Noise recordings and room impulse responses to draw from.
#[derive(Debug, Clone, Default)]
pub struct AugmentBanks {
    pub noise: Vec<PcmBuffer>,
    pub rir: Vec<Vec<f32>>,
}

/// Stages applied to one clip, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentLog {
    pub applied: Vec<String>,
}

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// `signal + g·noise` with `g` chosen so the mix has the requested SNR.
/// `None` when either input is silent.
pub fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Option<Vec<f64>> {
    let (ps, pn) = (power(signal), power(&noise[..signal.len().min(noise.len())]));
    if ps == 0.0 || pn == 0.0 || noise.len() < signal.len() {
        return None;
    }
    let g = libm::sqrt(ps / (pn * libm::pow(10.0, snr_db / 10.0)));
    Some(signal.iter().zip(noise).map(|(s, n)| s + g * n).collect())
}

fn shift(x: &[f64], offset: i64) -> Vec<f64> {
    let n = x.len() as i64;
    (0..n)
        .map(|i| {
            let j = i - offset;
            if (0..n).contains(&j) {
                x[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn interp(x: &[f64], pos: f64) -> f64 {
    let i = libm::floor(pos) as usize;
    let frac = pos - i as f64;
    let a = x.get(i).copied().unwrap_or(0.0);
    let b = x.get(i + 1).copied().unwrap_or(0.0);
    a + (b - a) * frac
}

/// Waveform-similarity overlap-add time stretch by `ratio` (output length
/// ≈ `ratio`·input). Each frame is taken near its nominal position at the
/// offset that best continues the previous frame.
fn time_stretch(x: &[f64], ratio: f64) -> Vec<f64> {
    const WIN: usize = 512;
    const SYN_HOP: usize = 128;
    const TOL: i64 = 64;
    let out_len = libm::round(x.len() as f64 * ratio) as usize;
    let window: Vec<f64> = (0..WIN).map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / WIN as f64)).collect();
    let mut out = vec![0.0; out_len + WIN];
    let mut norm = vec![0.0; out_len + WIN];
    let at = |i: i64| if i >= 0 && (i as usize) < x.len() { x[i as usize] } else { 0.0 };
    let ana_hop = SYN_HOP as f64 / ratio;
    let mut prev: Option<i64> = None;
    let mut k = 0usize;
    while k * SYN_HOP < out_len {
        let nominal = libm::round(k as f64 * ana_hop) as i64;
        let src = match prev {
            None => nominal,
            Some(p) => {
                // natural continuation of the previous frame
                let cont = p + SYN_HOP as i64;
                let overlap = (WIN - SYN_HOP) as i64;
                (nominal - TOL..=nominal + TOL)
                    .map(|c| {
                        let score: f64 = (0..overlap).step_by(2).map(|i| at(cont + i) * at(c + i)).sum();
                        (c, score)
                    })
                    .fold((nominal, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0
            }
        };
        let dst = k * SYN_HOP;
        for (i, w) in window.iter().enumerate() {
            out[dst + i] += w * at(src + i as i64);
            norm[dst + i] += w;
        }
        prev = Some(src);
        k += 1;
    }
    out.truncate(out_len);
    out.iter().zip(&norm).map(|(v, n)| if *n > 1e-6 { v / n } else { 0.0 }).collect()
}

/// Shifts pitch by `semitones` while keeping the length: time stretch by
/// the pitch ratio, then resample back.
pub fn pitch_shift(x: &[f64], semitones: f64) -> Vec<f64> {
    let ratio = libm::pow(2.0, semitones / 12.0);
    let stretched = time_stretch(x, ratio);
    (0..x.len()).map(|i| interp(&stretched, i as f64 * ratio)).collect()
}

fn convolve_rir(x: &[f64], rir: &[f32]) -> Vec<f64> {
    let y: Vec<f64> = (0..x.len())
        .map(|i| rir.iter().take(i + 1).enumerate().map(|(k, &h)| h as f64 * x[i - k]).sum())
        .collect();
    let (px, py) = (power(x), power(&y));
    if py == 0.0 {
        return y;
    }
    let g = libm::sqrt(px / py);
    y.into_iter().map(|v| v * g).collect()
}

/// Waveform augmentation: shift, noise at a random SNR, pitch shift, reverb
/// and Gaussian noise, each gated by its probability.
pub fn augment_waveform<R: Rng + ?Sized>(
    pcm: &PcmBuffer,
    cfg: &AugmentConfig,
    banks: &AugmentBanks,
    rng: &mut R,
) -> Result<(PcmBuffer, AugmentLog), DataError> {
    cfg.validate()?;
    if cfg.noise_prob > 0.0 && banks.noise.iter().all(|n| n.is_empty()) {
        return Err(DataError::Config("noise_prob > 0 needs a non-empty noise bank".into()));
    }
    if cfg.rir_prob > 0.0 && banks.rir.iter().all(|r| r.is_empty()) {
        return Err(DataError::Config("rir_prob > 0 needs a non-empty RIR bank".into()));
    }
    let mut log = AugmentLog::default();
    let mut x: Vec<f64> = pcm.samples.iter().map(|&s| s as f64).collect();
    let n = x.len();

    let max_shift = libm::round(cfg.shift_ms * SAMPLE_RATE_HZ as f64 / 1000.0) as i64;
    if max_shift > 0 {
        let off = rng.gen_range(-max_shift..=max_shift);
        x = shift(&x, off);
        log.applied.push(format!("shift:{off}"));
    }
    if cfg.noise_prob > 0.0 && rng.gen_bool(cfg.noise_prob) {
        let usable: Vec<&PcmBuffer> = banks.noise.iter().filter(|b| !b.is_empty()).collect();
        let idx = rng.gen_range(0..usable.len());
        let src = &usable[idx].samples;
        let start = rng.gen_range(0..src.len());
        let noise: Vec<f64> = (0..n).map(|i| src[(start + i) % src.len()] as f64).collect();
        let snr = rng.gen_range(cfg.snr_db_range.0..=cfg.snr_db_range.1);
        if let Some(mixed) = mix_at_snr(&x, &noise, snr) {
            x = mixed;
            log.applied.push(format!("noise:{idx}@{snr:.2}dB"));
        }
    }
    if cfg.pitch_prob > 0.0 && rng.gen_bool(cfg.pitch_prob) {
        let mag = rng.gen_range(cfg.pitch_semitones.0..=cfg.pitch_semitones.1);
        let st = if rng.gen_bool(0.5) { mag } else { -mag };
        x = pitch_shift(&x, st);
        log.applied.push(format!("pitch:{st:+.2}st"));
    }
    if cfg.rir_prob > 0.0 && rng.gen_bool(cfg.rir_prob) {
        let usable: Vec<&Vec<f32>> = banks.rir.iter().filter(|r| !r.is_empty()).collect();
        let idx = rng.gen_range(0..usable.len());
        x = convolve_rir(&x, usable[idx]);
        log.applied.push(format!("rir:{idx}"));
    }
    if cfg.gaussian_prob > 0.0 && rng.gen_bool(cfg.gaussian_prob) {
        let dist = Normal::new(0.0, cfg.gaussian_sigma * i16::MAX as f64)
            .map_err(|e| DataError::Config(format!("gaussian sigma: {e}")))?;
        for v in &mut x {
            *v += dist.sample(rng);
        }
        log.applied.push("gaussian".into());
    }
    let samples = x.into_iter().map(|v| libm::round(v).clamp(i16::MIN as f64, i16::MAX as f64) as i16).collect();
    Ok((PcmBuffer::from_samples(samples), log))
}

/// Zeroes random time and frequency bands.
pub fn spec_augment<R: Rng + ?Sized>(spec: &Spectrogram, cfg: &SpecAugmentConfig, rng: &mut R) -> Spectrogram {
    let mut out = spec.clone();
    let (channels, frames) = (spec.num_channels(), spec.num_frames());
    let bands = |count: usize, max: usize, prob: f64, extent: usize, rng: &mut R| -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        if extent == 0 || prob <= 0.0 {
            return v;
        }
        for _ in 0..count {
            if rng.gen_bool(prob.min(1.0)) {
                let width = rng.gen_range(0..=max.min(extent));
                let start = rng.gen_range(0..=extent - width);
                v.push((start, width));
            }
        }
        v
    };
    let time = bands(cfg.n_time_masks, cfg.time_mask_max, cfg.time_prob, frames, rng);
    let freq = bands(cfg.n_freq_masks, cfg.freq_mask_max, cfg.freq_prob, channels, rng);
    for (start, width) in time {
        for t in start..start + width {
            for c in 0..channels {
                out.set(c, t, 0);
            }
        }
    }
    for (start, width) in freq {
        for c in start..start + width {
            for t in 0..frames {
                out.set(c, t, 0);
            }
        }
    }
    out
}
