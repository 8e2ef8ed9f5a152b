//! Deterministic synthetic clean/noisy pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::framing::AudioBuffer;

#[derive(Clone, Debug)]
pub enum CleanSource {
    /// 2 to 5 sinusoids at random frequencies under a slow random envelope,
    /// scaled to an RMS of [`SINUSOID_RMS`].
    Sinusoids,
    /// Clips cycled in order; each is cut or zero-padded to the clip length.
    Clips(Vec<AudioBuffer>),
}

#[derive(Clone, Debug)]
pub enum NoiseSource {
    White,
    Pink,
    /// A recording looped and read from a random offset.
    Recorded(AudioBuffer),
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub clean: CleanSource,
    pub noise: NoiseSource,
    /// Target SNR; `f64::INFINITY` yields noise-free pairs.
    pub snr_db: f64,
    pub samples: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn sinusoids_in_white(samples: usize, snr_db: f64, seed: u64) -> Self {
        SynthSpec {
            clean: CleanSource::Sinusoids,
            noise: NoiseSource::White,
            snr_db,
            samples,
            sample_rate: 16_000,
            seed,
        }
    }
}

pub const SINUSOID_RMS: f64 = 0.15;

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn sinusoids(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let count = rng.random_range(2..=5);
    let tones: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(100.0..0.25 * rate),
                rng.random_range(0.3..1.0),
                rng.random_range(0.0..tau),
            )
        })
        .collect();
    let env_rate = rng.random_range(1.0..6.0);
    let env_phase = rng.random_range(0.0..tau);
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let env = 0.6 + 0.4 * (tau * env_rate * t + env_phase).sin();
            env * tones.iter().map(|&(f, a, p)| a * (tau * f * t + p).sin()).sum::<f64>()
        })
        .collect();
    let rms = power(&x).sqrt();
    if rms == 0.0 {
        return x;
    }
    x.into_iter().map(|v| v * SINUSOID_RMS / rms).collect()
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Paul Kellet's refined pink filter applied to white noise.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    white(rng, n)
        .into_iter()
        .map(|w| {
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

/// Scales `noise` so that `10 log10(P_clean / P_scaled) = snr_db`.
pub fn scale_to_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    let (p_clean, p_noise) = (power(clean), power(noise));
    if p_clean == 0.0 {
        return Err(Error::Generation("clean signal is silent; SNR cannot be set".into()));
    }
    if p_noise == 0.0 {
        return Err(Error::Generation("noise is silent".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(noise.iter().map(|v| gain * v).collect())
}

/// Generates `count` `(clean, noisy)` pairs.
pub fn synth_batch(spec: &SynthSpec, count: usize) -> Result<Vec<(AudioBuffer, AudioBuffer)>> {
    if spec.samples == 0 {
        return Err(Error::Generation("clip length must be positive".into()));
    }
    if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
        return Err(Error::Generation(format!("invalid target SNR {}", spec.snr_db)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.samples;
    (0..count)
        .map(|i| {
            let clean = match &spec.clean {
                CleanSource::Sinusoids => sinusoids(&mut rng, n, spec.sample_rate as f64),
                CleanSource::Clips(clips) if !clips.is_empty() => {
                    let c = &clips[i % clips.len()];
                    (0..n).map(|k| c.samples.get(k).map_or(0.0, |&v| v as f64)).collect()
                }
                CleanSource::Clips(_) => return Err(Error::Generation("no clean clips given".into())),
            };
            let p_clean = power(&clean);
            if p_clean == 0.0 {
                return Err(Error::Generation(format!("clean clip {i} is silent; SNR cannot be set")));
            }
            let noisy: Vec<f64> = if spec.snr_db == f64::INFINITY {
                clean.clone()
            } else {
                let noise = match &spec.noise {
                    NoiseSource::White => white(&mut rng, n),
                    NoiseSource::Pink => pink(&mut rng, n),
                    NoiseSource::Recorded(r) => {
                        if r.is_empty() {
                            return Err(Error::Generation("noise recording is empty".into()));
                        }
                        let start = rng.random_range(0..r.len());
                        (0..n).map(|k| r.samples[(start + k) % r.len()] as f64).collect()
                    }
                };
                let scaled = scale_to_snr(&clean, &noise, spec.snr_db)?;
                clean.iter().zip(&scaled).map(|(c, v)| c + v).collect()
            };
            let to_buf = |x: Vec<f64>| AudioBuffer::new(x.into_iter().map(|v| v as f32).collect(), spec.sample_rate);
            Ok((to_buf(clean)?, to_buf(noisy)?))
        })
        .collect()
}
