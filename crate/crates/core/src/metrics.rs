//! Objective quality measures: segmental SNR, SNR and scale-invariant SNR.

use std::fmt;

use crate::error::{ensure_shape, Error, Result};

pub const SSNR_MIN_DB: f64 = -10.0;
pub const SSNR_MAX_DB: f64 = 35.0;
/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 60.0;
/// Frames whose clean energy is below this are skipped by [`ssnr`].
pub const SILENCE_ENERGY: f64 = 1e-10;

fn check_pair(clean: &[f64], enhanced: &[f64]) -> Result<()> {
    ensure_shape!(
        clean.len() == enhanced.len(),
        "clean has {} samples, enhanced {}",
        clean.len(),
        enhanced.len()
    );
    Ok(())
}

fn ratio_db(signal: f64, error: f64) -> f64 {
    if error == 0.0 {
        SNR_CAP_DB
    } else {
        (10.0 * (signal / error).log10()).min(SNR_CAP_DB)
    }
}

/// Segmental SNR with 512-sample frames and a 256-sample hop.
pub fn ssnr(clean: &[f64], enhanced: &[f64]) -> Result<f64> {
    ssnr_with(clean, enhanced, 512, 256)
}

/// Segmental SNR: each full frame's SNR is clamped to `[-10, 35]` dB and the
/// clamped values are averaged over frames with non-silent clean signal.
/// A signal shorter than one frame is treated as a single frame.
pub fn ssnr_with(clean: &[f64], enhanced: &[f64], frame: usize, hop: usize) -> Result<f64> {
    check_pair(clean, enhanced)?;
    if frame == 0 || hop == 0 {
        return Err(Error::Usage("frame and hop must be positive".into()));
    }
    let starts: Vec<usize> = if clean.len() <= frame {
        vec![0]
    } else {
        (0..=clean.len() - frame).step_by(hop).collect()
    };
    let mut sum = 0.0;
    let mut kept = 0;
    for s in starts {
        let e = (s + frame).min(clean.len());
        let signal: f64 = clean[s..e].iter().map(|v| v * v).sum();
        if signal < SILENCE_ENERGY {
            continue;
        }
        let error: f64 = clean[s..e].iter().zip(&enhanced[s..e]).map(|(a, b)| (a - b).powi(2)).sum();
        let db = if error == 0.0 { SSNR_MAX_DB } else { 10.0 * (signal / error).log10() };
        sum += db.clamp(SSNR_MIN_DB, SSNR_MAX_DB);
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::UndefinedMetric("every frame of the clean signal is silent".into()));
    }
    Ok(sum / kept as f64)
}

/// Plain SNR in dB, capped at 60.
pub fn snr(clean: &[f64], enhanced: &[f64]) -> Result<f64> {
    check_pair(clean, enhanced)?;
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::UndefinedMetric("clean signal has zero energy".into()));
    }
    let error: f64 = clean.iter().zip(enhanced).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ratio_db(signal, error))
}

/// Scale-invariant SNR: `enhanced` is first projected onto `clean`.
pub fn si_snr(clean: &[f64], enhanced: &[f64]) -> Result<f64> {
    check_pair(clean, enhanced)?;
    let energy: f64 = clean.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::UndefinedMetric("clean signal has zero energy".into()));
    }
    let dot: f64 = clean.iter().zip(enhanced).map(|(a, b)| a * b).sum();
    let k = dot / energy;
    let target: f64 = energy * k * k;
    let residual: f64 = clean.iter().zip(enhanced).map(|(c, e)| (e - k * c).powi(2)).sum();
    if target == 0.0 {
        return Ok(-SNR_CAP_DB);
    }
    Ok(ratio_db(target, residual).max(-SNR_CAP_DB))
}

/// Metrics of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceMetrics {
    pub name: String,
    pub ssnr_db: f64,
    pub snr_db: f64,
    pub si_snr_db: f64,
}

impl UtteranceMetrics {
    pub fn compute(name: impl Into<String>, clean: &[f64], enhanced: &[f64]) -> Result<Self> {
        Ok(UtteranceMetrics {
            name: name.into(),
            ssnr_db: ssnr(clean, enhanced)?,
            snr_db: snr(clean, enhanced)?,
            si_snr_db: si_snr(clean, enhanced)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub utterances: Vec<UtteranceMetrics>,
}

impl MetricReport {
    /// Corpus means `(ssnr, snr, si_snr)`; `None` for an empty report.
    pub fn means(&self) -> Option<(f64, f64, f64)> {
        if self.utterances.is_empty() {
            return None;
        }
        let n = self.utterances.len() as f64;
        let sum = self.utterances.iter().fold((0.0, 0.0, 0.0), |acc, u| {
            (acc.0 + u.ssnr_db, acc.1 + u.snr_db, acc.2 + u.si_snr_db)
        });
        Some((sum.0 / n, sum.1 / n, sum.2 / n))
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "path\tssnr\tsnr\tsi_snr")?;
        for u in &self.utterances {
            writeln!(f, "{}\t{:.4}\t{:.4}\t{:.4}", u.name, u.ssnr_db, u.snr_db, u.si_snr_db)?;
        }
        match self.means() {
            Some((a, b, c)) => write!(f, "mean\t{a:.4}\t{b:.4}\t{c:.4}"),
            None => write!(f, "mean\tnan\tnan\tnan"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use proptest::prelude::*;

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        random_tensor(&[n], seed).into_data()
    }

    #[test]
    fn perfect_estimate_hits_ceilings() {
        let c = signal(2000, 1);
        assert_eq!(ssnr(&c, &c).unwrap(), 35.0);
        assert_eq!(snr(&c, &c).unwrap(), 60.0);
        assert_eq!(si_snr(&c, &c).unwrap(), 60.0);
    }

    #[test]
    fn single_frame_arithmetic() {
        // clean energy 100, error energy 1 -> 20 dB
        let clean = vec![10.0, 0.0, 0.0, 0.0];
        let enhanced = vec![9.0, 0.0, 0.0, 0.0];
        assert!((ssnr_with(&clean, &enhanced, 4, 4).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn floor_clamp() {
        let clean = vec![1.0, 0.0];
        let enhanced = vec![1.0 + 10f64.powf(2.25), 0.0];
        assert_eq!(ssnr_with(&clean, &enhanced, 2, 2).unwrap(), -10.0);
    }

    #[test]
    fn silent_clean_is_undefined() {
        assert!(matches!(ssnr(&[0.0; 600], &[1.0; 600]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(snr(&[0.0; 6], &[1.0; 6]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(si_snr(&[0.0; 6], &[1.0; 6]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn doubled_estimate() {
        let c = signal(300, 2);
        let e: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        assert!(snr(&c, &e).unwrap().abs() < 1e-12);
        assert_eq!(si_snr(&c, &e).unwrap(), 60.0);
    }

    #[test]
    fn si_snr_matches_direct_formula() {
        let c = signal(257, 3);
        let e = signal(257, 4);
        let dot: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
        let cc: f64 = c.iter().map(|a| a * a).sum();
        let s: Vec<f64> = c.iter().map(|a| a * dot / cc).collect();
        let num: f64 = s.iter().map(|a| a * a).sum();
        let den: f64 = e.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((si_snr(&c, &e).unwrap() - 10.0 * (num / den).log10()).abs() < 1e-9);
    }

    #[test]
    fn ssnr_decreases_with_noise_power() {
        let c = signal(4000, 5);
        let n = signal(4000, 6);
        let mut prev = f64::INFINITY;
        for p in [0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let e: Vec<f64> = c.iter().zip(&n).map(|(a, b)| a + p * b).collect();
            let v = ssnr(&c, &e).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn report_layout() {
        let r = MetricReport {
            utterances: vec![
                UtteranceMetrics { name: "a.wav".into(), ssnr_db: 1.0, snr_db: 2.0, si_snr_db: 3.0 },
                UtteranceMetrics { name: "b.wav".into(), ssnr_db: 3.0, snr_db: 4.0, si_snr_db: 5.0 },
            ],
        };
        let text = r.to_string();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path\tssnr\tsnr\tsi_snr");
        assert_eq!(lines[3], "mean\t2.0000\t3.0000\t4.0000");
    }

    proptest! {
        #[test]
        fn ssnr_within_range(seed in 0u64..500, scale in 0.0f64..50.0) {
            let c = signal(1100, seed);
            let n = signal(1100, seed + 1000);
            let e: Vec<f64> = c.iter().zip(&n).map(|(a, b)| a + scale * b).collect();
            let v = ssnr(&c, &e).unwrap();
            prop_assert!((-10.0..=35.0).contains(&v));
        }

        #[test]
        fn si_snr_scale_invariant(seed in 0u64..500, k in 0.01f64..100.0) {
            let c = signal(400, seed);
            let e = signal(400, seed + 7);
            let scaled: Vec<f64> = e.iter().map(|v| k * v).collect();
            prop_assert!((si_snr(&c, &e).unwrap() - si_snr(&c, &scaled).unwrap()).abs() < 1e-9);
        }
    }
}
