//! The training loop and its per-step trace.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::LossVars;
use super::optim::{clip_gradients, grad_norm, lr_at, Adam};
use super::stft::{StftSpec, Window};
use crate::autodiff::Graph;
use crate::config::TrainConfig;
use crate::error::{ensure_shape, Error, Result};
use crate::framing::AudioBuffer;
use crate::model::Tstnn;
use crate::tensor::{Real, Tensor};

pub const TRACE_HEADER: &str = "step\tepoch\tlr\tloss\tloss_F\tloss_T\tgrad_norm";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_f: f64,
    pub loss_t: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl fmt::Display for TraceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
            self.step, self.epoch, self.lr, self.loss, self.loss_f, self.loss_t, self.grad_norm
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for row in &self.trace {
            s.push_str(&format!("{row}\n"));
        }
        s
    }
}

pub fn stft_spec(cfg: &TrainConfig) -> StftSpec {
    StftSpec {
        fft_size: cfg.fft_size,
        hop: cfg.fft_hop,
        window: Window::Hann,
    }
}

/// Loss of a batch of `(clean, noisy)` signals that may differ in length.
///
/// Shorter items are zero-padded for the forward pass; each item's loss is
/// computed on its own valid span only and the batch loss is their mean.
pub fn batch_loss<T: Real>(
    model: &Tstnn<T>,
    g: &mut Graph<T>,
    clean: &[Vec<T>],
    noisy: &[Vec<T>],
    spec: StftSpec,
    alpha: f64,
) -> Result<LossVars> {
    ensure_shape!(
        !clean.is_empty() && clean.len() == noisy.len(),
        "batch needs matching non-empty clean and noisy lists"
    );
    let max_len = noisy.iter().map(Vec::len).max().unwrap_or(0);
    let padded: Vec<Vec<T>> = noisy
        .iter()
        .map(|x| {
            let mut x = x.clone();
            x.resize(max_len, T::zero());
            x
        })
        .collect();
    let enhanced = model.forward_waveforms(g, &padded)?;
    let mut parts: Vec<LossVars> = Vec::with_capacity(clean.len());
    for (i, c) in clean.iter().enumerate() {
        let len = noisy[i].len();
        ensure_shape!(c.len() == len, "clean/noisy length mismatch in item {i}: {} vs {len}", c.len());
        let e = if clean.len() == 1 && len == max_len {
            enhanced
        } else {
            let row = g.narrow(enhanced, 0, i, 1)?;
            g.narrow(row, 1, 0, len)?
        };
        let c = g.constant(Tensor::new(&[1, len], c.clone())?);
        parts.push(g.combined_loss(c, e, spec, alpha)?);
    }
    let inv = T::lit(1.0 / parts.len() as f64);
    let avg = |g: &mut Graph<T>, pick: fn(&LossVars) -> crate::autodiff::Var| -> Result<_> {
        let mut acc = pick(&parts[0]);
        for p in &parts[1..] {
            acc = g.add(acc, pick(p))?;
        }
        Ok(if parts.len() == 1 { acc } else { g.scale(acc, inv) })
    };
    Ok(LossVars {
        total: avg(g, |p| p.total)?,
        frequency: avg(g, |p| p.frequency)?,
        time: avg(g, |p| p.time)?,
    })
}

fn to_real<T: Real>(x: &[f32]) -> Vec<T> {
    x.iter().map(|&v| T::lit(v as f64)).collect()
}

fn check_data(sample_rate: u32, data: &[(AudioBuffer, AudioBuffer)]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Usage("no training pairs".into()));
    }
    for (i, (c, n)) in data.iter().enumerate() {
        ensure_shape!(
            c.len() == n.len() && !c.is_empty(),
            "pair {i}: clean has {} samples, noisy {}",
            c.len(),
            n.len()
        );
        if c.sample_rate != sample_rate || n.sample_rate != sample_rate {
            return Err(Error::config(
                "sample_rate",
                format!("pair {i} is not at the model rate {sample_rate} Hz"),
            ));
        }
    }
    Ok(())
}

/// Mean `(total, frequency, time)` loss over whole pairs, without gradients.
pub fn evaluate_loss<T: Real>(
    model: &Tstnn<T>,
    cfg: &TrainConfig,
    data: &[(AudioBuffer, AudioBuffer)],
) -> Result<(f64, f64, f64)> {
    check_data(model.config.sample_rate, data)?;
    let mut sums = (0.0, 0.0, 0.0);
    for (c, n) in data {
        let mut g = Graph::inference(&model.store);
        let l = batch_loss(model, &mut g, &[to_real(&c.samples)], &[to_real(&n.samples)], stft_spec(cfg), cfg.alpha)?;
        sums.0 += g.value(l.total).item().as_f64();
        sums.1 += g.value(l.frequency).item().as_f64();
        sums.2 += g.value(l.time).item().as_f64();
    }
    let k = data.len() as f64;
    Ok((sums.0 / k, sums.1 / k, sums.2 / k))
}

/// Trains `model` in place on `(clean, noisy)` pairs.
///
/// Each epoch visits the pairs in a seeded random order in batches of
/// `batch_size`; clips longer than `segment_seconds` contribute a random
/// segment of that length. The step counter `n` runs across epochs. On a
/// non-finite loss or gradient the step is skipped and
/// [`Error::NonFiniteLoss`] is returned; the model keeps the last good
/// parameters.
pub fn train<T: Real>(
    model: &mut Tstnn<T>,
    cfg: &TrainConfig,
    data: &[(AudioBuffer, AudioBuffer)],
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_data(model.config.sample_rate, data)?;
    let spec = stft_spec(cfg);
    let seg_len = ((cfg.segment_seconds * model.config.sample_rate as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::from_config(cfg);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    let limit = cfg.max_steps;
    if limit == Some(0) {
        return Ok(report);
    }

    for epoch in 0.. {
        if limit.is_none() && epoch == cfg.epochs {
            break;
        }
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let (mut clean, mut noisy) = (Vec::new(), Vec::new());
            for &i in batch {
                let (c, n) = &data[i];
                let start = if c.len() > seg_len { rng.random_range(0..=c.len() - seg_len) } else { 0 };
                let end = (start + seg_len).min(c.len());
                clean.push(to_real::<T>(&c.samples[start..end]));
                noisy.push(to_real::<T>(&n.samples[start..end]));
            }

            let lr = lr_at(step, epoch, cfg)?;
            model.store.zero_grad();
            let (loss, loss_f, loss_t) = {
                let mut g = Graph::new(&model.store);
                let l = batch_loss(model, &mut g, &clean, &noisy, spec, cfg.alpha)?;
                let values = (
                    g.value(l.total).item().as_f64(),
                    g.value(l.frequency).item().as_f64(),
                    g.value(l.time).item().as_f64(),
                );
                if !values.0.is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                g.backward(l.total, &mut model.store)?;
                values
            };
            let norm = grad_norm(&model.store);
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            clip_gradients(&mut model.store, cfg.clip_norm);
            adam.step(&mut model.store, lr, step)?;

            let row = TraceRow {
                step,
                epoch,
                lr,
                loss,
                loss_f,
                loss_t,
                grad_norm: norm,
            };
            on_step(&row);
            report.trace.push(row);
            if limit == Some(step) {
                return Ok(report);
            }
        }
    }
    Ok(report)
}
