//! Overfits the tiny model on four synthetic clips at 0 dB, then reports
//! the loss and mean segmental SNR before and after training.
//!
//! cargo run --release --example train_synthetic [seed]

use std::time::Instant;

use tstnn::config::{ModelConfig, TrainConfig};
use tstnn::framing::AudioBuffer;
use tstnn::metrics::ssnr;
use tstnn::model::Tstnn;
use tstnn::training::{evaluate_loss, synth_batch, train, SynthSpec};

fn mean_ssnr(pairs: &[(AudioBuffer, AudioBuffer)], estimate: impl Fn(&AudioBuffer) -> tstnn::Result<AudioBuffer>) -> tstnn::Result<f64> {
    let mut total = 0.0;
    for (clean, noisy) in pairs {
        let est = estimate(noisy)?;
        let c: Vec<f64> = clean.samples.iter().map(|&v| v as f64).collect();
        let e: Vec<f64> = est.samples.iter().map(|&v| v as f64).collect();
        total += ssnr(&c, &e)?;
    }
    Ok(total / pairs.len() as f64)
}

fn main() -> tstnn::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let cfg = TrainConfig { seed, ..TrainConfig::tiny() };
    let data = synth_batch(&SynthSpec::sinusoids_in_white(cfg.synth_samples, cfg.synth_snr_db, seed), cfg.synth_clips)?;
    let mut model = Tstnn::<f32>::new(ModelConfig::tiny(), seed)?;

    let (before, _, _) = evaluate_loss(&model, &cfg, &data)?;
    let noisy = mean_ssnr(&data, |x| Ok(x.clone()))?;
    let t = Instant::now();
    train(&mut model, &cfg, &data, |row| {
        if row.step % 50 == 0 {
            println!("step {:>4}  lr {:.3e}  loss {:.5}", row.step, row.lr, row.loss);
        }
    })?;
    let (after, _, _) = evaluate_loss(&model, &cfg, &data)?;
    let enhanced = mean_ssnr(&data, |x| model.enhance(x))?;

    println!("trained in {:.1} s", t.elapsed().as_secs_f64());
    println!("loss      {before:.5} -> {after:.5}  (x{:.3})", after / before);
    println!("mean SSNR {noisy:.2} dB -> {enhanced:.2} dB");
    Ok(())
}
