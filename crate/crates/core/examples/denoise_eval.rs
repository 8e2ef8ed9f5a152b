//! Overfits the tiny model on four synthetic clips, writes the clips as
//! clean/noisy WAV pairs plus a checkpoint, then runs the directory
//! evaluation used by `tstnn eval` against the noisy input and the model.
//!
//! The clips are the training clips: a few hundred steps on four clips
//! memorizes them but does not generalize to unseen mixtures.
//!
//! cargo run --release --example denoise_eval

use tstnn::cli::{cmd_eval, read_pairs};
use tstnn::config::{ModelConfig, TrainConfig};
use tstnn::metrics::{MetricReport, UtteranceMetrics};
use tstnn::model::{save_checkpoint, Tstnn};
use tstnn::training::{synth_batch, train, SynthSpec};
use tstnn::wav::write_wav;

fn main() -> tstnn::Result<()> {
    let cfg = TrainConfig::tiny();
    let pairs = synth_batch(&SynthSpec::sinusoids_in_white(cfg.synth_samples, cfg.synth_snr_db, 0), 4)?;
    let mut model = Tstnn::<f32>::new(ModelConfig::tiny(), 0)?;
    train(&mut model, &cfg, &pairs, |_| {})?;

    let dir = std::env::temp_dir().join("tstnn_denoise_eval");
    for sub in ["clean", "noisy"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    for (i, (c, n)) in pairs.iter().enumerate() {
        write_wav(dir.join("clean").join(format!("{i:04}.wav")), c)?;
        write_wav(dir.join("noisy").join(format!("{i:04}.wav")), n)?;
    }
    let ckpt = dir.join("tiny.ckpt");
    save_checkpoint(&model, &ckpt)?;

    let mut noisy = MetricReport::default();
    for (name, c, n) in read_pairs(&dir.join("clean"), &dir.join("noisy"))? {
        let f = |x: &[f32]| x.iter().map(|&v| v as f64).collect::<Vec<_>>();
        noisy.utterances.push(UtteranceMetrics::compute(name, &f(&c.samples), &f(&n.samples))?);
    }
    let enhanced = cmd_eval(&ckpt, &dir.join("clean"), &dir.join("noisy"))?;
    println!("== noisy\n{noisy}\n\n== enhanced\n{enhanced}");
    std::fs::remove_dir_all(dir)?;
    Ok(())
}
