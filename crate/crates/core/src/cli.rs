//! The `tstnn` command line: train, denoise, eval, synth, params and gradcheck.
//!
//! Exit codes: 0 on success, 2 for usage, configuration, format and I/O
//! errors, 3 for numeric failures (non-finite loss, undefined metric,
//! failed gradient check).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

use crate::config::{ModelConfig, RunConfig};
use crate::error::{Error, Result};
use crate::framing::AudioBuffer;
use crate::gradcheck::suite;
use crate::metrics::{MetricReport, UtteranceMetrics};
use crate::model::{load_checkpoint, save_checkpoint, Tstnn};
use crate::training::{synth_batch, train, CleanSource, NoiseSource, SynthSpec, TrainReport};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "tstnn", version, about = "Two-stage transformer speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a `.trace.tsv` step trace.
    Train {
        /// JSON config with flat model and training keys.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the config seed (initialization, shuffling, synthetic data).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory with `clean/` and `noisy/` WAVs paired by file name;
        /// synthetic pairs are generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Enhance one WAV file.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance every noisy file and score it against its clean pair.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noisy: PathBuf,
    },
    /// Write synthetic `clean/` and `noisy/` WAV pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        snr_db: f64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clip length in samples.
        #[arg(long, default_value_t = 16_000)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Noise::White)]
        noise: Noise,
    },
    /// Print parameter counts per module.
    Params {
        /// Defaults to the full-size model.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run finite-difference gradient checks.
    #[command(group(ArgGroup::new("which").required(true).args(["op", "all"])))]
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        all: bool,
        /// List the available checks.
        #[arg(long, exclusive = true)]
        list: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Noise {
    White,
    Pink,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::UndefinedMetric(_) | Error::GradCheckFailed(_) => 3,
        _ => 2,
    }
}

/// Trace file written next to a checkpoint.
pub fn trace_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".trace.tsv");
    ckpt.with_file_name(name)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, steps, seed, data } => cmd_train(&config, &out, steps, seed, data.as_deref()),
        Command::Denoise { ckpt, input, out } => {
            let model = load_checkpoint(&ckpt)?;
            let noisy = read_wav(&input)?;
            write_wav(&out, &model.enhance(&noisy)?)
        }
        Command::Eval { ckpt, clean, noisy } => {
            let report = cmd_eval(&ckpt, &clean, &noisy)?;
            println!("{report}");
            Ok(())
        }
        Command::Synth { out, snr_db, count, seed, samples, noise } => cmd_synth(&out, snr_db, count, seed, samples, noise),
        Command::Params { config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(p)?.model,
                None => ModelConfig::default(),
            };
            let count = Tstnn::<f32>::new(cfg, 0)?.param_count();
            println!("{count}");
            println!("reference\t920000\t(0.92 M)");
            Ok(())
        }
        Command::Gradcheck { op, all: _, list } => {
            if list {
                suite::names().iter().for_each(|n| println!("{n}"));
                return Ok(());
            }
            let reports = match op {
                Some(name) => vec![suite::run(&name)?],
                None => suite::all().into_iter().map(|(_, f)| f()).collect::<Result<_>>()?,
            };
            let failed = reports.iter().filter(|r| !r.passed()).count();
            reports.iter().for_each(|r| println!("{r}"));
            if failed > 0 {
                return Err(Error::GradCheckFailed(failed));
            }
            Ok(())
        }
    }
}

fn cmd_train(config: &Path, out: &Path, steps: Option<usize>, seed: Option<u64>, data: Option<&Path>) -> Result<()> {
    let RunConfig { model: mcfg, train: mut tcfg } = RunConfig::load(config)?;
    if let Some(s) = steps {
        tcfg.max_steps = Some(s);
    }
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    let pairs = match data {
        Some(dir) => read_pairs(&dir.join("clean"), &dir.join("noisy"))?.into_iter().map(|(_, c, n)| (c, n)).collect(),
        None => {
            let spec = SynthSpec {
                sample_rate: mcfg.sample_rate,
                ..SynthSpec::sinusoids_in_white(tcfg.synth_samples, tcfg.synth_snr_db, tcfg.seed)
            };
            synth_batch(&spec, tcfg.synth_clips)?
        }
    };
    let mut model = Tstnn::<f32>::new(mcfg, tcfg.seed)?;
    let mut report = TrainReport::default();
    let result = train(&mut model, &tcfg, &pairs, |row| {
        eprintln!("{row}");
        report.trace.push(row.clone());
    });
    // On a non-finite step the model still holds the last good parameters.
    if result.is_ok() || matches!(result, Err(Error::NonFiniteLoss { .. })) {
        save_checkpoint(&model, out)?;
        fs::write(trace_path(out), report.to_tsv())?;
    }
    result.map(|_| ())
}

/// WAV files of `dir` keyed by file name.
fn wav_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Usage(format!("{}: {e}", dir.display())))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                files.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(files)
}

/// Reads `(name, clean, noisy)` triples; every file must have a partner.
pub fn read_pairs(clean: &Path, noisy: &Path) -> Result<Vec<(String, AudioBuffer, AudioBuffer)>> {
    let c = wav_files(clean)?;
    let n = wav_files(noisy)?;
    let unpaired: Vec<&String> = c.keys().filter(|k| !n.contains_key(*k)).chain(n.keys().filter(|k| !c.contains_key(*k))).collect();
    if !unpaired.is_empty() {
        return Err(Error::Usage(format!("unpaired files: {unpaired:?}")));
    }
    if c.is_empty() {
        return Err(Error::Usage(format!("no WAV files in {}", clean.display())));
    }
    c.iter().map(|(name, path)| Ok((name.clone(), read_wav(path)?, read_wav(&n[name])?))).collect()
}

fn to_f64(a: &AudioBuffer) -> Vec<f64> {
    a.samples.iter().map(|&v| v as f64).collect()
}

pub fn cmd_eval(ckpt: &Path, clean: &Path, noisy: &Path) -> Result<MetricReport> {
    let model = load_checkpoint(ckpt)?;
    let mut report = MetricReport::default();
    for (name, c, n) in read_pairs(clean, noisy)? {
        let e = model.enhance(&n)?;
        report.utterances.push(UtteranceMetrics::compute(name, &to_f64(&c), &to_f64(&e))?);
    }
    Ok(report)
}

fn cmd_synth(out: &Path, snr_db: f64, count: usize, seed: u64, samples: usize, noise: Noise) -> Result<()> {
    if count == 0 || samples == 0 {
        return Err(Error::Usage("count and samples must be positive".into()));
    }
    let spec = SynthSpec {
        clean: CleanSource::Sinusoids,
        noise: match noise {
            Noise::White => NoiseSource::White,
            Noise::Pink => NoiseSource::Pink,
        },
        snr_db,
        samples,
        sample_rate: ModelConfig::default().sample_rate,
        seed,
    };
    let pairs = synth_batch(&spec, count)?;
    let (cdir, ndir) = (out.join("clean"), out.join("noisy"));
    for d in [&cdir, &ndir] {
        fs::create_dir_all(d).map_err(|e| Error::Usage(format!("{}: {e}", d.display())))?;
    }
    for (i, (c, n)) in pairs.iter().enumerate() {
        let name = format!("{i:04}.wav");
        write_wav(cdir.join(&name), c)?;
        write_wav(ndir.join(&name), n)?;
    }
    Ok(())
}
