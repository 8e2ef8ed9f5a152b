//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tstnn::autodiff::{Graph, ParamStore, Var};
use tstnn::config::{AttentionScale, ModelConfig, TrainConfig};
use tstnn::framing::{overlap_add, segment, AudioBuffer, FramingSpec};
use tstnn::gradcheck::{random_tensor, suite};
use tstnn::layers::{init_rng, ParamBuilder};
use tstnn::metrics::ssnr;
use tstnn::model::{decode_checkpoint, encode_checkpoint, Masking, Tstnn};
use tstnn::training::{
    clip_gradients, evaluate_loss, grad_norm, loss_frequency, loss_time, lr_at, synth_batch, train, StftSpec,
    SynthSpec, Window,
};
use tstnn::transformer::{multi_head_attention, AttentionParams, ImprovedTransformerLayer, TwoStageBlock};
use tstnn::Tensor;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: tstnn::Error) -> String {
    e.to_string()
}

fn framing_inversion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f32;
    for _ in 0..200 {
        let len = rng.random_range(1..=50_000);
        let frame = rng.random_range(2..=1024);
        let overlap = rng.random_range(1..frame);
        let spec = FramingSpec::new(frame, overlap).map_err(err)?;
        let samples: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let audio = AudioBuffer::new(samples.clone(), 16_000).map_err(err)?;
        let (frames, original) = segment(&audio, &spec).map_err(err)?;
        let back = overlap_add(&frames, &spec, original).map_err(err)?;
        ensure(back.len() == len, || format!("L={len} F={frame} H={overlap}: got {} samples", back.len()))?;
        let e = samples.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        ensure(e < 1e-6, || format!("L={len} F={frame} H={overlap}: max error {e:e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("200 random (L, F, H), max |err| {worst:e}"))
}

fn gradient_suite() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut full = String::new();
    for (name, f) in suite::all() {
        let r = f().map_err(err)?;
        ensure(r.passed(), || r.to_string())?;
        if name == "full_model" {
            full = format!("full model {} sampled params max rel {:.2e}", r.checked, r.max_rel_err);
        } else {
            worst_rel = worst_rel.max(r.max_rel_err);
        }
    }
    Ok(format!("{} checks, component max rel {worst_rel:.2e}, {full}", suite::all().len()))
}

fn shape_contract() -> Outcome {
    let model = Tstnn::<f32>::new(ModelConfig::default(), 0).map_err(err)?;
    let spec = model.config.framing();
    let n = 3;
    let store = &model.store;
    let mut g = Graph::inference(store);
    let x = g.constant(random_tensor(&[1, 1, n, 512], 2).cast::<f32>());
    let (_, trace) = model.forward_frames(&mut g, x).map_err(err)?;
    let mut expected = vec![
        ("input".to_string(), vec![1, 1, n, 512]),
        ("encoder".to_string(), vec![1, 64, n, 256]),
        ("projection".to_string(), vec![1, 32, n, 256]),
    ];
    expected.extend((0..4).map(|i| (format!("tstm.block{i}"), vec![1, 32, n, 256])));
    expected.push(("masking".to_string(), vec![1, 64, n, 256]));
    expected.push(("decoder".to_string(), vec![1, 1, n, 512]));
    ensure(trace == expected, || format!("trace {trace:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lengths = vec![1, 255, 256, 511, 512, 513, 768, 769];
    while lengths.len() < 50 {
        lengths.push(rng.random_range(1..=1600));
    }
    for &len in &lengths {
        let audio = AudioBuffer::new((0..len).map(|i| (i as f32 * 0.01).sin()).collect(), 16_000).map_err(err)?;
        let out = model.enhance(&audio).map_err(err)?;
        ensure(out.len() == len && out.sample_rate == 16_000, || {
            format!("length {len} -> {} (frame grid {})", out.len(), spec.n_frames(len))
        })?;
    }
    Ok(format!("trace matches at N={n}; 50 lengths in [1, 1600] preserved"))
}

fn param_count() -> Outcome {
    let count = Tstnn::<f32>::new(ModelConfig::default(), 0).map_err(err)?.param_count();
    println!("{count}");
    ensure((830_000..=1_010_000).contains(&count.total), || format!("total {}", count.total))?;
    let sum: usize = count.groups.iter().map(|(_, n)| n).sum();
    ensure(sum == count.total, || format!("breakdown sums to {sum}, total {}", count.total))?;
    Ok(format!("{} parameters (reference 0.92 M)", count.total))
}

fn schedule_and_clipping() -> Outcome {
    let cfg = TrainConfig::default();
    let warm = |n: f64| 0.2 * 64f64.powf(-0.5) * n * 4000f64.powf(-1.5);
    let after = |epoch: i32| 4e-4 * 0.98f64.powi(epoch / 2);
    let mut cases = vec![(1, 0, warm(1.0)), (2000, 0, warm(2000.0)), (4000, 0, warm(4000.0))];
    cases.extend([(4001, 0, after(0)), (9000, 2, after(2)), (60_000, 10, after(10))]);
    for (n, epoch, want) in cases {
        let got = lr_at(n, epoch, &cfg).map_err(err)?;
        let rel = ((got - want) / want).abs();
        ensure(rel < 1e-9, || format!("lr_at({n}, {epoch}) = {got:e}, want {want:e}"))?;
    }
    let at4000 = lr_at(4000, 0, &cfg).map_err(err)?;
    ensure((at4000 - 3.9528e-4).abs() < 1e-8, || format!("n=4000 gives {at4000:e}"))?;

    let mut store = ParamStore::<f64>::new();
    let a = store.register("a", Tensor::zeros(&[2])).map_err(err)?;
    let b = store.register("b", Tensor::zeros(&[2, 2])).map_err(err)?;
    store.grad_mut(a).copy_from_slice(&[6.0, 0.0]);
    store.grad_mut(b).copy_from_slice(&[0.0, 8.0, 0.0, 0.0]);
    let before = grad_norm(&store);
    let s = clip_gradients(&mut store, 5.0);
    ensure(before == 10.0 && s == 0.5, || format!("norm {before}, scale {s}"))?;
    ensure(store.grad(a) == [3.0, 0.0] && store.grad(b) == [0.0, 4.0, 0.0, 0.0], || "clipped grads".into())?;
    ensure(grad_norm(&store) == 5.0, || format!("norm after {}", grad_norm(&store)))?;
    Ok(format!("6 schedule points to 1e-9, n=4000 -> {at4000:.4e}; norm 10 clipped to 5 exactly"))
}

fn mean_ssnr(pairs: &[(AudioBuffer, AudioBuffer)], model: Option<&Tstnn<f32>>) -> Result<f64, String> {
    let mut total = 0.0;
    for (clean, noisy) in pairs {
        let est = match model {
            Some(m) => m.enhance(noisy).map_err(err)?,
            None => noisy.clone(),
        };
        let c: Vec<f64> = clean.samples.iter().map(|&v| v as f64).collect();
        let e: Vec<f64> = est.samples.iter().map(|&v| v as f64).collect();
        total += ssnr(&c, &e).map_err(err)?;
    }
    Ok(total / pairs.len() as f64)
}

fn overfit_and_denoise() -> Outcome {
    let cfg = TrainConfig::tiny();
    let spec = SynthSpec::sinusoids_in_white(cfg.synth_samples, 0.0, cfg.seed);
    let data = synth_batch(&spec, 4).map_err(err)?;
    let mut model = Tstnn::<f32>::new(ModelConfig::tiny(), cfg.seed).map_err(err)?;
    let (initial, _, _) = evaluate_loss(&model, &cfg, &data).map_err(err)?;
    let noisy = mean_ssnr(&data, None)?;
    let t = Instant::now();
    let report = train(&mut model, &cfg, &data, |_| {}).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    ensure(report.trace.len() == 300, || format!("{} steps", report.trace.len()))?;
    let (last, _, _) = evaluate_loss(&model, &cfg, &data).map_err(err)?;
    let enhanced = mean_ssnr(&data, Some(&model))?;
    let summary = format!(
        "loss {initial:.4} -> {last:.4} (x{:.3}), SSNR {noisy:.2} -> {enhanced:.2} dB, {secs:.0} s",
        last / initial
    );
    ensure(last < 0.1 * initial && enhanced >= noisy + 3.0 && secs < 300.0, || summary.clone())?;
    Ok(summary)
}

fn rows_permuted(t: &Tensor<f64>, perm: &[usize], d: usize) -> Tensor<f64> {
    let src = t.data();
    let data = perm.iter().flat_map(|&p| src[p * d..(p + 1) * d].to_vec()).collect();
    Tensor::new(t.shape(), data).unwrap()
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn invariants() -> Outcome {
    // softmax rows
    let store = ParamStore::<f64>::new();
    let mut g = Graph::inference(&store);
    let x = g.constant(random_tensor(&[6, 9], 11).map(|v| 20.0 * v));
    let s = g.softmax(x).map_err(err)?;
    for row in g.value(s).data().chunks(9) {
        let sum: f64 = row.iter().sum();
        ensure((sum - 1.0).abs() < 1e-12 && row.iter().all(|&p| p >= 0.0), || format!("row sum {sum}"))?;
    }

    // attention is permutation equivariant; the full layer is not
    let (l, d) = (5, 8);
    let perm = [3, 0, 4, 1, 2];
    let mut store = ParamStore::<f64>::new();
    let mut rng = init_rng(4);
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let attn = AttentionParams::new(&mut pb.sub("attn"), d, 2, AttentionScale::PerHead).map_err(err)?;
    let layer =
        ImprovedTransformerLayer::new(&mut pb.sub("layer"), d, 2, AttentionScale::PerHead, true, 1e-5).map_err(err)?;
    let x = random_tensor(&[1, l, d], 12);
    let xp = rows_permuted(&x, &perm, d);
    let mut g = Graph::inference(&store);
    let (va, vp) = (g.constant(x), g.constant(xp));
    let run = |g: &mut Graph<f64>, f: &dyn Fn(&mut Graph<f64>, Var) -> tstnn::Result<Var>| -> Result<_, String> {
        let a = f(g, va).map_err(err)?;
        let p = f(g, vp).map_err(err)?;
        Ok(max_diff(&rows_permuted(g.value(a), &perm, d), g.value(p)))
    };
    let attn_gap = run(&mut g, &|g, v| Ok(multi_head_attention(g, v, &attn)?.output))?;
    let layer_gap = run(&mut g, &|g, v| layer.forward(g, v))?;
    ensure(attn_gap < 1e-12, || format!("attention not equivariant: {attn_gap:e}"))?;
    ensure(layer_gap > 1e-3, || format!("full layer unexpectedly equivariant: {layer_gap:e}"))?;

    // mask is non-negative
    let mut store = ParamStore::<f64>::new();
    let mut rng = init_rng(5);
    let masking = Masking::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 8, 0.25).map_err(err)?;
    let mut g = Graph::inference(&store);
    for seed in 0..20 {
        let t = g.constant(random_tensor(&[2, 4, 3, 6], 100 + seed).map(|v| 5.0 * v));
        let m = masking.mask(&mut g, t).map_err(err)?;
        ensure(g.value(m).data().iter().all(|&v| v >= 0.0), || format!("negative mask entry, seed {seed}"))?;
    }

    // local stage: perturbing frame 1 leaves the local layer output of other frames untouched
    let mut store = ParamStore::<f64>::new();
    let mut rng = init_rng(6);
    let block =
        TwoStageBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2, AttentionScale::PerHead, true, 1e-5)
            .map_err(err)?;
    let (c, n, f) = (4, 3, 5);
    let x = random_tensor(&[1, c, n, f], 13);
    let mut bumped = x.clone();
    for ch in 0..c {
        for k in 0..f {
            bumped.data_mut()[(ch * n + 1) * f + k] += 0.5;
        }
    }
    let mut g = Graph::inference(&store);
    let local = |g: &mut Graph<f64>, t: Tensor<f64>| -> Result<Vec<f64>, String> {
        let v = g.constant(t);
        let s = g.permute(v, &[0, 2, 3, 1]).map_err(err)?;
        let s = g.reshape(s, &[n, f, c]).map_err(err)?;
        let y = block.local.forward(g, s).map_err(err)?;
        Ok(g.value(y).data().to_vec())
    };
    let (ya, yb) = (local(&mut g, x.clone())?, local(&mut g, bumped.clone())?);
    for frame in 0..n {
        let r = frame * f * c..(frame + 1) * f * c;
        ensure((ya[r.clone()] == yb[r]) == (frame != 1), || format!("frame {frame} locality"))?;
    }
    let xv = g.constant(x);
    block.local_stage(&mut g, xv).map_err(err)?;

    // checkpoint roundtrip
    let model = Tstnn::<f32>::new(ModelConfig::tiny(), 7).map_err(err)?;
    let bytes = encode_checkpoint(&model).map_err(err)?;
    let back = decode_checkpoint(&bytes).map_err(err)?;
    ensure(encode_checkpoint(&back).map_err(err)? == bytes, || "re-encoded bytes differ".into())?;
    for id in model.store.ids() {
        let (a, b) = (model.store.value(id).data(), back.store.value(id).data());
        let same = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same && back.store.name(id) == model.store.name(id), || format!("tensor {}", model.store.name(id)))?;
    }

    // fixed-seed training trace
    let cfg = TrainConfig {
        max_steps: Some(20),
        synth_samples: 512,
        ..TrainConfig::tiny()
    };
    let data = synth_batch(&SynthSpec::sinusoids_in_white(512, 0.0, 9), 4).map_err(err)?;
    let trace = || -> Result<String, String> {
        let mut m = Tstnn::<f32>::new(ModelConfig::tiny(), 9).map_err(err)?;
        Ok(train(&mut m, &cfg, &data, |_| {}).map_err(err)?.to_tsv())
    };
    let (t1, t2) = (trace()?, trace()?);
    ensure(t1 == t2 && t1.lines().count() == 21, || "training traces differ".into())?;

    Ok(format!(
        "softmax rows, attention equivariance (gap {attn_gap:.1e}) vs layer (gap {layer_gap:.2}), mask >= 0, \
         frame locality, checkpoint bit-exact ({} bytes), 20-step trace identical",
        bytes.len()
    ))
}

/// Windowed one-sided DFT of one frame, summed term by term.
fn dft_bins(x: &[f64], window: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().zip(window).enumerate().fold((0.0, 0.0), |(re, im), (j, (v, w))| {
                let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                (re + v * w * ang.cos(), im + v * w * ang.sin())
            })
        })
        .collect()
}

fn frequency_oracle(a: &[f64], b: &[f64], window: &[f64]) -> f64 {
    let (x, y) = (dft_bins(a, window), dft_bins(b, window));
    let sum: f64 = x.iter().zip(&y).map(|(p, q)| ((p.0.abs() + p.1.abs()) - (q.0.abs() + q.1.abs())).abs()).sum();
    sum / x.len() as f64
}

fn loss_semantics() -> Outcome {
    let windows = [
        (Window::Hann, vec![0.0, 0.5, 1.0, 0.5]),
        (Window::Rectangular, vec![1.0; 4]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(0.01..0.5) * if trial % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for (window, w) in &windows {
            let spec = StftSpec { fft_size: 4, hop: 2, window: *window };
            let lf = loss_frequency(&a, &b, &spec).map_err(err)?;
            let want = frequency_oracle(&a, &b, w);
            worst = worst.max((lf - want).abs());
            ensure((lf - want).abs() < 1e-9, || format!("loss_F {lf} vs oracle {want}"))?;
            ensure(lf > 0.0, || format!("loss_F zero on perturbed {a:?} {b:?}"))?;
            ensure(loss_frequency(&a, &a, &spec).map_err(err)? == 0.0, || "loss_F nonzero on identical".into())?;
        }
        let lt = loss_time(&a, &b).map_err(err)?;
        let want = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 4.0;
        worst = worst.max((lt - want).abs());
        ensure((lt - want).abs() < 1e-9 && lt > 0.0, || format!("loss_T {lt} vs {want}"))?;
        ensure(loss_time(&a, &a).map_err(err)? == 0.0, || "loss_T nonzero on identical".into())?;
    }
    Ok(format!("50 random 4-sample pairs, Hann and rectangular, max |err| {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("framing inversion", framing_inversion),
        ("gradient suite", gradient_suite),
        ("shape contract", shape_contract),
        ("parameter count", param_count),
        ("schedule and optimizer", schedule_and_clipping),
        ("overfit and denoise", overfit_and_denoise),
        ("invariant suite", invariants),
        ("loss semantics", loss_semantics),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {} {name}: {detail} ({:.1} s)", i + 1, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
