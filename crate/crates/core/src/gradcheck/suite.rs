//! Named finite-difference checks over every differentiable primitive and
//! each model component, at toy sizes in double precision.

use rand_chacha::ChaCha8Rng;

use super::{check, check_inputs, random_tensor, Coverage, GradCheckReport, Tolerance};
use crate::autodiff::{Conv2dOpts, Graph, GruVars, Padding, ParamStore, Var};
use crate::config::{AttentionScale, ModelConfig};
use crate::error::{Error, Result};
use crate::framing::FramingSpec;
use crate::layers::{init_rng, ParamBuilder};
use crate::model::{Decoder, Encoder, InputProjection, Masking, Tstnn};
use crate::tensor::Tensor;
use crate::training::{batch_loss, StftSpec};
use crate::transformer::{multi_head_attention, AttentionParams, ImprovedTransformerLayer, TwoStageBlock};

pub type CheckFn = fn() -> Result<GradCheckReport>;

/// Every registered check, in a stable order.
pub fn all() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("add", add),
        ("sub", sub),
        ("mul", mul),
        ("scale", scale),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("tanh", tanh),
        ("abs", abs),
        ("prelu", prelu),
        ("sum", sum),
        ("mean", mean),
        ("softmax", softmax),
        ("linear", linear),
        ("bmm", bmm),
        ("reshape_permute", reshape_permute),
        ("concat_narrow", concat_narrow),
        ("subpixel_shuffle", subpixel_shuffle),
        ("layer_norm", layer_norm),
        ("group_norm", group_norm),
        ("conv2d_same", conv2d_same),
        ("conv2d_causal_dilated", conv2d_causal_dilated),
        ("conv2d_strided", conv2d_strided),
        ("gru", gru),
        ("gru_bidirectional", gru_bidirectional),
        ("overlap_add", overlap_add),
        ("stft", stft),
        ("combined_loss", combined_loss),
        ("attention", attention),
        ("transformer_layer", transformer_layer),
        ("two_stage_block", two_stage_block),
        ("encoder", encoder),
        ("projection", projection),
        ("masking", masking),
        ("decoder", decoder),
        ("full_model", full_model),
    ]
}

pub fn names() -> Vec<&'static str> {
    all().into_iter().map(|(n, _)| n).collect()
}

/// Runs one check by name.
pub fn run(name: &str) -> Result<GradCheckReport> {
    let (_, f) = all()
        .into_iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Usage(format!("unknown gradcheck `{name}`; known: {}", names().join(", "))))?;
    f()
}

fn r(shape: &[usize], seed: u64) -> Tensor<f64> {
    random_tensor(shape, seed)
}

/// Values bounded away from zero so kinks are never straddled.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    r(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

fn add() -> Result<GradCheckReport> {
    check_inputs("add", &[r(&[2, 3], 1), r(&[2, 3], 2)], |g, v| g.add(v[0], v[1]))
}

fn sub() -> Result<GradCheckReport> {
    check_inputs("sub", &[r(&[2, 3], 1), r(&[2, 3], 2)], |g, v| g.sub(v[0], v[1]))
}

fn mul() -> Result<GradCheckReport> {
    check_inputs("mul", &[r(&[2, 3], 1), r(&[2, 3], 2)], |g, v| g.mul(v[0], v[1]))
}

fn scale() -> Result<GradCheckReport> {
    check_inputs("scale", &[r(&[5], 1)], |g, v| Ok(g.scale(v[0], -1.7)))
}

fn relu() -> Result<GradCheckReport> {
    check_inputs("relu", &[away_from_zero(&[7], 3)], |g, v| Ok(g.relu(v[0])))
}

fn sigmoid() -> Result<GradCheckReport> {
    check_inputs("sigmoid", &[r(&[7], 4).map(|v| 4.0 * v)], |g, v| Ok(g.sigmoid(v[0])))
}

fn tanh() -> Result<GradCheckReport> {
    check_inputs("tanh", &[r(&[7], 5).map(|v| 3.0 * v)], |g, v| Ok(g.tanh(v[0])))
}

fn abs() -> Result<GradCheckReport> {
    check_inputs("abs", &[away_from_zero(&[7], 6)], |g, v| Ok(g.abs(v[0])))
}

fn prelu() -> Result<GradCheckReport> {
    check_inputs("prelu", &[away_from_zero(&[2, 3, 2, 2], 7), r(&[3], 8)], |g, v| g.prelu(v[0], v[1], 1))
}

fn sum() -> Result<GradCheckReport> {
    check_inputs("sum", &[r(&[3, 2], 9)], |g, v| Ok(g.sum(v[0])))
}

fn mean() -> Result<GradCheckReport> {
    check_inputs("mean", &[r(&[3, 2], 10)], |g, v| Ok(g.mean(v[0])))
}

fn softmax() -> Result<GradCheckReport> {
    check_inputs("softmax", &[r(&[3, 5], 11).map(|v| 3.0 * v)], |g, v| g.softmax(v[0]))
}

fn linear() -> Result<GradCheckReport> {
    check_inputs("linear", &[r(&[2, 3, 4], 12), r(&[4, 5], 13), r(&[5], 14)], |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    })
}

fn bmm() -> Result<GradCheckReport> {
    check_inputs("bmm", &[r(&[2, 3, 4], 15), r(&[2, 5, 4], 16)], |g, v| g.bmm(v[0], v[1], true))
}

fn reshape_permute() -> Result<GradCheckReport> {
    check_inputs("reshape_permute", &[r(&[2, 3, 4], 17)], |g, v| {
        let x = g.reshape(v[0], &[6, 4])?;
        let x = g.reshape(x, &[2, 3, 2, 2])?;
        g.permute(x, &[2, 0, 3, 1])
    })
}

fn concat_narrow() -> Result<GradCheckReport> {
    check_inputs("concat_narrow", &[r(&[2, 2, 3], 18), r(&[2, 1, 3], 19)], |g, v| {
        let c = g.concat(&[v[0], v[1]], 1)?;
        g.narrow(c, 2, 1, 2)
    })
}

fn subpixel_shuffle() -> Result<GradCheckReport> {
    check_inputs("subpixel_shuffle", &[r(&[1, 4, 2, 3], 20)], |g, v| g.subpixel_shuffle_f(v[0], 2))
}

fn layer_norm() -> Result<GradCheckReport> {
    check_inputs("layer_norm", &[r(&[3, 5], 21), r(&[5], 22), r(&[5], 23)], |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    })
}

fn group_norm() -> Result<GradCheckReport> {
    check_inputs("group_norm", &[r(&[2, 4, 2, 3], 24), r(&[4], 25), r(&[4], 26)], |g, v| {
        g.group_norm(v[0], 2, v[1], v[2], 1e-5)
    })
}

fn conv2d_same() -> Result<GradCheckReport> {
    check_inputs("conv2d_same", &[r(&[2, 2, 3, 5], 27), r(&[3, 2, 3, 3], 28), r(&[3], 29)], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Conv2dOpts::padded(Padding::Same))
    })
}

fn conv2d_causal_dilated() -> Result<GradCheckReport> {
    let opts = Conv2dOpts {
        dilation: (2, 1),
        ..Conv2dOpts::padded(Padding::CausalN)
    };
    check_inputs("conv2d_causal_dilated", &[r(&[1, 3, 5, 4], 30), r(&[2, 3, 2, 3], 31), r(&[2], 32)], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), opts)
    })
}

fn conv2d_strided() -> Result<GradCheckReport> {
    let opts = Conv2dOpts {
        stride: (1, 2),
        dilation: (1, 1),
        padding: Padding::Explicit(0, 0, 1, 1),
    };
    check_inputs("conv2d_strided", &[r(&[1, 2, 2, 6], 33), r(&[2, 2, 1, 3], 34), r(&[2], 35)], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), opts)
    })
}

fn gru_inputs(dirs: usize) -> Vec<Tensor<f64>> {
    let (i, h) = (3, 2);
    let mut v = vec![r(&[4, 2, i], 36), r(&[2, h], 37)];
    for d in 0..dirs as u64 {
        v.push(r(&[3 * h, i], 40 + d));
        v.push(r(&[3 * h, h], 42 + d));
        v.push(r(&[3 * h], 44 + d));
        v.push(r(&[3 * h], 46 + d));
    }
    v
}

fn gru() -> Result<GradCheckReport> {
    check_inputs("gru", &gru_inputs(1), |g, v| {
        let f = GruVars { w_ih: v[2], w_hh: v[3], b_ih: v[4], b_hh: v[5] };
        g.gru(v[0], Some(v[1]), f, None)
    })
}

fn gru_bidirectional() -> Result<GradCheckReport> {
    check_inputs("gru_bidirectional", &gru_inputs(2), |g, v| {
        let f = GruVars { w_ih: v[2], w_hh: v[3], b_ih: v[4], b_hh: v[5] };
        let b = GruVars { w_ih: v[6], w_hh: v[7], b_ih: v[8], b_hh: v[9] };
        g.gru(v[0], Some(v[1]), f, Some(b))
    })
}

fn overlap_add() -> Result<GradCheckReport> {
    let spec = FramingSpec::new(4, 2)?;
    check_inputs("overlap_add", &[r(&[2, 1, 3, 4], 50)], move |g, v| g.overlap_add(v[0], spec, 7))
}

fn stft() -> Result<GradCheckReport> {
    check_inputs("stft", &[r(&[2, 21], 51)], |g, v| g.stft(v[0], StftSpec::new(8, 4)?))
}

fn combined_loss() -> Result<GradCheckReport> {
    check_inputs("combined_loss", &[r(&[1, 19], 52), r(&[1, 19], 53)], |g, v| {
        Ok(g.combined_loss(v[0], v[1], StftSpec::new(8, 4)?, 0.2)?.total)
    })
}

fn toy_store() -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), init_rng(3))
}

fn all_params(
    name: &str,
    store: &ParamStore<f64>,
    x: Tensor<f64>,
    f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    check(name, store, &[x], |g, v| f(g, v[0]), Coverage::All, Tolerance::default(), 11)
}

fn attention() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let p = AttentionParams::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2, AttentionScale::PerHead)?;
    all_params("attention", &store, r(&[2, 3, 4], 60), |g, x| Ok(multi_head_attention(g, x, &p)?.output))
}

fn transformer_layer() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let layer =
        ImprovedTransformerLayer::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2, AttentionScale::PerHead, true, 1e-5)?;
    all_params("transformer_layer", &store, r(&[1, 3, 4], 61), |g, x| layer.forward(g, x))
}

fn two_stage_block() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let block = TwoStageBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2, AttentionScale::PerHead, true, 1e-5)?;
    all_params("two_stage_block", &store, r(&[1, 4, 3, 2], 62), |g, x| block.forward(g, x))
}

fn encoder() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let enc = Encoder::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 8, &[1, 2], 0.25, 1e-5)?;
    all_params("encoder", &store, r(&[1, 1, 3, 8], 63), |g, x| enc.forward(g, x))
}

fn projection() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let p = InputProjection::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2, 0.25)?;
    all_params("projection", &store, away_from_zero(&[1, 4, 3, 4], 64), |g, x| p.forward(g, x))
}

fn masking() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let m = Masking::new(&mut ParamBuilder::new(&mut store, &mut rng), 2, 4, 0.25)?;
    let inputs = [r(&[1, 2, 3, 4], 65), r(&[1, 4, 3, 4], 66)];
    check("masking", &store, &inputs, |g, v| m.forward(g, v[0], v[1]), Coverage::All, Tolerance::default(), 12)
}

fn decoder() -> Result<GradCheckReport> {
    let (mut store, mut rng) = toy_store();
    let dec = Decoder::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 8, &[1, 2], 0.25, 1e-5)?;
    all_params("decoder", &store, r(&[1, 4, 3, 4], 67), |g, x| dec.forward(g, x))
}

/// Combined loss of the tiny model on 20 sampled parameters.
fn full_model() -> Result<GradCheckReport> {
    let model = Tstnn::<f64>::new(ModelConfig::tiny(), 5)?;
    let noisy = r(&[150], 68).map(|v| 0.5 * v).into_data();
    let clean: Vec<f64> = noisy.iter().enumerate().map(|(i, v)| 0.5 * v + 0.1 * (i as f64 * 0.2).sin()).collect();
    let spec = StftSpec::new(64, 32)?;
    let tol = Tolerance { rel: 1e-3, ..Tolerance::default() };
    check(
        "full_model",
        &model.store,
        &[],
        |g, _| Ok(batch_loss(&model, g, std::slice::from_ref(&clean), std::slice::from_ref(&noisy), spec, 0.2)?.total),
        Coverage::Sample(20),
        tol,
        13,
    )
}
