//! Multi-head self-attention on a toy sequence: attention weights, and the
//! effect of permuting the input rows on attention vs the full transformer
//! layer (whose GRU feed-forward is order dependent).

use tstnn::autodiff::{Graph, ParamStore};
use tstnn::config::AttentionScale;
use tstnn::gradcheck::random_tensor;
use tstnn::layers::{init_rng, ParamBuilder};
use tstnn::transformer::{multi_head_attention, AttentionParams, ImprovedTransformerLayer};
use tstnn::Tensor;

fn reversed_rows(t: &Tensor<f64>, d: usize) -> Tensor<f64> {
    let data = t.data().chunks(d).rev().flatten().copied().collect();
    Tensor::new(t.shape(), data).unwrap()
}

fn main() -> tstnn::Result<()> {
    let (l, d, heads) = (4, 8, 2);
    let mut store = ParamStore::<f64>::new();
    let mut rng = init_rng(0);
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let attn = AttentionParams::new(&mut b.sub("attn"), d, heads, AttentionScale::PerHead)?;
    let layer = ImprovedTransformerLayer::new(&mut b.sub("layer"), d, heads, AttentionScale::PerHead, true, 1e-5)?;

    let x = random_tensor(&[1, l, d], 1);
    let mut g = Graph::inference(&store);
    let xv = g.constant(x.clone());
    let xr = g.constant(reversed_rows(&x, d));

    let a = multi_head_attention(&mut g, xv, &attn)?;
    println!("attention weights {:?} (head 0):", g.shape(a.weights));
    for row in g.value(a.weights).data()[..l * l].chunks(l) {
        println!("  {}", row.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join("  "));
    }

    let ar = multi_head_attention(&mut g, xr, &attn)?;
    let (y, yr) = (g.value(a.output).clone(), g.value(ar.output).clone());
    let gap = |a: &Tensor<f64>, b: &Tensor<f64>| {
        reversed_rows(a, d).data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    };
    println!("attention, reversed input vs reversed output: max gap {:.2e}", gap(&y, &yr));

    let (ly, lyr) = (layer.forward(&mut g, xv)?, layer.forward(&mut g, xr)?);
    let (ly, lyr) = (g.value(ly).clone(), g.value(lyr).clone());
    println!("full layer, same comparison:                 max gap {:.2e}", gap(&ly, &lyr));
    Ok(())
}
