//! Every pooling operator applied to one small positive bag.

use milbench::datagen::sample_bag;
use milbench::pooling::{
    abmil_pool, conv_over_instances, max_pool, mean_pool, self_attention_forward, smooth, AbmilParams, AttnParams,
    EmbeddingBag, SmoothConfig,
};
use milbench::GenParams;
use ndarray::{Array1, Array2};

fn first(v: &Array1<f64>) -> String {
    format!("{:+.3}", v[0])
}

fn main() -> milbench::Result<()> {
    let params = GenParams { num_features: 4, s_low: 8, s_high: 8, ..GenParams::default() };
    let bag = (0..).map(|i| sample_bag(&params, i)).find(|b| matches!(b, Ok(b) if b.label)).unwrap()?;
    let h = EmbeddingBag::from_bag(&bag);
    println!("window starts at instance {}", bag.window_start.unwrap());
    let col: Vec<String> = h.view().column(0).iter().map(|x| format!("{x:+.2}")).collect();
    println!("feature 0: [{}]", col.join(" "));

    println!("max      {}", first(&max_pool(&h)));
    println!("mean     {}", first(&mean_pool(&h)));

    let proj = Array2::from_shape_fn((2, 4), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let (z, a) = abmil_pool(&h, &AbmilParams::new(proj, Array1::from(vec![2.0, 0.0]))?)?;
    println!("abmil    {}  weights {:.2}", first(&z), a);

    for alpha in [0.0, 0.5, 0.9] {
        let s = smooth(&h, &SmoothConfig::chain(alpha)?)?;
        println!("smooth a={alpha}: max {} mean {}", first(&max_pool(&s)), first(&mean_pool(&s)));
    }

    let c = conv_over_instances(&h, &[1.0, 1.0, 1.0])?;
    let csum: Vec<String> = c.view().column(0).iter().map(|x| format!("{x:+.2}")).collect();
    println!("window sums: [{}]", csum.join(" "));

    let e = |r: usize, c: usize| Array2::from_shape_fn((r, c), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let attn = AttnParams { w_q: e(1, 4) * 3.0, w_k: e(1, 4), w_v: e(1, 4), class_token: Array1::ones(4) };
    let (out, weights) = self_attention_forward(&h, &attn)?;
    println!("self-attention class output {:+.3}, class-row weights {:.2}", out[0], weights.row(0));
    Ok(())
}
