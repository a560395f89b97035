use milbench::datagen::sample_dataset;
use milbench::models::handcrafted_model;
use milbench::pooling::{
    abmil_pool, abmil_weights, column_argmax, conv_over_instances, max_pool, mean_pool, self_attention_forward,
    smooth, AbmilParams, AttnParams, ChainSystem, EmbeddingBag, SmoothConfig,
};
use milbench::{GenParams, HandcraftedKind, Pooling};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn matrix(max_s: usize, max_m: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_s, 1..=max_m).prop_flat_map(|(s, m)| {
        prop::collection::vec(-10.0f64..10.0, s * m).prop_map(move |v| Array2::from_shape_vec((s, m), v).unwrap())
    })
}

fn same_shape_pair(max_s: usize, max_m: usize) -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    matrix(max_s, max_m).prop_flat_map(|a| {
        let (s, m) = a.dim();
        (Just(a), prop::collection::vec(-10.0f64..10.0, s * m).prop_map(move |v| Array2::from_shape_vec((s, m), v).unwrap()))
    })
}

fn eb(a: Array2<f64>) -> EmbeddingBag {
    EmbeddingBag::new(a).unwrap()
}

fn inf_norm(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn column_variance(a: &Array2<f64>) -> Array1<f64> {
    a.var_axis(Axis(0), 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn smoothing_is_linear((h, h2) in same_shape_pair(30, 5), a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in 0.0f64..0.999) {
        let cfg = SmoothConfig::chain(alpha).unwrap();
        let lhs = smooth(&eb(&h * a + &h2 * b), &cfg).unwrap().into_inner();
        let rhs = smooth(&eb(h.clone()), &cfg).unwrap().into_inner() * a + smooth(&eb(h2.clone()), &cfg).unwrap().into_inner() * b;
        let scale = inf_norm(&h).max(inf_norm(&h2)).max(1.0) * (a.abs() + b.abs()).max(1.0);
        prop_assert!(inf_norm(&(lhs - rhs)) <= 1e-10 * scale);
    }

    #[test]
    fn smoothing_contracts_variance(h in matrix(30, 4), alpha in 0.0f64..0.999) {
        let g = smooth(&eb(h.clone()), &SmoothConfig::chain(alpha).unwrap()).unwrap().into_inner();
        for (vg, vh) in column_variance(&g).iter().zip(column_variance(&h).iter()) {
            prop_assert!(*vg <= vh * (1.0 + 1e-12) + 1e-12, "{} > {}", vg, vh);
        }
        // column means are preserved
        for (mg, mh) in g.mean_axis(Axis(0)).unwrap().iter().zip(h.mean_axis(Axis(0)).unwrap().iter()) {
            prop_assert!((mg - mh).abs() <= 1e-9 * (1.0 + mh.abs()));
        }
    }

    #[test]
    fn smoothing_solves_its_system(h in matrix(45, 3), alpha in 0.0f64..0.999) {
        let cfg = SmoothConfig::chain(alpha).unwrap();
        let g = smooth(&eb(h.clone()), &cfg).unwrap().into_inner();
        let sys = ChainSystem::new(&cfg, h.nrows()).unwrap();
        let tol = 1e-8 * inf_norm(&h).max(f64::MIN_POSITIVE);
        for c in 0..h.ncols() {
            let gc = g.column(c).to_vec();
            let lhs = sys.apply(&gc);
            for (l, x) in lhs.iter().zip(h.column(c).iter()) {
                prop_assert!((l - (1.0 - alpha) * x).abs() <= tol);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic(h in matrix(20, 4), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = h.ncols();
        let mut rand_mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-2.0..2.0));
        let ab = AbmilParams::new(rand_mat(3, m), rand_mat(1, 3).row(0).to_owned()).unwrap();
        let w = abmil_weights(&eb(h.clone()), &ab).unwrap();
        prop_assert!((w.sum() - 1.0).abs() <= 1e-12 && w.iter().all(|&x| x >= 0.0));

        let attn = AttnParams { w_q: rand_mat(2, m), w_k: rand_mat(2, m), w_v: rand_mat(2, m), class_token: rand_mat(1, m).row(0).to_owned() };
        let (_, a) = self_attention_forward(&eb(h), &attn).unwrap();
        for row in a.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12 && row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn exchangeable_poolings_ignore_order(h in matrix(12, 3), rot in 0usize..12) {
        let s = h.nrows();
        let mut perm: Vec<usize> = (0..s).rev().collect();
        perm.rotate_left(rot % s);
        let p = h.select(Axis(0), &perm);
        let (a, b) = (eb(h), eb(p));
        prop_assert_eq!(max_pool(&a), max_pool(&b));
        prop_assert!((mean_pool(&a) - mean_pool(&b)).iter().all(|d| d.abs() < 1e-12));
        let m = a.num_features();
        let ab = AbmilParams::new(Array2::from_elem((2, m), 0.3), Array1::from(vec![1.0, -0.5])).unwrap();
        let (za, _) = abmil_pool(&a, &ab).unwrap();
        let (zb, _) = abmil_pool(&b, &ab).unwrap();
        prop_assert!((za - zb).iter().all(|d| d.abs() < 1e-12));
        // no positional terms: the class-token output is order-free as well
        let e = Array2::from_shape_fn((1, m), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let attn = AttnParams { w_q: e.clone() * 2.0, w_k: e.clone(), w_v: e, class_token: Array1::ones(m) };
        let (oa, _) = self_attention_forward(&a, &attn).unwrap();
        let (ob, _) = self_attention_forward(&b, &attn).unwrap();
        prop_assert!((oa - ob).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn tanh_linearization_approaches_softmax(h in matrix(10, 3), u in prop::collection::vec(-1.0f64..1.0, 3)) {
        let m = h.ncols();
        let eps = 1e-3;
        let lin = Array1::from(u[..m].to_vec());
        let ab = AbmilParams::new(lin.clone().insert_axis(Axis(0)) * eps, Array1::from(vec![1.0 / eps])).unwrap();
        let w = abmil_weights(&eb(h.clone()), &ab).unwrap();
        let mut logits: Vec<f64> = h.rows().into_iter().map(|r| r.dot(&lin)).collect();
        milbench::math::softmax_in_place(&mut logits);
        for (a, b) in w.iter().zip(&logits) {
            prop_assert!((a - b).abs() <= 1e-4);
        }
    }
}

#[test]
fn order_sensitive_operators_have_counterexamples() {
    let h = eb(ndarray::array![[4.0], [0.0], [0.0], [4.0], [0.0]]);
    let p = eb(ndarray::array![[4.0], [4.0], [0.0], [0.0], [0.0]]);
    let k = [1.0, 1.0, 1.0];
    assert_ne!(max_pool(&conv_over_instances(&h, &k).unwrap()), max_pool(&conv_over_instances(&p, &k).unwrap()));
    let cfg = SmoothConfig::chain(0.7).unwrap();
    let (sh, sp) = (smooth(&h, &cfg).unwrap(), smooth(&p, &cfg).unwrap());
    assert!((max_pool(&sh)[0] - max_pool(&sp)[0]).abs() > 1e-3);
    assert_eq!(mean_pool(&h), mean_pool(&p));
}

fn conv_argmax_near_window(shift: f64) -> (usize, usize) {
    let p = GenParams { shift, num_features: 4, ..GenParams::default() }.with_seed(31);
    let ds = sample_dataset(&p, 260).unwrap();
    let positives: Vec<_> = ds.bags.iter().filter(|b| b.label).take(100).collect();
    assert_eq!(positives.len(), 100);
    let mut inside = 0;
    for bag in &positives {
        let u = bag.window_start.unwrap();
        let c = conv_over_instances(&EmbeddingBag::from_bag(bag), &[1.0, 1.0, 1.0]).unwrap();
        let j = column_argmax(c.view())[0];
        // positions whose window touches the signal: u - 1 ..= u + R (zero-based)
        if j + 1 >= u && j <= u + p.r() {
            inside += 1;
        }
    }
    (inside, positives.len())
}

#[test]
fn window_conv_peaks_at_the_signal() {
    // a dominant shift leaves no room for a noise window to win
    assert_eq!(conv_argmax_near_window(8.0), (100, 100));
    // at the benchmark shift a noise window occasionally outscores the signal
    let (inside, n) = conv_argmax_near_window(2.0);
    assert!(inside >= 85, "{inside}/{n}");
}

fn window_attention_mass(shift: f64) -> Vec<f64> {
    let p = GenParams { shift, ..GenParams::default() }.with_seed(17);
    let spec = handcrafted_model(&p, HandcraftedKind::SelfAttentionConv { temperature: HandcraftedKind::DEFAULT_TEMPERATURE }).unwrap();
    let Pooling::SelfAttention(attn) = &spec.pooling else { unreachable!() };
    let ds = sample_dataset(&p, 260).unwrap();
    let mut masses = Vec::new();
    for bag in ds.bags.iter().filter(|b| b.label).take(100) {
        let u = bag.window_start.unwrap();
        let w: f64 = (u..u + p.r()).map(|j| bag.row(j)[0] as f64).sum();
        if w < 4.0 {
            continue;
        }
        let (_, a) = self_attention_forward(&spec.prepare(bag).unwrap(), attn).unwrap();
        masses.push((u..u + p.r()).map(|j| a[[0, j + 1]]).sum());
    }
    masses
}

#[test]
fn handcrafted_attention_finds_the_window() {
    let strong = window_attention_mass(8.0);
    assert!(strong.len() > 90 && strong.iter().all(|&m| m >= 0.9), "{strong:?}");
    let base = window_attention_mass(2.0);
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    assert!(base.len() > 50 && mean >= 0.9, "mean {mean} over {}", base.len());
}
