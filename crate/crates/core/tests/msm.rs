use msacnn_core::msm::*;
use msacnn_core::rng::Rng;
use msacnn_core::tensor::{conv1d_same, pool, relu, PoolMode, Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed, 17);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

fn random_params(plan: &ScalePlan, n_ch: usize, seed: u64) -> Vec<Tensor> {
    msm_param_shapes(plan, n_ch)
        .into_iter()
        .enumerate()
        .flat_map(|(i, (w, b))| [random(&w, seed + 2 * i as u64), random(&b, seed + 2 * i as u64 + 1)])
        .collect()
}

fn run(plan: &ScalePlan, x: &Tensor, params: &[Tensor]) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vs: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let n = plan.scales.len();
    let vars = MsmVars { scales: vs[..2 * n].chunks(2).map(|c| (c[0], c[1])).collect(), integrate: (vs[2 * n], vs[2 * n + 1]) };
    let out = msm_forward(&mut tape, plan, xv, &vars).unwrap();
    tape.value(out).clone()
}

#[test]
fn four_scale_pooling_pairs() {
    let plan = default_scale_plan(4).unwrap();
    let pairs: Vec<_> = plan.scales.iter().map(|s| (s.p_in, s.p_comp)).collect();
    assert_eq!(pairs, [(1, 8), (2, 4), (4, 2), (8, 1)]);
    assert!(plan.scales.iter().all(|s| s.p_in * s.p_comp == plan.p_tot));
    assert_eq!(plan.merged_filters(), 32);
    assert_eq!((plan.kernel_msm1, plan.kernel_msm2), (15, 5));
}

#[test]
fn reduced_plans_keep_the_filter_total() {
    let single = default_scale_plan(1).unwrap();
    assert_eq!(single.scales[0].filters, 32);
    assert_eq!((single.scales[0].p_in, single.scales[0].p_comp), (1, 8));
    let three = default_scale_plan(3).unwrap();
    assert_eq!(three.scales.iter().map(|s| s.filters).collect::<Vec<_>>(), [11, 11, 10]);
    let top = ScalePlan::with_scales(&[3], 8, 16, FilterMode::Unimodal).unwrap();
    assert_eq!((top.scales[0].p_in, top.scales[0].p_comp), (8, 1));
    assert!(ScalePlan::with_scales(&[0, 2], 8, 16, FilterMode::Unimodal).is_err());
    assert!(ScalePlan::with_scales(&[4], 8, 16, FilterMode::Unimodal).is_err());
    assert!(default_scale_plan(0).is_err());
}

#[test]
fn scale_summaries_at_100_hz() {
    let plan = default_scale_plan(4).unwrap();
    let first = scale_summary(&plan.scales[0], 15, 100.0);
    assert!((first.receptive_field_ms - 150.0).abs() < 1e-9);
    assert!((first.freq_range_hz[1] - 46.7).abs() < 0.05);
    assert!((first.freq_spacing_hz - 6.7).abs() < 0.05);
    let last = scale_summary(&plan.scales[3], 15, 100.0);
    assert!((last.receptive_field_ms - 1200.0).abs() < 1e-9);
    assert!((last.freq_range_hz[1] - 5.8).abs() < 0.05);
    assert!((last.freq_spacing_hz - 0.8).abs() < 0.05);
    assert_eq!(first.freq_range_hz[0], 0.0);
}

#[test]
fn output_geometry() {
    let plan = default_scale_plan(4).unwrap();
    let x = random(&[3, 400], 1);
    let out = run(&plan, &x, &random_params(&plan, 3, 10));
    assert_eq!(out.shape(), &[3, 16, 50]);
    assert!(out.data().iter().all(|&v| v >= 0.0));
    let mut tape = Tape::new();
    let bad = tape.constant(random(&[3, 404], 2));
    let params: Vec<_> = random_params(&plan, 3, 10).into_iter().map(|p| tape.constant(p)).collect();
    let vars = MsmVars { scales: params[..8].chunks(2).map(|c| (c[0], c[1])).collect(), integrate: (params[8], params[9]) };
    assert!(msm_forward(&mut tape, &plan, bad, &vars).is_err());
}

#[test]
fn single_scale_matches_primitive_composition() {
    for s in 0..4 {
        let plan = ScalePlan::with_scales(&[s], 8, 16, FilterMode::Unimodal).unwrap();
        let params = random_params(&plan, 2, 20);
        let x = random(&[2, 240], 3);
        let out = run(&plan, &x, &params);
        let e = plan.scales[0];
        for c in 0..2 {
            let xc = Tensor::new(&[1, 240], x.data()[c * 240..(c + 1) * 240].to_vec()).unwrap();
            let pooled = pool(&xc, e.p_in, PoolMode::Average).unwrap();
            let conv = conv1d_same(&pooled, &params[0], &params[1]).unwrap();
            let comp = relu(&pool(&conv, e.p_comp, PoolMode::Max).unwrap());
            let integ = relu(&conv1d_same(&comp, &params[2], &params[3]).unwrap());
            let got = &out.data()[c * 16 * 30..(c + 1) * 16 * 30];
            for (a, b) in got.iter().zip(integ.data()) {
                assert!((a - b).abs() < 1e-12, "scale {s} channel {c}");
            }
        }
    }
}

#[test]
fn shared_filters_are_channel_equivariant() {
    let plan = default_scale_plan(4).unwrap();
    let params = random_params(&plan, 3, 40);
    let x = random(&[3, 160], 4);
    let perm = [2, 0, 1];
    let px = Tensor::new(&[3, 160], perm.iter().flat_map(|&c| x.data()[c * 160..(c + 1) * 160].to_vec()).collect()).unwrap();
    let (a, b) = (run(&plan, &x, &params), run(&plan, &px, &params));
    let block = 16 * 20;
    for (i, &c) in perm.iter().enumerate() {
        assert_eq!(&b.data()[i * block..(i + 1) * block], &a.data()[c * block..(c + 1) * block]);
    }
}

#[test]
fn zero_input_propagates_biases() {
    let plan = default_scale_plan(4).unwrap();
    let mut params = random_params(&plan, 1, 60);
    // weights zero, biases random: the first stage emits relu(b1) everywhere
    for i in (0..params.len()).step_by(2) {
        params[i] = Tensor::zeros(params[i].shape());
    }
    let out = run(&plan, &Tensor::zeros(&[1, 80]), &params);
    for f in 0..16 {
        let expect = params[9].data()[f].max(0.0);
        assert!(out.data()[f * 10..(f + 1) * 10].iter().all(|&v| (v - expect).abs() < 1e-15));
    }
    // unit integration taps at the centre expose relu(b1) sums per filter
    let merged = plan.merged_filters();
    let mut w2 = vec![0.0; 16 * merged * 5];
    w2[2] = 1.0; // filter 0 reads merged filter 0 at lag 0
    params[8] = Tensor::new(&[16, merged, 5], w2).unwrap();
    params[9] = Tensor::zeros(&[16]);
    let out = run(&plan, &Tensor::zeros(&[1, 80]), &params);
    let b1 = params[1].data()[0].max(0.0);
    assert!(out.data()[..10].iter().all(|&v| (v - b1).abs() < 1e-15));
}

#[test]
fn multimodal_banks_are_per_channel() {
    let plan = ScalePlan::with_scales(&[0, 1, 2, 3], 4, 8, FilterMode::Multimodal).unwrap();
    let shapes = msm_param_shapes(&plan, 3);
    assert_eq!(shapes[0], (vec![3, 4, 1, 15], vec![3, 4]));
    assert_eq!(shapes[4], (vec![3, 8, 16, 5], vec![3, 8]));
    let params = random_params(&plan, 3, 80);
    let x = random(&[3, 160], 5);
    let out = run(&plan, &x, &params);
    assert_eq!(out.shape(), &[3, 8, 20]);
    // identical channels still differ because each has its own bank
    let same = Tensor::new(&[3, 160], [&x.data()[..160]; 3].concat()).unwrap();
    let o = run(&plan, &same, &params);
    assert_ne!(&o.data()[..160], &o.data()[160..320]);
}
