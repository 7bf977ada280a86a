//! Acceptance suite. Runs every criterion, prints one verdict line per
//! criterion and exits nonzero when any of them fails.
//!
//! `cargo test -p msacnn --release --test acceptance` runs it on its own.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use msacnn::runconfig::RunConfig;
use msacnn::runner::{cross_validate, data_for, run_cv, run_train};
use msacnn_core::dataset::{generate_synthetic, n2_probe_epoch, EpochSet};
use msacnn_core::eval::*;
use msacnn_core::model::*;
use msacnn_core::msm::{msm_forward, msm_param_shapes, FilterMode, MsmVars, ScalePlan};
use msacnn_core::rng::Rng;
use msacnn_core::sigproc::design_butterworth_lowpass;
use msacnn_core::tcm::AttentionTrace;
use msacnn_core::tensor::*;
use msacnn_core::trainer::TrainConfig;
use msacnn_core::Error;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn parameter_goldens() -> Verdict {
    use InputMode::*;
    use ModelSize::*;
    let cfg = |s, m, n| ModelConfig::new(s, m, n).unwrap();
    let small9 = cfg(Small, Multivariate, 9);
    let mut cases = vec![
        ("small multivariate 9ch", small9.clone(), 10_583),
        ("small multivariate 4ch", cfg(Small, Multivariate, 4), 8_013),
        ("large multivariate 9ch", cfg(Large, Multivariate, 9), 43_511),
        ("large multivariate 4ch", cfg(Large, Multivariate, 4), 33_261),
        ("small univariate", cfg(Small, Univariate, 1), 8_517),
        ("large univariate", cfg(Large, Univariate, 1), 35_301),
        ("small multimodal 9ch", cfg(Small, Multimodal, 9), 13_327),
        ("small multimodal 4ch", cfg(Small, Multimodal, 4), 7_517),
        ("large multimodal 9ch", cfg(Large, Multimodal, 9), 42_599),
        ("large multimodal 4ch", cfg(Large, Multimodal, 4), 29_709),
        ("no_tcm small 9ch", apply_variant(&small9, Variant::NoTcm).unwrap(), 7_911),
    ];
    for s in 0..4 {
        cases.push(("no_msm small 9ch", apply_variant(&small9, Variant::NoMsm(s)).unwrap(), 10_583));
    }
    for (name, c, expect) in &cases {
        let (a, b) = (param_count(c), build(c, 0).map_err(e2s)?.parameter_count());
        ensure(a == *expect && b == *expect, format!("{name}: param_count {a}, built {b}, expected {expect}"))?;
    }
    Ok(format!("{} configurations exact", cases.len()))
}

// ---------------------------------------------------------------- 2

fn flop_accounting() -> Verdict {
    let small9 = ModelConfig::new(ModelSize::Small, InputMode::Multivariate, 9).unwrap();
    let m = flop_estimate(&small9, 3000) as f64 / 1e6;
    ensure((m - 19.8).abs() <= 0.25 * 19.8, format!("small 9ch estimate {m:.2}M is outside 19.8M ± 25%"))?;
    let per_scale: Vec<f64> =
        (0..4).map(|s| flop_estimate(&apply_variant(&small9, Variant::NoMsm(s)).unwrap(), 3000) as f64 / 1e6).collect();
    ensure(per_scale.windows(2).all(|w| w[0] > w[1]), format!("single-scale estimates not strictly decreasing: {per_scale:.2?}"))?;
    Ok(format!("small 9ch {m:.2}M (target 19.8M); single scale I..IV {per_scale:.2?}"))
}

// ---------------------------------------------------------------- 3

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed, 99);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

type Op = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, Error>>;

/// Gradient error of `Σ r ⊙ op(args)` with respect to each argument in
/// turn, the others held constant.
fn op_error(args: &[Tensor], op: &Op) -> Result<f64, Error> {
    let mut worst: f64 = 0.0;
    for i in 0..args.len() {
        let f = |t: &mut Tape, v: Var| {
            let vars: Vec<Var> = args.iter().enumerate().map(|(j, a)| if i == j { v } else { t.constant(a.clone()) }).collect();
            let y = op(t, &vars)?;
            if t.shape(y).is_empty() || t.shape(y) == [1] {
                return Ok(y);
            }
            let r = t.constant(random(&t.shape(y).to_vec(), 4242));
            let p = t.mul(y, r)?;
            Ok(t.sum(p))
        };
        worst = worst.max(grad_check(f, &args[i], STEP)?);
    }
    Ok(worst)
}

fn primitive_cases() -> Vec<(&'static str, Vec<Tensor>, Op)> {
    let mut cases: Vec<(&'static str, Vec<Tensor>, Op)> = vec![
        ("conv1d", vec![random(&[3, 20], 1), random(&[4, 3, 5], 2), random(&[4], 3)], Box::new(|t, v| t.conv1d(v[0], v[1], v[2]))),
        (
            "banked conv1d",
            vec![random(&[2, 3, 16], 4), random(&[2, 2, 3, 3], 5), random(&[2, 2], 6)],
            Box::new(|t, v| t.conv1d(v[0], v[1], v[2])),
        ),
        ("grouped conv1d", vec![random(&[2, 3, 16], 4), random(&[2, 3, 5], 7), random(&[2], 8)], Box::new(|t, v| t.conv1d(v[0], v[1], v[2]))),
        ("dense", vec![random(&[5, 4], 10), random(&[4, 3], 11), random(&[3], 12)], Box::new(|t, v| t.dense(v[0], v[1], v[2]))),
        ("softmax", vec![random(&[4, 5], 13)], Box::new(|t, v| t.softmax_rows(v[0]))),
        ("cross entropy", vec![random(&[4, 5], 13)], Box::new(|t, v| t.cross_entropy(v[0], &[0, 3, 4, 1]))),
        (
            "layer norm",
            vec![random(&[4, 6], 14), random(&[6], 15), random(&[6], 16)],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        ("relu", vec![random(&[3, 7], 17)], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("dropout", vec![random(&[3, 7], 17)], Box::new(|t, v| t.dropout(v[0], 0.3, &mut Rng::new(5, 3), true))),
        ("add", vec![random(&[3, 7], 17), random(&[3, 7], 18)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("mul", vec![random(&[3, 7], 17), random(&[3, 7], 18)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul self", vec![random(&[3, 7], 17)], Box::new(|t, v| t.mul(v[0], v[0]))),
        ("scale", vec![random(&[3, 7], 17)], Box::new(|t, v| Ok(t.scale(v[0], -2.5)))),
        ("sum", vec![random(&[3, 7], 17)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean rows", vec![random(&[4, 6], 20)], Box::new(|t, v| t.mean_rows(v[0]))),
        ("transpose", vec![random(&[4, 6], 20)], Box::new(|t, v| t.transpose(v[0]))),
        ("reshape", vec![random(&[4, 6], 20)], Box::new(|t, v| t.reshape(v[0], &[2, 12]))),
        ("concat rows", vec![random(&[4, 6], 20), random(&[4, 6], 21)], Box::new(|t, v| t.concat(&[v[1], v[0], v[0]], 0))),
        ("concat columns", vec![random(&[4, 6], 20), random(&[4, 6], 21)], Box::new(|t, v| t.concat(&[v[1], v[0], v[0]], 1))),
        (
            "scale shift",
            vec![random(&[4, 6], 20), random(&[4], 22), random(&[4], 23)],
            Box::new(|t, v| t.scale_shift(v[0], v[1], v[2])),
        ),
    ];
    for size in [1, 2, 4, 5] {
        cases.push(("average pool", vec![random(&[3, 24], 9)], Box::new(move |t, v| t.pool(v[0], size, PoolMode::Average))));
        cases.push(("max pool", vec![random(&[3, 24], 9)], Box::new(move |t, v| t.pool(v[0], size, PoolMode::Max))));
    }
    for heads in [1, 2, 4] {
        cases.push(("attention", vec![random(&[6, 24], 24 + heads as u64)], Box::new(move |t, v| t.attention(v[0], heads))));
    }
    cases
}

/// Mean two-sample loss as a function of parameter `which`.
fn model_loss(cfg: &ModelConfig, values: &[Tensor], which: usize, xs: &[Tensor], labels: &[usize]) -> impl Fn(&mut Tape, Var) -> Result<Var, Error> {
    let (cfg, values, xs, labels) = (cfg.clone(), values.to_vec(), xs.to_vec(), labels.to_vec());
    move |t, v| {
        let params: Vec<Var> = values.iter().enumerate().map(|(i, p)| if i == which { v } else { t.constant(p.clone()) }).collect();
        let mut rng = Rng::new(11, 3);
        let mut total: Option<Var> = None;
        for (x, &y) in xs.iter().zip(&labels) {
            let xv = t.constant(x.clone());
            let g = forward_graph(&cfg, t, &params, xv, &mut rng, true)?;
            let l = t.cross_entropy(g.logits, &[y])?;
            total = Some(match total {
                None => l,
                Some(acc) => t.add(acc, l)?,
            });
        }
        Ok(t.scale(total.unwrap(), 1.0 / labels.len() as f64))
    }
}

fn gradient_suite() -> Verdict {
    let mut worst: (f64, String) = (0.0, String::new());
    let cases = primitive_cases();
    for (name, args, op) in &cases {
        let err = op_error(args, op).map_err(e2s)?;
        ensure(err < TOL, format!("{name}: relative gradient error {err:e}"))?;
        if err > worst.0 {
            worst = (err, name.to_string());
        }
    }
    let mut checked = 0;
    for (mode, n_ch) in [(InputMode::Multivariate, 3), (InputMode::Univariate, 1)] {
        let mut cfg = ModelConfig::new(ModelSize::Small, mode, n_ch).unwrap();
        cfg.tcm.dropout = 0.1;
        let mut model = build(&cfg, 21).map_err(e2s)?;
        let mut rng = Rng::new(2, 8);
        for v in model.params.values.iter_mut() {
            for e in v.data_mut() {
                *e += 0.05 * rng.normal();
            }
        }
        let xs = vec![random(&[n_ch, 160], 30), random(&[n_ch, 160], 31)];
        for (i, spec) in model.params.specs.iter().enumerate() {
            let point = &model.params.values[i];
            let n = point.numel();
            let coords: Vec<usize> = if n <= 6 { (0..n).collect() } else { (0..6).map(|_| rng.below(n)).collect() };
            let f = model_loss(&cfg, &model.params.values, i, &xs, &[1, 3]);
            let err = grad_check_coords(f, point, STEP, &coords).map_err(e2s)?;
            ensure(err < TOL, format!("{mode:?} model {}: relative gradient error {err:e}", spec.name))?;
            if err > worst.0 {
                worst = (err, format!("{mode:?} model {}", spec.name));
            }
            checked += 1;
        }
    }
    Ok(format!("{} primitive cases and {} model parameter tensors, worst {:.1e} ({})", cases.len(), checked, worst.0, worst.1))
}

// ---------------------------------------------------------------- 4

fn enumeration_oracle(k: usize, pairs: &[(usize, usize)]) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let acc = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n;
    let (mut f1, mut pe) = (0.0, 0.0);
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let pred = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let real = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
        if tp > 0.0 {
            let (pr, rc) = (tp / pred, tp / real);
            f1 += 2.0 * pr * rc / (pr + rc);
        }
        pe += (pred / n) * (real / n);
    }
    let kappa = if pe == 1.0 { 0.0 } else { (acc - pe) / (1.0 - pe) };
    (acc, f1 / k as f64, kappa)
}

/// Two-sided Student t tail by Simpson integration of the density.
fn t_tail_oracle(t0: f64, df: f64) -> f64 {
    let ln_gamma = |x: f64| {
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let t = x + 7.5;
        let a = C.iter().enumerate().skip(1).fold(C[0], |a, (i, c)| a + c / (x + i as f64));
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    };
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let g = |s: f64| if s == 0.0 { 0.0 } else { c * (1.0 + (t0 / s).powi(2) / df).powf(-(df + 1.0) / 2.0) * t0 / (s * s) };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut acc = g(0.0) + g(1.0);
    for i in 1..n {
        acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * acc * h / 3.0
}

fn metric_oracles() -> Verdict {
    let mut rng = Rng::new(1, 50);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = 2 + rng.below(5);
        let mut counts = vec![0u64; k * k];
        let mut pairs = Vec::new();
        for t in 0..k {
            for p in 0..k {
                let c = if rng.uniform() < 0.2 { 0 } else { rng.below(15) };
                counts[t * k + p] = c as u64;
                pairs.extend(std::iter::repeat((t, p)).take(c));
            }
        }
        if pairs.is_empty() {
            counts[0] = 1;
            pairs.push((0, 0));
        }
        let cm = ConfusionMatrix::from_counts(k, counts).map_err(e2s)?;
        let (a, f, kap) = enumeration_oracle(k, &pairs);
        for (got, want) in [(accuracy(&cm), a), (macro_f1(&cm), f), (cohens_kappa(&cm), kap)] {
            let d = (got.map_err(e2s)? - want).abs();
            ensure(d < 1e-10, format!("metric differs from enumeration by {d:e} on {:?}", cm.counts()))?;
            worst = worst.max(d);
        }
    }
    let pinned = ConfusionMatrix::from_counts(2, vec![20, 5, 10, 15]).unwrap();
    let kappa = cohens_kappa(&pinned).map_err(e2s)?;
    ensure((kappa - 0.4).abs() < 1e-12, format!("pinned kappa {kappa}"))?;

    let a = [0.81, 0.78, 0.84, 0.80, 0.79, 0.83];
    let b = [0.78, 0.77, 0.80, 0.79, 0.75, 0.80];
    let r = paired_t_test(&a, &b).map_err(e2s)?;
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let p = t_tail_oracle(t, n - 1.0);
    ensure((r.t - t).abs() < 1e-9 && (r.p - p).abs() < 1e-9, format!("t-test t={} p={} vs direct t={} p={}", r.t, r.p, t, p))?;
    Ok(format!("1000 matrices, worst {worst:.1e}; pinned kappa {kappa}; t={:.4} p={:.6}", r.t, r.p))
}

// ---------------------------------------------------------------- 5

fn filter_contract() -> Verdict {
    let f = design_butterworth_lowpass(4, 40.0, 100.0).map_err(e2s)?;
    let (h0, h40) = (f.magnitude_at(0.0), f.magnitude_at(40.0));
    ensure((h0 - 1.0).abs() < 1e-9, format!("|H(0)| = {h0}"))?;
    ensure((h40 - 0.5f64.sqrt()).abs() < 1e-6, format!("|H(40)| = {h40}"))?;
    let mut prev = h0;
    for i in 1..=5000 {
        let m = f.magnitude_at(50.0 * i as f64 / 5000.0);
        ensure(m <= prev + 1e-12, format!("magnitude rises at {} Hz", 50.0 * i as f64 / 5000.0))?;
        prev = m;
    }
    Ok(format!("|H(0)| = {h0:.12}, |H(40)| = {h40:.9}, monotone on 5000 points"))
}

// ---------------------------------------------------------------- 6

fn all_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for size in [ModelSize::Small, ModelSize::Large] {
        for mode in [InputMode::Multivariate, InputMode::Multimodal] {
            for n_ch in [4, 9] {
                let base = ModelConfig::new(size, mode, n_ch).unwrap();
                out.push(base.clone());
                out.push(apply_variant(&base, Variant::NoTcm).unwrap());
                for s in 0..4 {
                    out.push(apply_variant(&base, Variant::NoMsm(s)).unwrap());
                }
            }
        }
        out.push(ModelConfig::new(size, InputMode::Univariate, 1).unwrap());
    }
    out
}

fn structural_invariants() -> Verdict {
    const T: usize = 3000;
    let (mut rows, mut configs) = (0usize, 0usize);
    for cfg in all_configs() {
        let model = build(&cfg, 5).map_err(e2s)?;
        let x = random(&[cfg.n_ch, T], 40);
        let mut tape = Tape::new();
        let g = model.graph(&mut tape, &x, &mut Rng::new(0, 3), false).map_err(e2s)?;
        ensure(g.tokens == T / 8, format!("{cfg:?}: {} tokens for {T} samples", g.tokens))?;
        let p = tape.value(g.probs).data();
        let s: f64 = p.iter().sum();
        ensure((s - 1.0).abs() < 1e-6 && p.iter().all(|&v| v >= 0.0), format!("probabilities sum to {s}"))?;
        for &att in &g.attention {
            let (w, _, t) = tape.attention_weights(att).ok_or("attention node without weights")?;
            for row in w.chunks(t) {
                let s: f64 = row.iter().sum();
                ensure((s - 1.0).abs() < 1e-6, format!("attention row sums to {s}"))?;
                rows += 1;
            }
        }
        configs += 1;
    }

    // each single-scale branch and the full module leave T/8 steps
    let mut branches = 0;
    for scales in [vec![0], vec![1], vec![2], vec![3], vec![0, 1, 2, 3]] {
        for mode in [FilterMode::Unimodal, FilterMode::Multimodal] {
            let plan = ScalePlan::with_scales(&scales, 8, 16, mode).map_err(e2s)?;
            let mut tape = Tape::new();
            let x = tape.constant(random(&[4, T], 41));
            let ps: Vec<Var> = msm_param_shapes(&plan, 4)
                .into_iter()
                .enumerate()
                .flat_map(|(i, (w, b))| [random(&w, 50 + 2 * i as u64), random(&b, 51 + 2 * i as u64)])
                .map(|p| tape.constant(p))
                .collect();
            let n = plan.scales.len();
            let vars = MsmVars { scales: ps[..2 * n].chunks(2).map(|c| (c[0], c[1])).collect(), integrate: (ps[2 * n], ps[2 * n + 1]) };
            let out = msm_forward(&mut tape, &plan, x, &vars).map_err(e2s)?;
            let len = *tape.shape(out).last().unwrap();
            ensure(len == T / 8, format!("scales {scales:?}: length {len}, expected {}", T / 8))?;
            branches += 1;
        }
    }

    // leakage guard: silent on every real fold, fires on a planted leak
    let set = desk_set();
    let plan = make_fold_plan(set.subject_ids(), 3, 2, 7).map_err(e2s)?;
    let mut folds = 0;
    for rep in 0..plan.repetitions {
        for fold in 0..plan.k {
            let train = set.indices_for_subjects(&plan.train_subjects(rep, fold));
            check_leakage(&set, &train, &plan.test_subjects(rep, fold)).map_err(e2s)?;
            folds += 1;
        }
    }
    let test = plan.test_subjects(0, 0);
    let mut leaky = set.indices_for_subjects(&plan.train_subjects(0, 0));
    leaky.push(set.indices_for_subjects(&test[..1])[0]);
    ensure(matches!(check_leakage(&set, &leaky, &test), Err(Error::Invariant(_))), "planted leak was not detected")?;
    Ok(format!("{configs} configs, {rows} attention rows, {branches} scale plans at T/8, {folds} folds leak-free, planted leak caught"))
}

// ---------------------------------------------------------------- 7

fn desk_set() -> EpochSet {
    generate_synthetic(7, 6, 30, 4, 100.0)
}

fn desk_train_config(cfg: &ModelConfig) -> TrainConfig {
    let mut tc = TrainConfig::for_model(cfg, 7);
    tc.epochs = 15;
    tc.batch_size = 8;
    tc.base_lr = 2e-3;
    tc
}

fn desk_cv(cfg: &ModelConfig, set: &EpochSet, plan: &FoldPlan) -> Result<(f64, Vec<FoldOutcome>), String> {
    let data = data_for(cfg, set).map_err(e2s)?;
    let outcomes = cross_validate(cfg, &data, plan, &desk_train_config(cfg), 1).map_err(e2s)?;
    let reports: Vec<FoldReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    Ok((aggregate(&reports).map_err(e2s)?.mean.accuracy, outcomes))
}

fn desk_learnability(full_models: &mut Vec<FoldOutcome>) -> Verdict {
    let start = Instant::now();
    let set = desk_set();
    let plan = make_fold_plan(set.subject_ids(), 3, 2, 7).map_err(e2s)?;
    let base = ModelConfig::new(ModelSize::Small, InputMode::Multivariate, 4).unwrap();
    let (full, outcomes) = desk_cv(&base, &set, &plan)?;
    *full_models = outcomes;
    let (no_tcm, _) = desk_cv(&apply_variant(&base, Variant::NoTcm).unwrap(), &set, &plan)?;
    let (uni, _) = desk_cv(&apply_variant(&base, Variant::Univariate).unwrap(), &set, &plan)?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let detail = format!("full {full:.4}, no_tcm {no_tcm:.4}, univariate {uni:.4}, {minutes:.1} min");
    ensure(full >= 0.80, format!("full model below 0.80: {detail}"))?;
    ensure(no_tcm < full && uni < full, format!("an ablation does not score lower: {detail}"))?;
    ensure(minutes < 15.0, format!("over the 15 minute budget: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn probe_hit(model: &MsaCnnModel, seed: u64) -> Result<(bool, usize, (usize, usize)), String> {
    let p = n2_probe_epoch(seed, model.config.n_ch, 100.0);
    let mut tape = Tape::new();
    let g = model.graph(&mut tape, &p.epoch, &mut Rng::new(0, 3), false).map_err(e2s)?;
    let att = *g.attention.first().ok_or("model has no attention")?;
    let tr = AttentionTrace::from_tape(&tape, att, None).map_err(e2s)?;
    let (lo, hi) = (p.event.start / 8, (p.event.end - 1) / 8);
    let a = tr.argmax_incoming;
    Ok((a + 2 >= lo && a <= hi + 2, a, (lo, hi)))
}

fn attention_sanity(full_models: &[FoldOutcome]) -> Verdict {
    let first = full_models.iter().find(|o| o.report.repetition == 0 && o.report.fold == 0).ok_or("no trained repetition 0 fold 0 model")?;
    let (hit, a, (lo, hi)) = probe_hit(&first.model, 0)?;
    let mut rates = Vec::new();
    for o in full_models {
        let mut n = 0;
        for seed in 0..12 {
            n += probe_hit(&o.model, seed)?.0 as usize;
        }
        rates.push(format!("r{}f{} {}/12", o.report.repetition, o.report.fold, n));
    }
    let detail = format!("most attended token {a}, event tokens {lo}..={hi}; hit rates {}", rates.join(", "));
    ensure(hit, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn same_tree(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    ensure(a.keys().eq(b.keys()), format!("file sets differ: {:?} vs {:?}", a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>()))?;
    for (k, v) in a {
        ensure(&b[k] == v, format!("{k} differs between executions"))?;
    }
    Ok(())
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let out = tmp.path().join("run");
    let mut files = 0;
    for command in ["cv", "train"] {
        let mut rc = RunConfig::new(command);
        for (k, v) in [("subjects", "3"), ("epochs_per_subject", "6"), ("epochs", "2"), ("batch_size", "4"), ("seed", "3")] {
            rc.set(k, v).map_err(e2s)?;
        }
        rc.out = out.clone();
        let mut trees = Vec::new();
        for jobs in [1, 1, 2] {
            if command == "cv" {
                run_cv(&rc, jobs).map_err(e2s)?;
            } else if jobs == 1 {
                run_train(&rc).map_err(e2s)?;
            } else {
                continue;
            }
            trees.push(snapshot(&out));
            std::fs::remove_dir_all(&out).map_err(e2s)?;
        }
        ensure(trees[0].contains_key("manifest.txt"), format!("{command} wrote no manifest"))?;
        for t in &trees[1..] {
            same_tree(&trees[0], t).map_err(|e| format!("{command}: {e}"))?;
        }
        files += trees[0].len();
    }
    Ok(format!("cv (1, 1 and 2 threads) and train reruns byte-identical over {files} files"))
}

// ----------------------------------------------------------------

fn main() {
    let mut models = Vec::new();
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match &v {
            Ok(d) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {d}"),
            Err(d) => println!("criterion {n} ({name}): FAIL [{secs:.1}s] {d}"),
        }
        results.push((n, name, v, secs));
    };
    record(1, "parameter goldens", &mut parameter_goldens);
    record(2, "flop accounting", &mut flop_accounting);
    record(3, "gradient suite", &mut gradient_suite);
    record(4, "metric oracles", &mut metric_oracles);
    record(5, "filter contract", &mut filter_contract);
    record(6, "structural invariants", &mut structural_invariants);
    record(7, "desk-scale learnability", &mut || desk_learnability(&mut models));
    record(8, "attention trace", &mut || attention_sanity(&models));
    record(9, "determinism", &mut determinism);
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
