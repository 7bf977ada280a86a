//! Subject-wise repeated cross-validation, classification metrics,
//! aggregation and paired t-tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{EpochSet, N_CLASSES};
use crate::error::{config_err, usage_err, Error, Result};
use crate::math::{exp, lgamma, ln, sqrt};
use crate::model::{build, ModelConfig, MsaCnnModel};
use crate::rng::{streams, Rng};
use crate::trainer::{train_on, History, TrainConfig};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(usage_err!("{} counts do not form a {}×{} matrix", counts.len(), k, k));
        }
        Ok(Self { k, counts })
    }

    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(usage_err!("{} labels against {} predictions", truth.len(), predicted.len()));
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(usage_err!("class pair ({}, {}) outside {} classes", truth, predicted, self.k));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(usage_err!("cannot merge {}-class and {}-class matrices", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.get(i, i)
    }

    pub fn fp(&self, i: usize) -> u64 {
        self.col_sum(i) - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.row_sum(i) - self.tp(i)
    }

    pub fn tn(&self, i: usize) -> u64 {
        self.total() - self.tp(i) - self.fp(i) - self.fn_(i)
    }
}

fn nonempty(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::UndefinedMetric("metric of an empty confusion matrix".into())),
        n => Ok(n as f64),
    }
}

/// Fraction of correctly classified samples, `Σ TP_i / N`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)?;
    Ok((0..cm.k).map(|i| cm.tp(i)).sum::<u64>() as f64 / n)
}

/// Unweighted mean of per-class F1. A class without predictions or without
/// true samples scores 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    let mut total = 0.0;
    for i in 0..cm.k {
        let tp = cm.tp(i) as f64;
        let (pp, ap) = (cm.col_sum(i) as f64, cm.row_sum(i) as f64);
        if pp == 0.0 || ap == 0.0 {
            continue;
        }
        let (p, r) = (tp / pp, tp / ap);
        if p + r > 0.0 {
            total += 2.0 * p * r / (p + r);
        }
    }
    Ok(total / cm.k as f64)
}

/// Cohen's kappa, 0 when chance agreement is 1.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)?;
    let po = (0..cm.k).map(|i| cm.tp(i)).sum::<u64>() as f64 / n;
    let pe = (0..cm.k).map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64).sum::<f64>() / (n * n);
    if pe == 1.0 {
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Subject-to-fold assignment, shared by every repetition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub repetitions: usize,
    /// Sorted distinct subject ids.
    pub subjects: Vec<u32>,
    /// `assignments[r][s]` is the fold of `subjects[s]` in repetition `r`.
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject: u32) -> Option<usize> {
        self.subjects.iter().position(|&s| s == subject).map(|i| self.assignments[0][i])
    }

    pub fn test_subjects(&self, repetition: usize, fold: usize) -> Vec<u32> {
        self.subjects.iter().zip(&self.assignments[repetition]).filter(|(_, &f)| f == fold).map(|(&s, _)| s).collect()
    }

    pub fn train_subjects(&self, repetition: usize, fold: usize) -> Vec<u32> {
        self.subjects.iter().zip(&self.assignments[repetition]).filter(|(_, &f)| f != fold).map(|(&s, _)| s).collect()
    }
}

/// Seeded partition of the distinct subjects into `k` folds whose sizes
/// differ by at most one.
pub fn make_fold_plan(subject_ids: &[u32], k: usize, repetitions: usize, seed: u64) -> Result<FoldPlan> {
    let mut subjects = subject_ids.to_vec();
    subjects.sort_unstable();
    subjects.dedup();
    if k == 0 || k > subjects.len() {
        return Err(config_err!("{} folds requested for {} subjects", k, subjects.len()));
    }
    if repetitions == 0 {
        return Err(config_err!("at least one repetition is required"));
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    Rng::new(seed, streams::FOLDS).shuffle(&mut order);
    let mut fold = vec![0; subjects.len()];
    for (pos, &s) in order.iter().enumerate() {
        fold[s] = pos % k;
    }
    Ok(FoldPlan { k, repetitions, subjects, assignments: vec![fold; repetitions] })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
}

impl Metrics {
    pub fn of(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self { accuracy: accuracy(cm)?, macro_f1: macro_f1(cm)?, kappa: cohens_kappa(cm)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub repetition: usize,
    pub n_test: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    /// Sample-weighted fold mean of each repetition.
    pub per_repetition: Vec<Metrics>,
    pub mean: Metrics,
    /// Sample standard deviation over repetitions (0 for one repetition).
    pub std: Metrics,
}

/// Weights folds by test samples within a repetition, then averages
/// repetitions with equal weight.
pub fn aggregate(reports: &[FoldReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::UndefinedMetric("no fold reports to aggregate".into()));
    }
    let reps = reports.iter().map(|r| r.repetition).max().unwrap() + 1;
    let mut per_repetition = Vec::new();
    for rep in 0..reps {
        let mut acc = [0.0; 3];
        let mut weight = 0.0;
        for r in reports.iter().filter(|r| r.repetition == rep) {
            let w = r.n_test as f64;
            acc[0] += w * r.metrics.accuracy;
            acc[1] += w * r.metrics.macro_f1;
            acc[2] += w * r.metrics.kappa;
            weight += w;
        }
        if weight > 0.0 {
            per_repetition.push(Metrics { accuracy: acc[0] / weight, macro_f1: acc[1] / weight, kappa: acc[2] / weight });
        }
    }
    let stat = |f: fn(&Metrics) -> f64| {
        let n = per_repetition.len() as f64;
        let mean = per_repetition.iter().map(f).sum::<f64>() / n;
        let var = if per_repetition.len() > 1 {
            per_repetition.iter().map(|m| (f(m) - mean) * (f(m) - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, sqrt(var))
    };
    let (a, f, k) = (stat(|m| m.accuracy), stat(|m| m.macro_f1), stat(|m| m.kappa));
    Ok(AggregateReport {
        per_repetition,
        mean: Metrics { accuracy: a.0, macro_f1: f.0, kappa: k.0 },
        std: Metrics { accuracy: a.1, macro_f1: f.1, kappa: k.1 },
    })
}

/// Per-fold accuracy averaged over repetitions, ordered by fold.
pub fn fold_accuracy_means(reports: &[FoldReport], k: usize) -> Vec<f64> {
    (0..k)
        .map(|f| {
            let accs: Vec<f64> = reports.iter().filter(|r| r.fold == f).map(|r| r.metrics.accuracy).collect();
            accs.iter().sum::<f64>() / accs.len().max(1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Standard error of the mean paired difference.
    pub stderr: f64,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(usage_err!("paired samples differ in length ({} vs {})", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(usage_err!("a paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let stderr = sqrt(var / n as f64);
    let df = n - 1;
    if var == 0.0 {
        let any = d.iter().any(|&v| v != 0.0);
        let t = if any { mean.signum() * f64::INFINITY } else { 0.0 };
        return Ok(TTest { t, p: if any { 0.0 } else { 1.0 }, df, stderr });
    }
    let t = mean / stderr;
    Ok(TTest { t, p: student_t_two_sided(t, df as f64), df, stderr })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_beta(x, df / 2.0, 0.5)
}

/// Regularised incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = exp(lgamma(a + b) - lgamma(a) - lgamma(b) + a * ln(x) + b * ln(1.0 - x));
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Confusion matrix of `model` over the listed epochs.
pub fn evaluate(model: &MsaCnnModel, set: &EpochSet, indices: &[usize]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(N_CLASSES);
    for &i in indices {
        cm.add(set.label(i), model.predict(&set.epoch_tensor(i))?)?;
    }
    Ok(cm)
}

/// Fails with an invariant error if any training epoch belongs to a test subject.
pub fn check_leakage(set: &EpochSet, train: &[usize], test_subjects: &[u32]) -> Result<()> {
    if let Some(&i) = train.iter().find(|&&i| test_subjects.contains(&set.subject_ids()[i])) {
        return Err(Error::Invariant(alloc::format!(
            "subject {} appears in both training and test partitions",
            set.subject_ids()[i]
        )));
    }
    Ok(())
}

/// Seed of the (repetition, fold) job derived from a base seed. Variants
/// sharing a base seed train from matching streams on matching folds.
pub fn job_seed(base: u64, repetition: usize, fold: usize) -> u64 {
    Rng::at(base, streams::FOLDS, ((repetition as u64) << 32) | fold as u64 + 1).next_u64()
}

/// Output of one cross-validation job.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub model: MsaCnnModel,
    pub history: History,
}

/// Trains on the out-of-fold subjects and scores the fold.
pub fn run_fold(
    config: &ModelConfig,
    set: &EpochSet,
    plan: &FoldPlan,
    train_config: &TrainConfig,
    repetition: usize,
    fold: usize,
) -> Result<FoldOutcome> {
    if repetition >= plan.repetitions || fold >= plan.k {
        return Err(usage_err!("job ({}, {}) outside a {}×{} plan", repetition, fold, plan.repetitions, plan.k));
    }
    let test_subjects = plan.test_subjects(repetition, fold);
    let train_subjects = plan.train_subjects(repetition, fold);
    let test = set.indices_for_subjects(&test_subjects);
    let train = set.indices_for_subjects(&train_subjects);
    check_leakage(set, &train, &test_subjects)?;
    let seed = job_seed(train_config.seed, repetition, fold);
    let mut model = build(config, seed)?;
    let tc = TrainConfig { seed, ..train_config.clone() };
    let history = train_on(&mut model, set, &train, &tc, |_| {})?;
    let confusion = evaluate(&model, set, &test)?;
    let metrics = Metrics::of(&confusion)?;
    Ok(FoldOutcome {
        report: FoldReport { fold, repetition, n_test: test.len(), confusion, metrics },
        model,
        history,
    })
}

/// Every (repetition, fold) job in order, then the aggregate.
pub fn run_cv(
    config: &ModelConfig,
    set: &EpochSet,
    plan: &FoldPlan,
    train_config: &TrainConfig,
) -> Result<(Vec<FoldReport>, AggregateReport)> {
    let mut subjects: Vec<u32> = set.subject_ids().to_vec();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects != plan.subjects {
        return Err(config_err!("the fold plan was made for different subjects"));
    }
    let mut reports = Vec::with_capacity(plan.k * plan.repetitions);
    for rep in 0..plan.repetitions {
        for fold in 0..plan.k {
            reports.push(run_fold(config, set, plan, train_config, rep, fold)?.report);
        }
    }
    let agg = aggregate(&reports)?;
    Ok((reports, agg))
}
