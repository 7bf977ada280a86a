//! CSV and text renderings of training and evaluation results.

use std::fmt::Write as _;

use msacnn_core::eval::{AggregateReport, FoldReport, TTest};
use msacnn_core::tcm::AttentionTrace;
use msacnn_core::trainer::History;

/// One row per fold; the confusion matrix is flattened row-major with
/// spaces between counts (rows = true class).
pub fn folds_csv(reports: &[FoldReport]) -> String {
    let mut out = String::from("repetition,fold,n_test,accuracy,macro_f1,kappa,confusion\n");
    for r in reports {
        let cm: Vec<String> = r.confusion.counts().iter().map(u64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.repetition,
            r.fold,
            r.n_test,
            r.metrics.accuracy,
            r.metrics.macro_f1,
            r.metrics.kappa,
            cm.join(" ")
        )
        .unwrap();
    }
    out
}

pub fn summary(agg: &AggregateReport, folds: usize) -> String {
    let mut out = String::new();
    writeln!(out, "folds={}", folds).unwrap();
    writeln!(out, "repetitions={}", agg.per_repetition.len()).unwrap();
    for (name, m, s) in [
        ("accuracy", agg.mean.accuracy, agg.std.accuracy),
        ("macro_f1", agg.mean.macro_f1, agg.std.macro_f1),
        ("kappa", agg.mean.kappa, agg.std.kappa),
    ] {
        writeln!(out, "{}={:.4} ± {:.4}", name, m, s).unwrap();
    }
    for (i, m) in agg.per_repetition.iter().enumerate() {
        writeln!(out, "repetition{}.accuracy={}", i, m.accuracy).unwrap();
    }
    out
}

pub fn history_csv(h: &History) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy\n");
    for e in &h.epochs {
        writeln!(out, "{},{},{}", e.epoch, e.mean_loss, e.train_accuracy).unwrap();
    }
    out
}

/// `time_seconds` is the token start: `token · p_tot / fs`.
pub fn attention_csv(trace: &AttentionTrace, p_tot: usize, sample_rate_hz: f64) -> String {
    let mut out = String::from("token_index,time_seconds,incoming,outgoing\n");
    for j in 0..trace.tokens {
        let t = (j * p_tot) as f64 / sample_rate_hz;
        writeln!(out, "{},{},{},{}", j, t, trace.incoming[j], trace.outgoing[j]).unwrap();
    }
    out
}

pub fn t_test_text(label_a: &str, label_b: &str, a: &[f64], b: &[f64], t: &TTest) -> String {
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.4}", x)).collect::<Vec<_>>().join(",");
    let mut out = String::new();
    writeln!(out, "{}.fold_accuracy={}", label_a, fmt(a)).unwrap();
    writeln!(out, "{}.fold_accuracy={}", label_b, fmt(b)).unwrap();
    writeln!(out, "t={}", t.t).unwrap();
    writeln!(out, "p={}", t.p).unwrap();
    writeln!(out, "df={}", t.df).unwrap();
    writeln!(out, "stderr={}", t.stderr).unwrap();
    out
}
