use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use msacnn::ingest::ingest_csv;
use msacnn_core::sigproc::{design_butterworth_lowpass, filter_forward};

fn signal_file(dir: &Path, name: &str, channels: &[&str], seconds: usize, fs: usize) -> (PathBuf, Vec<Vec<f64>>) {
    let n = seconds * fs;
    let cols: Vec<Vec<f64>> = (0..channels.len())
        .map(|c| (0..n).map(|i| ((i * (c + 3)) % 17) as f64 - 8.0 + 0.25 * c as f64).collect())
        .collect();
    let mut s = channels.join(",") + "\n";
    for i in 0..n {
        let row: Vec<String> = cols.iter().map(|c| c[i].to_string()).collect();
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    let p = dir.join(format!("{name}.csv"));
    std::fs::write(&p, s).unwrap();
    (p, cols)
}

fn label_file(dir: &Path, rows: &[(&str, &str)]) -> PathBuf {
    let mut s = String::from("subject,stage\n");
    for (a, b) in rows {
        writeln!(s, "{a},{b}").unwrap();
    }
    let p = dir.join("labels.csv");
    std::fs::write(&p, s).unwrap();
    p
}

#[test]
fn ninety_seconds_make_three_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let (sig, cols) = signal_file(dir.path(), "s1", &["Fpz"], 90, 100);
    let labels = label_file(dir.path(), &[("s1", "W"), ("s1", "N2"), ("s1", "4")]);
    let set = ingest_csv(&[sig], &labels, 100.0, 30.0).unwrap();
    assert_eq!((set.len(), set.samples_per_epoch(), set.n_channels()), (3, 3000, 1));
    assert_eq!(set.labels(), &[0, 2, 4]);
    assert_eq!(set.channel_names(), &["Fpz"]);
    let spec = design_butterworth_lowpass(4, 40.0, 100.0).unwrap();
    let expect = filter_forward(&spec, &cols[0]);
    for (a, b) in set.data().iter().zip(&expect) {
        assert_eq!(*a, *b as f32);
    }
}

#[test]
fn trailing_partial_epoch_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let (sig, _) = signal_file(dir.path(), "s1", &["a", "b"], 95, 100);
    let labels = label_file(dir.path(), &[("s1", "N1"), ("s1", "N3"), ("s1", "REM")]);
    let set = ingest_csv(&[sig], &labels, 100.0, 30.0).unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.data().len(), 3 * 2 * 3000);
}

#[test]
fn subjects_by_stem_or_position() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = signal_file(dir.path(), "alpha", &["x"], 30, 100);
    let (b, _) = signal_file(dir.path(), "beta", &["x"], 60, 100);
    let labels = label_file(dir.path(), &[("alpha", "W"), ("1", "N1"), ("1", "N2")]);
    let set = ingest_csv(&[a, b], &labels, 100.0, 30.0).unwrap();
    assert_eq!(set.subject_ids(), &[0, 1, 1]);
    assert_eq!(set.labels(), &[0, 1, 2]);
}

#[test]
fn label_count_mismatch_names_the_subject() {
    let dir = tempfile::tempdir().unwrap();
    let (sig, _) = signal_file(dir.path(), "s7", &["x"], 90, 100);
    let labels = label_file(dir.path(), &[("s7", "W"); 4]);
    let e = ingest_csv(&[sig], &labels, 100.0, 30.0).unwrap_err();
    assert!(matches!(e, msacnn::Error::Core(msacnn_core::Error::Data(_))));
    assert!(e.to_string().contains("s7"), "{e}");
}

#[test]
fn non_numeric_cell_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s1.csv");
    std::fs::write(&p, "a,b\n1,2\n3,oops\n").unwrap();
    let labels = label_file(dir.path(), &[]);
    let e = ingest_csv(&[p], &labels, 100.0, 30.0).unwrap_err().to_string();
    assert!(e.contains("row 3") && e.contains("column 2") && e.contains("oops"), "{e}");
}

#[test]
fn other_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (sig, _) = signal_file(dir.path(), "s1", &["x"], 30, 100);
    let labels = label_file(dir.path(), &[("s1", "N5")]);
    assert!(ingest_csv(&[sig.clone()], &labels, 100.0, 30.0).unwrap_err().to_string().contains("N5"));
    let labels = label_file(dir.path(), &[("s1", "W"), ("ghost", "W")]);
    assert!(ingest_csv(&[sig.clone()], &labels, 100.0, 30.0).unwrap_err().to_string().contains("ghost"));
    let labels = label_file(dir.path(), &[("s1", "W")]);
    assert!(ingest_csv(&[sig], &labels, 100.0, 20.0).is_err());
}
