use std::f64::consts::PI;

use msacnn_core::dataset::*;
use proptest::prelude::*;

/// Fraction of a signal's energy below `cut_hz`, from a direct DFT of the
/// low bins and Parseval for the total.
fn low_band_fraction(x: &[f64], fs: f64, cut_hz: f64) -> f64 {
    let n = x.len();
    let total: f64 = n as f64 * x.iter().map(|v| v * v).sum::<f64>();
    let kmax = (cut_hz * n as f64 / fs).ceil() as usize;
    let mut low = 0.0;
    for k in 0..kmax {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let a = 2.0 * PI * (k * i) as f64 / n as f64;
            re += v * a.cos();
            im -= v * a.sin();
        }
        low += if k == 0 { 1.0 } else { 2.0 } * (re * re + im * im);
    }
    low / total
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic(7, 2, 5, 4, 100.0);
    let b = generate_synthetic(7, 2, 5, 4, 100.0);
    assert_eq!(a, b);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = generate_synthetic(8, 2, 5, 4, 100.0);
    assert_ne!(a.data(), c.data());
    assert_eq!(a.samples_per_epoch(), 3000);
    assert_eq!(a.n_subjects(), 2);
    assert_eq!(a.channel_names(), ["EEG1", "EOG1", "EMG1", "EEG2"]);
}

#[test]
fn n3_is_slow_and_wake_is_not() {
    let set = generate_synthetic(3, 2, 20, 1, 100.0);
    let (mut n3, mut w) = (0, 0);
    for i in 0..set.len() {
        let x: Vec<f64> = set.epoch(i).iter().map(|&v| v as f64).collect();
        let frac = low_band_fraction(&x, 100.0, 4.0);
        match Stage::from_index(set.label(i)).unwrap() {
            Stage::N3 => {
                n3 += 1;
                assert!(frac > 0.6, "N3 epoch {i}: {frac}");
            }
            Stage::W => {
                w += 1;
                assert!(frac <= 0.6, "W epoch {i}: {frac}");
            }
            _ => {}
        }
    }
    assert!(n3 >= 3 && w >= 3);
}

#[test]
fn label_proportions_track_targets() {
    let set = generate_synthetic(11, 10, 100, 1, 20.0);
    let dist = class_distribution(&set);
    let targets = [0.195, 0.142, 0.305, 0.235, 0.124];
    for k in 0..N_CLASSES {
        assert!((dist.proportions[k] - targets[k]).abs() <= 0.03, "class {k}: {}", dist.proportions[k]);
    }
    // every subject receives a mix of stages
    for s in 0..10u32 {
        let idx = set.indices_for_subjects(&[s]);
        assert_eq!(idx.len(), 100);
        let kinds: std::collections::HashSet<_> = idx.iter().map(|&i| set.label(i)).collect();
        assert!(kinds.len() >= 4);
    }
}

#[test]
fn reference_distributions() {
    let isruc = ClassDistribution::from_counts([1674, 1217, 2616, 2016, 1066]);
    assert_eq!(isruc.total(), 8589);
    assert!((isruc.proportions[2] - 0.305).abs() < 5e-4);
    let edf = ClassDistribution::from_counts([8285, 2804, 17799, 5703, 7717]);
    assert_eq!(edf.total(), 42308);
    assert!((edf.proportions[1] - 0.066).abs() < 5e-4);
}

#[test]
fn single_class_distribution() {
    let set = EpochSet::new(vec![0.0; 2 * 30], vec![3, 3], vec![0, 0], vec!["C3".into()], 1.0).unwrap();
    let d = class_distribution(&set);
    assert_eq!(d.counts, [0, 0, 0, 2, 0]);
    assert_eq!(d.proportions, [0.0, 0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn epoch_set_invariants() {
    let ok = |labels: Vec<u8>, subjects: Vec<u32>, len: usize| {
        EpochSet::new(vec![0.0; len], labels, subjects, vec!["a".into()], 1.0)
    };
    assert!(ok(vec![0, 4], vec![0, 1], 60).is_ok());
    assert!(ok(vec![0, 5], vec![0, 1], 60).is_err());
    assert!(ok(vec![0, 1], vec![0, 2], 60).is_err());
    assert!(ok(vec![0, 1], vec![0, 1], 59).is_err());
    assert!(ok(vec![], vec![], 0).is_err());
    assert!(EpochSet::new(vec![], vec![0], vec![0], vec![], 1.0).is_err());
}

#[test]
fn stage_codes() {
    assert_eq!(Stage::parse("REM"), Some(Stage::Rem));
    assert_eq!(Stage::parse("2"), Some(Stage::N2));
    assert_eq!(Stage::parse("n3"), Some(Stage::N3));
    assert_eq!(Stage::parse("5"), None);
    assert_eq!(Stage::W.index(), 0);
    assert_eq!(Stage::Rem.index(), 4);
}

#[test]
fn channel_selection() {
    let set = generate_synthetic(1, 1, 3, 4, 10.0);
    let sub = set.select_channels(&[3, 0]).unwrap();
    assert_eq!(sub.channel_names(), ["EEG2", "EEG1"]);
    assert_eq!(&sub.epoch(1)[..300], &set.epoch(1)[900..1200]);
    assert!(set.select_channels(&[4]).is_err());
}

#[test]
fn probe_event_lies_inside_epoch() {
    let p = n2_probe_epoch(5, 4, 100.0);
    assert_eq!(p.epoch.shape(), &[4, 3000]);
    assert!(p.event.start >= 500 && p.event.end <= 2500);
    assert!(p.event.end - p.event.start >= 140 && p.event.end - p.event.start <= 160);
    // the K-complex trough dominates channel 0 around the event
    let x = &p.epoch.data()[..3000];
    let (imin, _) = x.iter().enumerate().fold((0, f64::MAX), |m, (i, &v)| if v < m.1 { (i, v) } else { m });
    assert!(imin >= p.event.start && imin < p.event.end, "{imin} {:?}", p.event);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn generator_output_is_valid(seed in 0u64..1000, subj in 1usize..4, per in 1usize..6, ch in 1usize..6) {
        let set = generate_synthetic(seed, subj, per, ch, 10.0);
        prop_assert_eq!(set.len(), subj * per);
        prop_assert_eq!(set.n_channels(), ch);
        prop_assert_eq!(set.n_subjects(), subj);
        let d = class_distribution(&set);
        prop_assert_eq!(d.total(), set.len());
        prop_assert!((d.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(set.data().iter().all(|v| v.is_finite()));
    }
}
