use msacnn::runner::sha256_hex;
use msacnn::store::*;
use msacnn_core::dataset::{generate_synthetic, EpochSet};
use msacnn_core::rng::Rng;
use proptest::prelude::*;

fn random_set(seed: u64, subjects: usize, per: usize, n_ch: usize, fs: f32) -> EpochSet {
    let mut rng = Rng::new(seed, 40);
    let t = (30.0 * fs as f64).round() as usize;
    let n = subjects * per;
    let data = (0..n * n_ch * t).map(|_| rng.normal() as f32).collect();
    let labels = (0..n).map(|_| rng.below(5) as u8).collect();
    let ids = (0..n).map(|i| (i % subjects) as u32).collect();
    let names = (0..n_ch).map(|c| format!("ch{c}")).collect();
    EpochSet::new(data, labels, ids, names, fs).unwrap()
}

#[test]
fn round_trip_is_bitwise() {
    let set = generate_synthetic(3, 2, 3, 3, 100.0);
    let bytes = to_bytes(&set);
    let back = from_bytes(&bytes).unwrap();
    assert_eq!(back, set);
    assert!(back.data().iter().zip(set.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.eps");
    save_epochset(&set, &p).unwrap();
    assert_eq!(load_epochset(&p).unwrap(), set);
}

#[test]
fn header_layout() {
    let set = random_set(1, 2, 2, 1, 10.0);
    let b = to_bytes(&set);
    assert_eq!(&b[..4], b"EPS1");
    assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
    assert_eq!(u16::from_le_bytes([b[6], b[7]]), 5);
    assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 4);
    assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 300);
    assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 10.0);
    assert_eq!(b.len(), 24 + 2 + 3 + 4 + 4 * 4 + 4 + 4 * 300 * 4);
}

#[test]
fn re_serialization_hash_is_stable() {
    let set = random_set(9, 3, 4, 2, 20.0);
    let first = to_bytes(&set);
    let second = to_bytes(&from_bytes(&first).unwrap());
    assert_eq!(sha256_hex(&first), sha256_hex(&second));
}

fn message(bytes: &[u8]) -> String {
    from_bytes(bytes).unwrap_err().to_string()
}

#[test]
fn malformed_inputs_report_offsets() {
    assert!(message(&[]).contains("bad magic"));
    assert!(message(b"EPS2xxxx").contains("bad magic"));
    let set = random_set(2, 2, 2, 2, 10.0);
    let good = to_bytes(&set);
    let cut = &good[..good.len() - 3];
    let m = message(cut);
    assert!(m.contains("truncated") && m.contains("payload"), "{m}");
    // labels sit right before the payload
    let labels_at = good.len() - 4 * 4 * 2 * 300 - 4;
    let mut bad = good.clone();
    bad[labels_at + 1] = 7;
    let m = message(&bad);
    assert!(m.contains(&format!("byte {}", labels_at + 1)), "{m}");
    let mut extra = good.clone();
    extra.push(0);
    assert!(message(&extra).contains("trailing"));
    let mut version = good;
    version[4] = 9;
    assert!(message(&version).contains("version"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn any_valid_set_round_trips(seed in any::<u64>(), subjects in 1usize..4, per in 1usize..3, n_ch in 1usize..4, fs in prop::sample::select(vec![1.0f32, 2.0, 10.0])) {
        let set = random_set(seed, subjects, per, n_ch, fs);
        prop_assert_eq!(from_bytes(&to_bytes(&set)).unwrap(), set);
    }
}
