use std::fs;

use proptest::prelude::*;
use sssd_ecg::data::*;
use sssd_ecg::error::Error;
use sssd_ecg::leads::check_lead_consistency;

#[test]
fn container_round_trip_is_bit_exact() {
    let ds = make_toy_corpus(20, 4, 150, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path(), 100).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.records.iter().zip(&ds.records) {
        assert!(a.signal.iter().zip(&b.signal).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let bytes = fs::metadata(dir.path().join("signals.f32le")).unwrap().len();
    assert_eq!(bytes, 20 * 12 * 150 * 4);
    assert_eq!(fs::metadata(dir.path().join("labels.u8")).unwrap().len(), 20 * 71);
}

#[test]
fn encode_decode_is_exhaustive_over_small_vocabulary() {
    let codes = ["A", "B", "C", "D", "E"];
    let vocab = LabelVocabulary::new(codes.iter().map(|s| s.to_string()).collect()).unwrap();
    for mask in 0u32..32 {
        let chosen: Vec<&str> = (0..5).filter(|i| mask >> i & 1 == 1).map(|i| codes[i]).collect();
        let v = vocab.encode(&chosen).unwrap();
        assert!(v.is_binary());
        for i in 0..5 {
            assert_eq!(v.values()[i], (mask >> i & 1) as f32);
        }
        assert_eq!(vocab.decode(&v), chosen);
    }
    assert!(matches!(vocab.encode(&["Z"]), Err(Error::UnknownStatement(s)) if s == "Z"));
    assert!(LabelVocabulary::new(vec!["A".into(), "A".into()]).is_err());
}

#[test]
fn ptbxl_vocabulary_round_trips_every_code() {
    let vocab = LabelVocabulary::ptbxl();
    for (i, code) in vocab.codes().iter().enumerate() {
        let v = vocab.encode(&[code]).unwrap();
        assert_eq!(v.values().iter().position(|&x| x == 1.0), Some(i));
        assert_eq!(vocab.decode(&v), vec![code.clone()]);
    }
}

proptest! {
    #[test]
    fn mix_stays_in_unit_box(a in prop::collection::vec(0u8..2, 71), b in prop::collection::vec(0u8..2, 71), alpha in 0.0f32..=1.0) {
        let a = LabelVector::new(a.iter().map(|&x| x as f32).collect()).unwrap();
        let b = LabelVector::new(b.iter().map(|&x| x as f32).collect()).unwrap();
        let m = LabelVector::mix(&a, &b, alpha).unwrap();
        prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(LabelVector::mix(&a, &b, 1.0).unwrap(), a.clone());
        prop_assert_eq!(LabelVector::mix(&a, &b, 0.0).unwrap(), b);
    }
}

#[test]
fn toy_corpus_is_deterministic_and_consistent() {
    let a = make_toy_corpus(30, 4, 300, 11).unwrap();
    let b = make_toy_corpus(30, 4, 300, 11).unwrap();
    assert_eq!(a, b);
    let c = make_toy_corpus(30, 4, 300, 12).unwrap();
    assert_ne!(a.records[0].signal, c.records[0].signal);
    let vocab = LabelVocabulary::ptbxl();
    let allowed: Vec<usize> = toy_statements(4).iter().map(|s| vocab.position(s).unwrap()).collect();
    for (r, l) in a.records.iter().zip(&a.labels) {
        assert_eq!((r.n_leads, r.len(), r.sampling_rate), (12, 300, 100));
        let c = check_lead_consistency(&r.lead_major(), 1e-6).unwrap();
        assert!(c.consistent, "{}", c.max_residual);
        for (i, &v) in l.values().iter().enumerate() {
            assert!(v == 0.0 || allowed.contains(&i));
        }
    }
    let folds: Vec<u8> = a.records.iter().map(|r| r.fold).collect();
    assert_eq!(&folds[..10], &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
    assert_eq!(a.split_indices(Split::Test).len(), 3);
    assert_eq!(a.split_indices(Split::Validation).len(), 3);
    assert_eq!(a.split_indices(Split::Train).len(), 24);
}

#[test]
fn toy_lvh_shifts_r_amplitude_by_the_margin() {
    let ds = make_toy_corpus(400, 4, 1000, 5).unwrap();
    let lvh = ds.vocabulary.position("LVH").unwrap();
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for (r, l) in ds.records.iter().zip(&ds.labels) {
        let peak = r.lead(0).iter().fold(f32::MIN, |m, &v| m.max(v)) as f64;
        if l.values()[lvh] == 1.0 {
            on.push(peak)
        } else {
            off.push(peak)
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let diff = mean(&on) - mean(&off);
    assert!(on.len() > 100 && off.len() > 100);
    assert!((diff - TOY_LVH_MARGIN_MV).abs() < 0.1, "margin {diff}");
}

#[test]
fn toy_config_rejects_out_of_range() {
    assert!(matches!(make_toy_corpus(5, 4, 1000, 0), Err(Error::ToyConfig(_))));
    assert!(matches!(make_toy_corpus(100, 1, 1000, 0), Err(Error::ToyConfig(_))));
    assert!(matches!(make_toy_corpus(100, 9, 1000, 0), Err(Error::ToyConfig(_))));
    assert!(matches!(make_toy_corpus(100, 4, 50, 0), Err(Error::ToyConfig(_))));
    let cfg: Result<ToyConfig, _> = serde_json::from_str(r#"{"n_records":10,"n_labels":2,"length":100,"seed":0,"x":1}"#);
    assert!(cfg.is_err());
}

fn saved() -> (tempfile::TempDir, Dataset) {
    let ds = make_toy_corpus(10, 2, 120, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    (dir, ds)
}

fn edit_meta(dir: &std::path::Path, f: impl FnOnce(&mut serde_json::Value)) {
    let p = dir.join("meta.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
    f(&mut v);
    fs::write(p, serde_json::to_vec(&v).unwrap()).unwrap();
}

#[test]
fn loader_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::CorpusNotFound(_))));
    let (dir, _) = saved();
    fs::remove_file(dir.path().join("labels.u8")).unwrap();
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::CorpusNotFound(p)) if p.ends_with("labels.u8")));
}

#[test]
fn loader_rejects_schema_violations() {
    let (dir, _) = saved();
    assert!(matches!(load_dataset(dir.path(), 500), Err(Error::Schema(_))));

    let (dir, _) = saved();
    edit_meta(dir.path(), |m| m["lead_order"][1] = "III".into());
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::Schema(_))));

    let (dir, _) = saved();
    edit_meta(dir.path(), |m| m["extra"] = 1.into());
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::Schema(_))));

    let (dir, _) = saved();
    edit_meta(dir.path(), |m| m["folds"][0] = 11.into());
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::Schema(_))));

    let (dir, _) = saved();
    let p = dir.path().join("signals.f32le");
    let mut bytes = fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&p, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::Schema(_))));

    let (dir, _) = saved();
    let p = dir.path().join("labels.u8");
    let mut bytes = fs::read(&p).unwrap();
    bytes[3] = 2;
    fs::write(&p, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::Schema(_))));
}

#[test]
fn loader_rejects_non_finite_samples() {
    let (dir, _) = saved();
    let p = dir.path().join("signals.f32le");
    let mut bytes = fs::read(&p).unwrap();
    let at = 12 * 120 * 4 * 3 + 40;
    bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&p, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path(), 100), Err(Error::CorruptSignal(s)) if s.contains("toy-00003")));
}

#[test]
fn record_and_dataset_constructors_validate() {
    assert!(EcgRecord::new(vec![0.0; 120], 10, 100, "x", 1).is_err());
    assert!(EcgRecord::new(vec![0.0; 121], 12, 100, "x", 1).is_err());
    assert!(EcgRecord::new(vec![0.0; 120], 12, 100, "x", 0).is_err());
    assert!(matches!(EcgRecord::new(vec![f32::INFINITY; 12], 12, 100, "x", 1), Err(Error::CorruptSignal(_))));
    let r = EcgRecord::new((0..24).map(|v| v as f32).collect(), 12, 100, "x", 1).unwrap();
    assert_eq!(r.lead(3), vec![3.0, 15.0]);
    assert_eq!(r.independent_leads().unwrap()[..4], [0.0, 12.0, 5.0, 17.0]);
    let back = EcgRecord::from_lead_major(&r.lead_major(), 12, 100, "x", 1).unwrap();
    assert_eq!(back, r);
    let vocab = LabelVocabulary::ptbxl();
    assert!(Dataset::new(vec![r.clone()], vec![], vocab.clone()).is_err());
    assert!(Dataset::new(vec![r], vec![LabelVector::zeros(3)], vocab).is_err());
}
