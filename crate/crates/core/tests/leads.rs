use std::time::Instant;

use proptest::prelude::*;
use sssd_ecg::leads::*;

fn frame(values: Vec<f64>) -> EightLeadFrame<f64> {
    EightLeadFrame::new(values).unwrap()
}

proptest! {
    #[test]
    fn reconstruction_satisfies_all_identities(len in 1usize..64, seed in any::<u64>()) {
        let mut r = sssd_ecg::rng::seeded(seed);
        let v: Vec<f64> = (0..8 * len).map(|_| rand::Rng::gen_range(&mut r, -5.0..5.0)).collect();
        let twelve = reconstruct_12_leads(&frame(v.clone()));
        prop_assert_eq!(twelve.len(), 12 * len);
        let c = check_lead_consistency(&twelve, 1e-9).unwrap();
        prop_assert!(c.consistent, "{}", c.max_residual);
        prop_assert_eq!(project_to_8(&twelve).unwrap().into_inner(), v);
    }

    #[test]
    fn f32_reconstruction_is_consistent_at_1e6(len in 1usize..64, seed in any::<u64>()) {
        let mut r = sssd_ecg::rng::seeded(seed);
        let v: Vec<f32> = (0..8 * len).map(|_| rand::Rng::gen_range(&mut r, -3.0f32..3.0)).collect();
        let twelve = reconstruct_12_leads(&EightLeadFrame::new(v).unwrap());
        prop_assert!(check_lead_consistency(&twelve, 1e-6).unwrap().consistent);
    }

    #[test]
    fn perturbing_a_derived_lead_is_detected(len in 1usize..32, lead in 1usize..5, at in 0usize..32, delta in 0.01f64..1.0) {
        let v: Vec<f64> = (0..8 * len).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut twelve = reconstruct_12_leads(&frame(v));
        twelve[lead * len + at % len] += delta;
        let c = check_lead_consistency(&twelve, 1e-6).unwrap();
        prop_assert!(!c.consistent);
        prop_assert!(c.max_residual >= delta / 2.0 - 1e-12);
    }
}

#[test]
fn hand_worked_values() {
    // I = 1, aVF = 1: II = 1.5, III = 0.5, aVR = -1.25, aVL = 0.25.
    let mut v = vec![0.0; 8];
    v[0] = 1.0;
    v[1] = 1.0;
    let t = reconstruct_12_leads(&frame(v));
    assert_eq!(&t[..6], &[1.0, 1.5, 0.5, -1.25, 0.25, 1.0]);
}

#[test]
fn rejects_bad_frames() {
    assert!(EightLeadFrame::<f64>::new(vec![0.0; 9]).is_err());
    assert!(EightLeadFrame::<f64>::new(vec![]).is_err());
    assert!(EightLeadFrame::new(vec![f64::NAN; 8]).is_err());
    assert!(check_lead_consistency(&[0.0f64; 13], 1e-6).is_err());
    assert!(project_to_8(&[0.0f64; 11]).is_err());
}

#[test]
fn thousand_frames_check_quickly() {
    let start = Instant::now();
    let mut r = sssd_ecg::rng::seeded(1);
    for _ in 0..1000 {
        let v: Vec<f32> = (0..8000).map(|_| rand::Rng::gen_range(&mut r, -2.0f32..2.0)).collect();
        let t = reconstruct_12_leads(&EightLeadFrame::new(v).unwrap());
        assert!(check_lead_consistency(&t, 1e-6).unwrap().consistent);
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
}
