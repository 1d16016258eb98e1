use nalgebra::Vector3;
use proptest::prelude::*;
use servobench_core::loss::{pose_loss, rotation_error_deg, LossConfig, DEFAULT_BETA};
use servobench_core::pose::PoseVector;

fn quat() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0).prop_filter("non-degenerate", |q| q.iter().map(|c| c * c).sum::<f64>() > 1e-4)
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0)
}

proptest! {
    #[test]
    fn loss_is_nonnegative(px in vec3(), pq in quat(), gx in vec3(), gq in quat()) {
        let l = pose_loss(&px.into(), &pq, &gx.into(), &gq, &LossConfig::default()).unwrap();
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn loss_is_invariant_to_gt_quaternion_scale(px in vec3(), pq in quat(), gx in vec3(), gq in quat(), s in 0.01f64..100.0) {
        let cfg = LossConfig::default();
        let scaled = gq.map(|c| c * s);
        let a = pose_loss(&px.into(), &pq, &gx.into(), &gq, &cfg).unwrap();
        let b = pose_loss(&px.into(), &pq, &gx.into(), &scaled, &cfg).unwrap();
        // both ground truths normalize to the same unit quaternion up to rounding
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn loss_is_exactly_invariant_to_power_of_two_scale(pq in quat(), gq in quat(), e in -10i32..10) {
        let cfg = LossConfig::default();
        let x = Vector3::new(0.1, 0.2, 0.3);
        let scaled = gq.map(|c| c * 2f64.powi(e));
        prop_assert_eq!(
            pose_loss(&x, &pq, &x, &gq, &cfg).unwrap(),
            pose_loss(&x, &pq, &x, &scaled, &cfg).unwrap()
        );
    }

    #[test]
    fn rotation_error_is_symmetric_and_sign_blind(a in quat(), b in quat()) {
        let pa = PoseVector::from_raw([0.0; 3], a).unwrap();
        let pb = PoseVector::from_raw([0.0; 3], b).unwrap();
        let nb = PoseVector::from_raw([0.0; 3], b.map(|c| -c)).unwrap();
        let ab = rotation_error_deg(&pa, &pb);
        prop_assert!((ab - rotation_error_deg(&pb, &pa)).abs() < 1e-9);
        prop_assert!((ab - rotation_error_deg(&pa, &nb)).abs() < 1e-9);
        prop_assert!((0.0..=180.0).contains(&ab));
    }
}

#[test]
fn loss_sees_gt_sign_flip_but_rotation_error_does_not() {
    let q = [0.9, 0.1, -0.3, 0.2];
    let norm = q.iter().map(|c: &f64| c * c).sum::<f64>().sqrt();
    let unit = q.map(|c| c / norm);
    let neg = q.map(|c| -c);
    let x = Vector3::zeros();
    let cfg = LossConfig::default();
    assert_eq!(pose_loss(&x, &unit, &x, &q, &cfg).unwrap(), 0.0);
    assert!(pose_loss(&x, &unit, &x, &neg, &cfg).unwrap() > 1.0);
    let p = PoseVector::from_raw([0.0; 3], q).unwrap();
    let n = PoseVector::from_raw([0.0; 3], neg).unwrap();
    assert!(rotation_error_deg(&p, &n) < 1e-12);
    // canonicalization removes the ambiguity the loss would otherwise see
    assert_eq!(p.q, n.q);
}

#[test]
fn default_beta() {
    assert_eq!(DEFAULT_BETA, 500_000.0);
    assert_eq!(LossConfig::default().beta, DEFAULT_BETA);
}
