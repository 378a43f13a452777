use nalgebra::{Matrix3, Vector3};
use pano4d::erp::{ErpDims, ErpFrame};
use pano4d::synthetic::SphereRoom;
use pano4d::temporal::*;
use pano4d::{Image, SceneCamera};
use proptest::prelude::*;

const REF_SIZE: usize = 12;

fn identity_pose() -> SceneCamera {
    SceneCamera::new(Matrix3::identity(), Vector3::zeros(), 90f64.to_radians(), REF_SIZE, REF_SIZE).unwrap()
}

fn room_frames(n: usize) -> Vec<ErpFrame> {
    let room = SphereRoom::default();
    (0..n)
        .map(|t| {
            let o = Vector3::new(0.2 * t as f64, 0.0, -0.1 * t as f64);
            room.panorama(ErpDims::new(32).unwrap(), &o, &Matrix3::identity()).1
        })
        .collect()
}

fn self_reference(frames: &[ErpFrame]) -> MetricReference {
    let cam = reference_camera(REF_SIZE).unwrap();
    MetricReference::new(
        frames.iter().map(|f| center_perspective_depth(f, &cam)).collect(),
        vec![identity_pose(); frames.len()],
    )
    .unwrap()
}

#[test]
fn self_reference_is_the_identity() {
    let frames = room_frames(3);
    let (aligned, cals) = align_sequence(&frames, &self_reference(&frames), &Default::default()).unwrap();
    for (a, (f, c)) in aligned.iter().zip(frames.iter().zip(&cals)) {
        assert_eq!((c.alpha, c.beta), (1.0, 0.0));
        assert_eq!(a.data(), f.data());
    }
}

#[test]
fn doubled_frame_is_halved() {
    let base = room_frames(1).remove(0);
    let doubled = ErpFrame::new(base.image().map(|v| 2.0 * v)).unwrap();
    let reference = self_reference(&[base.clone(), base.clone()]);
    let (aligned, cals) = align_sequence(&[base, doubled], &reference, &Default::default()).unwrap();
    assert_eq!((cals[0].alpha, cals[1].alpha), (1.0, 0.5));
    assert_eq!((cals[0].beta, cals[1].beta), (0.0, 0.0));
    assert_eq!(aligned[0].data(), aligned[1].data());
}

#[test]
fn calibration_is_applied_bit_for_bit() {
    let frames = room_frames(2);
    let mut reference = self_reference(&frames).depths().to_vec();
    reference[1] = reference[1].map(|v| 0.7 * v + 0.3);
    let reference = MetricReference::new(reference, vec![identity_pose(); 2]).unwrap();
    let (aligned, cals) = align_sequence(&frames, &reference, &Default::default()).unwrap();
    for t in 0..2 {
        for (a, d) in aligned[t].data().iter().zip(frames[t].data()) {
            assert_eq!(*a, cals[t].alpha * d + cals[t].beta);
        }
    }
}

#[test]
fn moving_camera_background_agrees_after_alignment() {
    // Panorama depths carry an unknown per-frame scale; the metric estimator
    // sees true ray distances from each camera position.
    let room = SphereRoom::default();
    let dims = ErpDims::new(48).unwrap();
    let corruption = [(1.0, 0.0), (0.6, 0.0), (1.7, 0.0), (0.9, 0.0)];
    let mut panos = Vec::new();
    let mut metric = Vec::new();
    let mut poses = Vec::new();
    let mut truth = Vec::new();
    for (t, (s, b)) in corruption.iter().enumerate() {
        let o = Vector3::new(0.3 * t as f64, 0.1 * t as f64, -0.2 * t as f64);
        let (_, depth) = room.panorama(dims, &o, &Matrix3::identity());
        panos.push(ErpFrame::new(depth.image().map(|v| s * v + b)).unwrap());
        let pose = SceneCamera::from_tangent(&reference_camera(16).unwrap(), &Matrix3::identity(), o).unwrap();
        metric.push(room.render(&pose).1);
        poses.push(pose);
        truth.push((o, depth));
    }
    let reference = MetricReference::new(metric, poses).unwrap();
    let (aligned, _) = align_sequence(&panos, &reference, &Default::default()).unwrap();
    // A fixed set of wall points seen from every frame.
    let points: Vec<Vector3<f64>> = (0..40)
        .map(|i| {
            let a = i as f64 * 0.61;
            let d = Vector3::new(a.cos() * 0.8, (a * 1.7).sin() * 0.5, a.sin()).normalize();
            room.center + d * room.radius
        })
        .collect();
    for p in &points {
        for (t, (o, _)) in truth.iter().enumerate() {
            let dir = (p - o).normalize();
            let (u, v) = pano4d::erp::erp_pixel_for_dir(dims, &dir);
            let (u, v) = (u.round() as usize % dims.width(), (v.round() as usize).min(dims.height() - 1));
            let pixel_dir = pano4d::erp::dir_for_erp_pixel(dims, u, v).unwrap();
            let expected = room.ray_distance(o, &pixel_dir);
            let got = aligned[t].get(v, u, 0);
            assert!((got / expected - 1.0).abs() < 0.02, "frame {t}: {got} vs {expected}");
        }
    }
}

#[test]
fn outliers_in_a_minority_of_pixels_do_not_move_the_medians() {
    // Piecewise-constant grids with exact metric values: two depth levels
    // under a pure scale, and one level under scale and shift.
    let two_level = Image::from_fn(6, 6, 1, |r, _, _| if r < 3 { 2.0 } else { 4.0 });
    let cases = [
        (two_level.clone(), two_level.map(|v| 1.5 * v)),
        (Image::filled(6, 6, 1, 2.0), Image::filled(6, 6, 1, 3.5)),
    ];
    for (d, metric) in cases {
        let clean = calibrate_frame(&d, &metric, None).unwrap();
        let mut corrupt = metric.clone();
        for i in [0, 5, 7, 13, 20, 21, 30, 35, 17, 11, 2, 28, 33, 19, 4, 8, 26] {
            corrupt.data_mut()[i] = if i % 2 == 0 { 1e6 * (i as f64 + 1.0) } else { 1e-6 };
        }
        assert_eq!(calibrate_frame(&d, &corrupt, None).unwrap(), clean);
    }
}

proptest! {
    #[test]
    fn scale_equivariance(seed in 0u64..1000, power in -3i32..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Image::from_fn(5, 5, 1, |_, _, _| rng.random_range(1.0..5.0));
        let m = Image::from_fn(5, 5, 1, |_, _, _| rng.random_range(1.0..5.0));
        let c = 2f64.powi(power);
        let a = calibrate_frame(&d, &m, None).unwrap();
        let b = calibrate_frame(&d, &m.map(|v| c * v), None).unwrap();
        prop_assert_eq!(b.alpha, c * a.alpha);
        prop_assert_eq!(b.beta, c * a.beta);
    }

    #[test]
    fn lower_median_is_order_independent(mut v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let expected = sorted[(sorted.len() - 1) / 2];
        prop_assert_eq!(lower_median(&mut v), Some(expected));
    }

    #[test]
    fn masked_pixels_are_ignored(seed in 0u64..500) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Image::from_fn(4, 4, 1, |_, _, _| rng.random_range(1.0..5.0));
        let m = Image::from_fn(4, 4, 1, |_, _, _| rng.random_range(1.0..5.0));
        let mask: Vec<bool> = (0..16).map(|i| i % 3 != 0).collect();
        let mut scrambled = m.clone();
        for i in (0..16).filter(|i| i % 3 == 0) {
            scrambled.data_mut()[i] = rng.random_range(100.0..200.0);
        }
        prop_assert_eq!(
            calibrate_frame(&d, &m, Some(&mask)).unwrap(),
            calibrate_frame(&d, &scrambled, Some(&mask)).unwrap()
        );
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let frames = room_frames(2);
    let reference = self_reference(&frames[..1]);
    assert!(align_sequence(&frames, &reference, &Default::default()).is_err());
    let rect = MetricReference::new(vec![Image::filled(4, 6, 1, 1.0)], vec![identity_pose()]).unwrap();
    assert!(align_sequence(&frames[..1], &rect, &Default::default()).is_err());
    assert!(MetricReference::new(vec![Image::filled(4, 4, 1, -1.0)], vec![identity_pose()]).is_err());
}
