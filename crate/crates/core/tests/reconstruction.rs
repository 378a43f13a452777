use nalgebra::{Matrix3, Rotation3, Vector3};
use pano4d::erp::{ErpDims, ErpVideo, ViewRig};
use pano4d::gaussian::{
    l1_loss, lift_posed, optimize_frame, rasterize, reconstruct_4d, semantic_loss, training_views, Gaussian3D,
    LossModules, PatchMeanFeatures, ReconLossConfig, ReconstructConfig, TrainingView,
};
use pano4d::synthetic::SphereRoom;
use pano4d::{psnr, SceneCamera};

fn front_camera(size: usize) -> SceneCamera {
    SceneCamera::new(Matrix3::identity(), Vector3::zeros(), 90f64.to_radians(), size, size).unwrap()
}

/// `rows × cols` Gaussians on the room wall, spread evenly over the view.
fn wall_gaussians(room: &SphereRoom, cam: &SceneCamera, rows: usize, cols: usize) -> Vec<Gaussian3D> {
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let r = (i * cam.height() + cam.height() / 2) / rows;
            let c = (j * cam.width() + cam.width() / 2) / cols;
            let d = cam.pixel_ray(r, c);
            let t = room.ray_distance(cam.center(), &d);
            let spacing = t * cam.width() as f64 / cols as f64 / cam.focal();
            let p = cam.center() + d * t;
            out.push(Gaussian3D::isotropic(p, 0.6 * spacing, 0.5, Vector3::repeat(0.5)));
        }
    }
    out
}

fn single_view(room: &SphereRoom, size: usize) -> TrainingView {
    let camera = front_camera(size);
    let (target, depth) = room.render(&camera);
    TrainingView {
        camera,
        target,
        reference_depth: Some(depth),
    }
}

#[test]
fn zero_iterations_return_the_initialization() {
    let room = SphereRoom::default();
    let view = single_view(&room, 16);
    let init = wall_gaussians(&room, &view.camera, 4, 4);
    let fit = optimize_frame(&init, &[view], &ReconLossConfig::scaled(0), &LossModules::default()).unwrap();
    assert_eq!(fit.gaussians, init);
    assert!(fit.trace.is_empty());
}

#[test]
fn single_view_overfit_reaches_low_l1_with_a_monotone_trace() {
    let room = SphereRoom::default();
    let view = single_view(&room, 64);
    let init = wall_gaussians(&room, &view.camera, 20, 25);
    assert_eq!(init.len(), 500);
    let cfg = ReconLossConfig {
        lambda_sem: 0.0,
        ..ReconLossConfig::scaled(2000)
    };
    let fit = optimize_frame(&init, std::slice::from_ref(&view), &cfg, &LossModules::default()).unwrap();
    let l1 = l1_loss(&rasterize(&fit.gaussians, &view.camera).color, &view.target);
    assert!(l1 < 0.05, "final L1 {l1}");
    for w in fit.trace.windows(2) {
        assert!(w[1].total <= w[0].total, "{:?} -> {:?}", w[0], w[1]);
    }
    assert!(fit.trace.last().unwrap().total < fit.trace[0].total);
}

#[test]
fn semantic_term_is_confined_to_its_window() {
    let room = SphereRoom::default();
    let view = single_view(&room, 24);
    let init = wall_gaussians(&room, &view.camera, 6, 6);
    let cfg = ReconLossConfig {
        semantic_window: [10, 20],
        ..ReconLossConfig::scaled(30)
    };
    let fit = optimize_frame(&init, &[view], &cfg, &LossModules::default()).unwrap();
    for r in &fit.trace {
        assert_eq!(r.sem > 0.0, (10..20).contains(&r.iteration), "{r:?}");
    }
}

#[test]
fn optimization_is_deterministic() {
    let room = SphereRoom::default();
    let view = single_view(&room, 24);
    let init = wall_gaussians(&room, &view.camera, 6, 6);
    let cfg = ReconLossConfig {
        semantic_window: [5, 25],
        ..ReconLossConfig::scaled(40)
    };
    let views = [view];
    let a = optimize_frame(&init, &views, &cfg, &LossModules::default()).unwrap();
    let b = optimize_frame(&init, &views, &cfg, &LossModules::default()).unwrap();
    assert_eq!(a.gaussians, b.gaussians);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn semantic_loss_shrinks_with_the_perturbation() {
    let room = SphereRoom::default();
    let cam = front_camera(48);
    let (base, _) = room.render(&cam);
    let fx = PatchMeanFeatures::default();
    let axis = Vector3::new(0.3, 1.0, -0.2).normalize();
    let dir = Vector3::new(1.0, -0.5, 0.4).normalize();
    let mut last = f64::INFINITY;
    for deg in [16.0, 8.0, 4.0, 2.0, 1.0, 0.5] {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), f64::to_radians(deg)).into_inner();
        let (moved, _) = room.render(&cam.perturbed(&rot, &(dir * 0.005 * deg)));
        let l = semantic_loss(&base, &moved, &fx);
        assert!(l < last, "{deg}°: {l} !< {last}");
        last = l;
    }
    assert_eq!(semantic_loss(&base, &base, &fx), 0.0);
}

struct Scene {
    video: ErpVideo,
    depths: Vec<pano4d::erp::ErpFrame>,
    poses: Vec<SceneCamera>,
}

fn translated_scene(frames: usize, step: Vector3<f64>) -> Scene {
    let room = SphereRoom::default();
    let dims = ErpDims::new(32).unwrap();
    let mut rgb = Vec::new();
    let mut depths = Vec::new();
    let mut poses = Vec::new();
    for t in 0..frames {
        let origin = step * t as f64;
        let (c, d) = room.panorama(dims, &origin, &Matrix3::identity());
        rgb.push(c);
        depths.push(d);
        poses.push(SceneCamera::new(Matrix3::identity(), origin, 1.0, 1, 1).unwrap());
    }
    Scene {
        video: ErpVideo::new(rgb).unwrap(),
        depths,
        poses,
    }
}

fn small_config(iterations: usize) -> ReconstructConfig {
    ReconstructConfig {
        loss: ReconLossConfig::scaled(iterations),
        rig: ViewRig::four_view(32).unwrap(),
        lift_stride: 1,
    }
}

#[test]
fn single_frame_reconstruction_is_optimize_frame() {
    let s = translated_scene(1, Vector3::zeros());
    let cfg = small_config(20);
    let rec = reconstruct_4d(&s.video, &s.depths, &s.poses, &cfg, &LossModules::default()).unwrap();
    let rgb = &s.video.frames()[0];
    let init = lift_posed(rgb, &s.depths[0], 1, s.poses[0].rotation(), s.poses[0].center()).unwrap();
    let views = training_views(rgb, &s.depths[0], &s.poses[0], &cfg.rig).unwrap();
    let fit = optimize_frame(&init, &views, &cfg.loss, &LossModules::default()).unwrap();
    assert_eq!(rec.frames.frame(0), &fit.gaussians[..]);
    assert_eq!(rec.traces[0], fit.trace);
}

#[test]
fn static_scene_frames_render_alike() {
    let s = translated_scene(1, Vector3::zeros());
    let video = ErpVideo::new(vec![s.video.frames()[0].clone(); 2]).unwrap();
    let depths = vec![s.depths[0].clone(); 2];
    let poses = vec![s.poses[0]; 2];
    let rec = reconstruct_4d(&video, &depths, &poses, &small_config(60), &LossModules::default()).unwrap();
    let test = SceneCamera::new(
        Rotation3::from_euler_angles(0.1, 0.4, 0.0).into_inner(),
        Vector3::new(0.05, 0.0, 0.02),
        1.2,
        32,
        32,
    )
    .unwrap();
    let a = rasterize(rec.frames.frame(0), &test);
    let b = rasterize(rec.frames.frame(1), &test);
    let diff = l1_loss(&a.color, &b.color);
    assert!(diff < 0.02, "frame-to-frame L1 {diff}");
}

#[test]
fn moving_poses_reproduce_their_own_targets() {
    let s = translated_scene(2, Vector3::new(0.4, 0.0, -0.3));
    let cfg = small_config(60);
    let rec = reconstruct_4d(&s.video, &s.depths, &s.poses, &cfg, &LossModules::default()).unwrap();
    for t in 0..2 {
        let views = training_views(&s.video.frames()[t], &s.depths[t], &s.poses[t], &cfg.rig).unwrap();
        for v in &views {
            let p = psnr(&rasterize(rec.frames.frame(t), &v.camera).color, &v.target).unwrap();
            assert!(p >= 25.0, "frame {t}: {p:.2} dB");
        }
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let s = translated_scene(2, Vector3::new(0.1, 0.0, 0.0));
    assert!(reconstruct_4d(&s.video, &s.depths[..1], &s.poses, &small_config(1), &LossModules::default()).is_err());
    let view = single_view(&SphereRoom::default(), 8);
    assert!(optimize_frame(&[], &[], &ReconLossConfig::scaled(1), &LossModules::default()).is_err());
    let bad = ReconLossConfig {
        semantic_window: [0, 5],
        ..ReconLossConfig::scaled(2)
    };
    assert!(optimize_frame(&[], &[view], &bad, &LossModules::default()).is_err());
}
