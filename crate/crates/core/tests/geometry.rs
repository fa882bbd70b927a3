use nalgebra::Matrix4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turnaround::geometry::*;
use turnaround::Error;

fn identity_camera() -> Camera {
    let k = Intrinsics {
        focal_px: 20.0,
        cx: 32.0,
        cy: 24.0,
        width: 64,
        height: 48,
        distortion: 0.0,
        aabb_scale: 1.0,
    };
    Camera::new(k, Pose::new(Matrix4::identity()).unwrap()).unwrap()
}

fn orbit_camera(az: f64, el: f64) -> Camera {
    Camera::new(Intrinsics::from_fov(64, 64, 40.0, 1.1), orbit_pose(az, el, 4.0)).unwrap()
}

#[test]
fn centre_pixel_looks_along_optical_axis() {
    let cam = identity_camera();
    let r = cam.pixel_to_ray(31.5, 23.5).unwrap();
    assert!((r.direction - Vec3::z()).norm() < 1e-12);
    assert_eq!(r.origin, Vec3::zeros());
}

#[test]
fn focal_offset_pixel_is_at_45_degrees() {
    let cam = identity_camera();
    let r = cam.pixel_to_ray(31.5 + 20.0, 23.5).unwrap();
    let angle = r.direction.dot(&Vec3::z()).acos().to_degrees();
    assert!((angle - 45.0).abs() < 1e-9);
    assert!(r.direction.y.abs() < 1e-12 && r.direction.x > 0.0);
}

#[test]
fn pixel_out_of_bounds_is_rejected() {
    let cam = identity_camera();
    for (u, v) in [(-0.1, 0.0), (64.0, 0.0), (0.0, 48.0), (f64::NAN, 1.0)] {
        assert!(matches!(cam.pixel_to_ray(u, v), Err(Error::PixelBounds { .. })));
    }
}

#[test]
fn on_axis_and_far_points_project_to_principal_point() {
    let cam = orbit_camera(30.0, 20.0);
    let o = cam.pose.origin();
    let f = cam.pose.forward();
    let (u, v, d) = cam.project_point(&(o + f)).unwrap();
    assert!((u - 32.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9 && (d - 1.0).abs() < 1e-12);
    let (u, v, _) = cam.project_point(&(o + f * 1e12)).unwrap();
    assert!((u - 32.0).abs() < 1e-6 && (v - 32.0).abs() < 1e-6);
}

#[test]
fn points_behind_camera_are_rejected() {
    let cam = orbit_camera(0.0, 0.0);
    let behind = cam.pose.origin() - cam.pose.forward();
    assert!(matches!(cam.project_point(&behind), Err(Error::BehindCamera(_))));
}

#[test]
fn project_then_unproject_recovers_random_points() {
    let cam = orbit_camera(217.0, 35.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut n = 0;
    while n < 10 {
        let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (u, v, depth) = cam.project_point(&x).unwrap();
        if !(u >= 0.5 && u < 63.5 && v >= 0.5 && v < 63.5) {
            continue;
        }
        let r = cam.pixel_to_ray(u - 0.5, v - 0.5).unwrap();
        // march to the same camera-space depth along the ray
        let t = depth / r.direction.dot(&cam.pose.forward());
        assert!((r.at(t) - x).norm() < 1e-5);
        n += 1;
    }
}

#[test]
fn distortion_must_be_zero() {
    let mut k = Intrinsics::from_fov(32, 32, 40.0, 1.0);
    k.distortion = 0.1;
    assert!(matches!(k.validate(), Err(Error::Unsupported(_))));
    let mut k = Intrinsics::from_fov(32, 32, 40.0, 1.0);
    k.cx = 32.0;
    assert!(k.validate().is_err());
}

#[test]
fn pose_validation_rejects_bad_matrices() {
    let mut m = Matrix4::identity();
    m[(0, 0)] = 1.01;
    assert!(Pose::new(m).is_err());
    let mut m = Matrix4::identity();
    m[(3, 0)] = 0.5;
    assert!(Pose::new(m).is_err());
}

#[test]
fn fibonacci_points_lie_on_upper_hemisphere() {
    let poses = fibonacci_hemisphere(300, 3.5);
    assert_eq!(poses.len(), 300);
    for p in &poses {
        let o = p.origin();
        assert!((o.norm() - 3.5).abs() < 1e-6);
        assert!(o.z >= 0.0);
        // looks at the origin
        assert!((p.forward() + o.normalize()).norm() < 1e-9);
    }
    assert_eq!(poses, fibonacci_hemisphere(300, 3.5));
}

#[test]
fn fibonacci_spacing_against_uniform_density() {
    let (n, radius) = (300, 1.0);
    // Hemisphere area by rejection sampling: uniform points in the unit
    // ball, projected to the sphere, fraction with z >= 0.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut inside, mut upper) = (0usize, 0usize);
    while inside < 200_000 {
        let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r = p.norm();
        if r > 1.0 || r == 0.0 {
            continue;
        }
        inside += 1;
        upper += (p.z >= 0.0) as usize;
    }
    let area = 4.0 * std::f64::consts::PI * radius * radius * upper as f64 / inside as f64;
    let spacing = (area / n as f64).sqrt();

    let origins: Vec<Vec3> = fibonacci_hemisphere(n, radius).iter().map(Pose::origin).collect();
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            min = min.min(great_circle(&origins[i], &origins[j], radius));
        }
    }
    assert!(min >= 0.6 * spacing, "min {min} vs spacing {spacing}");
}

#[test]
fn look_at_pole_falls_back_to_x_up() {
    let p = Pose::look_at(Vec3::new(0.0, 0.0, 4.0), Vec3::zeros()).unwrap();
    let r = p.rotation();
    assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-12);
    assert!((p.forward() + Vec3::z()).norm() < 1e-12);
}

#[test]
fn clip_to_aabb_bounds_the_ray() {
    let cam = orbit_camera(10.0, 5.0);
    let r = cam.pixel_to_ray(31.0, 31.0).unwrap().clip_to_aabb(1.0).unwrap();
    assert!(r.t_near > 0.0 && r.t_near < r.t_far);
    for t in [r.t_near, r.t_far] {
        assert!(r.at(t).amax() <= 1.0 + 1e-9);
    }
    let miss = cam.pixel_to_ray(0.0, 0.0).unwrap().clip_to_aabb(0.05);
    assert!(miss.is_none());
}

#[test]
fn scaled_intrinsics_keep_pixel_centres_aligned() {
    let k = Intrinsics::from_fov(32, 32, 40.0, 1.0);
    let pose = orbit_pose(60.0, 10.0, 4.0);
    let a = Camera::new(k.clone(), pose.clone()).unwrap();
    let b = Camera::new(k.scaled(2.0), pose).unwrap();
    assert_eq!(b.width(), 64);
    let d1 = a.direction_through(10.0, 7.0);
    let d2 = b.direction_through(20.0, 14.0);
    assert!((d1 - d2).norm() < 1e-12);
}

#[test]
fn orbit_azimuth_round_trips() {
    for az in [0.0, 45.0, 90.0, 180.0, 271.5] {
        assert!((orbit_pose(az, 0.0, 4.0).azimuth_deg() - az).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn composed_rotations_stay_orthonormal(a1 in 0.0f64..360.0, e1 in -80.0f64..80.0, a2 in 0.0f64..360.0, e2 in -80.0f64..80.0) {
        let mut p = orbit_pose(a1, e1, 2.0);
        for _ in 0..5 {
            p = p.compose(&orbit_pose(a2, e2, 1.0)).unwrap();
        }
        let r = p.rotation();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-6);
    }

    #[test]
    fn ray_directions_are_unit(u in 0.0f64..64.0, v in 0.0f64..64.0, az in 0.0f64..360.0) {
        let r = orbit_camera(az, 15.0).pixel_to_ray(u, v).unwrap();
        prop_assert!((r.direction.norm() - 1.0).abs() < 1e-12);
        prop_assert!(r.t_near > 0.0 && r.t_near < r.t_far);
    }
}
