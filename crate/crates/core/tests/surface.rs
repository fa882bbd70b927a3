mod common;

use std::sync::Arc;

use common::oracles::brute_force_allocation;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use turnaround::geometry::Vec3;
use turnaround::imageio::RgbImage;
use turnaround::surface::*;
use turnaround::Error;

/// Two textured quads (four triangles) as separate sub-meshes.
fn two_part_mesh() -> TriangleMesh {
    let tex = RgbImage::from_fn(4, 4, |x, y| [x as f32 / 3.0, y as f32 / 3.0, 0.5]);
    TriangleMesh {
        positions: vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(3.0, 0.0, 1.0),
            Vec3::new(3.0, 0.0, 2.0),
            Vec3::new(0.0, 0.0, 2.0),
        ],
        uvs: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        triangles: vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]],
        submeshes: vec![
            SubMesh {
                name: "small".into(),
                material: Some(0),
                triangles: 0..2,
            },
            SubMesh {
                name: "large".into(),
                material: Some(1),
                triangles: 2..4,
            },
        ],
        materials: vec![
            Material {
                name: "tex".into(),
                kd: [1.0, 1.0, 1.0],
                texture: Some(Arc::new(tex)),
                texture_file: Some("tex.png".into()),
            },
            Material {
                name: "flat".into(),
                kd: [0.2, 0.4, 0.6],
                texture: None,
                texture_file: None,
            },
        ],
    }
}

#[test]
fn allocate_examples() {
    assert_eq!(allocate(&[3.0, 1.0], 4000).unwrap(), vec![3000, 1000]);
    assert_eq!(allocate(&[2.5], 17).unwrap(), vec![17]);
    assert_eq!(allocate(&[1.0, 1.0, 1.0], 10).unwrap(), vec![4, 3, 3]);
    assert_eq!(allocate(&[0.0, 2.0, 0.0], 5).unwrap(), vec![0, 5, 0]);
    assert!(matches!(allocate(&[0.0, 0.0], 5), Err(Error::DegenerateMesh(_))));
}

#[test]
fn allocate_matches_brute_force_on_random_areas() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let m = rng.random_range(2..9);
        let areas: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..5.0)).collect();
        let n = rng.random_range(1..5000);
        assert_eq!(allocate(&areas, n).unwrap(), brute_force_allocation(&areas, n), "{areas:?} n={n}");
    }
}

proptest! {
    #[test]
    fn allocate_sums_to_total(areas in prop::collection::vec(0.0f64..10.0, 1..12), n in 0usize..100_000) {
        prop_assume!(areas.iter().sum::<f64>() > 0.0);
        let c = allocate(&areas, n).unwrap();
        prop_assert_eq!(c.iter().sum::<usize>(), n);
        let total: f64 = areas.iter().sum();
        for (ci, a) in c.iter().zip(&areas) {
            prop_assert!((*ci as f64 - n as f64 * a / total).abs() < 1.0 + 1e-9);
        }
    }
}

#[test]
fn pick_point_limits() {
    let (a, b, c) = (Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0), Vec3::new(0.0, 4.0, -1.0));
    for r2 in [0.0, 0.3, 0.99] {
        assert_eq!(pick_point(&a, &b, &c, 0.0, r2), a);
    }
    assert_eq!(pick_point(&a, &b, &c, 1.0, 0.0), b);
}

#[test]
fn pick_point_mean_is_centroid() {
    let (a, b, c) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.5, 1.5, 0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let mut sum = Vec3::zeros();
    for _ in 0..n {
        sum += pick_point(&a, &b, &c, rng.random(), rng.random());
    }
    let mean = sum / n as f64;
    let centroid = (a + b + c) / 3.0;
    let edge = (b - a).norm().min((c - b).norm()).min((a - c).norm());
    assert!((mean - centroid).norm() < 0.01 * edge);
}

#[test]
fn delta_example() {
    assert_eq!(delta_estimate(2.0, 6.0, 64, 128), 4.0 / 192.0);
    assert_eq!(scene_delta(2.0, 64, 128), 4.0 / 192.0);
}

/// Residual of `p` against the plane and barycentric range of triangle `t`.
fn barycentric_residual(mesh: &TriangleMesh, t: usize, p: &Vec3) -> f64 {
    let [a, b, c] = mesh.corners(t);
    let (e1, e2, d) = (b - a, c - a, p - a);
    let n = e1.cross(&e2);
    let plane = d.dot(&n).abs() / n.norm();
    let (d11, d12, d22) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
    let (d1, d2) = (d.dot(&e1), d.dot(&e2));
    let den = d11 * d22 - d12 * d12;
    let v = (d22 * d1 - d12 * d2) / den;
    let w = (d11 * d2 - d12 * d1) / den;
    let u = 1.0 - v - w;
    let outside = [u, v, w].iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max);
    plane.max(outside)
}

#[test]
fn batch_samples_lie_on_their_triangles_with_exact_counts() {
    let mesh = two_part_mesh();
    let sampler = SurfaceSampler::new(Arc::new(mesh.clone()), true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = sampler.batch(1000, 0.02, &mut rng).unwrap();
    assert_eq!(batch.delta, 0.02);
    let expect = allocate(&mesh.submesh_areas(), 1000).unwrap();
    assert_eq!(expect, vec![250, 750]);
    let mut counts = vec![0; 2];
    for s in &batch.samples {
        counts[s.submesh] += 1;
        assert!(mesh.submeshes[s.submesh].triangles.contains(&s.triangle));
        assert!(barycentric_residual(&mesh, s.triangle, &s.point) < 1e-9);
        assert_eq!(s.alpha_target, 1.0);
        assert_eq!(s.view_dir, Vec3::zeros());
        if s.submesh == 1 {
            assert_eq!(s.color, [0.2, 0.4, 0.6]);
        }
    }
    assert_eq!(counts, expect);
}

#[test]
fn batches_are_reproducible() {
    let mesh = two_part_mesh();
    let a = surface_batch(&mesh, 300, 0.1, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = surface_batch(&mesh, 300, 0.1, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn missing_texture_needs_flat_fallback() {
    let mesh = two_part_mesh();
    let err = surface_batch(&mesh, 100, 0.1, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
    assert!(matches!(err, Error::DegenerateMesh(_)));
}

#[test]
fn texture_colors_follow_uv() {
    let mesh = two_part_mesh();
    let tex = mesh.materials[0].texture.as_ref().unwrap();
    // vertex 0 has uv (0, 0): bottom-left texel
    assert_eq!(mesh.color_at(0, 0, [1.0, 0.0, 0.0], false).unwrap(), tex.get(0, 3));
    // vertex 2 has uv (1, 1): top-right texel
    assert_eq!(mesh.color_at(0, 0, [0.0, 0.0, 1.0], false).unwrap(), tex.get(3, 0));
    // centre of the texture: mean of the four middle texels
    let mid = sample_texture(tex, [0.5, 0.5]);
    let expect: Vec<f32> = (0..3)
        .map(|c| (tex.get(1, 1)[c] + tex.get(2, 1)[c] + tex.get(1, 2)[c] + tex.get(2, 2)[c]) / 4.0)
        .collect();
    for c in 0..3 {
        assert!((mid[c] - expect[c]).abs() < 1e-6);
    }
}

#[test]
fn sampling_density_is_area_uniform() {
    // One sub-mesh, two triangles with areas 5 : 1.
    let mesh = TriangleMesh {
        positions: vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(0.0, 2.0, 1.0),
        ],
        uvs: Vec::new(),
        triangles: vec![[0, 1, 2], [3, 4, 5]],
        submeshes: vec![SubMesh {
            name: "all".into(),
            material: None,
            triangles: 0..2,
        }],
        materials: Vec::new(),
    };
    assert!((mesh.area(0) / mesh.area(1) - 5.0).abs() < 1e-12);
    let n = 60_000;
    let batch = surface_batch(&mesh, n, 0.1, true, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    // Each triangle is right-angled at its first corner with one leg along
    // x; the strip x/len < 1 − 1/√2 holds half its area, giving four cells
    // with areas in ratio 2.5 : 2.5 : 0.5 : 0.5.
    let mut hist = [0.0; 4];
    for s in &batch.samples {
        let [a, b, _] = mesh.corners(s.triangle);
        let frac = (s.point - a).x / (b - a).norm();
        hist[2 * s.triangle + (frac >= 1.0 - 0.5f64.sqrt()) as usize] += 1.0;
    }
    let expected = [n as f64 * 5.0 / 12.0, n as f64 * 5.0 / 12.0, n as f64 / 12.0, n as f64 / 12.0];
    let stat: f64 = hist.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p > 0.01, "hist {hist:?} p {p}");
}

#[test]
fn obj_round_trip_with_materials() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = two_part_mesh();
    mesh.materials[0].texture.as_ref().unwrap().save_png(&dir.path().join("tex.png")).unwrap();
    let p = dir.path().join("m.obj");
    save_obj(&mesh, &p).unwrap();
    let back = load_obj(&p).unwrap();
    assert_eq!(back.positions, mesh.positions);
    assert_eq!(back.uvs, mesh.uvs);
    assert_eq!(back.triangles, mesh.triangles);
    assert_eq!(back.submeshes, mesh.submeshes);
    assert_eq!(back.materials.len(), 2);
    assert_eq!(back.materials[1].kd, [0.2, 0.4, 0.6]);
    assert_eq!(
        back.materials[0].texture.as_deref().unwrap().quantized(),
        mesh.materials[0].texture.as_deref().unwrap().quantized()
    );
}

#[test]
fn polygons_are_fan_triangulated() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("quad.obj");
    std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0.5 1.5 0\nf 1 2 3 5 4\n").unwrap();
    let m = load_obj(&p).unwrap();
    assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 4], [0, 4, 3]]);
    assert_eq!(m.submeshes.len(), 1);
    std::fs::write(&p, "v 0 0 0\nf 1 2 3\n").unwrap();
    assert!(matches!(load_obj(&p), Err(Error::Format { .. })));
}
