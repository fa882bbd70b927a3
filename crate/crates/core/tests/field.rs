mod common;

use common::oracles::{affine, rand_dirs};
use diffcore::gradcheck::check_inputs;
use diffcore::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turnaround::field::*;
use turnaround::geometry::Vec3;
use turnaround::Error;

fn field(cfg: &FieldConfig, feature_dim: usize, seed: u64) -> (Field, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let f = Field::new(&mut store, "f", cfg, feature_dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (f, store)
}

fn small_cfg() -> FieldConfig {
    FieldConfig {
        width: 12,
        heads: 3,
        n_freq: 3,
        ..Default::default()
    }
}

fn set(store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>) {
    let id = store.id(name).unwrap();
    store.set_value(id, t).unwrap();
}

fn get(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    (**store.value(store.id(name).unwrap())).clone()
}

#[test]
fn pos_encode_zero_input() {
    let e = pos_encode([0.0; 3], 6);
    assert_eq!(e.len(), 36);
    for f in 0..6 {
        assert!(e[f * 6..f * 6 + 3].iter().all(|&s| s == 0.0));
        assert!(e[f * 6 + 3..f * 6 + 6].iter().all(|&c| c == 1.0));
    }
}

#[test]
fn pos_encode_quarter_period() {
    let e = pos_encode([0.5, 0.0, 0.0], 1);
    assert!((e[0] - 1.0).abs() < 1e-15);
    assert!(e[3].abs() < 1e-15);
}

#[test]
fn pos_encode_dimension() {
    for nu in 1..=10 {
        assert_eq!(pos_encode([0.1, -0.2, 0.3], nu).len(), 3 * nu * 2);
    }
}

proptest! {
    #[test]
    fn pos_encode_lowest_frequency_has_period_two(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let a = pos_encode([x, y, z], 4);
        let b = pos_encode([x + 2.0, y + 2.0, z + 2.0], 4);
        for k in 0..6 {
            prop_assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }
}

fn f1_out(f: &Field, store: &ParamStore<f64>, feats: &Tensor<f64>, pts: &[Vec3], dirs: &[Vec3]) -> Tensor<f64> {
    let tape = Tape::no_grad();
    let sd = [Vec3::x(), Vec3::y(), -Vec3::x()];
    let input = FieldInput {
        points: pts,
        dirs,
        source_dirs: &sd,
        aabb_scale: 1.0,
    };
    (*f.f1_forward(&tape, store, tape.constant(feats.clone()), &input).unwrap().value()).clone()
}

#[test]
fn f1_shape_and_bias_driven_determinism() {
    let (f, store) = field(&FieldConfig::default(), 10, 1);
    let z = Tensor::zeros([2, 3, 10]);
    let pts = [Vec3::zeros(); 2];
    let dirs = [Vec3::zeros(); 2];
    let a = f1_out(&f, &store, &z, &pts, &dirs);
    assert_eq!(a.shape(), &[2, 3, 256]);
    assert!(a.all_finite());
    assert_eq!(a, f1_out(&f, &store, &z, &pts, &dirs));
}

#[test]
fn f1_gradient_wrt_features() {
    let (f, store) = field(&small_cfg(), 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let feats = Tensor::from_fn([4, 3, 5], |_| rng.random_range(-1.0..1.0));
    let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(0.1 * i as f64, -0.2, 0.3)).collect();
    let dirs = rand_dirs(&mut rng, 4);
    let sd = [Vec3::x(), Vec3::y(), -Vec3::x()];
    let w = Tensor::from_fn([4, 3, 12], |i| ((i * 7) % 5) as f64 - 2.0);
    let report = check_inputs(&[feats], 1e-5, |tape, v| {
        let input = FieldInput {
            points: &pts,
            dirs: &dirs,
            source_dirs: &sd,
            aabb_scale: 1.0,
        };
        let out = f.f1_forward(tape, &store, v[0], &input).expect("f1");
        Ok(out.mul(tape.constant(w.clone()))?.sum())
    })
    .unwrap();
    assert!(report.max_rel_err() < 1e-4, "{report:?}");
}

fn combine(f: &Field, store: &ParamStore<f64>, v: &Tensor<f64>, q: &[Vec3], s: &[Vec3]) -> Tensor<f64> {
    let tape = Tape::no_grad();
    (*f.combine(&tape, store, tape.constant(v.clone()), q, s).unwrap().value()).clone()
}

#[test]
fn identical_rows_with_zero_view_scale_return_value_projection() {
    let cfg = small_cfg();
    let (f, mut store) = field(&cfg, 4, 4);
    set(&mut store, "f.attn.view_scale", Tensor::zeros([1]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let row: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = Tensor::from_fn([1, 3, 12], |i| row[i % 12]);
    let got = combine(&f, &store, &v, &rand_dirs(&mut rng, 1), &rand_dirs(&mut rng, 3));

    let vw = 12 / cfg.heads;
    let mut cat = Vec::new();
    for h in 0..cfg.heads {
        cat.extend(affine(&row[h * vw..(h + 1) * vw], &get(&store, &format!("f.attn.v{h}")), None));
    }
    let expect = affine(&cat, &get(&store, "f.attn.out.w"), Some(&get(&store, "f.attn.out.b")));
    for (a, b) in got.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn combine_is_permutation_invariant() {
    let (f, store) = field(&small_cfg(), 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let v = Tensor::from_fn([3, 3, 12], |_| rng.random_range(-2.0..2.0));
        let q = rand_dirs(&mut rng, 3);
        let s = rand_dirs(&mut rng, 3);
        let base = combine(&f, &store, &v, &q, &s);
        for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let vp = Tensor::from_fn([3, 3, 12], |i| {
                let (p, r, c) = (i / 36, (i / 12) % 3, i % 12);
                v.at(&[p, perm[r], c])
            });
            let sp: Vec<Vec3> = perm.iter().map(|&k| s[k]).collect();
            let got = combine(&f, &store, &vp, &q, &sp);
            assert!(got.max_abs_diff(&base) < 1e-9);
        }
    }
}

#[test]
fn matching_key_dominates_with_saturated_logits() {
    let cfg = FieldConfig {
        width: 8,
        heads: 1,
        n_freq: 2,
        ..Default::default()
    };
    let (f, mut store) = field(&cfg, 4, 8);
    let c = 4.0;
    // Every query projects onto e0; keys are c·e_j; so only key 0 matches.
    set(&mut store, "f.attn.q0", Tensor::from_fn([8, 8], |i| if i % 8 == 0 && i / 8 < 3 { c } else { 0.0 }));
    set(&mut store, "f.attn.k0", Tensor::from_fn([8, 8], |i| if i / 8 == i % 8 { c } else { 0.0 }));
    set(&mut store, "f.attn.v0", Tensor::from_fn([8, 8], |i| (i / 8 == i % 8) as u8 as f64));
    set(&mut store, "f.attn.out.w", Tensor::from_fn([8, 8], |i| (i / 8 == i % 8) as u8 as f64));
    set(&mut store, "f.attn.out.b", Tensor::zeros([8]));
    set(&mut store, "f.attn.view_scale", Tensor::zeros([1]));
    let norm = 100.0;
    let v = Tensor::from_fn([1, 3, 8], |i| if i / 8 == i % 8 { norm } else { 0.0 });
    let out = combine(&f, &store, &v, &[Vec3::x()], &[Vec3::x(), Vec3::y(), Vec3::z()]);
    let weight = out.data()[0] / norm;
    let a = c * c / (cfg.head_dim() as f64).sqrt();
    let analytic = a.exp() / (a.exp() + 2.0);
    assert!((weight - analytic).abs() < 1e-12, "{weight} vs {analytic}");
    assert!(weight > 0.9);
}

#[test]
fn combine_requires_three_rows() {
    let (f, store) = field(&small_cfg(), 4, 9);
    let tape = Tape::no_grad();
    let v = tape.constant(Tensor::zeros([1, 2, 12]));
    let err = f.combine(&tape, &store, v, &[Vec3::x()], &[Vec3::x(), Vec3::y(), Vec3::z()]);
    assert!(matches!(err, Err(Error::Arity { expected: 3, got: 2 })));
    let v = tape.constant(Tensor::zeros([1, 3, 12]));
    let err = f.combine(&tape, &store, v, &[Vec3::x()], &[Vec3::x(), Vec3::y()]);
    assert!(matches!(err, Err(Error::Arity { .. })));
}

#[test]
fn logit_decomposition_matches_direct_evaluation() {
    let cfg = small_cfg();
    let (f, mut store) = field(&cfg, 4, 10);
    set(&mut store, "f.attn.view_scale", Tensor::full([1], 1.7));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = Tensor::from_fn([2, 3, 12], |_| rng.random_range(-1.0..1.0));
    let q = rand_dirs(&mut rng, 2);
    let s = rand_dirs(&mut rng, 3);
    let tape = Tape::no_grad();
    let (_, trace) = f.combine_traced(&tape, &store, tape.constant(v.clone()), &q, &s, true).unwrap();
    let trace = trace.unwrap();
    let dh = cfg.head_dim() as f64;
    for p in 0..2 {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| {
                let x: Vec<f64> = (0..12).map(|c| v.at(&[p, r, c])).collect();
                let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                x.iter().map(|a| a / n).collect()
            })
            .collect();
        for h in 0..cfg.heads {
            let t = trace[p][h];
            assert_eq!(t.feature + t.view, t.total);
            let (start, len) = cfg.head_feature_range(h);
            let (aq, ak) = (get(&store, &format!("f.attn.q{h}")), get(&store, &format!("f.attn.k{h}")));
            let mut feat = 0.0;
            let mut view = 0.0;
            for i in 0..3 {
                let qi = affine(&rows[i][start..start + len], &aq, None);
                for j in 0..3 {
                    let kj = affine(&rows[j][start..start + len], &ak, None);
                    feat += qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>();
                    if h + 1 == cfg.heads {
                        view += 1.7 * 1.7 * q[p].dot(&s[j]);
                    }
                }
            }
            assert!((t.feature - feat / 9.0 / dh.sqrt()).abs() < 1e-12);
            assert!((t.view - view / 9.0 / dh.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn avg_combinator_means_rows_and_refuses_traces() {
    let cfg = FieldConfig {
        combinator: Combinator::Avg,
        ..small_cfg()
    };
    let (f, store) = field(&cfg, 4, 12);
    let v = Tensor::from_fn([1, 3, 12], |i| i as f64);
    let out = combine(&f, &store, &v, &[Vec3::x()], &[Vec3::x(), Vec3::y(), Vec3::z()]);
    for c in 0..12 {
        assert!((out.data()[c] - (c as f64 + 12.0)).abs() < 1e-12);
    }
    let tape = Tape::no_grad();
    let r = f.combine_traced(&tape, &store, tape.constant(v), &[Vec3::x()], &[Vec3::x(), Vec3::y(), Vec3::z()], true);
    assert!(matches!(r, Err(Error::Unsupported(_))));
    assert_eq!("avg".parse::<Combinator>().unwrap(), Combinator::Avg);
    assert!("max".parse::<Combinator>().is_err());
}

#[test]
fn f2_output_ranges_and_view_independent_density() {
    let (f, store) = field(&small_cfg(), 4, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let vm = Tensor::from_fn([20, 12], |_| rng.random_range(-5.0..5.0));
    let run = |dirs: &[Vec3]| {
        let tape = Tape::no_grad();
        let out = f.f2_forward(&tape, &store, tape.constant(vm.clone()), dirs).unwrap();
        ((*out.sigma.value()).clone(), (*out.rgb.value()).clone())
    };
    let (s1, c1) = run(&rand_dirs(&mut rng, 20));
    let (s2, c2) = run(&rand_dirs(&mut rng, 20));
    assert!(s1.data().iter().all(|&s| s >= 0.0));
    assert!(c1.data().iter().all(|&c| c > 0.0 && c < 1.0));
    assert_eq!(s1, s2);
    assert_ne!(c1, c2);
}

#[test]
fn field_config_validation() {
    assert!(FieldConfig::default().validate().is_ok());
    assert_eq!(FieldConfig::default().head_dim(), 65);
    let bad = FieldConfig {
        width: 10,
        heads: 4,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn pixel_to_encoder_weight_gradient() {
    let err = common::oracles::pixel_to_encoder_rel_err(6);
    assert!(err < 1e-3, "rel err {err:.3e}");
}
