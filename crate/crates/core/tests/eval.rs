mod common;

use std::sync::Arc;

use turnaround::dataset::Dataset;
use turnaround::datasetgen::{generate_character, render_dataset, Generator, SceneSpec};
use turnaround::eval::*;
use turnaround::field::{Combinator, HeadLogits};
use turnaround::geometry::Intrinsics;
use turnaround::model::Model;
use turnaround::rendering::RenderSettings;

fn settings() -> RenderSettings {
    RenderSettings {
        n_coarse: 4,
        n_fine: 4,
        chunk: 64,
        ..Default::default()
    }
}

fn dataset(dir: &std::path::Path) -> Arc<Dataset> {
    let spec = SceneSpec {
        generator: Generator::Sphere,
        palette_seed: 1,
        resolution: 16,
        n_views: 6,
        texture_size: 16,
        ..Default::default()
    };
    render_dataset(&generate_character(&spec).unwrap(), &spec, dir).unwrap();
    Arc::new(Dataset::load(dir).unwrap())
}

#[test]
fn bins_cover_the_circle_once() {
    for step in [10.0, 45.0, 7.0, 360.0] {
        let bins = azimuth_bins(step).unwrap();
        assert_eq!(bins[0].0, 0.0);
        assert_eq!(bins.last().unwrap().1, 360.0);
        for w in bins.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }
    assert_eq!(azimuth_bins(10.0).unwrap().len(), 36);
    assert!(azimuth_bins(0.0).is_err());
    assert!(azimuth_bins(400.0).is_err());

    let views: Vec<ViewMetric> = [0.0, 9.999, 10.0, 359.9, -5.0, 360.0]
        .iter()
        .enumerate()
        .map(|(i, &az)| ViewMetric {
            view: i,
            azimuth_deg: az,
            psnr: 20.0 + i as f64,
            ssim: 0.5,
        })
        .collect();
    let r = MetricReport::from_views(views, 10.0).unwrap();
    assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 6);
    assert_eq!(r.bins[0].count, 3);
    assert_eq!(r.bins[0].psnr, (20.0 + 21.0 + 25.0) / 3.0);
    assert_eq!(r.bins[35].count, 2);
    assert!(r.bins[5].psnr.is_nan());
}

#[test]
fn sweep_scores_each_view_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(&dir.path().join("data"));
    let (model, store) = common::tiny_model(16);
    let views = [1, 3, 4];
    let r = eval_sweep(&model, &store, &ds, &views, &settings(), 10.0, 0).unwrap();
    assert_eq!(r.views.len(), views.len());
    assert_eq!(r.bins.len(), 36);
    for (v, &i) in r.views.iter().zip(&views) {
        assert_eq!(v.view, i);
        assert!(v.psnr >= 0.0 && (-1.0..=1.0).contains(&v.ssim));
        assert!((v.azimuth_deg - ds.cameras[i].pose.azimuth_deg()).abs() < 1e-12);
    }
    assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), views.len());

    let p = dir.path().join("views.csv");
    r.write_views_csv(&p).unwrap();
    let back = MetricReport::read_views_csv(&p, 10.0).unwrap();
    assert_eq!(back.views, r.views);
    let counts = |m: &MetricReport| m.bins.iter().map(|b| b.count).collect::<Vec<_>>();
    assert_eq!(counts(&back), counts(&r));
    r.write_bins_csv(&dir.path().join("bins.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("bins.csv")).unwrap();
    assert_eq!(text.lines().count(), 37);
    assert!(eval_sweep(&model, &store, &ds, &[], &settings(), 10.0, 0).is_err());
    assert!(eval_sweep(&model, &store, &ds, &[99], &settings(), 10.0, 0).is_err());
}

#[test]
fn attention_trace_decomposes_and_is_periodic() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(&dir.path().join("data"));
    let (model, store) = common::tiny_model(16);
    let views = concept_views(&ds).unwrap();
    let k = Intrinsics::from_fov(8, 8, 40.0, ds.intrinsics.aabb_scale);
    let trace = attention_sweep(&model, &store, &views, &k, 4.0, 0.0, 45.0, &settings(), 3).unwrap();
    assert_eq!(trace.rows.len(), 9);
    assert_eq!(trace.rows[0].azimuth_deg, 0.0);
    assert_eq!(trace.rows[8].azimuth_deg, 360.0);
    for row in &trace.rows {
        assert_eq!(row.heads.len(), 2);
        for h in &row.heads {
            assert!((h.feature + h.view - h.total).abs() < 1e-9, "{h:?}");
        }
        assert!((row.feature() + row.view() - row.total()).abs() < 1e-9);
    }
    let (first, last) = (&trace.rows[0], &trace.rows[8]);
    assert!((first.view() - last.view()).abs() < 1e-6);

    let p = dir.path().join("attention.csv");
    trace.write_csv(&p).unwrap();
    assert_eq!(AttentionTrace::read_csv(&p).unwrap(), trace);
}

#[test]
fn attention_sweep_needs_mha() {
    let (model, store) = Model::build::<f64>(&common::tiny_config(16, Combinator::Avg)).unwrap();
    let views = common::source_views(16);
    let k = Intrinsics::from_fov(8, 8, 40.0, 1.05);
    let err = attention_sweep(&model, &store, &views, &k, 4.0, 0.0, 90.0, &settings(), 0).unwrap_err();
    assert_eq!(err.category(), "unsupported");
}

#[test]
fn attention_csv_rejects_out_of_order_heads() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    std::fs::write(&p, "azimuth_deg,head,feature,view,total\n0,1,0,0,0\n").unwrap();
    assert_eq!(AttentionTrace::read_csv(&p).unwrap_err().category(), "format");
    let ok = AttentionTrace {
        rows: vec![AttentionRow {
            azimuth_deg: 12.5,
            heads: vec![HeadLogits {
                feature: 0.1 + 0.2,
                view: -1e-300,
                total: 0.1 + 0.2 - 1e-300,
            }],
        }],
    };
    ok.write_csv(&p).unwrap();
    assert_eq!(AttentionTrace::read_csv(&p).unwrap(), ok);
}

#[test]
fn reference_curve_and_correlation() {
    assert!((source_alignment_curve(0.0) - 0.0).abs() < 1e-12);
    assert!((source_alignment_curve(90.0) - 1.0).abs() < 1e-12);
    assert!((source_alignment_curve(45.0) - 0.5 * 2f64.sqrt()).abs() < 1e-12);
    let xs: Vec<f64> = (0..37).map(|k| k as f64 * 10.0).collect();
    let a: Vec<f64> = xs.iter().map(|&x| source_alignment_curve(x)).collect();
    let b: Vec<f64> = a.iter().map(|v| 3.0 - 2.0 * v).collect();
    assert!((pearson(&a, &a) - 1.0).abs() < 1e-12);
    assert!((pearson(&a, &b) + 1.0).abs() < 1e-12);
}
