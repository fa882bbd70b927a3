use std::path::Path;

use proptest::prelude::*;
use turnaround::config::RunConfig;
use turnaround::field::Combinator;

#[test]
fn text_round_trip_is_exact() {
    let mut c = RunConfig::default();
    c.set("iterations", "5000").unwrap();
    c.set("lambda_surface", "0.25").unwrap();
    c.set("render.n_coarse", "32").unwrap();
    c.set("render.background", "0, 0.5, 1").unwrap();
    c.set("model.field.width", "128").unwrap();
    c.set("model.field.combinator", "avg").unwrap();
    c.set("flat_fallback", "false").unwrap();
    assert_eq!(c.train.iterations, 5000);
    assert_eq!(c.train.render.background, [0.0, 0.5, 1.0]);
    assert_eq!(c.model.field.width, 128);
    assert_eq!(c.model.field.combinator, Combinator::Avg);
    assert!(!c.train.flat_fallback);

    let back = RunConfig::from_text(&c.to_text(), Path::new("c.txt")).unwrap();
    assert_eq!(back, c);
}

#[test]
fn comments_and_errors() {
    let text = "# desk run\n\niterations = 10\n  lr = 0.001  \n";
    let c = RunConfig::from_text(text, Path::new("a.txt")).unwrap();
    assert_eq!((c.train.iterations, c.train.lr), (10, 1e-3));

    let e = RunConfig::from_text("iterations 10\n", Path::new("b.txt")).unwrap_err();
    assert_eq!(e.category(), "format");
    assert!(e.to_string().contains("line 1"));
    let e = RunConfig::from_text("x = 1\nnot_a_key = 3\n", Path::new("b.txt")).unwrap_err();
    assert_eq!(e.category(), "format");

    let mut c = RunConfig::default();
    assert_eq!(c.set("iterations", "-3").unwrap_err().category(), "config");
    assert_eq!(c.set("render", "1").unwrap_err().category(), "config");
    assert_eq!(c.set("model.field.combinator", "max").unwrap_err().category(), "config");
    assert_eq!(c, RunConfig::default(), "failed sets leave the config untouched");
}

#[test]
fn every_entry_can_be_set_to_itself() {
    let c = RunConfig::default();
    let mut d = RunConfig::default();
    for (k, v) in c.entries() {
        d.set(&k, &v).unwrap();
    }
    assert_eq!(c, d);
    c.validate().unwrap();
}

proptest! {
    #[test]
    fn float_keys_round_trip(lr in 0.0f64..1.0, lam in 0.0f64..10.0, scale in 1e-3f64..10.0) {
        let mut c = RunConfig::default();
        c.set("lr", &lr.to_string()).unwrap();
        c.set("lambda_recon", &lam.to_string()).unwrap();
        c.set("scale", &scale.to_string()).unwrap();
        let back = RunConfig::from_text(&c.to_text(), Path::new("p.txt")).unwrap();
        prop_assert_eq!(back.train.lr.to_bits(), lr.to_bits());
        prop_assert_eq!(back.train.lambda_recon.to_bits(), lam.to_bits());
        prop_assert_eq!(back.train.scale.to_bits(), scale.to_bits());
    }
}
