use proptest::prelude::*;
use udit_core::datasets::{from_tensor, render_sample, to_tensor, BiasedDatasetConfig, CellCount, RgbImage};
use udit_core::Domain;

#[test]
fn biased_preset_has_the_expected_cells() {
    let cfg = BiasedDatasetConfig::biased_shapes(1330, 70, 64, 1);
    cfg.validate().unwrap();
    let a = cfg.manifest(Domain::A);
    assert_eq!(a.total(), 1400);
    assert_eq!(a.marginal("shape", "circle"), 1330);
    assert_eq!(a.marginal("shape", "square"), 70);
    assert_eq!(a.marginal("fill", "flat-blue"), 1400);
    let b = cfg.manifest(Domain::B);
    assert_eq!(b.marginal("shape", "square"), 1330);
    assert_eq!(b.marginal("shape", "circle"), 70);
    assert_eq!(b.marginal("fill", "striped-red"), 1400);
    assert_eq!(a.expand().len(), 1400);
}

#[test]
fn degenerate_configs_are_rejected() {
    let mut cfg = BiasedDatasetConfig::biased_shapes(0, 0, 64, 1);
    assert!(cfg.validate().is_err());
    cfg = BiasedDatasetConfig::biased_shapes(10, 1, 96, 1);
    assert!(cfg.validate().is_err());
    let mut balanced_but_flagged = BiasedDatasetConfig::balanced_shapes(5, 64, 1);
    balanced_but_flagged.biased = true;
    assert!(balanced_but_flagged.validate().is_err());
    BiasedDatasetConfig::balanced_shapes(5, 64, 1).validate().unwrap();
    let mut bad_value = BiasedDatasetConfig::biased_shapes(10, 1, 64, 1);
    bad_value.domain_a[0].labels.insert("shape".into(), "hexagon".into());
    assert!(bad_value.validate().is_err());
    let mut missing = BiasedDatasetConfig::biased_shapes(10, 1, 64, 1);
    missing.domain_b.push(CellCount { labels: Default::default(), count: 1 });
    assert!(missing.validate().is_err());
}

#[test]
fn rendering_is_pure_in_its_key() {
    let cfg = BiasedDatasetConfig::biased_shapes(3, 1, 64, 9);
    let labels = cfg.manifest(Domain::A).expand()[0].clone();
    let a = render_sample(&cfg.render, &labels, 64, 9, Domain::A, 2).unwrap();
    assert_eq!(a, render_sample(&cfg.render, &labels, 64, 9, Domain::A, 2).unwrap());
    assert_ne!(a, render_sample(&cfg.render, &labels, 64, 9, Domain::A, 3).unwrap());
    assert_ne!(a, render_sample(&cfg.render, &labels, 64, 10, Domain::A, 2).unwrap());
    assert_eq!(a.pixels.len(), 64 * 64 * 3);
}

#[test]
fn striped_and_flat_fills_differ_in_colour_content() {
    let cfg = BiasedDatasetConfig::biased_shapes(3, 1, 64, 0);
    let flat = render_sample(&cfg.render, cfg.manifest(Domain::A).expand()[0], 64, 0, Domain::A, 0).unwrap();
    let striped = render_sample(&cfg.render, cfg.manifest(Domain::B).expand()[0], 64, 0, Domain::B, 0).unwrap();
    let mean = |img: &RgbImage, c: usize| img.pixels.iter().skip(c).step_by(3).map(|&v| v as f64).sum::<f64>();
    assert!(mean(&flat, 2) > mean(&flat, 0));
    assert!(mean(&striped, 0) > mean(&striped, 2));
}

proptest! {
    #[test]
    fn tensor_round_trip_is_lossless(pixels in proptest::collection::vec(any::<u8>(), 4 * 4 * 3)) {
        let img = RgbImage { size: 4, pixels };
        let t = to_tensor(&img);
        prop_assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(from_tensor(&t, 0).unwrap(), img);
    }
}
