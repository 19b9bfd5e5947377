use berry_core::field::{replicate_rng, sample_ensemble, sample_grid, GridSpec};
use berry_core::geometry::{euler_pixel_halved, excursion};
use berry_core::theory::{mean_epc, var_total};
use berry_demo::{levels, theory, FieldView};

#[test]
fn view_matches_direct_sampling() {
    let view = FieldView::new(8.0, 3, 128, 42).unwrap();
    let mut rng = replicate_rng(42, 0);
    let e = sample_ensemble(128, &mut rng).unwrap();
    let s = sample_grid(&e, GridSpec::new(8.0, 3).unwrap(), false).unwrap();
    let us = levels("-2:2:0.5").unwrap();
    let direct: Vec<f64> = us.iter().map(|&u| euler_pixel_halved(&excursion(&s, u))).collect();
    assert_eq!(view.euler_curve(&us), direct);
}

#[test]
fn image_marks_excursion_pixels_warm() {
    let view = FieldView::new(6.0, 2, 64, 7).unwrap();
    let rgba = view.excursion_rgba(0.5);
    let warm = rgba.chunks(4).filter(|px| px[0] >= 200).count();
    let expect = (view.area_fraction(0.5) * (view.side() * view.side()) as f64).round() as usize;
    assert_eq!(warm, expect);
    assert!(rgba.chunks(4).all(|px| px[3] == 255));
}

#[test]
fn gaussian_theory_is_closed_form() {
    let us = [-2.0, 0.5, 2.5];
    let out = theory(&us, 20.0, "gaussian", "scale").unwrap();
    for (k, &u) in us.iter().enumerate() {
        assert_eq!(out[k], mean_epc(u, 20.0));
        assert!((out[3 + k] - var_total(u, 20.0)).abs() <= 1e-12 * var_total(u, 20.0).abs().max(1.0));
    }
}

#[test]
fn bad_inputs_are_reported() {
    assert!(levels("1:0:0.1").is_err());
    assert!(theory(&[0.0], 5.0, "pareto:3", "sideways").is_err());
    assert!(FieldView::new(-1.0, 2, 16, 0).is_err());
    assert!(FieldView::new(5.0, 2, 0, 0).is_err());
}
