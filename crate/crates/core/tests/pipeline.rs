use dssrep::gof::Criterion;
use dssrep::pipeline::{fit_mesh, prepare, select_best_fit, FitConfig};
use dssrep::sweep::PlaneMode;
use dssrep::synth::make_ellipsoid;

#[test]
fn ellipsoid_fits_in_every_mode() {
    let mesh = make_ellipsoid([2.0, 1.0, 0.5], 4).unwrap();
    for mode in [PlaneMode::Normal, PlaneMode::Chordal, PlaneMode::ChordalSpine] {
        let cfg = FitConfig { mode, ..Default::default() };
        let m = fit_mesh(&mesh, [1, 1], &cfg).unwrap();
        println!("{mode:?} {:?} rcc {}", m.gof, m.rcc_ok());
        assert!(m.rcc_ok());
        assert!(m.gof.score1 > 0.85, "{:?}", m.gof);
    }
}

#[test]
fn ellipsoid_prefers_low_degrees() {
    let mesh = make_ellipsoid([2.0, 1.0, 0.5], 3).unwrap();
    let cfg = FitConfig::default();
    let prep = prepare(&mesh, &cfg).unwrap();
    let best = select_best_fit(&prep, 2, Criterion::Score2, &cfg).unwrap();
    assert!(best.rcc_ok());
    assert!(best.gof.score2 > 0.9, "{:?}", best.gof);
}
