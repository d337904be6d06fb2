use std::f64::consts::{FRAC_PI_2, PI, TAU};

use adaptscan_core::lti::Rk4Workspace;
use adaptscan_core::trajectory::{
    exo_step, make_raster, make_spiral, tri, tri_fourier, ExosystemSpec, ReferenceGenerator, ScanGeometry, ScanPattern,
};
use proptest::prelude::*;

/// Triangle from its three branches on the principal period.
fn tri_oracle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t <= FRAC_PI_2 {
        2.0 * t / PI
    } else if t <= 1.5 * PI {
        2.0 - 2.0 * t / PI
    } else {
        2.0 * t / PI - 4.0
    }
}

#[test]
fn triangle_matches_branch_oracle() {
    for k in -2000..=2000 {
        let theta = k as f64 * 0.00731;
        assert!((tri(theta) - tri_oracle(theta)).abs() < 1e-12, "theta = {theta}");
    }
    assert_eq!(tri(FRAC_PI_2), 1.0);
    assert!((tri(-FRAC_PI_2) + 1.0).abs() < 1e-15);
}

#[test]
fn fourier_partial_sums_approach_the_triangle_monotonically() {
    let grid: Vec<f64> = (0..20_000).map(|k| k as f64 * TAU / 20_000.0).collect();
    let sup = |k: u32| grid.iter().map(|&t| (tri_fourier(t, k) - tri(t)).abs()).fold(0.0f64, f64::max);
    let errors: Vec<f64> = [1, 3, 7, 15, 31].into_iter().map(sup).collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0], "{errors:?}");
    }
    assert!(errors[4] < 0.01);
    for &t in &grid[..50] {
        assert!((tri_fourier(t, 1) - 8.0 / (PI * PI) * t.sin()).abs() < 1e-15);
    }
}

fn run(spec: &ExosystemSpec, eps_at: impl Fn(usize) -> f64, dt: f64, steps: usize) -> (Vec<f64>, f64, [f64; 2]) {
    let mut xi = spec.xi0.as_slice().to_vec();
    let mut ws = Rk4Workspace::new(xi.len());
    let mut tau = 0.0;
    let mut r = spec.output(&xi);
    for k in 0..steps {
        let eps = eps_at(k);
        r = exo_step(spec, &mut xi, eps, dt, &mut ws).unwrap();
        tau += eps * dt;
    }
    (xi, tau, r)
}

#[test]
fn oscillator_amplitudes_are_conserved_over_two_million_steps() {
    for spec in [make_raster(4.0, 0.01, 100).unwrap(), make_spiral(4.0, 0.01, 100).unwrap()] {
        let before = ExosystemSpec::oscillator_amplitudes(spec.xi0.as_slice());
        let (xi, _, _) = run(&spec, |_| 0.02, 1e-5, 2_000_000);
        let after = ExosystemSpec::oscillator_amplitudes(&xi);
        for (a, b) in before.iter().zip(&after) {
            assert!(((b - a) / a).abs() <= 1e-5, "{a} -> {b}");
        }
    }
}

#[test]
fn doubling_eps_and_halving_dt_gives_the_same_update() {
    let spec = make_raster(4.0, 0.01, 100).unwrap();
    let (a, _, _) = run(&spec, |_| 0.04, 1e-5, 1000);
    let (b, _, _) = run(&spec, |_| 0.08, 5e-6, 1000);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-13);
    }
}

#[test]
fn raster_half_line_reaches_far_edge() {
    let spec = make_raster(4.0, 0.01, 100).unwrap();
    let (_, tau, r) = run(&spec, |_| 1.0, 0.005 / 10_000.0, 10_000);
    assert!((tau - 0.005).abs() < 1e-15);
    assert!((r[0] - 2.0).abs() < 1e-9);
}

#[test]
fn spiral_radius_reaches_the_rim_after_one_scan() {
    let g = ScanGeometry::new(4.0, 0.01, 100).unwrap();
    let spec = make_spiral(4.0, 0.01, 100).unwrap();
    let s = g.scan_length(ScanPattern::Spiral);
    assert!((s - 1.0).abs() < 1e-15);
    let r = spec.reference_at(s);
    assert!((r[0].hypot(r[1]) - 2.0).abs() < 1e-12);
    for k in 0..200 {
        let tau = k as f64 * 0.0051;
        let r = spec.reference_at(tau);
        let radius = 2.0 * (g.spiral_frame_freq() * tau).sin();
        assert!((r[0] * r[0] + r[1] * r[1] - radius * radius).abs() < 1e-9);
    }
}

#[test]
fn triangular_raster_starts_where_the_sinusoid_does() {
    let g = ScanGeometry::new(4.0, 0.01, 100).unwrap();
    let tri_gen = ReferenceGenerator::new(ScanPattern::TriangularRaster, g).unwrap();
    let sin_gen = ReferenceGenerator::new(ScanPattern::Raster, g).unwrap();
    assert_eq!(tri_gen.initial(), [-2.0, -2.0]);
    assert_eq!(sin_gen.initial(), [-2.0, -2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The reference depends on the distance travelled, not on how fast.
    #[test]
    fn reference_is_invariant_to_the_rate_profile(
        spiral in any::<bool>(),
        levels in prop::collection::vec(0.2f64..2.0, 1..6),
        seg in 500usize..3000,
    ) {
        let spec = if spiral { make_spiral(4.0, 0.01, 50) } else { make_raster(4.0, 0.01, 50) }.unwrap();
        let (_, tau, r) = run(&spec, |k| levels[(k / seg) % levels.len()], 1e-5, seg * levels.len());
        let expect = spec.reference_at(tau);
        for i in 0..2 {
            prop_assert!((r[i] - expect[i]).abs() <= 1e-6 * 2.0, "{r:?} vs {expect:?} at tau {tau}");
        }
    }
}
