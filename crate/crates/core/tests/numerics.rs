use proptest::prelude::*;
use swiss_cheese::numerics::*;

#[test]
fn gaussian_integral_on_graded_grid() {
    let grid = Grid1D::graded(8.0, 1e-3, 1.01, 0.05).unwrap();
    let v = quadrature(|x| (-x * x).exp(), &grid).unwrap();
    assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-8);
}

#[test]
fn harmonic_oscillator_invariant() {
    let sol = integrate_ode(|_, y, _| -y, OdeState::new(0.0, 1.0, 0.0), 20.0, &OdeConfig::default()).unwrap();
    let s = sol.last();
    assert!((s.y * s.y + s.yp * s.yp - 1.0).abs() < 1e-6);
    assert!((s.y - 20f64.cos()).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn root_independent_of_bracket_order(s in -0.95..0.95f64, k in 0.5..3.0f64) {
        let c = s * (2.0 * k).tanh();
        let f = |x: f64| (k * x).tanh() - c;
        let a = find_root(f, -2.0, 2.0, 1e-14).unwrap();
        let b = find_root(f, 2.0, -2.0, 1e-14).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - c.atanh() / k).abs() < 1e-10);
    }

    #[test]
    fn quadrature_exact_for_cubics(c in prop::collection::vec(-5.0..5.0f64, 4), a in -3.0..0.0f64, w in 0.1..4.0f64, n in 3usize..60) {
        let b = a + w;
        let grid = Grid1D::uniform(a, b, n).unwrap();
        let p = |x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        let anti = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
        let exact = anti(b) - anti(a);
        prop_assert!((quadrature(p, &grid).unwrap() - exact).abs() < 1e-10 * (1.0 + exact.abs()));
    }
}
