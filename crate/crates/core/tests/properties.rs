use std::f64::consts::PI;
use std::io::BufReader;
use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use statrs::function::gamma::gamma;

use fastdiff_core::grid::{l1_distance, make_grid, sup_distance, volume_integral};
use fastdiff_core::rescaling::{from_rescaled, to_rescaled};
use fastdiff_core::{derive_params, Barenblatt, RadialField, RadialGrid};

fn grid(dim: usize) -> Arc<RadialGrid> {
    make_grid(200.0, 400, 4.0, dim).unwrap()
}

/// Compactly supported bump so that no tail enters the distances.
fn bump(g: &Arc<RadialGrid>, amp: f64, width: f64) -> RadialField {
    RadialField::from_fn(g.clone(), |r| amp * (-(r / width).powi(2)).exp(), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_are_symmetric(a in 0.1f64..5.0, b in 0.1f64..5.0, wa in 0.5f64..3.0, wb in 0.5f64..3.0) {
        let g = grid(3);
        let (f, h) = (bump(&g, a, wa), bump(&g, b, wb));
        let d1 = l1_distance(&f, &h).unwrap().value().unwrap();
        let d2 = l1_distance(&h, &f).unwrap().value().unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-12 * d1.max(1.0));
        prop_assert_eq!(sup_distance(&f, &h).unwrap(), sup_distance(&h, &f).unwrap());
    }

    #[test]
    fn distances_obey_triangle_inequality(
        a in 0.1f64..5.0, b in 0.1f64..5.0, c in 0.1f64..5.0,
        wa in 0.5f64..3.0, wb in 0.5f64..3.0, wc in 0.5f64..3.0,
    ) {
        let g = grid(4);
        let (f, h, k) = (bump(&g, a, wa), bump(&g, b, wb), bump(&g, c, wc));
        let l1 = |x: &RadialField, y: &RadialField| l1_distance(x, y).unwrap().value().unwrap();
        let bound = l1(&f, &h) + l1(&h, &k);
        prop_assert!(l1(&f, &k) <= bound * (1.0 + 1e-12));
        let sup = |x: &RadialField, y: &RadialField| sup_distance(x, y).unwrap();
        prop_assert!(sup(&f, &k) <= sup(&f, &h) + sup(&h, &k) + 1e-15);
    }

    #[test]
    fn csv_round_trip_preserves_field(amp in 0.01f64..100.0, width in 0.2f64..10.0, dim in 3usize..9) {
        let g = grid(dim);
        let f = RadialField::from_fn(g, |r| amp / (1.0 + (r / width).powi(2)), Some(2.0)).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf, &[("label", "x".to_string())]).unwrap();
        let (back, meta) = RadialField::read_csv(BufReader::new(&buf[..])).unwrap();
        prop_assert_eq!(meta.get("label").map(String::as_str), Some("x"));
        prop_assert_eq!(back.grid().dim(), dim);
        prop_assert_eq!(back.values().len(), f.values().len());
        for (x, y) in back.values().iter().zip(f.values()) {
            prop_assert!((x - y).abs() <= 1e-14 * y.abs());
        }
        prop_assert_eq!(back.tail().is_some(), true);
    }

    #[test]
    fn rescaling_round_trip(t_frac in 0.0f64..0.999, dim in 3usize..9, m_frac in 0.05f64..0.95) {
        let n = dim as f64;
        let m = m_frac * (n - 2.0) / n;
        let p = derive_params(dim, m, 1.0).unwrap();
        let g = grid(dim);
        let u = Barenblatt::new(1.0, 1.0).unwrap().sample(&p, &g, t_frac);
        let (back, t) = from_rescaled(&to_rescaled(&u, t_frac, &p).unwrap(), &p);
        prop_assert!((t - t_frac).abs() <= 1e-12);
        for (x, y) in back.values().iter().zip(u.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs());
        }
    }
}

#[test]
fn gaussian_volume_matches_closed_form() {
    for dim in 3..=8 {
        let g = make_grid(30.0, 800, 3.0, dim).unwrap();
        let f = RadialField::from_fn(g, |r| (-r * r).exp(), None).unwrap();
        let got = volume_integral(&f, None).value().unwrap();
        assert_relative_eq!(got, PI.powf(dim as f64 / 2.0), max_relative = 1e-5);
    }
}

/// `∫ (1+r²)^{-s} dx = π^{N/2} Γ(s-N/2)/Γ(s)` for `s > N/2`.
#[test]
fn algebraic_volume_matches_gamma_ratio() {
    for (dim, s) in [(3usize, 2.5), (4, 3.0), (6, 4.2)] {
        let n = dim as f64;
        let expected = PI.powf(n / 2.0) * gamma(s - n / 2.0) / gamma(s);
        let g = make_grid(1e4, 1600, 5.0, dim).unwrap();
        let f = RadialField::from_fn(g, |r| (1.0 + r * r).powf(-s), Some(2.0 * s)).unwrap();
        let got = volume_integral(&f, None).value().unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-4);
    }
}

/// Below the critical exponent the profile decays like `r^{-2/(1-m)}`, slower than `r^{-N}`.
#[test]
fn barenblatt_mass_is_infinite() {
    for (dim, m) in [(3usize, 0.2), (4, 0.3), (6, 0.6)] {
        let p = derive_params(dim, m, 1.0).unwrap();
        let g = make_grid(1e4, 800, 5.0, dim).unwrap();
        let u = Barenblatt::new(2.0, 1.0).unwrap().sample(&p, &g, 0.0);
        assert!(volume_integral(&u, None).is_divergent(), "N={dim}, m={m}");
    }
}

/// Centered differences of `u_t` and `r^{1-N}(r^{N-1}(u^m)_r)_r` on the closed form.
#[test]
fn barenblatt_solves_the_equation() {
    let (dim, m) = (5usize, 0.4);
    let p = derive_params(dim, m, 1.0).unwrap();
    let b = Barenblatt::new(1.5, 1.0).unwrap();
    let u = |r: f64, t: f64| b.eval(&p, r, t);
    let w = |r: f64, t: f64| u(r, t).powf(m);
    let n = dim as f64;
    for &t in &[0.1, 0.5, 0.8] {
        for &r in &[0.3, 1.0, 4.0, 20.0] {
            let (h, k) = (1e-3 * r, 1e-5);
            let ut = (u(r, t + k) - u(r, t - k)) / (2.0 * k);
            let flux = |s: f64| s.powf(n - 1.0) * (w(s + h / 2.0, t) - w(s - h / 2.0, t)) / h;
            let lap = (flux(r + h / 2.0) - flux(r - h / 2.0)) / h / r.powf(n - 1.0);
            assert_relative_eq!(ut, lap, max_relative = 1e-4);
        }
    }
}
