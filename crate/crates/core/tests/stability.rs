use proptest::prelude::*;
use toric_hcsck::poly::Affine;
use toric_hcsck::polytope::DelzantPolytope;
use toric_hcsck::stability::*;

/// Midpoint-rule brute force of `(L_A(v), ∫_∂P v dσ)` on the unit square.
fn brute_force_square(a: &Affine, probe: &Probe, n: usize) -> (f64, f64) {
    let h = 1.0 / n as f64;
    let mut interior = 0.0;
    let mut boundary = 0.0;
    for i in 0..n {
        let s = (i as f64 + 0.5) * h;
        for j in 0..n {
            let x = [s, (j as f64 + 0.5) * h];
            interior += a.value(&x) * probe.value(&x);
        }
        for x in [[s, 0.0], [s, 1.0], [0.0, s], [1.0, s]] {
            boundary += probe.value(&x);
        }
    }
    interior *= h * h;
    boundary *= h;
    (boundary - interior, boundary)
}

#[test]
fn crease_pairing_matches_brute_force() {
    let p = DelzantPolytope::unit_square();
    let a = extremal_affine(&p).unwrap();
    for probe in sample_probes(&p, 8, 3) {
        let (l, b) = crease_pairing(&p, &a, &probe);
        let (lb, bb) = brute_force_square(&a, &probe, 1500);
        assert!((l - lb).abs() <= 1e-5 * b.max(1e-3), "{probe:?}: {l} vs {lb}");
        assert!((b - bb).abs() <= 1e-5 * b.max(1e-3), "{probe:?}: {b} vs {bb}");
    }
}

#[test]
fn lattice_transformations_preserve_probe_ratios() {
    let cases = [
        (DelzantPolytope::unit_square(), [[1, 1], [0, 1]], [0.5, -2.0]),
        (DelzantPolytope::standard_simplex(), [[2, 1], [1, 1]], [3.0, 1.0]),
        (DelzantPolytope::standard_simplex(), [[0, -1], [1, 0]], [0.0, 0.0]),
    ];
    for (p, g, shift) in cases {
        let q = p.transformed(g, shift).unwrap();
        let (a, b) = (extremal_affine(&p).unwrap(), extremal_affine(&q).unwrap());
        assert!(b.is_constant(1e-9) && (a.constant - b.constant).abs() < 1e-9);
        for probe in sample_probes(&p, 50, 9) {
            let (l1, b1) = crease_pairing(&p, &a, &probe);
            let (l2, b2) = crease_pairing(&q, &b, &probe.transformed(g, shift));
            assert!((l1 - l2).abs() <= 1e-10 * (1.0 + l1.abs()), "{l1} vs {l2}");
            assert!((b1 - b2).abs() <= 1e-10 * (1.0 + b1.abs()), "{b1} vs {b2}");
        }
    }
}

#[test]
fn canonical_polytopes_are_uniformly_stable() {
    for (p, c) in [
        (DelzantPolytope::unit_interval(), 2.0),
        (DelzantPolytope::unit_square(), 4.0),
        (DelzantPolytope::standard_simplex(), 6.0),
    ] {
        let a = extremal_affine(&p).unwrap();
        assert!(a.is_constant(1e-10) && (a.constant - c).abs() < 1e-10);
        let scan = uniform_scan(&p, &a, 1000, 1).unwrap();
        assert!(scan.affine_obstruction <= 1e-12);
        assert!(scan.lambda_hat > 0.0 && scan.all_positive());
    }
}

#[test]
fn tilted_affine_function_is_obstructed() {
    let p = DelzantPolytope::unit_square();
    let mut a = extremal_affine(&p).unwrap();
    a.linear[0] += 10.0;
    assert!(affine_obstruction(&p, &a).unwrap() > 1.0);
    let scan = uniform_scan(&p, &a, 1000, 1).unwrap();
    assert!(scan.lambda_hat < 0.0);
}

#[test]
fn scans_are_deterministic() {
    let p = DelzantPolytope::standard_simplex();
    let a = extremal_affine(&p).unwrap();
    assert_eq!(uniform_scan(&p, &a, 200, 4).unwrap(), uniform_scan(&p, &a, 200, 4).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn boundary_integral_of_creases_is_positive(seed in any::<u64>()) {
        for p in [DelzantPolytope::unit_square(), DelzantPolytope::standard_simplex()] {
            let a = extremal_affine(&p).unwrap();
            for probe in sample_probes(&p, 4, seed) {
                let (l, b) = crease_pairing(&p, &a, &probe);
                prop_assert!(b > 0.0);
                prop_assert!(l > 0.0);
            }
        }
    }

    #[test]
    fn pairing_is_homogeneous_in_the_probe(seed in any::<u64>(), s in 0.1f64..10.0) {
        let p = DelzantPolytope::standard_simplex();
        let a = extremal_affine(&p).unwrap();
        for probe in sample_probes(&p, 2, seed) {
            let scaled = Probe { direction: [probe.direction[0] * s, probe.direction[1] * s], offset: probe.offset * s };
            let (l1, b1) = crease_pairing(&p, &a, &probe);
            let (l2, b2) = crease_pairing(&p, &a, &scaled);
            prop_assert!((l2 - s * l1).abs() <= 1e-10 * (1.0 + l2.abs()));
            prop_assert!((b2 - s * b1).abs() <= 1e-10 * (1.0 + b2.abs()));
        }
    }
}
