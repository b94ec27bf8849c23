use nobacktrack::linalg;
use nobacktrack::rankone::{
    optimal_scalings, reduce_with_scalings, variance_hs, NormPair, RankOneDecomposition,
};
use proptest::prelude::*;

fn decomposition(rows: usize, cols: usize) -> impl Strategy<Value = RankOneDecomposition> {
    let term = (
        prop::collection::vec(-2.0..2.0f64, rows),
        prop::collection::vec(-2.0..2.0f64, cols),
    );
    prop::collection::vec(term, 1..=6)
        .prop_map(move |terms| RankOneDecomposition::from_dense_terms(rows, cols, terms).unwrap())
}

fn sign_vectors(k: usize) -> impl Iterator<Item = Vec<f64>> {
    (0..1u32 << k).map(move |mask| {
        (0..k)
            .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
            .collect()
    })
}

/// Exact `E |A~|^2 - |A|^2` over all sign patterns.
fn enumerated_variance(d: &RankOneDecomposition, rho: &[f64]) -> f64 {
    let k = d.len();
    let second: f64 = sign_vectors(k)
        .map(|eps| {
            let e = reduce_with_scalings(d, rho, &eps).unwrap();
            linalg::norm_sq(&e.v) * linalg::norm_sq(&e.w)
        })
        .sum::<f64>()
        / (1u64 << k) as f64;
    second - linalg::norm_sq(d.to_matrix().as_slice())
}

proptest! {
    #[test]
    fn average_over_all_signs_recovers_the_sum(d in decomposition(3, 4)) {
        let rho = optimal_scalings(&d, NormPair::euclidean());
        let k = d.len();
        let mut mean = vec![0.0; 12];
        for eps in sign_vectors(k) {
            let m = reduce_with_scalings(&d, &rho, &eps).unwrap().to_matrix();
            linalg::axpy(1.0 / (1u64 << k) as f64, m.as_slice(), &mut mean);
        }
        let a = d.to_matrix();
        for (x, y) in mean.iter().zip(a.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn closed_form_variance_matches_enumeration(d in decomposition(2, 3)) {
        let scaled = enumerated_variance(&d, &optimal_scalings(&d, NormPair::euclidean()));
        let unscaled = enumerated_variance(&d, &vec![1.0; d.len()]);
        prop_assert!((scaled - variance_hs(&d, true)).abs() < 1e-9 * (1.0 + scaled.abs()));
        prop_assert!((unscaled - variance_hs(&d, false)).abs() < 1e-9 * (1.0 + unscaled.abs()));
        prop_assert!(variance_hs(&d, true) <= variance_hs(&d, false) + 1e-12);
    }

    #[test]
    fn perturbing_one_scaling_never_helps(d in decomposition(2, 3), pick in 0usize..6, up in any::<bool>()) {
        let rho = optimal_scalings(&d, NormPair::euclidean());
        let base = enumerated_variance(&d, &rho);
        let mut moved = rho.clone();
        let i = pick % d.len();
        moved[i] *= if up { 1.1 } else { 1.0 / 1.1 };
        prop_assert!(enumerated_variance(&d, &moved) >= base - 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn optimal_scalings_balance_the_factors(d in decomposition(3, 5)) {
        let rho = optimal_scalings(&d, NormPair::euclidean());
        for (t, r) in d.terms().iter().zip(&rho) {
            let nv = linalg::norm(&t.v) * r;
            let nw = linalg::norm(&t.w.to_dense(5)) / r;
            prop_assert!((nv - nw).abs() < 1e-6 * (1.0 + nv.max(nw)));
        }
    }
}
