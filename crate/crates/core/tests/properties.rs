use proptest::prelude::*;

use ef21lab::algorithms::{step_ef21, Ef21State};
use ef21lab::compress::contraction_factor;
use ef21lab::datasets::{self, SynthConfig};
use ef21lab::problem::SparsityPattern;
use ef21lab::smoothness;
use ef21lab::{G0Init, Problem, TopK};

proptest! {
    #[test]
    fn topk_contracts_on_active_support(x in prop::collection::vec(-10.0f64..10.0, 1..16), k in 1usize..16) {
        let k = k.min(x.len());
        let s = x.iter().filter(|v| **v != 0.0).count().max(1);
        let factor: f64 = contraction_factor(&TopK::new(k).unwrap(), &x, s).unwrap();
        prop_assert!(factor <= 1.0 - k.min(s) as f64 / s as f64 + 1e-12);
    }

    #[test]
    fn topk_keeps_exactly_k_largest(x in prop::collection::vec(-10.0f64..10.0, 1..16), k in 1usize..16) {
        let k = k.min(x.len());
        let c = TopK::new(k).unwrap().compress(&x).unwrap();
        let kept: Vec<usize> = (0..x.len()).filter(|&j| c[j] != 0.0).collect();
        prop_assert!(kept.len() <= k);
        let smallest_kept = kept.iter().map(|&j| x[j].abs()).fold(f64::INFINITY, f64::min);
        for j in (0..x.len()).filter(|j| !kept.contains(j)) {
            prop_assert!(x[j].abs() <= smallest_kept || kept.len() < k);
        }
    }

    #[test]
    fn new_stepsize_never_below_standard(
        l_tilde in 0.01f64..100.0, l_frac in 0.01f64..=1.0, plus_frac in 0.0f64..=1.0,
        n in 1usize..500, c_frac in 0.0f64..=1.0, alpha in 0.001f64..=1.0,
    ) {
        let l = l_tilde * l_frac;
        let c = ((c_frac * n as f64).ceil() as usize).clamp(1, n);
        let new = smoothness::stepsize_theorem1(l, l_tilde * plus_frac, c, n, alpha).unwrap().gamma;
        let std = smoothness::standard_stepsize_ef21(l, l_tilde, alpha).unwrap();
        prop_assert!(new >= std * (1.0 - 1e-15));
    }

    #[test]
    fn adaptive_stepsize_at_least_standard(
        l_i in prop::collection::vec(0.01f64..50.0, 1..40), c_frac in 0.0f64..=1.0, alpha in 0.001f64..=1.0, l_frac in 0.01f64..=1.0,
    ) {
        let n = l_i.len();
        let l = l_i.iter().copied().fold(0.0, f64::max) * l_frac;
        let (gamma, l_plus) = smoothness::adaptive_stepsize(c_frac * n as f64, l, &l_i, n, alpha).unwrap();
        let lt = smoothness::l_tilde(&l_i);
        prop_assert!(l_plus <= lt);
        prop_assert!(gamma >= smoothness::standard_stepsize_ef21(l, lt, alpha).unwrap() * (1.0 - 1e-15));
    }

    #[test]
    fn column_bound_sits_below_min_bound(mask in prop::collection::vec(prop::collection::vec(any::<bool>(), 6), 1..10), seed in 0u64..1000) {
        let mut mask = mask;
        for (i, row) in mask.iter_mut().enumerate() {
            row[i % 6] = true;
        }
        let pattern = SparsityPattern::from_mask(&mask).unwrap();
        let l_i: Vec<f64> = (0..mask.len()).map(|i| 0.5 + ((seed + i as u64 * 7919) % 97) as f64 / 10.0).collect();
        let (col, min) = smoothness::l_plus_bounds(&l_i, &pattern).unwrap();
        prop_assert!(col <= min * (1.0 + 1e-12));
    }

    #[test]
    fn estimators_stay_in_active_subspace(seed in 0u64..50, k in 1usize..4) {
        let p: Problem = datasets::generate(&SynthConfig { n: 6, d: 12, m: 4, c_over_n: 0.5, seed, ..SynthConfig::default() }).unwrap();
        let spec = TopK::new(k).unwrap();
        let mut st = Ef21State::new(&p, vec![0.3; p.d()], G0Init::Zero).unwrap();
        for _ in 0..20 {
            step_ef21(&mut st, &p, &spec, 1e-3).unwrap();
            for (i, g) in st.g_i.iter().enumerate() {
                prop_assert!(p.pattern.lies_in_active(i, g));
            }
        }
    }

    #[test]
    fn xi_is_nonincreasing(l_tilde in 0.01f64..100.0, l_frac in 0.0f64..=1.0, a in 0.001f64..1.0, b in 0.001f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l = l_tilde * l_frac;
        let (x_lo, x_hi) = (smoothness::xi_complexity(lo, l, l_tilde), smoothness::xi_complexity(hi, l, l_tilde));
        prop_assert!(x_hi <= x_lo + 1e-12 * x_lo.abs().max(1.0));
    }
}

#[test]
fn xi_at_full_alpha_is_l() {
    assert_eq!(smoothness::xi_complexity(1.0, 2.5, 7.0), 2.5);
}
