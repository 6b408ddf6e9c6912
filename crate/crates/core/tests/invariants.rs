use proptest::prelude::*;

use dchb_core::quadrature::pairwise_sum;
use dchb_core::stratified::corrected_stratum_estimator;
use dchb_core::survey_design::{
    hansen_hurwitz_from, hansen_hurwitz_mean, ppswr_sample, FinitePopulation, PopulationStratum,
};
use dchb_core::uncertainty::{eblup_eta, mu3, VarianceComponents};
use dchb_core::StratifiedSample;

fn groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 1..6), 2..7)
}

proptest! {
    #[test]
    fn mu3_is_the_midpoint(a in 0.0..1e6f64, b in 0.0..1e6f64) {
        let m = mu3(a, b);
        prop_assert!(m >= a.min(b) && m <= a.max(b));
        prop_assert!((m - (a + b) / 2.0).abs() <= 1e-9 * (a + b).max(1.0));
    }

    #[test]
    fn hansen_hurwitz_of_constant_is_constant(c in -100.0..100.0f64, sizes in prop::collection::vec(0.1..10.0f64, 1..12)) {
        let total: f64 = sizes.iter().sum();
        let probs: Vec<f64> = sizes.iter().map(|s| s / total).collect();
        let values: Vec<f64> = probs.iter().map(|p| c * p * sizes.len() as f64).collect();
        // y_k = c N p_k makes every term equal to c.
        let hh = hansen_hurwitz_from(&values, &probs, sizes.len()).unwrap();
        prop_assert!((hh - c).abs() <= 1e-9 * c.abs().max(1.0));
    }

    #[test]
    fn ppswr_draws_carry_normalized_probabilities(
        sizes in prop::collection::vec(0.1..10.0f64, 2..15),
        n in 1usize..20,
        seed in any::<u64>(),
    ) {
        let values: Vec<f64> = (0..sizes.len()).map(|i| i as f64).collect();
        let pop = FinitePopulation::new(vec![PopulationStratum::new(values, sizes.clone()).unwrap()]).unwrap();
        let s = &pop.strata()[0];
        prop_assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = ppswr_sample(&pop, 0, n, seed).unwrap();
        prop_assert_eq!(d.draws.len(), n);
        for draw in &d.draws {
            prop_assert_eq!(draw.prob, s.probs()[draw.unit]);
        }
        prop_assert!(hansen_hurwitz_mean(&d.draws, sizes.len()).unwrap().is_finite());
    }

    #[test]
    fn eblup_lies_between_mean_and_grand_mean(g in groups(), sv in 0.01..10.0f64, se in 0.01..10.0f64) {
        let s = StratifiedSample::from_values(100, g).unwrap();
        let vc = VarianceComponents::fixed(&s, sv, se).unwrap();
        for (m, ybar) in s.means().iter().enumerate() {
            let eta = eblup_eta(&s, &vc, m).unwrap();
            let (lo, hi) = (ybar.min(vc.mu), ybar.max(vc.mu));
            prop_assert!(eta >= lo - 1e-9 && eta <= hi + 1e-9);
        }
    }

    #[test]
    fn correction_swaps_sample_mean_for_weighted_mean(hb in -1e3..1e3f64, ybar in -1e3..1e3f64, yw in -1e3..1e3f64, f in 0.0..1.0f64) {
        let dc = corrected_stratum_estimator(hb, f, ybar, ybar, yw);
        prop_assert!((dc - (hb - ybar + yw)).abs() < 1e-9);
        prop_assert!((corrected_stratum_estimator(hb, f, ybar, ybar, ybar) - hb).abs() < 1e-9);
    }

    #[test]
    fn pairwise_sum_matches_naive(xs in prop::collection::vec(-1e3..1e3f64, 0..300)) {
        let naive: f64 = xs.iter().sum();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * xs.len().max(1) as f64);
    }
}
