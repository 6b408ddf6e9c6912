//! Fixtures shared by the benchmarks.

use dchb_core::harness::{cell_population, SimulationConfig};
use dchb_core::survey_design::ppswr_sample;
use dchb_core::StratifiedSample;

/// One desk-scale sample: 30 strata of 10 PPSWR draws each.
pub fn desk_sample() -> StratifiedSample {
    let cfg = SimulationConfig::desk();
    let pop = cell_population(&cfg, 0).expect("desk population");
    let values = (0..cfg.m)
        .map(|s| {
            let d = ppswr_sample(&pop, s, 10, 3).expect("sample");
            d.draws.iter().map(|x| x.value).collect()
        })
        .collect();
    StratifiedSample::from_values(cfg.population_size, values).expect("valid sample")
}

#[cfg(test)]
mod tests {
    #[test]
    fn desk_sample_shape() {
        let s = super::desk_sample();
        assert_eq!(s.strata().len(), 30);
        assert!(s.strata().iter().all(|st| st.n() == 10));
    }
}
