use mlmcmc::coupled::coupled_trajectory;
use mlmcmc::hier::simulate_data;
use mlmcmc::kernel::run_chain;
use mlmcmc::stats::{batch_means, sample_variance};
use mlmcmc::{derive_stream, HierGaussModel, HierModelConfig, MultilevelModel, StreamPurpose};

fn default_model() -> HierGaussModel {
    let config = HierModelConfig::default();
    let mut s = derive_stream(12345, StreamPurpose::Data, 0, 0);
    let y = simulate_data(config.lambda, 1.0, config.k(config.max_level), &mut s).unwrap();
    HierGaussModel::new(config, y).unwrap()
}

#[test]
fn level_three_chain_average_matches_oracle() {
    let m = default_model();
    let level = 3;
    let k = m.gibbs_kernel(level).unwrap();
    let mut s = derive_stream(99, StreamPurpose::SingleLevel, level, 0);
    let mut phis = Vec::with_capacity(1_000_000);
    run_chain(&k, &m.initial_state(level), 1_000_000, &mut s, |x| phis.push(m.phi(x))).unwrap();
    let est = batch_means(&phis, 32).unwrap();
    let oracle = m.posterior_oracle(level).unwrap();
    assert!(
        (est.mean - oracle).abs() <= 4.0 * est.se,
        "long run {} +- {} vs oracle {oracle}",
        est.mean,
        est.se
    );
}

#[test]
fn increment_variance_decays_with_level() {
    let m = default_model();
    let variance = |level: usize| {
        let fine = m.gibbs_kernel(level).unwrap();
        let coarse = m.gibbs_kernel(level - 1).unwrap();
        let mut s = derive_stream(7, StreamPurpose::LevelPair, level, 0);
        let run = coupled_trajectory(&fine, &coarse, &m.initial_state(level), 10_000, &mut s, |x| m.phi(x)).unwrap();
        sample_variance(&run.increment_values())
    };
    let (v1, v3) = (variance(1), variance(3));
    assert!(v3 < v1 / 64.0, "V_1 = {v1:e}, V_3 = {v3:e}");
}
