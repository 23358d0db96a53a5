mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trgail_core::oracle::{
    enumerate_log_weights, enumerate_posterior, log_evidence, logsumexp, maxent_objective, occupancy,
    soft_value_iteration, trajectory_marginals, TabularMdp,
};

#[test]
fn soft_policy_occupancy_equals_enumerated_posterior_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let mdp = common::random_mdp(&mut rng);
        let (literal, z) = common::literal_marginals(&mdp);
        let sol = soft_value_iteration(&mdp);
        let occ = occupancy(&mdp, &sol.policy);
        for t in 0..mdp.horizon() {
            for s in 0..mdp.n_states() {
                for a in 0..mdp.n_actions() {
                    assert!((occ[t][s][a] - literal[t][s][a]).abs() < 1e-8);
                }
            }
        }
        let objective = maxent_objective(&mdp, &sol.policy);
        assert!((objective - z.ln()).abs() < 1e-10, "{objective} vs {}", z.ln());
        assert!((log_evidence(&mdp).unwrap() - z.ln()).abs() < 1e-10);
        let v1: f64 = mdp.initial().iter().zip(&sol.v[0]).map(|(p, v)| p * v).sum();
        assert!((v1 - objective).abs() < 1e-10);
    }
}

#[test]
fn library_enumeration_agrees_with_literal_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let mdp = common::random_mdp(&mut rng);
        let lw = enumerate_log_weights(&mdp).unwrap();
        let lit = common::literal_weights(&mdp);
        assert_eq!(lw.len(), lit.len());
        for (path, w) in &lit {
            assert!((lw[path] - w.ln()).abs() < 1e-10);
        }
        let post = enumerate_posterior(&mdp).unwrap();
        let (m, _) = common::literal_marginals(&mdp);
        let m2 = trajectory_marginals(&mdp, &post);
        for (a, b) in m.iter().flatten().flatten().zip(m2.iter().flatten().flatten()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn stochastic_dynamics_leave_a_gap_below_the_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mdp = common::random_stochastic_mdp(&mut rng);
        let (_, z) = common::literal_marginals(&mdp);
        let objective = maxent_objective(&mdp, &soft_value_iteration(&mdp).policy);
        assert!(objective < z.ln() - 1e-9, "{objective} vs {}", z.ln());
    }
}

#[test]
fn any_other_policy_has_a_lower_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let mdp = common::random_stochastic_mdp(&mut rng);
        let best = maxent_objective(&mdp, &soft_value_iteration(&mdp).policy);
        let uniform = vec![vec![vec![1.0 / mdp.n_actions() as f64; mdp.n_actions()]; mdp.n_states()]; mdp.horizon()];
        assert!(maxent_objective(&mdp, &uniform) <= best + 1e-12);
    }
}

#[test]
fn bandit_and_chain_closed_forms() {
    let sol = soft_value_iteration(&TabularMdp::bandit());
    let z = logsumexp(&[0.0, 1.0]);
    assert!((sol.policy[0][0][1] - (1.0 - z).exp()).abs() < 1e-12);
    let chain = TabularMdp::chain(3, 3);
    let text = chain.to_text();
    assert_eq!(TabularMdp::from_text(&text).unwrap(), chain);
}
