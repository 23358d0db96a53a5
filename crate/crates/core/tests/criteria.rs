mod common;

#[test]
fn bandit_policy_reaches_the_boltzmann_optimum() {
    for seed in 0..2 {
        let tv = common::bandit_tv(seed);
        eprintln!("bandit seed {seed}: TV {tv:.4}");
        assert!(tv < 0.05, "seed {seed}: TV {tv}");
    }
}

#[test]
fn split_and_summed_channels_train_identically() {
    assert!(common::additivity_holds("grid-push", 3));
    assert!(common::additivity_holds("point-pusher", 3));
}

#[test]
fn tabular_discriminator_reaches_the_density_ratio() {
    let (err, checked) = common::discriminator_optimum_error();
    eprintln!("discriminator: {checked} pairs, max error {err:.2e}");
    assert!(checked > 10, "only {checked} pairs");
    assert!(err < 0.05, "max error {err}");
}
