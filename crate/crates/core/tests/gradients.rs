mod common;

#[test]
fn every_network_gradient_matches_central_differences() {
    for (name, err) in common::gradient_suite(3, 11) {
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}

#[test]
fn fd_checker_detects_a_wrong_gradient() {
    use rand::SeedableRng;
    let f = |p: &[f64]| p.iter().map(|x| x.sin()).sum::<f64>();
    let p = [0.3, -1.2, 0.7];
    let good: Vec<f64> = p.iter().map(|x: &f64| x.cos()).collect();
    let bad: Vec<f64> = good.iter().map(|g| g * 1.01).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    assert!(common::fd_error(&f, &p, &good, 5, &mut rng) < 1e-8);
    assert!(common::fd_error(&f, &p, &bad, 5, &mut rng) > 1e-3);
}
