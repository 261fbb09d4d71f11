use edpgnn::graph::{erdos_renyi, Permutation};
use edpgnn::model::{invariance_probe, line_integral, LineIntegralProbe, ModelConfig};
use edpgnn::EdpGnn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn line_integral_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..20 {
        let n = rng.random_range(3..=10);
        let g = erdos_renyi(n, 0.4, case % 2 == 1, &mut rng);
        let model = EdpGnn::new(ModelConfig::default(), &mut rng).unwrap();
        let probe = LineIntegralProbe::new(1000, Permutation::random(n, &mut rng)).unwrap();
        let level = rng.random_range(0..6);
        let (fa, fp) = invariance_probe(&model, &probe, g.adj(), level).unwrap();
        assert!((fa - fp).abs() < 1e-6 * (1.0 + fa.abs()), "case {case}: {fa} vs {fp}");
    }
}

#[test]
fn quadrature_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = erdos_renyi(8, 0.5, false, &mut rng);
    let model = EdpGnn::new(ModelConfig::default(), &mut rng).unwrap();
    let reference = line_integral(&model, g.adj(), 2, 4000).unwrap();
    let errors: Vec<f64> = [250, 500, 1000]
        .iter()
        .map(|&m| (line_integral(&model, g.adj(), 2, m).unwrap() - reference).abs())
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    assert!(errors[2] < 1e-3 * (1.0 + reference.abs()), "{errors:?}");
}
