use edpgnn::dsm::{draw_perturbations, dsm_loss_for};
use edpgnn::graph::{erdos_renyi, GraphInstance, NoiseSchedule, Permutation};
use edpgnn::metrics::StatKind;
use edpgnn::model::{ModelConfig, ScoreModel};
use edpgnn::tasks::label_mst;
use edpgnn::EdpGnn;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64, config: ModelConfig) -> EdpGnn {
    EdpGnn::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn case(seed: u64, n: usize, weighted: bool) -> (GraphInstance, Permutation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rand::Rng::random_range(&mut rng, 0.1..0.9);
    let g = erdos_renyi(n, p, weighted, &mut rng);
    (g, Permutation::random(n, &mut rng))
}

fn is_symmetric_zero_diag(m: &edpgnn::Tensor) -> bool {
    let n = m.rows();
    (0..n).all(|i| m.at(i, i) == 0.0 && (0..n).all(|j| m.at(i, j).to_bits() == m.at(j, i).to_bits()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn score_commutes_with_permutation(seed in any::<u64>(), n in 2usize..=12, level in 0usize..6) {
        let (g, perm) = case(seed, n, seed % 2 == 0);
        let model = small_model(seed ^ 1, ModelConfig::default());
        let s = model.score(g.adj(), level).unwrap();
        let sp = model.score(g.permute(&perm).unwrap().adj(), level).unwrap();
        let moved = perm.apply_matrix(&s).unwrap();
        prop_assert!(sp.max_abs_diff(&moved) < 1e-8, "deviation {}", sp.max_abs_diff(&moved));
        prop_assert!(is_symmetric_zero_diag(&s));
    }

    #[test]
    fn ablated_models_stay_equivariant(seed in any::<u64>(), n in 2usize..=10, learnable in any::<bool>(), multi in any::<bool>()) {
        let (g, perm) = case(seed, n, false);
        let config = ModelConfig { learnable_adj: learnable, multi_channel: multi, ..ModelConfig::default() };
        let model = small_model(seed, config);
        let s = model.score(g.adj(), 0).unwrap();
        let sp = model.score(g.permute(&perm).unwrap().adj(), 0).unwrap();
        prop_assert!(sp.max_abs_diff(&perm.apply_matrix(&s).unwrap()) < 1e-8);
    }

    #[test]
    fn intermediate_channels_are_symmetric(seed in any::<u64>(), n in 2usize..=8) {
        let (g, _) = case(seed, n, true);
        let model = small_model(seed, ModelConfig::default());
        for stack in model.channel_stack(g.adj(), 0).unwrap() {
            let c = stack.shape()[0];
            for ch in 0..c {
                for i in 0..n {
                    prop_assert_eq!(stack.data()[ch * n * n + i * n + i], 0.0);
                    for j in 0..n {
                        prop_assert_eq!(
                            stack.data()[ch * n * n + i * n + j].to_bits(),
                            stack.data()[ch * n * n + j * n + i].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dsm_loss_is_permutation_invariant(seed in any::<u64>(), n in 2usize..=10) {
        let (g, perm) = case(seed, n, false);
        let schedule = NoiseSchedule::default();
        let model = small_model(seed, ModelConfig::default());
        let batch = vec![g.clone()];
        let noisy = draw_perturbations(&batch, &schedule, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let moved_batch = vec![g.permute(&perm).unwrap()];
        let moved_noisy: Vec<Vec<GraphInstance>> = noisy
            .iter()
            .map(|levels| levels.iter().map(|x| x.permute(&perm).unwrap()).collect())
            .collect();
        let a = dsm_loss_for(&model, &batch, &noisy, &schedule).unwrap();
        let b = dsm_loss_for(&model, &moved_batch, &moved_noisy, &schedule).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-8 * (1.0 + a.total.abs()), "{} vs {}", a.total, b.total);
    }

    #[test]
    fn statistics_are_permutation_invariant(seed in any::<u64>(), n in 1usize..=14) {
        let (g, perm) = case(seed, n, false);
        let moved = g.permute(&perm).unwrap();
        for kind in StatKind::ALL {
            prop_assert_eq!(kind.stats(&g), kind.stats(&moved));
        }
        let mut d = g.degrees();
        let mut dm = moved.degrees();
        d.sort_unstable();
        dm.sort_unstable();
        prop_assert_eq!(d, dm);
        prop_assert_eq!(g.edge_count(), moved.edge_count());
    }

    #[test]
    fn spanning_tree_labels_move_with_nodes(seed in any::<u64>(), n in 2usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = erdos_renyi(n, 0.6, true, &mut rng);
        let perm = Permutation::random(n, &mut rng);
        if let Ok(l) = label_mst(&g) {
            let moved = label_mst(&g.permute(&perm).unwrap()).unwrap();
            prop_assert_eq!(moved.labels, perm.apply_matrix(&l.labels).unwrap());
        }
    }
}

#[test]
fn levels_condition_the_output() {
    let (g, _) = case(3, 8, false);
    let model = small_model(4, ModelConfig::default());
    let mut model = model;
    // fresh conditioning is the identity; give each level its own gains
    let ids: Vec<_> = model.params().ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in ids {
        if model.params().name(id).ends_with("gain") {
            for v in model.params_mut().value_mut(id).data_mut() {
                *v += rand::Rng::random_range(&mut rng, -0.5..0.5);
            }
        }
    }
    let a = model.score(g.adj(), 0).unwrap();
    let b = model.score(g.adj(), 1).unwrap();
    assert_ne!(a, b);
}
