use edpgnn::dsm::{dsm_loss, train, validate, TrainConfig};
use edpgnn::graph::{community_graph, erdos_renyi, GraphInstance, NoiseSchedule};
use edpgnn::model::{format_checkpoint, parse_checkpoint, Checkpoint, ModelConfig, PointMassScore};
use edpgnn::sampler::{sample_graph, SamplerConfig};
use edpgnn::EdpGnn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_score_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let schedule = NoiseSchedule::default();
    for _ in 0..10 {
        let g = community_graph(14, 0.7, 1, &mut rng);
        let oracle = PointMassScore::new(g.adj().clone(), schedule.sigmas().to_vec());
        let loss = dsm_loss(&oracle, &[g], &schedule, &mut rng).unwrap();
        assert!(loss.total < 1e-20, "{loss:?}");
    }
}

#[test]
fn oracle_sampler_recovers_clean_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let schedule = NoiseSchedule::default();
    let config = SamplerConfig {
        noise_scale: 0.0,
        ..SamplerConfig::default()
    };
    let mut hits = 0;
    for _ in 0..100 {
        let g = erdos_renyi(10, 0.4, false, &mut rng);
        let oracle = PointMassScore::new(g.adj().clone(), schedule.sigmas().to_vec());
        if sample_graph(&oracle, 10, &schedule, &config, &mut rng).unwrap() == g {
            hits += 1;
        }
    }
    assert!(hits >= 99, "{hits}/100");
}

fn smoke_graph() -> GraphInstance {
    GraphInstance::from_edges(6, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (3, 4, 1.0), (4, 5, 1.0), (2, 3, 1.0)]).unwrap()
}

#[test]
fn short_training_halves_the_loss() {
    let g = smoke_graph();
    let schedule = NoiseSchedule::default();
    let model = EdpGnn::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let before = validate(&model, &[g.clone(), g.clone()], &schedule, 77).unwrap().total;
    let config = TrainConfig {
        steps: 500,
        batch_size: 1,
        validation_size: 1,
        eval_every: 100,
        seed: 3,
        ..TrainConfig::default()
    };
    let outcome = train(model, &[g.clone()], &[g.clone()], &schedule, &config, |_| {}).unwrap();
    let after = validate(&outcome.model, &[g.clone(), g], &schedule, 77).unwrap().total;
    assert!(after <= 0.5 * before, "{before} -> {after}");
}

#[test]
fn training_is_deterministic() {
    let g = smoke_graph();
    let schedule = NoiseSchedule::new(vec![0.8, 0.2]).unwrap();
    let config = TrainConfig {
        steps: 20,
        batch_size: 2,
        eval_every: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let model = EdpGnn::new(ModelConfig { levels: 2, ..ModelConfig::default() }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let outcome = train(model, &[g.clone(), g.clone()], &[g.clone()], &schedule, &config, |_| {}).unwrap();
        format_checkpoint(&Checkpoint::from_model(&outcome.model, &schedule, vec![6]))
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let restored: EdpGnn = parse_checkpoint(&a).unwrap().to_model().unwrap();
    assert_eq!(format_checkpoint(&Checkpoint::from_model(&restored, &schedule, vec![6])), a);
}
