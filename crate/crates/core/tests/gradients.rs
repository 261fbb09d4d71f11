use edpgnn::autograd::check::{GradReport, RandomProgram};
use edpgnn::autograd::{Tape, Tensor};
use edpgnn::dsm::{draw_perturbations, gradient_check};
use edpgnn::graph::{GraphInstance, NoiseSchedule};
use edpgnn::model::ModelConfig;
use edpgnn::EdpGnn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_programs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total = GradReport::default();
    for k in 0..200 {
        let program = RandomProgram::generate(5, 8, &mut rng);
        let report = program.check(1e-4, 1e-9).unwrap();
        assert!(report.passed(), "program {k}: {report:?}\n{program:?}");
        total = total.merge(report);
    }
    assert!(total.checked > 1000, "{total:?}");
}

#[test]
fn quadratic_form_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let program = RandomProgram::generate(1, 8, &mut rng);
        assert!(program.check(1e-4, 1e-9).unwrap().passed());
    }
    // ‖W·v‖² has gradient 2·W·v·vᵀ with respect to W
    let w = Tensor::matrix(3, 2, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
    let v = Tensor::matrix(2, 1, |i, _| 1.5 - i as f64);
    let mut tape = Tape::new();
    let (wv, vv) = (tape.leaf(w.clone(), true), tape.leaf(v.clone(), false));
    let prod = tape.matmul(wv, vv).unwrap();
    let loss = tape.sq_frobenius(prod);
    tape.backward(loss).unwrap();
    let g = tape.grad(wv).unwrap();
    for i in 0..3 {
        let wv_i = w.at(i, 0) * v.at(0, 0) + w.at(i, 1) * v.at(1, 0);
        for j in 0..2 {
            assert!((g.at(i, j) - 2.0 * wv_i * v.at(j, 0)).abs() < 1e-12);
        }
    }
}

#[test]
fn logit_gradient_is_prediction_error() {
    let logits = Tensor::matrix(2, 2, |i, j| if i == j { 0.0 } else { 0.8 - i as f64 * 1.9 });
    let labels = Tensor::matrix(2, 2, |i, j| if i != j && i == 0 { 1.0 } else { 0.0 });
    let mask = Tensor::matrix(2, 2, |i, j| if i < j { 1.0 } else { 0.0 });
    let mut tape = Tape::new();
    let x = tape.leaf(logits.clone(), true);
    let loss = tape.bce_with_logits(x, &labels, &mask).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(x).unwrap();
    let p = 1.0 / (1.0 + (-logits.at(0, 1)).exp());
    assert!((g.at(0, 1) - (p - 1.0)).abs() < 1e-12);
    assert_eq!(g.at(1, 0), 0.0);

    let zeros = tape.constant(Tensor::zeros(&[2, 2]));
    let uniform = tape.bce_with_logits(zeros, &labels, &mask).unwrap();
    assert!((tape.value(uniform).data()[0] - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn dsm_loss_gradient_on_four_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = GraphInstance::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 2, 1.0)]).unwrap();
    let schedule = NoiseSchedule::single(0.4).unwrap();
    let model = EdpGnn::new(ModelConfig { levels: 1, ..ModelConfig::default() }, &mut rng).unwrap();
    let batch = vec![g];
    let noisy = draw_perturbations(&batch, &schedule, &mut rng).unwrap();
    let report = gradient_check(&model, &batch, &noisy, &schedule, 1e-4, 1e-9).unwrap();
    assert_eq!(report.checked, model.params().num_scalars());
    assert!(report.passed(), "{report:?}");
}
