//! Central finite differences against reverse-mode gradients.

mod common;

use common::{composed_grad_error, core_op_cases, max_grad_error, perturbed_params, random_sequences, tiny_config};
use saved::augment::stream;
use saved::autograd::Graph;
use saved::encoder::{bind, forward_batch, EncoderConfig, ModelParameters};
use saved::loss::{nt_xent_graph, LossConfig};
use saved::trainer::contrastive_gradients;

const TOL: f64 = 1e-6;

#[test]
fn every_core_op() {
    let failures: Vec<String> = core_op_cases()
        .into_iter()
        .filter_map(|(name, inputs, build)| {
            let err = max_grad_error(&inputs, build);
            (err >= TOL).then(|| format!("{name}: {err:e}"))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn encoder_and_loss_composed() {
    let err = composed_grad_error();
    assert!(err < TOL, "max relative error {err:e}");
}

#[test]
fn staged_gradients_match_single_graph() {
    let cfg = EncoderConfig {
        dropout_rate: 0.0,
        ..tiny_config()
    };
    let params = ModelParameters::init(&cfg, 9).unwrap();
    let vi = random_sequences(3, &cfg, 5);
    let vj = random_sequences(3, &cfg, 6);
    let (loss, staged) =
        contrastive_gradients(&params, &vi, &vj, &LossConfig::default(), true, 0, false).unwrap();

    let mut g = Graph::new();
    let p = bind(&mut g, &params);
    let zi = forward_batch(&mut g, &cfg, &p, &vi, true, &mut stream(0)).unwrap();
    let zj = forward_batch(&mut g, &cfg, &p, &vj, true, &mut stream(0)).unwrap();
    let l = nt_xent_graph(&mut g, zi, zj, &LossConfig::default()).unwrap();
    g.backward(l).unwrap();
    assert!((g.value(l).item() - loss).abs() < 1e-12);
    for (k, v) in p.vars.iter().enumerate() {
        for (a, b) in g.grad(*v).unwrap().iter().zip(&staged[k]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn parallel_gradients_are_identical() {
    let cfg = tiny_config();
    let params = perturbed_params(&cfg, 4);
    let vi = random_sequences(4, &cfg, 7);
    let vj = random_sequences(4, &cfg, 8);
    let serial =
        contrastive_gradients(&params, &vi, &vj, &LossConfig::default(), true, 3, false).unwrap();
    let parallel =
        contrastive_gradients(&params, &vi, &vj, &LossConfig::default(), true, 3, true).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = tiny_config();
    let params = perturbed_params(&cfg, 5);
    let vi = random_sequences(4, &cfg, 9);
    let vj = random_sequences(4, &cfg, 10);
    let (_, grads) =
        contrastive_gradients(&params, &vi, &vj, &LossConfig::default(), true, 1, false).unwrap();
    for (k, g) in grads.iter().enumerate() {
        assert!(g.iter().any(|&x| x != 0.0), "tensor {k} got no gradient");
    }
}
