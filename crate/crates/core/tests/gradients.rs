mod common;

use affectsr::losses::{embedding_l2, pixel_l1, style_loss, total_loss, train_hist_loss, IdentityExtractor};
use affectsr::nn::Mode;
use affectsr::synth::synth_pairs;
use affectsr::training::{Batch, Trainer};
use affectsr::{ModelConfig, TrainConfig, Variant};
use candle_core::{DType, Var};
use common::{grad_check, grad_check_many, rand_tensor, rng};

const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

#[test]
fn pixel_l1_gradient() {
    let mut r = rng(1);
    let sr = Var::from_tensor(&rand_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0)).unwrap();
    let hr = rand_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0);
    let err = grad_check(&sr, &|| pixel_l1(sr.as_tensor(), &hr).unwrap(), 96, H, 0);
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn style_loss_gradient() {
    let mut r = rng(2);
    let sr = Var::from_tensor(&rand_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0)).unwrap();
    let hr = rand_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0);
    let err = grad_check(
        &sr,
        &|| style_loss(sr.as_tensor(), &hr, &IdentityExtractor).unwrap(),
        96,
        H,
        0,
    );
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn embedding_l2_gradient() {
    let mut r = rng(3);
    let a = Var::from_tensor(&rand_tensor(&mut r, &[2, 4, 4], -1.0, 1.0)).unwrap();
    let b = rand_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
    let err = grad_check(&a, &|| embedding_l2(a.as_tensor(), &b).unwrap(), 32, H, 0);
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn histogram_loss_gradient() {
    let mut r = rng(4);
    let sr = Var::from_tensor(&rand_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0)).unwrap();
    let hr = rand_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0);
    let err = grad_check(&sr, &|| train_hist_loss(sr.as_tensor(), &hr).unwrap(), 96, H, 0);
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn histogram_gradient_is_zero_outside_unit_range() {
    let mut r = rng(5);
    let sr = Var::from_tensor(&rand_tensor(&mut r, &[1, 3, 4, 4], 1.1, 1.5)).unwrap();
    let hr = rand_tensor(&mut r, &[1, 3, 4, 4], 0.0, 1.0);
    let g = train_hist_loss(sr.as_tensor(), &hr).unwrap().backward().unwrap();
    let v = common::values(g.get(&sr).unwrap());
    assert!(v.iter().all(|x| *x == 0.0));
}

fn tiny_trainer(variant: Variant, scale: usize) -> (Trainer, Batch) {
    let model = affectsr::init_params(&ModelConfig::tiny(scale, variant).with_seed(7), None, DType::F64).unwrap();
    let trainer = Trainer::new(model, TrainConfig::default()).unwrap();
    let samples = synth_pairs(2, 40, scale).unwrap();
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>()).unwrap();
    (trainer, batch)
}

/// Finite differences through the whole network, pooled over coordinates
/// drawn from every trainable tensor.
#[test]
fn end_to_end_total_loss_gradient() {
    let (trainer, batch) = tiny_trainer(Variant::Full, 8);
    let weights = trainer.config().weights;
    let vars: Vec<Var> = trainer
        .model()
        .params()
        .trainable()
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let trainer = std::cell::RefCell::new(trainer);
    let f = || {
        let c = trainer.borrow_mut().components(&batch, Mode::Train).unwrap();
        total_loss(&c, &weights).unwrap()
    };
    let err = grad_check_many(&vars, &f, 2, H, 11);
    assert!(err <= TOL, "relative error {err}");
}
