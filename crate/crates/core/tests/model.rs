//! End-to-end checks on small networks.

use limbnet_core::data::LimbGrouping;
use limbnet_core::gradcheck::{max_relative_error, numerical_gradient, STEP, TOLERANCE};
use limbnet_core::model::{Fusion, HeadKind, Model, ModelConfig, Targets};
use limbnet_core::tensor::ops::Mode;
use limbnet_core::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(fusion: Fusion, head: HeadKind) -> ModelConfig {
    let limbs = LimbGrouping::new(vec![("left".into(), vec![0, 2]), ("right".into(), vec![1, 3])], 4).unwrap();
    let outputs = if head == HeadKind::Softmax { 3 } else { 4 };
    ModelConfig {
        kernel_len: 3,
        filters: 8,
        branch_units: 16,
        fusion_units: 16,
        dropout: 0.3,
        ..ModelConfig::standard(limbs, 12, fusion, head, outputs)
    }
}

fn batch(seed: u64, b: usize, channels: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[b, 12, channels], |_| rng.random_range(-1.0..1.0))
}

fn targets(head: HeadKind) -> Targets {
    match head {
        HeadKind::Softmax => Targets::Classes(vec![0, 2, 1]),
        HeadKind::Sigmoid => Targets::Bits(Tensor::from_fn(&[3, 4], |i| ((i * 7) % 3 == 0) as u8 as f64)),
    }
}

fn loss(model: &Model, x: &Tensor, t: &Targets) -> f64 {
    // same dropout masks on every evaluation
    let pass = model.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    model.loss(&pass, t).unwrap().0
}

fn with_param(model: &Model, name: &str, data: &[f64]) -> Model {
    let mut m = model.clone();
    let p = m.params_mut().by_name_mut(name).unwrap();
    p.value = Tensor::new(p.value.shape().to_vec(), data.to_vec()).unwrap();
    m
}

#[test]
fn every_parameter_matches_finite_differences() {
    for fusion in [Fusion::Mlp, Fusion::Lstm] {
        for head in [HeadKind::Softmax, HeadKind::Sigmoid] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut model = Model::build(tiny(fusion, head), &mut rng).unwrap();
            // non-zero biases so their gradients are exercised away from the init point
            for p in model.params_mut().iter_mut() {
                if p.name.ends_with("bias") {
                    p.value = p.value.map(|_| rng.random_range(-0.1..0.1));
                }
            }
            let x = batch(5, 3, 4);
            let t = targets(head);
            let mut trained = model.clone();
            let pass = trained.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
            let (_, seed) = trained.loss(&pass, &t).unwrap();
            trained.backward(&pass, seed).unwrap();
            for p in model.params().iter() {
                let numeric = numerical_gradient(p.value.data(), STEP, |d| loss(&with_param(&model, &p.name, d), &x, &t));
                let analytic = trained.params().by_name(&p.name).unwrap().grad.data();
                let err = max_relative_error(analytic, &numeric);
                assert!(err < TOLERANCE, "{fusion:?}/{head:?} {}: rel err {err}", p.name);
            }
        }
    }
}

#[test]
fn zero_weights_give_uniform_softmax() {
    let mut model = Model::build(tiny(Fusion::Mlp, HeadKind::Softmax), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for p in model.params_mut().iter_mut() {
        p.value.fill(0.0);
    }
    let p = model.predict(&batch(2, 4, 4)).unwrap();
    assert!(p.scores.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn eval_forward_is_deterministic_and_normalized() {
    for fusion in [Fusion::Mlp, Fusion::Lstm] {
        let model = Model::build(tiny(fusion, HeadKind::Softmax), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = batch(9, 5, 4).map(|v| v * 50.0);
        let a = model.predict(&x).unwrap();
        let b = model.predict(&x).unwrap();
        assert_eq!(a, b);
        for r in 0..5 {
            assert!((a.scores.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn swapping_limbs_and_their_parameters_keeps_outputs() {
    for fusion in [Fusion::Mlp, Fusion::Lstm] {
        let cfg = tiny(fusion, HeadKind::Softmax);
        let model = Model::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut swapped_limbs = cfg.limbs.limbs().to_vec();
        swapped_limbs.swap(0, 1);
        let swapped_cfg = ModelConfig {
            limbs: LimbGrouping::new(swapped_limbs, 4).unwrap(),
            ..cfg.clone()
        };
        // branch parameters travel by name; the first fusion layer sees the
        // concatenated features in the other order, so its input rows swap
        let mut params = ParamSet::new();
        let b = cfg.branch_units;
        for p in model.params().iter() {
            let mut q = p.clone();
            let first_fusion_input = match fusion {
                Fusion::Mlp => p.name == "fusion.0.weight",
                Fusion::Lstm => p.name == "fusion.0.w_ih",
            };
            if first_fusion_input {
                let cols = p.value.dim(1);
                let data = p.value.data();
                let mut out = data[b * cols..2 * b * cols].to_vec();
                out.extend_from_slice(&data[..b * cols]);
                q.value = Tensor::new(p.value.shape().to_vec(), out).unwrap();
            }
            params.insert(q).unwrap();
        }
        let other = Model::from_params(swapped_cfg, params).unwrap();
        let x = batch(4, 3, 4);
        let d = model.predict(&x).unwrap().scores.max_abs_diff(&other.predict(&x).unwrap().scores);
        assert!(d < 1e-12, "{fusion:?}: {d}");
    }
}

#[test]
fn branches_are_independent() {
    for fusion in [Fusion::Mlp, Fusion::Lstm] {
        let model = Model::build(tiny(fusion, HeadKind::Softmax), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = batch(6, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = model.forward(&x, Mode::Eval, &mut rng).unwrap();
        for (limb, (_, channels)) in model.config().limbs.limbs().iter().enumerate() {
            let mut z = x.clone();
            for (i, v) in z.data_mut().iter_mut().enumerate() {
                if channels.contains(&(i % 4)) {
                    *v = 0.0;
                }
            }
            let pass = model.forward(&z, Mode::Eval, &mut rng).unwrap();
            for (j, (&a, &b)) in base.branch_outputs.iter().zip(&pass.branch_outputs).enumerate() {
                let same = base.tape.value(a) == pass.tape.value(b);
                assert_eq!(same, j != limb, "{fusion:?}: zeroing limb {limb} vs branch {j}");
            }
        }
    }
}
