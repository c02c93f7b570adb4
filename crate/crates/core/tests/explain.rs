//! Relevance propagation on randomly initialized small networks.

use limbnet_core::data::LimbGrouping;
use limbnet_core::explain::{lrp_explain, positive_rms_per_limb, write_relevance_csv, DEFAULT_EPSILON};
use limbnet_core::model::{Fusion, HeadKind, Model, ModelConfig};
use limbnet_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIN: usize = 14;
const CH: usize = 5;

fn config(limbs: LimbGrouping, fusion: Fusion) -> ModelConfig {
    ModelConfig {
        conv_layers: 2,
        kernel_len: 3,
        filters: 6,
        branch_units: 12,
        fusion_units: 10,
        ..ModelConfig::standard(limbs, WIN, fusion, HeadKind::Softmax, 3)
    }
}

fn groupings() -> Vec<LimbGrouping> {
    vec![
        LimbGrouping::single(CH),
        LimbGrouping::new(vec![("l".into(), vec![0, 3]), ("r".into(), vec![1, 2, 4])], CH).unwrap(),
    ]
}

/// Random weights and biases; bias magnitudes stay small next to the
/// pre-activations so the networks are not dominated by constant terms.
fn random_model(limbs: LimbGrouping, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::build(config(limbs, Fusion::Mlp), &mut rng).unwrap();
    for p in m.params_mut().iter_mut() {
        if p.name.ends_with("bias") {
            p.value = p.value.map(|_| rng.random_range(-0.05..0.05));
        }
    }
    m
}

fn window(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[WIN, CH], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn every_layer_conserves_relevance() {
    for (g, limbs) in groupings().into_iter().enumerate() {
        for seed in 0..10 {
            let m = random_model(limbs.clone(), seed);
            for class in 0..3 {
                let e = lrp_explain(&m, &window(100 + seed), class, DEFAULT_EPSILON).unwrap();
                assert!(!e.layers.is_empty());
                for l in &e.layers {
                    let err = l.conservation_error();
                    assert!(err <= 1e-3, "grouping {g} seed {seed} class {class} {} node {}: {err}", l.kind, l.node);
                }
                // what is not absorbed by biases and stabilizers reaches the input
                let absorbed: f64 = e.layers.iter().map(|l| l.bias_absorbed + l.stabilizer_absorbed).sum();
                let total = e.map.relevance.sum() + absorbed;
                assert!((total - e.map.score).abs() <= 1e-3 * e.map.score.abs().max(1e-12), "{total} vs {}", e.map.score);
            }
        }
    }
}

#[test]
fn bias_free_network_conserves_up_to_epsilon() {
    let mut m = random_model(LimbGrouping::single(CH), 3);
    for p in m.params_mut().iter_mut() {
        if p.name.ends_with("bias") {
            p.value.fill(0.0);
        }
    }
    let e = lrp_explain(&m, &window(1), 0, DEFAULT_EPSILON).unwrap();
    assert!((e.map.relevance.sum() - e.map.score).abs() < 1e-6 * e.map.score.abs());
}

#[test]
fn disconnected_channel_gets_exactly_zero() {
    for limbs in groupings() {
        let mut m = random_model(limbs.clone(), 11);
        let dead = 3;
        // zero every first-layer weight reading the dead channel
        let (branch, pos) = limbs
            .limbs()
            .iter()
            .find_map(|(name, chans)| chans.iter().position(|&c| c == dead).map(|p| (name.clone(), p)))
            .unwrap();
        let p = m.params_mut().by_name_mut(&format!("branch.{branch}.conv0.kernel")).unwrap();
        let (k, cin, cout) = (p.value.dim(0), p.value.dim(1), p.value.dim(2));
        for ki in 0..k {
            for o in 0..cout {
                p.value.data_mut()[(ki * cin + pos) * cout + o] = 0.0;
            }
        }
        let e = lrp_explain(&m, &window(12), 1, DEFAULT_EPSILON).unwrap();
        let r = &e.map.relevance;
        for t in 0..WIN {
            assert_eq!(r.data()[t * CH + dead], 0.0);
        }
        assert!(r.data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn map_shape_and_limb_rms() {
    let limbs = groupings().remove(1);
    let m = random_model(limbs.clone(), 2);
    let e = lrp_explain(&m, &window(3), 2, DEFAULT_EPSILON).unwrap();
    assert_eq!(e.map.relevance.shape(), &[WIN, CH]);
    assert_eq!(e.map.class, 2);
    let rms = positive_rms_per_limb(&e.map, &limbs).unwrap();
    assert_eq!(rms.iter().map(|r| r.limb.as_str()).collect::<Vec<_>>(), ["l", "r"]);
    // order of channels inside a limb does not matter
    let swapped = LimbGrouping::new(vec![("l".into(), vec![3, 0]), ("r".into(), vec![4, 1, 2])], CH).unwrap();
    let again = positive_rms_per_limb(&e.map, &swapped).unwrap();
    for (a, b) in rms.iter().zip(&again) {
        assert!((a.rms - b.rms).abs() < 1e-15);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rel.csv");
    let names: Vec<String> = (0..CH).map(|c| format!("ch{c}")).collect();
    write_relevance_csv(&path, &e.map, &names).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + WIN * CH);
    assert!(text.starts_with("frame,channel_name,relevance\n0,ch0,"));
}

#[test]
fn lstm_and_sigmoid_models_are_refused() {
    let lstm = Model::build(config(LimbGrouping::single(CH), Fusion::Lstm), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(lrp_explain(&lstm, &window(0), 0, DEFAULT_EPSILON), Err(Error::Unsupported(_))));
    let sig = Model::build(
        ModelConfig {
            head: HeadKind::Sigmoid,
            ..config(LimbGrouping::single(CH), Fusion::Mlp)
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(lrp_explain(&sig, &window(0), 0, DEFAULT_EPSILON).is_err());
    let mlp = random_model(LimbGrouping::single(CH), 0);
    assert!(lrp_explain(&mlp, &window(0), 3, DEFAULT_EPSILON).is_err());
}
