//! Analytic gradients of every operator against central finite differences.

use limbnet_core::gradcheck::{max_relative_error, numerical_gradient, STEP, TOLERANCE};
use limbnet_core::tensor::ops::{self, LstmWeights, Mode};
use limbnet_core::tensor::{ParamSet, ParamTensor, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Fixed random projection turning any output into a scalar loss.
fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn project(t: &Tensor, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

fn with(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv1d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (batch, time, cin, k, cout) in [(1, 5, 1, 2, 1), (2, 7, 3, 3, 4), (3, 9, 2, 5, 3)] {
        let x = random(&[batch, time, cin], &mut rng);
        let w = random(&[k, cin, cout], &mut rng);
        let b = random(&[cout], &mut rng);
        let proj = projection(batch * (time - k + 1) * cout, 5);
        let up = Tensor::new(vec![batch, time - k + 1, cout], proj.clone()).unwrap();
        let g = ops::conv1d_backward(&x, &w, &up).unwrap();

        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
            project(&ops::conv1d_forward(x, w, b).unwrap(), &proj)
        };
        let nx = numerical_gradient(x.data(), STEP, |d| loss(&with(&x, d), &w, &b));
        let nw = numerical_gradient(w.data(), STEP, |d| loss(&x, &with(&w, d), &b));
        let nb = numerical_gradient(b.data(), STEP, |d| loss(&x, &w, &with(&b, d)));
        assert!(max_relative_error(g.input.data(), &nx) < TOLERANCE);
        assert!(max_relative_error(g.kernel.data(), &nw) < TOLERANCE);
        assert!(max_relative_error(g.bias.data(), &nb) < TOLERANCE);
    }
}

#[test]
fn linear_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[4, 6], &mut rng);
    let w = random(&[6, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let proj = projection(12, 6);
    let g = ops::linear_backward(&x, &w, &Tensor::new(vec![4, 3], proj.clone()).unwrap()).unwrap();
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| project(&ops::linear_forward(x, w, b).unwrap(), &proj);
    let nx = numerical_gradient(x.data(), STEP, |d| loss(&with(&x, d), &w, &b));
    let nw = numerical_gradient(w.data(), STEP, |d| loss(&x, &with(&w, d), &b));
    let nb = numerical_gradient(b.data(), STEP, |d| loss(&x, &w, &with(&b, d)));
    assert!(max_relative_error(g.input.data(), &nx) < TOLERANCE);
    assert!(max_relative_error(g.weight.data(), &nw) < TOLERANCE);
    assert!(max_relative_error(g.bias.data(), &nb) < TOLERANCE);
}

#[test]
fn lstm_bptt_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (batch, time, fin, h) = (2, 3, 3, 4);
    let x = random(&[batch, time, fin], &mut rng);
    let w_ih = random(&[fin, 4 * h], &mut rng);
    let w_hh = random(&[h, 4 * h], &mut rng);
    let bias = random(&[4 * h], &mut rng);
    let h0 = random(&[batch, h], &mut rng);
    let c0 = random(&[batch, h], &mut rng);
    let proj = projection(batch * time * h, 7);

    let run = |x: &Tensor, wi: &Tensor, wh: &Tensor, b: &Tensor, h0: &Tensor, c0: &Tensor| {
        let weights = LstmWeights {
            w_ih: wi,
            w_hh: wh,
            bias: b,
        };
        ops::lstm_forward(x, &weights, Some((h0, c0))).unwrap()
    };
    let (_, cache) = run(&x, &w_ih, &w_hh, &bias, &h0, &c0);
    let weights = LstmWeights {
        w_ih: &w_ih,
        w_hh: &w_hh,
        bias: &bias,
    };
    let up = Tensor::new(vec![batch, time, h], proj.clone()).unwrap();
    let g = ops::lstm_backward(&x, &weights, &cache, &up).unwrap();

    let loss = |x: &Tensor, wi: &Tensor, wh: &Tensor, b: &Tensor, h0: &Tensor, c0: &Tensor| {
        project(&run(x, wi, wh, b, h0, c0).0, &proj)
    };
    let checks = [
        (
            g.input.data(),
            numerical_gradient(x.data(), STEP, |d| loss(&with(&x, d), &w_ih, &w_hh, &bias, &h0, &c0)),
        ),
        (
            g.w_ih.data(),
            numerical_gradient(w_ih.data(), STEP, |d| loss(&x, &with(&w_ih, d), &w_hh, &bias, &h0, &c0)),
        ),
        (
            g.w_hh.data(),
            numerical_gradient(w_hh.data(), STEP, |d| loss(&x, &w_ih, &with(&w_hh, d), &bias, &h0, &c0)),
        ),
        (
            g.bias.data(),
            numerical_gradient(bias.data(), STEP, |d| loss(&x, &w_ih, &w_hh, &with(&bias, d), &h0, &c0)),
        ),
        (
            g.h0.data(),
            numerical_gradient(h0.data(), STEP, |d| loss(&x, &w_ih, &w_hh, &bias, &with(&h0, d), &c0)),
        ),
        (
            g.c0.data(),
            numerical_gradient(c0.data(), STEP, |d| loss(&x, &w_ih, &w_hh, &bias, &h0, &with(&c0, d))),
        ),
    ];
    for (i, (analytic, numeric)) in checks.iter().enumerate() {
        let err = max_relative_error(analytic, numeric);
        assert!(err < TOLERANCE, "lstm gradient #{i}: rel err {err}");
    }
}

#[test]
fn sigmoid_and_softmax_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[3, 4], &mut rng);
    let proj = projection(12, 8);
    let up = Tensor::new(vec![3, 4], proj.clone()).unwrap();

    let s = ops::sigmoid(&x);
    let analytic = ops::sigmoid_backward(&s, &up);
    let numeric = numerical_gradient(x.data(), STEP, |d| project(&ops::sigmoid(&with(&x, d)), &proj));
    assert!(max_relative_error(analytic.data(), &numeric) < TOLERANCE);

    let p = ops::softmax(&x).unwrap();
    let analytic = ops::softmax_backward(&p, &up).unwrap();
    let numeric = numerical_gradient(x.data(), STEP, |d| {
        project(&ops::softmax(&with(&x, d)).unwrap(), &proj)
    });
    assert!(max_relative_error(analytic.data(), &numeric) < TOLERANCE);
}

#[test]
fn losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let logits = random(&[4, 5], &mut rng);
    let targets = [0, 3, 4, 1];
    let (_, g) = ops::cross_entropy_loss(&logits, &targets).unwrap();
    let numeric = numerical_gradient(logits.data(), STEP, |d| {
        ops::cross_entropy_loss(&with(&logits, d), &targets).unwrap().0
    });
    assert!(max_relative_error(g.data(), &numeric) < TOLERANCE);

    let probs = Tensor::from_fn(&[3, 4], |_| rng.random_range(0.05..0.95));
    let t = Tensor::from_fn(&[3, 4], |i| (i % 3 == 0) as u8 as f64);
    let (_, g) = ops::bce_loss(&probs, &t).unwrap();
    let numeric = numerical_gradient(probs.data(), STEP, |d| ops::bce_loss(&with(&probs, d), &t).unwrap().0);
    assert!(max_relative_error(g.data(), &numeric) < TOLERANCE);
}

#[test]
fn tape_composition_matches_finite_differences() {
    // slice -> conv -> relu -> flatten -> concat -> linear -> dropout -> softmax
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut params = ParamSet::new();
    let k0 = params.insert(ParamTensor::new("k0", random(&[2, 2, 3], &mut rng))).unwrap();
    let b0 = params.insert(ParamTensor::new("b0", random(&[3], &mut rng))).unwrap();
    let k1 = params.insert(ParamTensor::new("k1", random(&[3, 1, 2], &mut rng))).unwrap();
    let b1 = params.insert(ParamTensor::new("b1", random(&[2], &mut rng))).unwrap();
    let w = params.insert(ParamTensor::new("w", random(&[4 * 3 + 3 * 2, 3], &mut rng))).unwrap();
    let b = params.insert(ParamTensor::new("b", random(&[3], &mut rng))).unwrap();
    let x = random(&[2, 5, 3], &mut rng);
    let proj = projection(6, 9);

    let forward = |params: &ParamSet, x: &Tensor| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let inp = tape.input(x.clone());
        let left = tape.slice_channels(inp, &[0, 2]).unwrap();
        let right = tape.slice_channels(inp, &[1]).unwrap();
        let l = tape.conv1d(params, left, k0, b0).unwrap();
        let l = tape.relu(l);
        let l = tape.flatten(l).unwrap();
        let r = tape.conv1d(params, right, k1, b1).unwrap();
        let r = tape.flatten(r).unwrap();
        let cat = tape.concat(&[l, r]).unwrap();
        let y = tape.linear(params, cat, w, b).unwrap();
        let y = tape.dropout(y, 0.3, Mode::Train, &mut drop_rng).unwrap();
        let y = tape.softmax(y).unwrap();
        (tape, inp, y)
    };
    let (tape, inp, y) = forward(&params, &x);
    let up = Tensor::new(vec![2, 3], proj.clone()).unwrap();
    let mut grads_params = params.clone();
    let grads = tape.backward(&mut grads_params, vec![(y, up)]).unwrap();

    let numeric_x = numerical_gradient(x.data(), STEP, |d| {
        let (t, _, y) = forward(&params, &with(&x, d));
        project(t.value(y), &proj)
    });
    let gx = grads[inp.0].as_ref().unwrap();
    assert!(max_relative_error(gx.data(), &numeric_x) < TOLERANCE);

    for p in params.iter() {
        let name = p.name.clone();
        let numeric = numerical_gradient(p.value.data(), STEP, |d| {
            let mut probe = params.clone();
            probe.by_name_mut(&name).unwrap().value = with(&p.value, d);
            let (t, _, y) = forward(&probe, &x);
            project(t.value(y), &proj)
        });
        let analytic = grads_params.by_name(&name).unwrap().grad.data().to_vec();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < TOLERANCE, "{name}: rel err {err}");
    }

    // replay reproduces the recorded forward bit-for-bit
    let replayed = tape.replay(&params).unwrap();
    assert_eq!(&replayed[y.0], tape.value(y));
}
