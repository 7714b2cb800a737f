use super::*;
use crate::rng::substream;

fn default_net() -> Cnn {
    Cnn::new(&CnnConfig::default()).unwrap()
}

fn random_batch(seed: u64, n: usize, len: usize) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, 99);
    (0..n)
        .map(|_| (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

#[test]
fn default_architecture_matches_reference_table() {
    let layers = architecture(&CnnConfig::default()).unwrap();
    let shapes: Vec<String> = layers.iter().map(|l| l.output.to_string()).collect();
    assert_eq!(
        shapes,
        [
            "(None, 78, 128)",
            "(None, 39, 128)",
            "(None, 37, 64)",
            "(None, 18, 64)",
            "(None, 16, 32)",
            "(None, 8, 32)",
            "(None, 6, 16)",
            "(None, 3, 16)",
            "(None, 48)",
            "(None, 48)",
            "(None, 64)",
            "(None, 64)",
            "(None, 32)",
            "(None, 32)",
            "(None, 1)",
        ]
    );
    let params = CnnParameters::zeros(&layers);
    assert_eq!(params.layer_counts(), vec![512, 24640, 6176, 1552, 3136, 2080, 33]);
    assert_eq!(params.len(), 38129);
}

#[test]
fn forty_dim_input_cannot_fit_four_conv_stages() {
    let cfg = CnnConfig {
        input_len: 40,
        ..CnnConfig::default()
    };
    assert!(matches!(architecture(&cfg), Err(CnnError::ShapeMismatch(_))));
}

#[test]
fn conv_shape_and_param_count() {
    let x = vec![0.5; 80];
    let out = kernels::conv1d_valid(&x, 1, &vec![0.01; 384], 3, 128, &[0.0; 128]).unwrap();
    assert_eq!(out.len(), 78 * 128);
    assert_eq!(3 * 128 + 128, 512);
    assert!(kernels::conv1d_valid(&[1.0, 2.0], 1, &[0.0; 3], 3, 1, &[0.0]).is_err());
}

#[test]
fn conv_delta_kernel_shifts_input() {
    let x: Vec<f64> = (0..10).map(|i| i as f64 * 1.5).collect();
    let mut w = vec![0.0; 3 * 2];
    // w[k=1][c=0][o=0] = 1
    w[2] = 1.0;
    let out = kernels::conv1d_valid(&x, 1, &w, 3, 2, &[0.0, 0.0]).unwrap();
    for t in 0..8 {
        assert_eq!(out[t * 2], x[t + 1]);
        assert_eq!(out[t * 2 + 1], 0.0);
    }
}

#[test]
fn conv_matches_triple_loop() {
    let (len, c_in, c_out, k) = (6, 2, 3, 3);
    let mut rng = substream(5, 0);
    let x: Vec<f64> = (0..len * c_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..k * c_in * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = kernels::conv1d_valid(&x, c_in, &w, k, c_out, &b).unwrap();
    for t in 0..len - k + 1 {
        for o in 0..c_out {
            let mut acc = b[o];
            for kk in 0..k {
                for c in 0..c_in {
                    acc += x[(t + kk) * c_in + c] * w[(kk * c_in + c) * c_out + o];
                }
            }
            assert!((out[t * c_out + o] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn maxpool_examples() {
    assert_eq!(kernels::maxpool1d_2(&[1.0, 3.0, 2.0, 0.0], 1), vec![3.0, 2.0]);
    assert_eq!(kernels::maxpool1d_2(&vec![0.0; 37], 1).len(), 18);
    let inc: Vec<f64> = (0..9).map(|i| i as f64).collect();
    assert_eq!(kernels::maxpool1d_2(&inc, 1), vec![1.0, 3.0, 5.0, 7.0]);
    // Two channels pool independently.
    assert_eq!(kernels::maxpool1d_2(&[1.0, 9.0, 4.0, 2.0], 2), vec![4.0, 9.0]);
}

#[test]
fn zero_network_outputs_one_half() {
    let net = default_net();
    let probs = net.predict(&net.zero_params(), &random_batch(1, 5, 80)).unwrap();
    assert!(probs.iter().all(|&p| p == 0.5));
}

#[test]
fn eval_is_deterministic_and_batch_equivariant() {
    let net = default_net();
    let params = net.init_params(&mut substream(3, 1));
    let batch = random_batch(2, 8, 80);
    let a = net.predict(&params, &batch).unwrap();
    let b = net.predict(&params, &batch).unwrap();
    assert_eq!(a, b);
    let mut reversed = batch.clone();
    reversed.reverse();
    let mut c = net.predict(&params, &reversed).unwrap();
    c.reverse();
    assert_eq!(a, c);
    assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn wrong_input_length_is_rejected() {
    let net = default_net();
    let err = net.predict(&net.zero_params(), &[vec![0.0; 79]]).unwrap_err();
    assert!(matches!(err, CnnError::ShapeMismatch(_)));
}

#[test]
fn bce_examples() {
    assert!((bce_loss(&[0.5], &[1]) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bce_loss(&[1.0, 0.0], &[1, 0]) <= 1e-6);
    assert!((bce_loss(&[0.9, 0.1], &[1, 0]) - 0.10536).abs() < 1e-4);
}

/// Loss with every dropout mask of `pass` held fixed.
fn loss_with_masks(net: &Cnn, params: &CnnParameters, batch: &[Vec<f64>], labels: &[u8], pass: &ForwardPass) -> f64 {
    let probs: Vec<f64> = batch
        .iter()
        .zip(&pass.traces)
        .map(|(x, t)| net.forward_one(params, x, Some(t.masks.clone())).acts.last().unwrap()[0])
        .collect();
    weighted_bce(&probs, labels, net.cfg.class_weights)
}

/// ReLU on/off pattern and pooling winners: the piecewise-linear region the
/// parameters sit in.
fn activation_pattern(net: &Cnn, params: &CnnParameters, batch: &[Vec<f64>], pass: &ForwardPass) -> Vec<u32> {
    let mut pattern = Vec::new();
    for (x, t) in batch.iter().zip(&pass.traces) {
        let trace = net.forward_one(params, x, Some(t.masks.clone()));
        for (layer, act) in net.layers.iter().zip(&trace.acts) {
            if matches!(layer.kind, LayerKind::Conv1d { .. } | LayerKind::Dense { .. }) {
                pattern.extend(act.iter().map(|&v| u32::from(v > 0.0)));
            }
        }
        for idx in &trace.argmax {
            pattern.extend(idx);
        }
    }
    pattern
}

fn finite_difference_check(cfg: CnnConfig, seed: u64) {
    let net = Cnn::new(&cfg).unwrap();
    let mut rng = substream(seed, 0);
    let mut params = net.init_params(&mut rng);
    for slot in &params.slots.clone() {
        for b in &mut params.data[slot.bias.clone()] {
            *b = rng.gen_range(-0.05..0.05);
        }
    }
    let batch = random_batch(seed + 1, 4, cfg.input_len);
    let labels = [1u8, 0, 1, 0];
    let pass = net.forward(&params, &batch, Mode::Train(&mut rng)).unwrap();
    let grads = net.backward(&params, &batch, &labels, &pass).unwrap();
    let base_pattern = activation_pattern(&net, &params, &batch, &pass);

    // Seven weights and three biases from every trainable layer. A central
    // difference straddling a ReLU kink or a pooling switch measures a
    // different linear piece, so such coordinates are redrawn.
    let h = 1e-4;
    let mut checked = 0;
    let mut skipped = 0;
    for slot in params.slots.clone() {
        for (range, wanted) in [(slot.weight.clone(), 7), (slot.bias.clone(), 3)] {
            let mut done = 0;
            while done < wanted {
                let i = rng.gen_range(range.clone());
                let mut plus = params.clone();
                plus.data[i] += h;
                let mut minus = params.clone();
                minus.data[i] -= h;
                if activation_pattern(&net, &plus, &batch, &pass) != base_pattern
                    || activation_pattern(&net, &minus, &batch, &pass) != base_pattern
                {
                    skipped += 1;
                    assert!(skipped < 200, "too many kink crossings");
                    continue;
                }
                let numeric = (loss_with_masks(&net, &plus, &batch, &labels, &pass)
                    - loss_with_masks(&net, &minus, &batch, &labels, &pass))
                    / (2.0 * h);
                let analytic = grads.data[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
                assert!(rel < 1e-4, "param {i}: analytic {analytic} numeric {numeric}");
                done += 1;
                checked += 1;
            }
        }
    }
    assert!(checked >= 50);
}

#[test]
fn gradients_match_finite_differences() {
    finite_difference_check(CnnConfig::default(), 11);
}

#[test]
fn gradients_match_finite_differences_with_class_weights() {
    let cfg = CnnConfig {
        class_weights: Some([0.6, 2.5]),
        ..CnnConfig::default()
    };
    finite_difference_check(cfg, 23);
}

#[test]
fn saturated_correct_outputs_have_zero_gradient() {
    let net = default_net();
    let mut params = net.init_params(&mut substream(4, 0));
    let last = params.slots.last().unwrap().bias.start;
    params.data[last] = 40.0;
    let batch = random_batch(9, 6, 80);
    let labels = [1u8; 6];
    let pass = net.forward(&params, &batch, Mode::Train(&mut substream(4, 1))).unwrap();
    let grads = net.backward(&params, &batch, &labels, &pass).unwrap();
    let norm = grads.data.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-6);
}

#[test]
fn output_bias_gradient_is_mean_residual() {
    let net = default_net();
    let params = net.init_params(&mut substream(6, 0));
    let batch = random_batch(10, 7, 80);
    let labels = [1u8, 0, 0, 1, 1, 0, 1];
    let pass = net.forward(&params, &batch, Mode::Train(&mut substream(6, 1))).unwrap();
    let grads = net.backward(&params, &batch, &labels, &pass).unwrap();
    let expected = pass
        .probs
        .iter()
        .zip(&labels)
        .map(|(p, &y)| p - y as f64)
        .sum::<f64>()
        / 7.0;
    let last = params.slots.len() - 1;
    assert!((grads.bias(last)[0] - expected).abs() < 1e-12);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let cfg = CnnConfig::default();
    let mut adam = Adam::new(&cfg, 4);
    let mut p = vec![0.0, 1.0, -1.0, 5.0];
    let g = [0.3, -2.0, 1e-3, 40.0];
    adam.step(&mut p, &g);
    let deltas = [0.0 - p[0], 1.0 - p[1], -1.0 - p[2], 5.0 - p[3]];
    for (d, gi) in deltas.iter().zip(g) {
        // m_hat = g, v_hat = g^2 after bias correction.
        let expected = cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
        assert!((d - expected).abs() < 1e-15);
        assert!((d.abs() - cfg.learning_rate).abs() < 1e-7);
    }
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let mut adam = Adam::new(&CnnConfig::default(), 3);
    let mut p = vec![0.25, -3.0, 7.0];
    for _ in 0..100 {
        adam.step(&mut p, &[0.0; 3]);
    }
    assert_eq!(p, vec![0.25, -3.0, 7.0]);
}

#[test]
fn early_stopping_patience_arithmetic() {
    let mut s = EarlyStopping::new(100);
    let mut stopped = None;
    for epoch in 1..=1000 {
        if s.observe(epoch, 0.7) == StopDecision::Stop {
            stopped = Some(epoch);
            break;
        }
    }
    assert_eq!(stopped, Some(101));
    assert_eq!(s.best_epoch, 1);

    let mut s = EarlyStopping::new(100);
    for epoch in 1..=1000 {
        assert_eq!(s.observe(epoch, 1.0 / epoch as f64), StopDecision::Improved);
    }
}

#[test]
fn training_is_reproducible_and_keeps_best_epoch() {
    let cfg = CnnConfig {
        max_epochs: 6,
        patience: 3,
        seed: 5,
        ..CnnConfig::default()
    };
    let x = random_batch(1, 40, 80);
    let y: Vec<u8> = x.iter().map(|r| u8::from(r[10] > 0.0)).collect();
    let (p1, r1) = train(&cfg, &x[..30], &y[..30], &x[30..], &y[30..]).unwrap();
    let (p2, r2) = train(&cfg, &x[..30], &y[..30], &x[30..], &y[30..]).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    let min = r1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r1.best_val_loss, min);
    assert!(r1.stopped_epoch - r1.best_epoch <= cfg.patience);
    let net = Cnn::new(&cfg).unwrap();
    let reloaded = bce_loss(&net.predict(&p1, &x[30..]).unwrap(), &y[30..]);
    assert!((reloaded - r1.best_val_loss).abs() < 1e-12);
}

#[test]
fn weights_round_trip_and_reject_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let cfg = CnnConfig::default();
    let net = Cnn::new(&cfg).unwrap();
    let params = net.init_params(&mut substream(8, 0));
    save_weights(&params, &cfg, &path).unwrap();
    assert_eq!(load_weights(&path, &cfg).unwrap(), params);

    let other = CnnConfig {
        conv_filters: vec![64, 64, 32, 16],
        ..cfg.clone()
    };
    assert!(matches!(
        load_weights(&path, &other),
        Err(CnnError::ArchitectureMismatch { .. })
    ));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_weights(&path, &cfg), Err(CnnError::Io(_))));
    assert!(matches!(
        load_weights(dir.path().join("missing.bin"), &cfg),
        Err(CnnError::Io(_))
    ));
}
