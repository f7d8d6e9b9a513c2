use ptinfer_core::engine::{
    encoder_block_forward, model_forward, plaintext_reference_forward, reference_block_forward, reveal_to_client,
    share_input, ModelBundle, ModelConfig,
};
use ptinfer_core::mpc::cost::Category;
use ptinfer_core::mpc::session::{run_local, Backend, SessionConfig};
use ptinfer_core::nn::OperatorVariant;
use ptinfer_core::{FixedPointParams, PlainTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn input(s: usize, e: usize, seed: u64) -> PlainTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..s * e).map(|_| rng.gen_range(-2.0..2.0)).collect();
    PlainTensor::encode(vec![s, e], &v, &FixedPointParams::default()).unwrap()
}

fn session(seed: u64) -> SessionConfig {
    SessionConfig {
        poly_degree: 4096,
        seed,
        ..Default::default()
    }
}

/// Private block on `x`, revealed to the client; also returns client byte total.
fn private_block(cfg: &ModelConfig, b: &ModelBundle, x: &PlainTensor, v: OperatorVariant, valid: usize) -> (PlainTensor, u64) {
    let shape = x.shape().to_vec();
    let (out, _) = run_local(
        session(1),
        |s| {
            let xs = share_input(s, Some(x), &shape)?;
            let y = encoder_block_forward(s, cfg, None, &xs, v, valid)?;
            Ok((reveal_to_client(s, &y)?.unwrap(), s.report().total_bytes()))
        },
        |s| {
            let xs = share_input(s, None, &shape)?;
            let y = encoder_block_forward(s, cfg, Some(b.block(0)), &xs, v, valid)?;
            reveal_to_client(s, &y)
        },
    )
    .unwrap();
    out
}

fn max_abs(a: &PlainTensor, b: &PlainTensor) -> f64 {
    let fp = FixedPointParams::default();
    a.decode(&fp).iter().zip(b.decode(&fp)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn block_matches_reference_both_variants() {
    let cfg = ModelConfig::new(1, 32, 2, 16, 0);
    let b = ModelBundle::random(cfg.clone(), 4).unwrap();
    let x = input(8, 32, 5);
    for v in [OperatorVariant::default(), OperatorVariant::substituted()] {
        for valid in [8, 5] {
            let (got, _) = private_block(&cfg, &b, &x, v, valid);
            let want = reference_block_forward(&cfg, b.block(0), &x, v, valid).unwrap();
            let err = max_abs(&got, &want);
            assert!(err <= 2f64.powi(-5), "{v:?} valid={valid}: {err}");
        }
    }
}

#[test]
fn zero_weights_substituted_block_centres_input() {
    let cfg = ModelConfig::new(1, 16, 2, 8, 0).with_variant(OperatorVariant::substituted());
    let b = ModelBundle::zeros(cfg.clone()).unwrap();
    let x = input(4, 16, 6);
    let (got, _) = private_block(&cfg, &b, &x, cfg.variants[0], 4);
    let fp = FixedPointParams::default();
    let xv = x.decode(&fp);
    for (r, row) in xv.chunks(16).enumerate() {
        let mu = row.iter().sum::<f64>() / 16.0;
        for c in 0..16 {
            assert!((fp.decode_raw(got.at(r, c)) - (row[c] - mu)).abs() <= 2.0 / 8192.0);
        }
    }
}

#[test]
fn model_forward_matches_reference_and_reports_costs() {
    let cfg = ModelConfig::new(2, 32, 2, 16, 3);
    let b = ModelBundle::random(cfg.clone(), 7).unwrap();
    let x = input(8, 32, 8);
    let shape = x.shape().to_vec();
    let run = || {
        run_local(
            session(3),
            |s| {
                let xs = share_input(s, Some(&x), &shape)?;
                let y = model_forward(s, &cfg, None, &xs, 8)?;
                Ok((reveal_to_client(s, &y)?.unwrap(), s.report()))
            },
            |s| {
                let xs = share_input(s, None, &shape)?;
                let y = model_forward(s, &cfg, Some(&b), &xs, 8)?;
                reveal_to_client(s, &y)?;
                Ok(s.report())
            },
        )
        .unwrap()
    };
    let ((logits, report), server_report) = run();
    let want = plaintext_reference_forward(&b, &x).unwrap();
    assert_eq!(logits.shape(), &[1, 3]);
    assert!(max_abs(&logits, &want) <= 2f64.powi(-5));
    for cat in [Category::MatMul, Category::Softmax, Category::Gelu, Category::LayerNorm, Category::Truncation] {
        assert!(report.category(cat).bytes() > 0, "{cat:?}");
    }
    assert!(!report.insecure);
    assert_eq!(report.total_bytes(), server_report.total_bytes());

    // Same seeds, same bytes.
    let ((_, again), _) = run();
    assert_eq!(report.total_bytes(), again.total_bytes());
    for cat in Category::ALL {
        assert_eq!(report.category(cat).bytes(), again.category(cat).bytes());
    }
}

#[test]
fn zero_block_applies_head_to_layernorm_output() {
    let cfg = ModelConfig::new(1, 16, 2, 8, 2);
    let mut t = ModelBundle::zeros(cfg.clone()).unwrap().tensors().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for v in &mut t.get_mut("head.weight").unwrap().values {
        *v = rng.gen_range(-0.5..0.5);
    }
    let b = ModelBundle::from_tensors(cfg.clone(), t).unwrap();
    let x = input(4, 16, 10);
    let shape = x.shape().to_vec();
    let (logits, _) = run_local(
        session(4),
        |s| {
            let xs = share_input(s, Some(&x), &shape)?;
            let y = model_forward(s, &cfg, None, &xs, 4)?;
            reveal_to_client(s, &y)
        },
        |s| {
            let xs = share_input(s, None, &shape)?;
            let y = model_forward(s, &cfg, Some(&b), &xs, 4)?;
            reveal_to_client(s, &y)
        },
    )
    .unwrap();
    let fp = FixedPointParams::default();
    let row: Vec<f64> = x.decode(&fp)[..16].to_vec();
    let normed = ptinfer_core::math::layernorm(&row, &[1.0; 16], &[0.0; 16], 1e-5);
    let w = &b.tensor("head.weight").unwrap().values;
    let logits = logits.unwrap().decode(&fp);
    for (o, got) in logits.iter().enumerate() {
        let want: f64 = (0..16).map(|i| w[o * 16 + i] as f64 * normed[i]).sum();
        assert!((got - want).abs() < 2f64.powi(-5), "{got} vs {want}");
    }
}

#[test]
fn ideal_backend_marks_report() {
    let cfg = ModelConfig::new(1, 16, 2, 8, 2);
    let b = ModelBundle::random(cfg.clone(), 11).unwrap();
    let x = input(4, 16, 12);
    let shape = x.shape().to_vec();
    let conf = SessionConfig {
        backend: Backend::Ideal,
        ..session(5)
    };
    let ((logits, rep), _) = run_local(
        conf,
        |s| {
            let xs = share_input(s, Some(&x), &shape)?;
            let y = model_forward(s, &cfg, None, &xs, 4)?;
            Ok((reveal_to_client(s, &y)?.unwrap(), s.report()))
        },
        |s| {
            let xs = share_input(s, None, &shape)?;
            let y = model_forward(s, &cfg, Some(&b), &xs, 4)?;
            reveal_to_client(s, &y)
        },
    )
    .unwrap();
    assert!(rep.insecure);
    let want = plaintext_reference_forward(&b, &x).unwrap();
    assert!(max_abs(&logits, &want) <= 2f64.powi(-5));
}
