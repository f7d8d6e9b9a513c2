//! Acceptance checks, one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails. Runs in release-level optimisation under the test
//! profile; the whole target takes a few minutes.

use std::process::ExitCode;
use std::time::Instant;

use ptinfer_cli::{emit_benchmark, Role, RunConfig};
use ptinfer_core::engine::{
    encoder_block_forward, reference_block_forward, reveal_to_client, share_input, ModelBundle, ModelConfig,
};
use ptinfer_core::matmul::{plan_tiles, response_bytes_ratio, run_matmul_protocol};
use ptinfer_core::math;
use ptinfer_core::mpc::cost::Category;
use ptinfer_core::mpc::nonlinear::{p_exp, p_max, p_recip, p_relu, p_rsqrt, p_tanh};
use ptinfer_core::mpc::session::{run_local, Backend, Session, SessionConfig};
use ptinfer_core::mpc::share::{reconstruct, share_secret, ShareTensor};
use ptinfer_core::nn::{
    gelu_protocol, layernorm_protocol, softmax_protocol, softmax_sub_protocol, AffineParams, OperatorVariant, BOUND,
};
use ptinfer_core::{Error, FixedPointParams, PlainTensor, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Op<'a> = Box<dyn Fn(&mut Session, &ShareTensor) -> Result<ShareTensor> + Sync + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn session(poly_degree: usize, seed: u64, backend: Backend) -> SessionConfig {
    SessionConfig {
        poly_degree,
        seed,
        backend,
        ..Default::default()
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shares `values` as a `[rows, n/rows]` matrix, runs `op`, reconstructs.
fn run_op(cfg: SessionConfig, rows: usize, values: &[f64], op: &Op) -> Result<Vec<f64>> {
    let fp = FixedPointParams::default();
    let x = PlainTensor::encode(vec![rows, values.len() / rows], values, &fp)?;
    let (x0, x1) = share_secret(&x, &fp, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let (a, b) = run_local(cfg, |s| op(s, &x0), |s| op(s, &x1))?;
    Ok(reconstruct(&a, &b)?.decode(&fp))
}

fn matmul_exactness() -> Result<Outcome> {
    let fp = FixedPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut wrong = 0;
    for case in 0..50 {
        let (m, r, n) = (rng.gen_range(1..=64), rng.gen_range(1..=64), rng.gen_range(1..=64));
        let a = PlainTensor::from_fn(vec![m, r], |_| rng.gen::<u64>() & fp.mask());
        let b = PlainTensor::from_fn(vec![r, n], |_| rng.gen::<u64>() & fp.mask());
        let (c0, c1) = run_local(
            session(4096, case, Backend::Crypto),
            |s| run_matmul_protocol(s, &b, (m, r, n), true),
            |s| run_matmul_protocol(s, &a, (m, r, n), true),
        )?;
        let got = reconstruct(&c0, &c1)?;
        let want = a.matmul(&b, &fp)?;
        if got != want {
            wrong += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(check(
        wrong == 0 && secs < 60.0,
        format!("{wrong}/50 mismatching products, {secs:.1}s (limit 60s)"),
    ))
}

fn compression_ratio() -> Result<Outcome> {
    let fp = FixedPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (m, r, n) in [(16, 64, 4), (8, 128, 8), (32, 32, 2), (64, 64, 64)] {
        let a = PlainTensor::from_fn(vec![m, r], |_| rng.gen::<u64>() & fp.mask());
        let b = PlainTensor::from_fn(vec![r, n], |_| rng.gen::<u64>() & fp.mask());
        let s2c = |compress: bool| -> Result<u64> {
            let (rep, _) = run_local(
                session(4096, 7, Backend::Crypto),
                |s| {
                    run_matmul_protocol(s, &b, (m, r, n), compress)?;
                    Ok(s.report())
                },
                |s| run_matmul_protocol(s, &a, (m, r, n), compress),
            )?;
            Ok(rep.category(Category::MatMul).bytes_s2c)
        };
        let measured = s2c(true)? as f64 / s2c(false)? as f64;
        let predicted = response_bytes_ratio(&plan_tiles(m, r, n, 4096)?, true);
        let rel = (measured - predicted).abs() / predicted;
        worst = worst.max(rel);
        parts.push(format!("{m}x{r}x{n}: {measured:.4} vs {predicted:.4}"));
    }
    Ok(check(
        worst <= 0.05,
        format!("{}; worst relative deviation {:.3}% (limit 5%)", parts.join(", "), 100.0 * worst),
    ))
}

fn nonlinear_fidelity() -> Result<Outcome> {
    let fp = FixedPointParams::default();
    let cfg = session(4096, 103, Backend::Crypto);
    let mut rng = ChaCha8Rng::seed_from_u64(103);

    // 1000 scalars.
    let xs = uniform(&mut rng, 1000, -BOUND, BOUND);
    let gelu: Op = Box::new(gelu_protocol);
    let got = run_op(cfg, 1, &xs, &gelu)?;
    let want: Vec<f64> = xs.iter().map(|&x| math::gelu(x)).collect();
    let e_gelu = max_abs(&got, &want);

    // 1000 attention rows of length 32.
    let n = 32;
    let xs = uniform(&mut rng, 1000 * n, -BOUND, BOUND);
    let softmax: Op = Box::new(softmax_protocol);
    let got = run_op(cfg, 1000, &xs, &softmax)?;
    let want: Vec<f64> = xs.chunks(n).flat_map(math::softmax).collect();
    let e_sm = max_abs(&got, &want);

    // 1000 hidden rows of width 128 with random gamma, beta.
    let e = 128;
    let xs = uniform(&mut rng, 1000 * e, -BOUND, BOUND);
    let gamma = uniform(&mut rng, e, 0.5, 1.5);
    let beta = uniform(&mut rng, e, -0.5, 0.5);
    let affine = AffineParams::new(
        PlainTensor::encode(vec![e], &gamma, &fp)?.into_data(),
        PlainTensor::encode(vec![e], &beta, &fp)?.into_data(),
        &fp,
    )?;
    let ln: Op = Box::new(move |s, x| layernorm_protocol(s, x, &affine));
    let got = run_op(cfg, 1000, &xs, &ln)?;
    let want: Vec<f64> = xs.chunks(e).flat_map(|r| math::layernorm(r, &gamma, &beta, 1e-5)).collect();
    let e_ln = max_abs(&got, &want);

    let (lim7, lim6) = (2f64.powi(-7), 2f64.powi(-6));
    Ok(check(
        e_gelu <= lim7 && e_sm <= lim7 && e_ln <= lim6,
        format!("GELU {e_gelu:.2e}, Softmax {e_sm:.2e} (limit {lim7:.2e}); LayerNorm {e_ln:.2e} (limit {lim6:.2e})"),
    ))
}

fn end_to_end_block() -> Result<Outcome> {
    let fp = FixedPointParams::default();
    let config = ModelConfig::new(1, 128, 2, 32, 0);
    let bundle = ModelBundle::random(config.clone(), 104)?;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let x = PlainTensor::encode(vec![32, 128], &uniform(&mut rng, 32 * 128, -2.0, 2.0), &fp)?;
    let v = OperatorVariant::default();
    let start = Instant::now();
    let (got, ()) = run_local(
        session(8192, 104, Backend::Crypto),
        |s| {
            let xs = share_input(s, Some(&x), &[32, 128])?;
            let y = encoder_block_forward(s, &config, None, &xs, v, 32)?;
            Ok(reveal_to_client(s, &y)?.expect("client output"))
        },
        |s| {
            let xs = share_input(s, None, &[32, 128])?;
            let y = encoder_block_forward(s, &config, Some(bundle.block(0)), &xs, v, 32)?;
            reveal_to_client(s, &y).map(|_| ())
        },
    )?;
    let secs = start.elapsed().as_secs_f64();
    let want = reference_block_forward(&config, bundle.block(0), &x, v, 32)?;
    let err = max_abs(&got.decode(&fp), &want.decode(&fp));
    let lim = 2f64.powi(-5);
    Ok(check(
        err <= lim && secs < 600.0,
        format!("E=128 S=32 N=8192: max abs error {err:.2e} (limit {lim:.2e}), {secs:.1}s (limit 600s)"),
    ))
}

fn substitution_and_dominance() -> Result<(Outcome, Outcome)> {
    let mut cfg = RunConfig::new(Role::Bench);
    cfg.seed = Some(105);
    cfg.seq_len = Some(32);
    let table = emit_benchmark(&cfg)?;
    println!("{}", table.render());
    let ratio = table.bytes_ratio("-LN2");
    let speedup = table.speedup("-LN2");
    let share = table.nonlinear_share();
    Ok((
        check(
            ratio <= 0.30 && speedup >= 2.0,
            format!("bytes(-LN2)/bytes(Orig.) = {ratio:.3} (limit 0.30), speedup {speedup:.2}x (limit 2x)"),
        ),
        check(
            share >= 0.70,
            format!("GELU+Softmax+LayerNorm = {:.1}% of Orig. bytes (limit 70%)", 100.0 * share),
        ),
    ))
}

fn overflow_safety() -> Result<Outcome> {
    let fp = FixedPointParams::default();
    let mut overflows = 0;
    let mut first = String::new();
    for i in 0..100u64 {
        let mut config = ModelConfig::new(1, 128, 2, 32, 0);
        if i % 2 == 1 {
            config = config.with_variant(OperatorVariant::substituted());
        }
        let bundle = ModelBundle::random(config.clone(), 1000 + i)?;
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + i);
        let s = rng.gen_range(1..=32);
        let x = PlainTensor::encode(vec![s, 128], &uniform(&mut rng, s * 128, -BOUND, BOUND), &fp)?;
        match reference_block_forward(&config, bundle.block(0), &x, config.variants[0], s) {
            Ok(_) => {}
            Err(e @ Error::Overflow { .. }) => {
                overflows += 1;
                if first.is_empty() {
                    first = format!(" (first: {e})");
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(check(
        overflows == 0,
        format!("{overflows} overflow errors in 100 reference blocks with |x| <= {BOUND}{first}"),
    ))
}

fn ideal_differential() -> Result<Outcome> {
    let fp = FixedPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let ident = AffineParams::identity(16, &fp);
    let eps = AffineParams::identity(16, &fp).epsilon_sm;
    // (name, op, rows, inputs)
    let cases: Vec<(&str, Op, usize, Vec<f64>)> = vec![
        ("relu", Box::new(p_relu), 1, uniform(&mut rng, 100, -BOUND, BOUND)),
        ("max", Box::new(p_max), 100, uniform(&mut rng, 1600, -BOUND, BOUND)),
        ("exp", Box::new(p_exp), 1, uniform(&mut rng, 100, -32.0, 0.0)),
        ("recip", Box::new(|s, x| p_recip(s, x, 1.0, 128.0)), 1, uniform(&mut rng, 100, 1.0, 128.0)),
        ("rsqrt", Box::new(|s, x| p_rsqrt(s, x, 1.0 / 16.0, 256.0)), 1, uniform(&mut rng, 100, 1.0 / 16.0, 256.0)),
        ("tanh", Box::new(p_tanh), 1, uniform(&mut rng, 100, -BOUND, BOUND)),
        ("gelu", Box::new(gelu_protocol), 1, uniform(&mut rng, 100, -BOUND, BOUND)),
        ("softmax", Box::new(softmax_protocol), 100, uniform(&mut rng, 1600, -BOUND, BOUND)),
        (
            "softmax_sub",
            Box::new(move |s, x| softmax_sub_protocol(s, x, eps)),
            100,
            uniform(&mut rng, 1600, -BOUND, BOUND),
        ),
        (
            "layernorm",
            Box::new(move |s, x| layernorm_protocol(s, x, &ident)),
            100,
            uniform(&mut rng, 1600, -BOUND, BOUND),
        ),
    ];
    let lim = 2f64.powi(-7);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, op, rows, xs) in &cases {
        let c = run_op(session(2048, 106, Backend::Crypto), *rows, xs, op)?;
        let i = run_op(session(2048, 106, Backend::Ideal), *rows, xs, op)?;
        let err = max_abs(&c, &i);
        pass &= err <= lim;
        parts.push(format!("{name} {err:.1e}"));
    }
    Ok(check(pass, format!("{} (limit {lim:.2e})", parts.join(", "))))
}

fn report(name: &str, r: Result<Outcome>) -> bool {
    match r {
        Ok(o) => {
            println!("{} [PRIMARY] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            o.pass
        }
        Err(e) => {
            println!("FAIL [PRIMARY] {name}: error: {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report("Matmul exactness", matmul_exactness());
    ok &= report("Compression ratio", compression_ratio());
    ok &= report("Nonlinear fidelity", nonlinear_fidelity());
    ok &= report("End-to-end block", end_to_end_block());
    match substitution_and_dominance() {
        Ok((sub, dom)) => {
            ok &= report("Substitution savings", Ok(sub));
            ok &= report("Operator dominance", Ok(dom));
        }
        Err(e) => {
            let msg = e.to_string();
            ok &= report("Substitution savings", Err(e));
            ok &= report("Operator dominance", Err(Error::Config(msg)));
        }
    }
    ok &= report("Overflow safety", overflow_safety());
    ok &= report("Ideal/crypto differential", ideal_differential());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
