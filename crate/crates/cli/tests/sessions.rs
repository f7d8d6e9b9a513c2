use std::net::TcpListener;
use std::time::Duration;

use ptinfer_cli::{run_client, serve, serve_on, ClientOutcome};
use ptinfer_core::engine::{plaintext_reference_forward, CostReport, ModelBundle, ModelConfig};
use ptinfer_core::mpc::cost::Category;
use ptinfer_core::mpc::session::{Backend, SessionConfig};
use ptinfer_core::mpc::transport::{pipe, TcpTransport};
use ptinfer_core::{Error, FixedPointParams, PlainTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture() -> (ModelBundle, Vec<Vec<f64>>) {
    let b = ModelBundle::random(ModelConfig::new(1, 16, 2, 8, 3), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let rows = (0..5).map(|_| (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    (b, rows)
}

fn session(backend: Backend) -> SessionConfig {
    SessionConfig {
        poly_degree: 2048,
        seed: 5,
        backend,
        ..Default::default()
    }
}

fn over_pipe(b: &ModelBundle, rows: &[Vec<f64>], cfg: SessionConfig, seq: Option<usize>) -> (ClientOutcome, CostReport) {
    let (c, s) = pipe();
    std::thread::scope(|scope| {
        let h = scope.spawn(move || serve(Box::new(s), cfg, b));
        let out = run_client(Box::new(c), cfg, rows, seq).unwrap();
        (out, h.join().unwrap().unwrap())
    })
}

fn over_tcp(b: &ModelBundle, rows: &[Vec<f64>], cfg: SessionConfig) -> (ClientOutcome, CostReport) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|scope| {
        let h = scope.spawn(|| serve_on(&listener, cfg, b));
        let chan = TcpTransport::connect(addr, Duration::from_secs(5)).unwrap();
        let out = run_client(Box::new(chan), cfg, rows, None).unwrap();
        (out, h.join().unwrap().unwrap())
    })
}

#[test]
fn pipe_and_tcp_agree_bit_exactly() {
    let (b, rows) = fixture();
    let cfg = session(Backend::Crypto);
    let (p, ps) = over_pipe(&b, &rows, cfg, None);
    let (t, ts) = over_tcp(&b, &rows, cfg);
    assert_eq!(p.logits, t.logits);
    assert_eq!(p.report.total_bytes(), t.report.total_bytes());
    assert_eq!(ps.total_bytes(), ts.total_bytes());

    let fp = FixedPointParams::default();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let x = PlainTensor::encode(vec![5, 16], &flat, &fp).unwrap();
    let want = plaintext_reference_forward(&b, &x).unwrap().decode(&fp);
    for (g, w) in p.logits[0].iter().zip(&want) {
        assert!((g - w).abs() <= 2f64.powi(-5), "{g} vs {w}");
    }
}

#[test]
fn report_totals_are_category_sums() {
    let (b, rows) = fixture();
    let (out, server) = over_pipe(&b, &rows, session(Backend::Crypto), None);
    for r in [&out.report, &server] {
        let bytes: u64 = Category::ALL.iter().map(|&c| r.category(c).bytes()).sum();
        let rounds: u64 = Category::ALL.iter().map(|&c| r.category(c).rounds).sum();
        assert_eq!(bytes, r.total_bytes());
        assert_eq!(rounds, r.totals.rounds);
        assert!(!r.insecure);
    }
    assert_eq!(out.report.total_bytes(), server.total_bytes());
    let json: serde_json::Value = serde_json::from_str(&out.report.to_json()).unwrap();
    assert_eq!(json["categories"].as_array().unwrap().len(), Category::ALL.len());
}

#[test]
fn ideal_backend_sets_insecure_on_both_sides() {
    let (b, rows) = fixture();
    let (out, server) = over_pipe(&b, &rows, session(Backend::Ideal), None);
    assert!(out.report.insecure && server.insecure);
    let (exact, _) = over_pipe(&b, &rows, session(Backend::Crypto), None);
    for (a, c) in out.logits[0].iter().zip(&exact.logits[0]) {
        assert!((a - c).abs() <= 2f64.powi(-5));
    }
}

#[test]
fn padding_does_not_change_logits() {
    let (b, rows) = fixture();
    let cfg = session(Backend::Crypto);
    let (plain, _) = over_pipe(&b, &rows, cfg, None);
    let (padded, _) = over_pipe(&b, &rows, cfg, Some(8));
    for (a, p) in plain.logits[0].iter().zip(&padded.logits[0]) {
        assert!((a - p).abs() <= 2f64.powi(-6), "{a} vs {p}");
    }
}

#[test]
fn mismatched_parameters_are_a_config_error() {
    let (b, rows) = fixture();
    let (c, s) = pipe();
    let client_cfg = SessionConfig {
        poly_degree: 4096,
        ..session(Backend::Crypto)
    };
    let err = std::thread::scope(|scope| {
        let _server = scope.spawn(|| serve(Box::new(s), session(Backend::Crypto), &b));
        run_client(Box::new(c), client_cfg, &rows, None).unwrap_err()
    });
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(ptinfer_cli::exit_code(&err), 2);
}
