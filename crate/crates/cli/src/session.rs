//! One inference per connection. The server opens with a JSON hello
//! carrying the public model config and session parameters; the client
//! checks them against its own flags and replies with the padded sequence
//! length and the number of valid rows.

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::time::Duration;

use log::info;
use ptinfer_core::engine::{load_model, model_forward, reveal_to_client, share_input, CostReport, ModelBundle, ModelConfig};
use ptinfer_core::mpc::session::{Party, Session, SessionConfig};
use ptinfer_core::mpc::transport::{Tag, TcpTransport, Transport};
use ptinfer_core::{Error, PlainTensor, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Serialize, Deserialize)]
struct Hello {
    config: ModelConfig,
    poly_degree: usize,
    ring_bits: u32,
    frac_bits: u32,
    backend: String,
}

impl Hello {
    fn new(config: &ModelConfig, sess: &SessionConfig) -> Self {
        Self {
            config: config.clone(),
            poly_degree: sess.poly_degree,
            ring_bits: sess.fixed.ell(),
            frac_bits: sess.fixed.frac(),
            backend: sess.backend.name().to_string(),
        }
    }
}

/// Client-side result of one inference.
#[derive(Clone, Debug)]
pub struct ClientOutcome {
    /// `[1, num_labels]`, or `[S, E]` hidden states for a headless model.
    pub logits: Vec<Vec<f64>>,
    pub report: CostReport,
}

fn payload_err(detail: impl ToString) -> Error {
    Error::Payload {
        tag: Tag::Control,
        detail: detail.to_string(),
    }
}

/// Reads a JSON matrix of reals.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Config(format!("{}: expected a non-empty rectangular matrix", path.display())));
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Encodes `rows` as `[seq_len, E]`, zero-padding past the given rows.
pub fn encode_input(rows: &[Vec<f64>], seq_len: usize, sess: &SessionConfig) -> Result<PlainTensor> {
    let e = rows[0].len();
    if seq_len < rows.len() {
        return Err(Error::Config(format!("--seq-len {seq_len} is shorter than the input ({} rows)", rows.len())));
    }
    let mut flat: Vec<f64> = rows.iter().flatten().copied().collect();
    flat.resize(seq_len * e, 0.0);
    PlainTensor::encode(vec![seq_len, e], &flat, &sess.fixed)
}

fn to_rows(t: &PlainTensor, sess: &SessionConfig) -> Vec<Vec<f64>> {
    let (_, cols) = t.dims2();
    t.decode(&sess.fixed).chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Server side over an established channel.
pub fn serve(chan: Box<dyn Transport>, sess_cfg: SessionConfig, bundle: &ModelBundle) -> Result<CostReport> {
    let config = bundle.config();
    if bundle.fixed() != sess_cfg.fixed {
        return Err(Error::Config(format!(
            "model was built for l={}, f={} but the session uses l={}, f={}",
            config.ring_bits,
            config.frac_bits,
            sess_cfg.fixed.ell(),
            sess_cfg.fixed.frac()
        )));
    }
    let mut sess = Session::new(Party::Server, sess_cfg, chan)?;
    let hello = serde_json::to_vec(&Hello::new(config, &sess_cfg)).map_err(payload_err)?;
    sess.send(Tag::Control, hello)?;
    let shape = sess.recv_elems(Tag::Control, 2)?;
    let (s, valid) = (shape[0] as usize, shape[1] as usize);
    info!("client input: {s} rows, {valid} valid");
    let x = share_input(&mut sess, None, &[s, config.embed_dim])?;
    let y = model_forward(&mut sess, config, Some(bundle), &x, valid)?;
    reveal_to_client(&mut sess, &y)?;
    Ok(sess.report())
}

/// Client side over an established channel. `seq_len` pads the input.
pub fn run_client(
    chan: Box<dyn Transport>,
    sess_cfg: SessionConfig,
    rows: &[Vec<f64>],
    seq_len: Option<usize>,
) -> Result<ClientOutcome> {
    let mut sess = Session::new(Party::Client, sess_cfg, chan)?;
    let hello: Hello = serde_json::from_slice(&sess.recv(Tag::Control)?).map_err(payload_err)?;
    let ours = Hello::new(&hello.config, &sess_cfg);
    if (hello.poly_degree, hello.ring_bits, hello.frac_bits, &hello.backend)
        != (ours.poly_degree, ours.ring_bits, ours.frac_bits, &ours.backend)
    {
        return Err(Error::Config(format!(
            "server runs N={}, l={}, f={}, backend={}; client has N={}, l={}, f={}, backend={}",
            hello.poly_degree,
            hello.ring_bits,
            hello.frac_bits,
            hello.backend,
            ours.poly_degree,
            ours.ring_bits,
            ours.frac_bits,
            ours.backend
        )));
    }
    let config = hello.config;
    config.validate()?;
    if rows[0].len() != config.embed_dim {
        return Err(Error::Config(format!(
            "input has {} columns, model expects {}",
            rows[0].len(),
            config.embed_dim
        )));
    }
    let s = seq_len.unwrap_or(rows.len());
    let x = encode_input(rows, s, &sess_cfg)?;
    sess.send_elems(Tag::Control, &[s as u64, rows.len() as u64])?;
    let xs = share_input(&mut sess, Some(&x), &[s, config.embed_dim])?;
    let y = model_forward(&mut sess, &config, None, &xs, rows.len())?;
    let y = reveal_to_client(&mut sess, &y)?.expect("client reconstructs");
    Ok(ClientOutcome {
        logits: to_rows(&y, &sess_cfg),
        report: sess.report(),
    })
}

/// Serves one client on an already bound listener.
pub fn serve_on(listener: &TcpListener, sess_cfg: SessionConfig, bundle: &ModelBundle) -> Result<CostReport> {
    let (stream, peer) = listener.accept()?;
    info!("accepted connection from {peer}");
    serve(Box::new(TcpTransport::new(stream)?), sess_cfg, bundle)
}

/// `--role server`: loads the model, accepts one client, writes the report.
pub fn serve_session(cfg: &RunConfig) -> Result<CostReport> {
    let path = cfg.model.as_deref().ok_or_else(|| Error::Config("--model is required".into()))?;
    let bundle = load_model(path)?;
    let addr = cfg.listen.as_deref().ok_or_else(|| Error::Config("--listen is required".into()))?;
    let listener = TcpListener::bind(addr)?;
    info!("listening on {}", listener.local_addr()?);
    let report = serve_on(&listener, cfg.session()?, &bundle)?;
    if let Some(p) = &cfg.report {
        fs::write(p, report.to_json())?;
    }
    Ok(report)
}

/// `--role client`: connects, runs one inference, writes logits and report.
pub fn run_client_session(cfg: &RunConfig) -> Result<ClientOutcome> {
    let input = cfg.input.as_deref().ok_or_else(|| Error::Config("--input is required".into()))?;
    let rows = read_matrix(input)?;
    let addr = cfg.connect.as_deref().ok_or_else(|| Error::Config("--connect is required".into()))?;
    let chan = TcpTransport::connect(addr, Duration::from_secs(cfg.connect_timeout))?;
    let out = run_client(Box::new(chan), cfg.session()?, &rows, cfg.seq_len)?;
    if out.report.insecure {
        log::warn!("ideal backend: nonlinear inputs were revealed, results are not private");
    }
    write_json(cfg.output.as_deref(), &serde_json::json!({ "logits": out.logits, "insecure": out.report.insecure }))?;
    if let Some(p) = &cfg.report {
        fs::write(p, out.report.to_json())?;
    }
    Ok(out)
}

/// `--role plaintext`: fixed-point reference forward, no protocol.
pub fn run_plaintext(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let path = cfg.model.as_deref().ok_or_else(|| Error::Config("--model is required".into()))?;
    let bundle = load_model(path)?;
    let input = cfg.input.as_deref().ok_or_else(|| Error::Config("--input is required".into()))?;
    let rows = read_matrix(input)?;
    let sess = cfg.session()?;
    let x = encode_input(&rows, cfg.seq_len.unwrap_or(rows.len()), &sess)?;
    let y = ptinfer_core::engine::reference_forward(&bundle, &x, rows.len())?;
    let logits = to_rows(&y, &sess);
    write_json(cfg.output.as_deref(), &serde_json::json!({ "logits": logits }))?;
    Ok(logits)
}

/// `--role fixture`: random weights in the BERT-Tiny shape.
pub fn write_fixture(cfg: &RunConfig) -> Result<ModelBundle> {
    let path = cfg.model.as_deref().ok_or_else(|| Error::Config("--model is required".into()))?;
    let mut config = ModelConfig::bert_tiny();
    if let Some(b) = cfg.blocks {
        config = ModelConfig::new(b, config.embed_dim, config.n_heads, config.max_seq_len, config.num_labels);
    }
    if let Some(s) = cfg.seq_len {
        config.max_seq_len = s;
    }
    config.ring_bits = cfg.ring_bits;
    config.frac_bits = cfg.fixed_bits;
    let bundle = ModelBundle::random(config, cfg.seed.unwrap_or(0))?;
    bundle.save(path)?;
    info!("wrote {}", path.display());
    Ok(bundle)
}
