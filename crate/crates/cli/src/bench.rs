//! Cumulative operator-substitution benchmark. Each column swaps one more
//! operator class for its cheaper substitute and reruns the same block on
//! the same weights and input.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use ptinfer_core::engine::{
    load_model, model_forward, reference_forward, reveal_to_client, share_input, CostReport, ModelBundle, ModelConfig,
};
use ptinfer_core::mpc::cost::Category;
use ptinfer_core::mpc::session::{run_local, SessionConfig};
use ptinfer_core::nn::{Activation, AttentionNorm, Norm, OperatorVariant};
use ptinfer_core::{Error, PlainTensor, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

/// Published BERT-Tiny per-operator costs `(category, seconds, MB)` on
/// different hardware. Shown for orientation only, not a target.
pub const REFERENCE_FIGURES: [(&str, f64, f64); 5] = [
    ("MatMul", 3.75, 111.0),
    ("Softmax", 5.95, 518.0),
    ("GELU", 3.67, 1020.0),
    ("LayerNorm", 0.62, 165.0),
    ("Total", 13.99, 1814.0),
];

/// Categories shown as rows, in display order.
const ROWS: [Category; 6] = [
    Category::MatMul,
    Category::Softmax,
    Category::Gelu,
    Category::LayerNorm,
    Category::Truncation,
    Category::Other,
];

/// The five cumulative variants: `Orig.`, `-GE.`, `-Sm.`, `-LN1`, `-LN2`.
pub fn cumulative_variants() -> Vec<(&'static str, OperatorVariant)> {
    let mut v = OperatorVariant::default();
    let mut out = vec![("Orig.", v)];
    v.activation = Activation::Relu;
    out.push(("-GE.", v));
    v.attention_norm = AttentionNorm::SoftmaxSub;
    out.push(("-Sm.", v));
    v.ln1 = Norm::LayernormSub;
    out.push(("-LN1", v));
    v.ln2 = Norm::LayernormSub;
    out.push(("-LN2", v));
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchColumn {
    pub label: String,
    pub variant: OperatorVariant,
    /// End-to-end wall time of the private forward pass.
    pub wall_time_s: f64,
    /// Max abs deviation from the fixed-point reference.
    pub max_abs_error: f64,
    /// Client-side report.
    pub report: CostReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchTable {
    pub blocks: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub poly_degree: usize,
    pub backend: String,
    pub columns: Vec<BenchColumn>,
}

impl BenchTable {
    pub fn column(&self, label: &str) -> Option<&BenchColumn> {
        self.columns.iter().find(|c| c.label == label)
    }

    /// Total bytes of `label` relative to the first column.
    pub fn bytes_ratio(&self, label: &str) -> f64 {
        let base = self.columns[0].report.total_bytes() as f64;
        self.column(label).map_or(f64::NAN, |c| c.report.total_bytes() as f64 / base)
    }

    /// Wall-time speedup of `label` over the first column.
    pub fn speedup(&self, label: &str) -> f64 {
        let base = self.columns[0].wall_time_s;
        self.column(label).map_or(f64::NAN, |c| base / c.wall_time_s)
    }

    /// Share of the first column's bytes spent in GELU, Softmax and LayerNorm.
    pub fn nonlinear_share(&self) -> f64 {
        let r = &self.columns[0].report;
        let nl: u64 = [Category::Gelu, Category::Softmax, Category::LayerNorm]
            .iter()
            .map(|&c| r.category(c).bytes())
            .sum();
        nl as f64 / r.total_bytes() as f64
    }

    pub fn render(&self) -> String {
        let mb = |b: u64| b as f64 / 1e6;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} block(s), S={}, E={}, H={}, N={}, backend={}",
            self.blocks, self.seq_len, self.embed_dim, self.n_heads, self.poly_degree, self.backend
        );
        let _ = write!(s, "{:<12}", "");
        for c in &self.columns {
            let _ = write!(s, "{:>20}", c.label);
        }
        s.push('\n');
        for cat in ROWS {
            let _ = write!(s, "{:<12}", cat.name());
            for c in &self.columns {
                let cost = c.report.category(cat);
                let _ = write!(s, "{:>20}", format!("{:.2}s {:.1}MB", cost.wall_time_s, mb(cost.bytes())));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<12}", "Total");
        for c in &self.columns {
            let _ = write!(s, "{:>20}", format!("{:.2}s {:.1}MB", c.wall_time_s, mb(c.report.total_bytes())));
        }
        s.push('\n');
        let _ = write!(s, "{:<12}", "bytes ratio");
        for c in &self.columns {
            let _ = write!(s, "{:>20}", format!("{:.3}", self.bytes_ratio(&c.label)));
        }
        s.push('\n');
        let _ = write!(s, "{:<12}", "speedup");
        for c in &self.columns {
            let _ = write!(s, "{:>20}", format!("{:.2}x", self.speedup(&c.label)));
        }
        s.push('\n');
        let _ = write!(s, "{:<12}", "max |err|");
        for c in &self.columns {
            let _ = write!(s, "{:>20}", format!("{:.2e}", c.max_abs_error));
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "GELU+Softmax+LayerNorm share of Orig. bytes: {:.1}%",
            100.0 * self.nonlinear_share()
        );
        s.push_str("\nPublished BERT-Tiny figures (other hardware, not a target):\n");
        for (name, secs, mbytes) in REFERENCE_FIGURES {
            let _ = writeln!(s, "{name:<12}{:>20}", format!("{secs:.2}s {mbytes:.0}MB"));
        }
        s
    }
}

/// Fixture for `--role bench`: block weights from `--model` if given,
/// otherwise random BERT-Tiny-shaped weights from `--seed`.
fn bench_fixture(cfg: &RunConfig) -> Result<ModelBundle> {
    let seed = cfg.seed.ok_or_else(|| Error::Config("bench requires --seed".into()))?;
    let base = match &cfg.model {
        Some(p) => load_model(p)?,
        None => {
            let mut c = ModelConfig::bert_tiny();
            c.ring_bits = cfg.ring_bits;
            c.frac_bits = cfg.fixed_bits;
            ModelBundle::random(c, seed)?
        }
    };
    let src = base.config();
    let blocks = cfg.blocks.unwrap_or(1).min(src.n_blocks);
    let mut config = ModelConfig::new(blocks, src.embed_dim, src.n_heads, src.max_seq_len, 0);
    config.ffn_dim = src.ffn_dim;
    config.ring_bits = src.ring_bits;
    config.frac_bits = src.frac_bits;
    let tensors = base
        .tensors()
        .iter()
        .filter(|(k, _)| !k.starts_with("head."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    ModelBundle::from_tensors(config, tensors)
}

/// Runs every cumulative variant on one fixture and input.
pub fn emit_benchmark(cfg: &RunConfig) -> Result<BenchTable> {
    let bundle = bench_fixture(cfg)?;
    let config = bundle.config().clone();
    let sess_cfg = cfg.session()?;
    if bundle.fixed() != sess_cfg.fixed {
        return Err(Error::Config("model and session fixed-point parameters differ".into()));
    }
    let s = cfg.seq_len.unwrap_or(32);
    let e = config.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(sess_cfg.seed ^ 0x6265_6e63);
    let v: Vec<f64> = (0..s * e).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x = PlainTensor::encode(vec![s, e], &v, &sess_cfg.fixed)?;

    let mut columns = Vec::new();
    for (label, variant) in cumulative_variants() {
        let b = ModelBundle::from_tensors(config.clone().with_variant(variant), bundle.tensors().clone())?;
        let (y, report, wall) = run_block(sess_cfg, &b, &x)?;
        let want = reference_forward(&b, &x, s)?;
        let fp = sess_cfg.fixed;
        let err = y.decode(&fp).iter().zip(want.decode(&fp)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        info!("{label}: {wall:.2}s, {} bytes, max err {err:.2e}", report.total_bytes());
        columns.push(BenchColumn {
            label: label.to_string(),
            variant,
            wall_time_s: wall,
            max_abs_error: err,
            report,
        });
    }
    Ok(BenchTable {
        blocks: config.n_blocks,
        seq_len: s,
        embed_dim: e,
        n_heads: config.n_heads,
        poly_degree: sess_cfg.poly_degree,
        backend: sess_cfg.backend.name().to_string(),
        columns,
    })
}

fn run_block(sess_cfg: SessionConfig, b: &ModelBundle, x: &PlainTensor) -> Result<(PlainTensor, CostReport, f64)> {
    let config = b.config();
    let shape = x.shape().to_vec();
    let s = shape[0];
    let start = Instant::now();
    let ((y, report), ()) = run_local(
        sess_cfg,
        |sess| {
            let xs = share_input(sess, Some(x), &shape)?;
            let y = model_forward(sess, config, None, &xs, s)?;
            let y = reveal_to_client(sess, &y)?.expect("client reconstructs");
            Ok((y, sess.report()))
        },
        |sess| {
            let xs = share_input(sess, None, &shape)?;
            let y = model_forward(sess, config, Some(b), &xs, s)?;
            reveal_to_client(sess, &y).map(|_| ())
        },
    )?;
    Ok((y, report, start.elapsed().as_secs_f64()))
}
