use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use ptinfer_core::mpc::session::{Backend, SessionConfig};
use ptinfer_core::{Error, FixedPointParams, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Role {
    /// Model holder; accepts one client and exits.
    Server,
    /// Input holder; connects, runs one inference, writes logits.
    Client,
    /// Cumulative operator-substitution benchmark over an in-process pipe.
    Bench,
    /// Fixed-point reference forward pass without any protocol.
    Plaintext,
    /// Writes a random-weight PTIF bundle to `--model`.
    Fixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Crypto,
    /// Reconstructs nonlinear inputs in the clear. Never use with real data.
    Ideal,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Crypto => Backend::Crypto,
            BackendArg::Ideal => Backend::Ideal,
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "ptinfer", version, about = "Two-party private inference for transformer encoders")]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub role: Role,

    /// Address to bind (server).
    #[arg(long)]
    pub listen: Option<String>,

    /// Server address (client).
    #[arg(long)]
    pub connect: Option<String>,

    /// PTIF bundle. Read by server, plaintext and bench; written by fixture.
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// JSON matrix of shape [S, E].
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Where to write logits (client, plaintext) or the bench table. Stdout if absent.
    #[arg(long)]
    pub output: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "crypto")]
    pub backend: BackendArg,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Cost report JSON path.
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Encoder blocks for bench and fixture.
    #[arg(long)]
    pub blocks: Option<usize>,

    /// Pads the input to this many rows; padded positions are not attended to.
    #[arg(long)]
    pub seq_len: Option<usize>,

    #[arg(long, default_value_t = 8192)]
    pub poly_degree: usize,

    #[arg(long, default_value_t = 41)]
    pub ring_bits: u32,

    #[arg(long, default_value_t = 13)]
    pub fixed_bits: u32,

    /// Seconds the client keeps retrying the connection.
    #[arg(long, default_value_t = 30)]
    pub connect_timeout: u64,
}

impl RunConfig {
    /// Defaults for `role`, everything else unset.
    pub fn new(role: Role) -> Self {
        Self {
            role,
            listen: None,
            connect: None,
            model: None,
            input: None,
            output: None,
            backend: BackendArg::Crypto,
            seed: None,
            report: None,
            blocks: None,
            seq_len: None,
            poly_degree: 8192,
            ring_bits: 41,
            fixed_bits: 13,
            connect_timeout: 30,
        }
    }

    pub fn fixed(&self) -> Result<FixedPointParams> {
        FixedPointParams::new(self.ring_bits, self.fixed_bits)
    }

    pub fn session(&self) -> Result<SessionConfig> {
        Ok(SessionConfig {
            fixed: self.fixed()?,
            poly_degree: self.poly_degree,
            seed: self.seed.unwrap_or_else(rand::random),
            backend: self.backend.into(),
        })
    }

    /// Role-specific required flags.
    pub fn validate(&self) -> Result<()> {
        self.fixed()?;
        let need = |ok: bool, flag: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("--role {:?} requires {flag}", self.role).to_lowercase()))
            }
        };
        match self.role {
            Role::Server => {
                need(self.listen.is_some(), "--listen")?;
                need(self.model.is_some(), "--model")
            }
            Role::Client => {
                need(self.connect.is_some(), "--connect")?;
                need(self.input.is_some(), "--input")
            }
            Role::Bench => need(self.seed.is_some(), "--seed"),
            Role::Plaintext => {
                need(self.model.is_some(), "--model")?;
                need(self.input.is_some(), "--input")
            }
            Role::Fixture => {
                need(self.model.is_some(), "--model")?;
                need(self.seed.is_some(), "--seed")
            }
        }?;
        if self.blocks == Some(0) || self.seq_len == Some(0) {
            return Err(Error::Config("--blocks and --seq-len must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_needs_seed() {
        let mut c = RunConfig::new(Role::Bench);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.seed = Some(1);
        c.validate().unwrap();
    }

    #[test]
    fn parses_flags() {
        let c = RunConfig::try_parse_from([
            "ptinfer", "--role", "client", "--connect", "127.0.0.1:9000", "--input", "x.json", "--backend", "ideal",
            "--poly-degree", "4096", "--fixed-bits", "12",
        ])
        .unwrap();
        assert_eq!(c.role, Role::Client);
        assert_eq!(c.backend, BackendArg::Ideal);
        assert_eq!((c.poly_degree, c.fixed_bits), (4096, 12));
        c.validate().unwrap();
        assert!(RunConfig::try_parse_from(["ptinfer", "--role", "nobody"]).is_err());
    }

    #[test]
    fn server_needs_listen_and_model() {
        let mut c = RunConfig::new(Role::Server);
        c.model = Some("m.ptif".into());
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("--listen"), "{err}");
    }
}
