//! Server, client and benchmark driver for two-party transformer inference.
//!
//! One process runs one role. The server serves exactly one connection and
//! exits; the bench role runs both parties over an in-process pipe.

pub mod bench;
pub mod config;
pub mod session;

use ptinfer_core::Error;

pub use bench::{cumulative_variants, emit_benchmark, BenchColumn, BenchTable, REFERENCE_FIGURES};
pub use config::{BackendArg, Role, RunConfig};
pub use session::{run_client, run_client_session, serve, serve_on, serve_session, ClientOutcome};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const TRANSPORT: i32 = 3;
    pub const DESYNC: i32 = 4;
    pub const MODEL: i32 = 5;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Params(_) => exit::CONFIG,
        Error::Transport(_) => exit::TRANSPORT,
        Error::Desync { .. } | Error::Payload { .. } => exit::DESYNC,
        Error::Model(_) => exit::MODEL,
        _ => exit::OTHER,
    }
}

/// Dispatches on `cfg.role`.
pub fn run(cfg: &RunConfig) -> ptinfer_core::Result<()> {
    cfg.validate()?;
    match cfg.role {
        Role::Server => {
            let r = serve_session(cfg)?;
            log::info!("served one inference, {} bytes", r.total_bytes());
        }
        Role::Client => {
            let out = run_client_session(cfg)?;
            log::info!("inference done, {} bytes", out.report.total_bytes());
        }
        Role::Bench => {
            let table = emit_benchmark(cfg)?;
            match &cfg.output {
                Some(p) => std::fs::write(p, table.render())?,
                None => print!("{}", table.render()),
            }
            if let Some(p) = &cfg.report {
                session::write_json(Some(p), &table)?;
            }
        }
        Role::Plaintext => {
            session::run_plaintext(cfg)?;
        }
        Role::Fixture => {
            session::write_fixture(cfg)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ptinfer_core::error::ModelError;
    use ptinfer_core::mpc::transport::Tag;

    #[test]
    fn exit_codes_are_distinct() {
        let io = std::io::Error::new(std::io::ErrorKind::ConnectionRefused, "refused");
        let codes = [
            exit_code(&Error::Config("x".into())),
            exit_code(&Error::Transport(io)),
            exit_code(&Error::Desync {
                expected: Tag::Relu,
                got: 1,
                round: 3,
            }),
            exit_code(&Error::Model(ModelError::BadMagic)),
            exit_code(&Error::Noise { index: 0 }),
        ];
        assert_eq!(codes, [2, 3, 4, 5, 1]);
    }
}
