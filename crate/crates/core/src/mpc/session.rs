//! A two-party session: ordered channel, role, randomness, HE context and
//! cost accumulators.

use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::cost::{Category, CostLedger, CostReport};
use super::ot::OtState;
use super::transport::{Tag, Transport, FRAME_HEADER};
use crate::bfv::{keygen, BfvParams, SecretKey};
use crate::error::{Error, Result};
use crate::fixed::FixedPointParams;

/// Party 0 is the client (input owner, key holder), party 1 the server
/// (model owner).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Party {
    Client = 0,
    Server = 1,
}

impl Party {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Party {
        match self {
            Party::Client => Party::Server,
            Party::Server => Party::Client,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Party::Client => "client",
            Party::Server => "server",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Crypto,
    /// Reconstructs nonlinear inputs in the clear. Testing only.
    Ideal,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Crypto => "crypto",
            Backend::Ideal => "ideal",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crypto" => Ok(Backend::Crypto),
            "ideal" => Ok(Backend::Ideal),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub fixed: FixedPointParams,
    pub poly_degree: usize,
    pub seed: u64,
    pub backend: Backend,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            fixed: FixedPointParams::default(),
            poly_degree: 8192,
            seed: 0,
            backend: Backend::Crypto,
        }
    }
}

pub struct Session {
    party: Party,
    config: SessionConfig,
    chan: Box<dyn Transport>,
    rng: ChaCha20Rng,
    bfv: Arc<BfvParams>,
    sk: Option<SecretKey>,
    pub(crate) ot: OtState,
    cost: CostLedger,
    category: Option<Category>,
    tag: Option<Tag>,
    frames: u64,
    last_sent: Option<bool>,
    insecure: bool,
}

impl Session {
    pub fn new(party: Party, config: SessionConfig, chan: Box<dyn Transport>) -> Result<Self> {
        let bfv = BfvParams::new(config.poly_degree, config.fixed)?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        rng.set_stream(party.index() as u64 + 1);
        let sk = match party {
            Party::Client => Some(keygen(&bfv, rng.next_u64())),
            Party::Server => None,
        };
        Ok(Self {
            party,
            config,
            chan,
            rng,
            bfv,
            sk,
            ot: OtState::default(),
            cost: CostLedger::default(),
            category: None,
            tag: None,
            frames: 0,
            last_sent: None,
            insecure: false,
        })
    }

    #[inline]
    pub fn party(&self) -> Party {
        self.party
    }

    #[inline]
    pub fn is_server(&self) -> bool {
        self.party == Party::Server
    }

    #[inline]
    pub fn fixed(&self) -> FixedPointParams {
        self.config.fixed
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn backend(&self) -> Backend {
        self.config.backend
    }

    pub fn bfv(&self) -> &Arc<BfvParams> {
        &self.bfv
    }

    pub fn secret_key(&self) -> Result<&SecretKey> {
        self.sk
            .as_ref()
            .ok_or_else(|| Error::Config("only the client holds the decryption key".into()))
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn mark_insecure(&mut self) {
        self.insecure = true;
    }

    pub fn is_insecure(&self) -> bool {
        self.insecure
    }

    /// Frames sent plus received so far; reported on desync.
    pub fn frame_count(&self) -> u64 {
        self.frames
    }

    fn current_category(&self) -> Category {
        self.category.unwrap_or(Category::Other)
    }

    fn effective_tag(&self, tag: Tag) -> Tag {
        self.tag.unwrap_or(tag)
    }

    fn note_direction(&mut self, sent: bool) {
        if self.last_sent != Some(sent) {
            self.cost.add_round(self.current_category());
            self.last_sent = Some(sent);
        }
    }

    pub fn send(&mut self, tag: Tag, payload: Vec<u8>) -> Result<()> {
        let tag = self.effective_tag(tag);
        let bytes = (payload.len() + FRAME_HEADER) as u64;
        self.note_direction(true);
        let cat = self.current_category();
        self.cost
            .add_bytes(cat, tag, bytes, true, self.party == Party::Client);
        self.frames += 1;
        self.chan.send_frame(tag as u8, payload)?;
        Ok(())
    }

    pub fn recv(&mut self, tag: Tag) -> Result<Vec<u8>> {
        let expected = self.effective_tag(tag);
        let (got, payload) = self.chan.recv_frame()?;
        self.frames += 1;
        if got != expected as u8 {
            return Err(Error::Desync {
                expected,
                got,
                round: self.frames,
            });
        }
        self.note_direction(false);
        let cat = self.current_category();
        self.cost.add_bytes(
            cat,
            expected,
            (payload.len() + FRAME_HEADER) as u64,
            false,
            self.party == Party::Client,
        );
        Ok(payload)
    }

    /// Symmetric exchange: the client sends first, the server receives first.
    pub fn exchange(&mut self, tag: Tag, payload: Vec<u8>) -> Result<Vec<u8>> {
        match self.party {
            Party::Client => {
                self.send(tag, payload)?;
                self.recv(tag)
            }
            Party::Server => {
                let got = self.recv(tag)?;
                self.send(tag, payload)?;
                Ok(got)
            }
        }
    }

    pub fn send_elems(&mut self, tag: Tag, values: &[u64]) -> Result<()> {
        let payload = pack_elems(values, &self.config.fixed);
        self.send(tag, payload)
    }

    pub fn recv_elems(&mut self, tag: Tag, count: usize) -> Result<Vec<u64>> {
        let payload = self.recv(tag)?;
        unpack_elems(&payload, count, &self.config.fixed, self.effective_tag(tag))
    }

    pub fn exchange_elems(&mut self, tag: Tag, values: &[u64]) -> Result<Vec<u64>> {
        let payload = pack_elems(values, &self.config.fixed);
        let got = self.exchange(tag, payload)?;
        unpack_elems(&got, values.len(), &self.config.fixed, self.effective_tag(tag))
    }

    /// Runs `f` with traffic and wall time attributed to `cat`. Nested
    /// scopes defer to the outermost one.
    pub fn scoped<T>(&mut self, cat: Category, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        if self.category.is_some() {
            return f(self);
        }
        self.category = Some(cat);
        let start = Instant::now();
        let out = f(self);
        self.cost.add_time(cat, start.elapsed());
        self.category = None;
        out
    }

    /// Runs `f` with every frame labelled `tag`. Nested labels defer to the
    /// outermost one.
    pub fn tagged<T>(&mut self, tag: Tag, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        if self.tag.is_some() {
            return f(self);
        }
        self.tag = Some(tag);
        let out = f(self);
        self.tag = None;
        out
    }

    pub fn report(&self) -> CostReport {
        self.cost
            .report(self.party.name(), self.config.backend.name(), self.insecure)
    }
}

/// Packs ring elements into `ceil(ell/8)` little-endian bytes each.
pub fn pack_elems(values: &[u64], fixed: &FixedPointParams) -> Vec<u8> {
    let w = fixed.element_bytes();
    let mut out = Vec::with_capacity(values.len() * w);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes()[..w]);
    }
    out
}

pub fn unpack_elems(bytes: &[u8], count: usize, fixed: &FixedPointParams, tag: Tag) -> Result<Vec<u64>> {
    let w = fixed.element_bytes();
    if bytes.len() != count * w {
        return Err(Error::Payload {
            tag,
            detail: format!("expected {} bytes, got {}", count * w, bytes.len()),
        });
    }
    let mask = fixed.mask();
    bytes
        .chunks_exact(w)
        .map(|c| {
            let mut buf = [0u8; 8];
            buf[..w].copy_from_slice(c);
            let v = u64::from_le_bytes(buf);
            if v & !mask != 0 {
                Err(Error::Payload {
                    tag,
                    detail: "element outside the ring".into(),
                })
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Runs both parties of a protocol over an in-process pipe and returns
/// `(client_output, server_output)`.
pub fn run_local<A, B, FA, FB>(config: SessionConfig, client: FA, server: FB) -> Result<(A, B)>
where
    A: Send,
    B: Send,
    FA: FnOnce(&mut Session) -> Result<A> + Send,
    FB: FnOnce(&mut Session) -> Result<B> + Send,
{
    let (ct, st) = super::transport::pipe();
    let (a, b) = std::thread::scope(|scope| {
        let hs = scope.spawn(move || {
            let mut s = Session::new(Party::Server, config, Box::new(st))?;
            server(&mut s)
        });
        let a = Session::new(Party::Client, config, Box::new(ct)).and_then(|mut s| client(&mut s));
        (a, hs.join().expect("server thread panicked"))
    });
    match (a, b) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        // The side that failed first usually reports the root cause; a
        // transport error is typically the echo on the other side.
        (Err(Error::Transport(_)), Err(e)) => Err(e),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}
