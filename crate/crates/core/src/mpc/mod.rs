//! Secret-sharing runtime: transport, sessions, OT and the primitive
//! two-party protocols.

pub mod cost;
pub mod ot;
pub mod session;
pub mod transport;
pub mod arith;
pub mod share;
pub mod compare;
pub mod ideal;
pub mod nonlinear;
