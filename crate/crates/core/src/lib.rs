pub mod cli;
pub mod handshake;
pub mod kem;
pub mod metrics;
pub mod simnet;
pub mod tpkg;
