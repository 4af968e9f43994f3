//! Policy toolchain for confining AI agents.
//!
//! A `.claw` policy is parsed into a [`model::SecurityModel`], checked by
//! [`validate`], lowered by [`compile`] into per-scope syscall rule tables,
//! and enforced over syscall traces by [`monitor`].

pub mod cli;
pub mod compile;
pub mod lang;
pub mod model;
pub mod monitor;
pub mod validate;
