//! Compiles the guide's Rust listings as doc-tests.
//!
//! mdbook cannot resolve workspace dependencies in its own test runner, so
//! each chapter is pulled in as the docs of an empty module instead. A
//! failing listing shows up under its chapter's module name.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/protocols.md")]
pub mod protocols {}
#[doc = include_str!("../../../book/src/adversaries.md")]
pub mod adversaries {}
#[doc = include_str!("../../../book/src/checking.md")]
pub mod checking {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/limits.md")]
pub mod limits {}
