//! The user guide in `book/`, compiled as doctests.
//!
//! mdbook cannot run Rust snippets that depend on a local crate, so each
//! chapter is pulled in here as the docs of an empty module and `cargo test`
//! runs its code blocks like any other doctest. One module per chapter keeps
//! failure reports pointing at the right file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/saddle.md")]
pub mod saddle {}
#[doc = include_str!("../../../book/src/binary.md")]
pub mod binary {}
#[doc = include_str!("../../../book/src/censorship.md")]
pub mod censorship {}
#[doc = include_str!("../../../book/src/consistency.md")]
pub mod consistency {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
