// mdbook cannot run these snippets against a workspace crate, so each
// chapter becomes an empty module whose docs are the chapter text and
// `cargo test --doc` runs the code blocks. One module per chapter keeps a
// failing block traceable to its file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/spectra.md")]
pub mod spectra {}
#[doc = include_str!("../../../book/src/waterfill.md")]
pub mod waterfill {}
#[doc = include_str!("../../../book/src/flows.md")]
pub mod flows {}
#[doc = include_str!("../../../book/src/warmup.md")]
pub mod warmup {}
#[doc = include_str!("../../../book/src/toyvq.md")]
pub mod toyvq {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
