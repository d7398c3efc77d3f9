// mdbook cannot compile listings against workspace crates, so each chapter
// is pulled in as a doc comment and `cargo test --doc` runs its snippets.

#[doc = include_str!("src/intro.md")]
pub mod intro {}
#[doc = include_str!("src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("src/cvae.md")]
pub mod cvae {}
#[doc = include_str!("src/scenes.md")]
pub mod scenes {}
#[doc = include_str!("src/eval.md")]
pub mod eval {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
