// mdbook cannot test listings that depend on a workspace crate, so every
// chapter is pulled in as a module doc and `cargo test --doc` runs them.
// One module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/rgf.md")]
pub mod rgf {}
#[doc = include_str!("src/spectra.md")]
pub mod spectra {}
#[doc = include_str!("src/detectors.md")]
pub mod detectors {}
#[doc = include_str!("src/synthetic.md")]
pub mod synthetic {}
#[doc = include_str!("src/perturbations.md")]
pub mod perturbations {}
#[doc = include_str!("src/extremes.md")]
pub mod extremes {}
#[doc = include_str!("src/memorization.md")]
pub mod memorization {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
#[doc = include_str!("src/real-data.md")]
pub mod real_data {}
