//! Desk-scale laboratory for masked-diffusion token decoding.
//!
//! The crate trains a tiny double-precision transformer on synthetic token
//! processes, transfers autoregressive weights into a bidirectional masked
//! diffusion model, decodes with confidence-scheduled parallel unmasking, and
//! certifies the underlying information-theoretic bound by exact enumeration.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example theory_certificate
//! cargo run --release --example train_and_sample
//! cargo run --release --example parallel_vs_sequential
//! cargo run --release --example unmasking_wavefront
//! cargo run --release --example alignment_heads
//! cargo run --release --example selective_edit
//! cargo run --release --example ablation_grid
//! ```
//!
//! The same capabilities are scriptable through the `mdtc` binary
//! (`gen-data`, `train`, `decode`, `verify-theory`, `edit`, `bench`).

pub mod bench;
pub mod cli;
pub mod config;
pub mod container;
pub mod decode;
pub mod edit;
pub mod error;
pub mod infomath;
pub mod layout;
pub mod mask;
pub mod net;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use layout::{build_layout, SequenceLayout, Span};
pub use mask::{apply_random_mask, MaskState};
pub use rng::RngStream;
pub use schedule::{linear_schedule, planned_unmask_counts, Schedule};
pub use vocab::{IdRange, Vocab};
