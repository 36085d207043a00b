//! Compact detector-head modules with exact forward semantics, tape-based
//! reverse-mode gradients, head arrangement parsing, and parameter accounting.

pub mod golden;
pub mod harness;
pub mod head;
pub mod modules;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use harness::{run_suite, Report, RunConfig};
pub use head::{build_head, head_forward, Arrangement, HeadConfig};
pub use tape::{gradcheck, Tape};
pub use tensor::Tensor;
