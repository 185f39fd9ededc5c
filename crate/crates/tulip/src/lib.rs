//! TULIP: a bit-exact, cycle-accurate simulator and microcode scheduler for
//! a binary-neural-network accelerator built from programmable threshold
//! logic gates.
//!
//! The accelerator's processing element (a TULIP-PE) is a cluster of four
//! configurable `[2,1,1,1;T]` threshold neurons with 16-bit local registers.
//! Arbitrary-fanin BNN nodes are compiled onto it as reverse-post-order
//! adder-tree microcode; the same gate, reconfigured per cycle, performs
//! addition, accumulation, comparison, batch normalization, maxpooling and
//! RELU. The crate covers:
//!
//! - [`neuron`]: threshold functions and the functional neuron model;
//! - [`pe`]: the cycle-accurate processing-element simulator;
//! - [`scheduler`]: adder-tree decomposition, RPO scheduling, storage
//!   bounds, and microcode generation for every BNN operation;
//! - [`frontend`]: network ingestion and the golden reference evaluator;
//! - [`arch`]: the top-level machine model with its fetch/cycle/time cost
//!   model;
//! - [`verify`]: self-checking oracle suites used by the CLI.

pub mod arch;
pub mod error;
pub mod frontend;
pub mod neuron;
pub mod pe;
pub mod scheduler;
pub mod verify;

pub use error::{Error, Result};
