//! Any-way episodic meta-learning.
//!
//! A fixed-width output head of `O` nodes serves tasks of any cardinality
//! `N ≤ O`: each episode draws `⌊O/N⌋` disjoint random maps from numeric
//! labels to output nodes, sums the per-map losses during training and
//! ensembles the per-map logits at test time. Around that mechanism the crate
//! provides a small dense-network substrate with hand-written gradients,
//! episodic task sampling, a first-order MAML engine, a ProtoNet backend with
//! EMA semantic prototypes, semantic-head/mixup injection, synthetic mother
//! datasets and an experiment harness.

pub mod assignment;
pub mod checkpoint;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod maml;
pub mod metrics;
pub mod nn;
pub mod proto;
pub mod rng;
pub mod semantic;
pub mod synth;

pub use error::{Error, Result};
