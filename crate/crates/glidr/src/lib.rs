//! Differentiable graph-like rule learning over knowledge graphs.
//!
//! The toolkit learns first-order rules whose bodies live in an N-variable
//! graph-like schema: one predicate slot per ordered variable pair, filled
//! from an extended predicate set (domain relations, their inverses, and a
//! universally-true masking predicate). Inference propagates soft entity
//! domains along the slots by iterative message passing; training drives
//! per-slot predicate logits with exact reverse-mode gradients and AdamW;
//! converged weights can be extracted into explicit rules and everything is
//! evaluated with filtered ranking metrics on knowledge-graph completion.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod infer;
pub mod kg;
pub mod oracle;
pub mod rng;
pub mod rule;
pub mod selfcheck;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use infer::{HardOutcome, InferenceConfig, OpenEnd, Query};
pub use kg::{AdjacencyTensor, ExtendedPredicates, KnowledgeBase, SplitKind, Stage, Triple};
pub use rule::{HardEnsemble, HardRule, RuleEnsemble, RuleSchema, RuleWeights, SoftEnsemble};
pub use train::TrainConfig;
