//! Generate psycholinguistic norms from chat-completion log-probabilities
//! and check them against human norms.

pub mod aggregation;
pub mod corpus;
pub mod elicitation;
pub mod lmm;
pub mod stats;
