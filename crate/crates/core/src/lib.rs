//! Fine-grained privacy masking: graph-based PII risk scoring, a multi-agent
//! detection/recognition pipeline, coordinate remapping back to the original
//! image, and three masking strategies (object, fine-grained, high-risk).

pub mod agents;
pub mod fixtures;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod risk;
pub mod taxonomy;
