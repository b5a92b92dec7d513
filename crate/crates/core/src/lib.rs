//! Batch acquisition for active learning on object detection.
//!
//! Images arrive as post-NMS predictions (category, confidence, feature per
//! instance). [`enms`] turns each image into an uncertainty score after
//! removing same-class instances that carry redundant information, and
//! [`divproto`] selects a budget of images that are uncertain, not redundant
//! with each other at the class-prototype level, and biased toward classes
//! that are rare in the labeled set. [`baselines`] holds the comparison
//! policies and [`simloop`] a synthetic pool generator and cycle driver.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod divproto;
pub mod enms;
pub mod error;
pub mod pool;
pub mod prototypes;
pub mod simloop;
pub mod uncertainty;

pub use baselines::{run_policy, PolicyId, PolicyOptions};
pub use config::{AcquisitionConfig, PrototypeSource};
pub use divproto::{divproto_select, AcquisitionResult, AuditRecord, Phase, QuotaLedger};
pub use enms::{cosine_similarity, enms_image, ImageScore};
pub use error::{Error, Result};
pub use pool::{ClassCounts, ImagePrediction, InstancePrediction, Pool};
pub use prototypes::{image_prototypes, Prototype, PrototypeSet};
pub use uncertainty::{basic_image_entropy, instance_entropy};
