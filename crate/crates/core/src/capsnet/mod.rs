//! A minimal capsule network: feature layer, primary capsules, one routed
//! class-capsule layer and the margin loss.

mod checkpoint;
mod data;
mod loss;
mod model;
mod routing;
mod train;

pub use checkpoint::{model_hash, read_checkpoint, write_checkpoint, CheckpointManifest, CHECKPOINT_FORMAT};
pub use data::{Dataset, Sample};
pub use loss::{margin_loss, margin_loss_grad, MarginParams};
pub use model::{random_instance, CapsNet, CapsNetConfig, FeatureLayer, Forward};
pub use routing::{
    affine_predict, coupling_softmax, dynamic_routing, dynamic_routing_observed, squash, squash_vjp,
    CouplingState, Predictions, RoutingOutput, TransformWeights,
};
pub use train::{evaluate, train_local, Evaluation, TrainParams};
