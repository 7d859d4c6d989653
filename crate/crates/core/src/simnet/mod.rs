//! Desk-scale experiment harness: splits a dataset across simulated
//! hospitals and runs federated rounds through the DP aggregator and the
//! ledger, all in one process.
//!
//! Every random draw comes from a stream named after its consumer, so a
//! config file fully determines the reports apart from wall times.

mod config;
mod dataset;
mod experiment;
mod network;
mod round;

pub use config::{ChainSection, DatasetSpec, ExperimentConfig, ExperimentSection, PartitionScheme, SplitSizes, TrainerSection};
pub use dataset::{gaussian_blobs, lesion_images, load_ctv1_manifest, load_dataset, partition_dataset, DataSplits};
pub use experiment::{
    centralized_baseline, run_experiment, run_federation, write_csv, write_jsonl, ExperimentOutput, FederatedRun,
    CSV_HEADER,
};
pub use network::{Endpoint, Message, MessageLog, Payload};
pub use round::{hospital_keypair, local_train_seed, make_hospitals, run_round, Federation, HospitalSim, RoundReport};
