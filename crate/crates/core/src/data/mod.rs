//! Datasets, loaders, the synthetic generator and the Dirichlet partitioner.

mod dataset;
mod loaders;
mod partition;
mod synth;

pub use dataset::{Batch, Dataset};
pub use loaders::{load_csv, load_ucihar, load_ucihar_labels, UCIHAR_CLASSES, UCIHAR_FEATURES};
pub use partition::{
    dirichlet_partition, largest_remainder, partition_report, sample_dirichlet, DirichletSpec,
    Partition, PartitionReport,
};
pub use synth::{class_center, synth_clusters};
