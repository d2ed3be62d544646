//! The four-dimensional workload search space.
//!
//! Dimension 1 is host topology (which memory device feeds each end),
//! dimension 2 is memory allocation (how many regions, how large),
//! dimension 3 is the transport setting (queue-pair type, opcode, counts,
//! MTU, queue depth, and how messages are batched into work-queue elements),
//! and dimension 4 is the message pattern (the sizes of the messages in one
//! posting round).

mod feature;
mod mfs;
mod point;
mod sample;
mod space;

pub use feature::{
    feature_grid, predicates_equivalent_on_grid, render_feature_value, set_feature, FeatureId,
    FeaturePredicate, PredicateKind, FEATURE_ORDER,
};
pub use mfs::{
    check_space_against_mfs, enumerate_grid_points, find_witness_brute_force, matches_mfs, Mfs,
    SymptomKind,
};
pub use point::{Direction, Opcode, QpType, WorkloadPoint};
pub use sample::{mutate, sample_random, DimGroup, P_LOCAL};
pub use space::{
    transport_is_valid, DeviceKind, Locality, MemoryDevice, SearchSpace, SizeRegion,
};

#[cfg(feature = "parallel")]
pub use mfs::par_find_witness_brute_force;
