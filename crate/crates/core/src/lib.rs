//! Finite combinatorics of tree growth functions, the T_{0,f,k} structures
//! built over them, free Boolean algebras of independent partitions, and the
//! possibility patterns that connect the two.

pub mod indep_ba;
pub mod patterns;
pub mod tf_structures;
pub mod tf_types;
pub mod tnk;
pub mod trees;
