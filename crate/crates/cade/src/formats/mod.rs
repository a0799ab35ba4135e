pub mod candidates;
pub mod checkpoint;
pub mod froc;
pub mod kernels;
pub mod observations;
pub mod rv1;
pub mod svg;
pub mod targets;
