//! Block-level toolkit for periodic framework structures: lattice math,
//! rotation conversions, PCA block frames, assembly, text codecs, periodic
//! structure matching, matching-driven RL objectives, a toy policy trainer,
//! and grid-based geometric descriptors.

pub mod assembly;
pub mod assignment;
pub mod codec;
pub mod dataset;
pub mod descriptors;
pub mod elements;
pub mod frames;
pub mod lattice;
pub mod matching;
pub mod reward;
pub mod rotation;
pub mod sim;
