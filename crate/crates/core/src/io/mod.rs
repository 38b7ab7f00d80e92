//! File formats.

mod bytes;
pub mod cameras;
pub mod checkpoint;
pub mod obj;
pub mod pfm;
pub mod ply;
