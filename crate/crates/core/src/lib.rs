#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod acceptance;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod extremes;
pub mod format;
pub mod laws;
pub mod oracle;
pub mod simulate;
pub mod spine;
pub mod tree;
pub mod walks;

pub use error::{Error, Result};
