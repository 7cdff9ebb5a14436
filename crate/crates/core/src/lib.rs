//! Two-party secure training of decision trees, random forests, and
//! extra-trees classifiers over additively secret-shared continuous data,
//! in the trusted-initializer model with semi-honest parties.

pub mod agg;
pub mod bench;
pub mod bits;
pub mod compare;
pub mod error;
pub mod fixed;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod proto;
pub mod ring;
pub mod sharing;
pub mod synth;
pub mod ti;
pub mod train;
pub mod transport;
pub(crate) mod wire;

pub use error::{Error, Result};
pub use fixed::Codec;
pub use ring::{Mat, Ring, RingVec};
pub use sharing::Role;
