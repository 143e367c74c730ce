//! From likelihoods to real bitstreams: a carryless range coder, quantized
//! per-channel frequency tables, the NWCZ compressed container, and rate
//! accounting.

pub mod container;
pub mod range;
pub mod tables;

pub use container::{quality_bits, rate_report, CompressedTensor, RateReport};
pub use range::{RangeDecoder, RangeEncoder, FREQ_TOTAL};
pub use tables::{build_tables, ChannelTable, PmfTableSet, MAX_SUPPORT};
