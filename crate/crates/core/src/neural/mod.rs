//! Per-pixel neural responses from a sparsely connected convolutional block.

pub mod bank;
pub mod block;

pub use bank::{
    generate_connectivity_mask, generate_filter_bank, import_filter_bank, BankShape, FilterBank,
    FilterKind,
};
pub use block::{
    convolve, extract_features, forward_block, local_response_norm, mac_count, max_pool, rectify,
    upsample_features, BlockConfig, LrnParams, MacCount, PixelFeatures, ResponseMap, SampleGrid,
};
