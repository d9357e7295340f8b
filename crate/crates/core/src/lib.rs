//! Streaming block decoding of surface-code syndromes: detector error models,
//! syndrome sampling and streaming, matching decoders, a block/seam decoding
//! engine with a real-time scheduler, and an emulated INT8 neural local
//! decoder with its hardware cost model.

pub mod code_model;
pub mod base_decoder;
pub mod sampler;
pub mod block_engine;
pub mod scheduler;
pub mod nldu;
pub mod experiments;
