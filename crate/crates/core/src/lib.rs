pub mod eval;
pub mod fixture;
pub mod gguf;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod tokenizer;
