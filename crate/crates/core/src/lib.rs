//! Diversity-aware curation and dual-branch detection for AI-generated
//! images, operating on precomputed encoder embeddings.
//!
//! The crate is organized as one module per pipeline stage:
//!
//! * [`manifest`]: embedding interchange format and the deterministic toy encoder
//! * [`similarity`]: exact blocked cosine similarity
//! * [`curator`]: greedy thresholded dedup, class refinement and balancing
//! * [`spectrum`]: centered DFT magnitude spectra of images
//! * [`fusion`]: pixel/spectrum class-token concatenation
//! * [`head`]: three-layer detection head, hybrid CE + supervised contrastive loss, Adam training
//! * [`evaluator`]: ACC / AUC / AP / ROC / EER
//! * [`perturb`]: Gaussian blur and JPEG robustness protocol
//! * [`pipeline`]: declarative multi-stage runs and dataset combination
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod curator;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod head;
pub mod manifest;
pub mod perturb;
pub mod pipeline;
pub mod raster;
pub mod similarity;
pub mod spectrum;
pub mod synth;

pub use error::{Error, Result};
pub use manifest::{read_manifest, write_manifest, Branch, EmbeddingRecord, Label, Manifest};
pub use raster::Raster;
