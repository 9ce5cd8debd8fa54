//! Inference of generator codes by nearest-neighbor retrieval.
//!
//! A gallery of generated images with known (background, shape, texture,
//! noise) codes is embedded twice: once by a standard network (texture
//! space) and once by a shape-biased network (shape space). The texture code
//! of a query image is read off its texture-space nearest neighbor, the shape
//! code off its shape-space nearest neighbor, and the two are composed into a
//! new generator input.
//!
//! [`synthlab`] provides synthetic embedders with a tunable shape bias so the
//! whole pipeline can be exercised without any neural network.

pub mod embedding;
pub mod evaluation;
pub mod gallery;
pub mod retrieval;
pub mod rng;
pub mod synthlab;

pub use embedding::{
    ingest_embedding_file, l2_normalize, read_embedding_file, validate_against_manifest, write_embedding_file,
    CoverageReport, EmbeddingError, EmbeddingSet, QueryEmbedding, SpaceTag,
};
pub use evaluation::{
    centroid_predict, compare_reports, leave_one_out_code_accuracy, train_centroid_model, AccuracyReport,
    CentroidModel, CodeAxis, EvalError, ReportDelta,
};
pub use gallery::{
    enumerate_gallery, load_manifest, save_manifest, BackgroundPolicy, CodeSpace, CodeTuple, GalleryEntry,
    GalleryError, GalleryManifest,
};
pub use retrieval::{
    compose_input, k_nearest, predict_shape_code, predict_texture_code, CodePrediction, CodeSelection,
    ComposedInput, DistanceMetric, GalleryHit, GalleryIndex, NoiseSource, RetrievalError,
};
pub use synthlab::{
    generate_synth_gallery, run_bias_experiment, synth_embed, BiasExperiment, SynthError, SynthGallery,
    SynthParams,
};
