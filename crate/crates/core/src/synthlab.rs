//! Synthetic embedders with a tunable shape bias.
//!
//! An entry with codes (s, t, z) embeds as
//!
//! ```text
//! w_shape·U[s] + w_texture·V[t] + w_noise·Z[z] + sigma·ε
//! ```
//!
//! where `U`, `V`, `Z` are unit-norm Gaussian directions drawn from streams
//! keyed by `(seed, axis, index)` and `ε` is a standard normal vector keyed by
//! `(seed, image_id)`. The sum is taken in f64 and rounded to f32 once. See
//! [`crate::rng`] for the stream construction.
//!
//! This is an additive factor model, not a claim about CNN feature geometry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{l2_normalize, EmbeddingError, EmbeddingSet, SpaceTag};
use crate::evaluation::{compare_reports, leave_one_out_code_accuracy, AccuracyReport, CodeAxis, EvalError, ReportDelta};
use crate::gallery::{enumerate_gallery, CodeSpace, GalleryEntry, GalleryError, GalleryManifest};
use crate::retrieval::DistanceMetric;
use crate::rng::{fnv1a64, KeyedStream};

const DOMAIN_SHAPE: u64 = 1;
const DOMAIN_TEXTURE: u64 = 2;
const DOMAIN_NOISE: u64 = 3;
const DOMAIN_OBSERVATION: u64 = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth params: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Gallery(#[from] GalleryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub dim: usize,
    pub w_shape: f64,
    pub w_texture: f64,
    pub w_noise: f64,
    /// per-component observation noise
    pub sigma: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Shape-biased embedder used by the demo and the acceptance run.
    pub fn biased(seed: u64) -> Self {
        SynthParams { dim: 32, w_shape: 4.0, w_texture: 1.0, w_noise: 0.5, sigma: 0.5, seed }
    }

    /// Embedder weighting shape and texture equally.
    pub fn unbiased(seed: u64) -> Self {
        SynthParams { w_shape: 1.0, ..Self::biased(seed) }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SynthParams { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dim < 2 {
            return Err(SynthError::InvalidParams(format!("dim must be at least 2, got {}", self.dim)));
        }
        let weights = [
            ("w_shape", self.w_shape),
            ("w_texture", self.w_texture),
            ("w_noise", self.w_noise),
            ("sigma", self.sigma),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(SynthError::InvalidParams(format!("{name} must be finite and nonnegative, got {w}")));
            }
        }
        if self.w_shape == 0.0 && self.w_texture == 0.0 {
            return Err(SynthError::InvalidParams("one of w_shape or w_texture must be positive".into()));
        }
        Ok(())
    }
}

fn direction(seed: u64, domain: u64, index: u32, dim: usize) -> Vec<f64> {
    let mut stream = KeyedStream::new(seed, domain, index.into());
    loop {
        let v: Vec<f64> = (0..dim).map(|_| stream.next_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn observation_noise(seed: u64, image_id: &str, dim: usize) -> Vec<f64> {
    let mut stream = KeyedStream::new(seed, DOMAIN_OBSERVATION, fnv1a64(image_id.as_bytes()));
    (0..dim).map(|_| stream.next_normal()).collect()
}

fn combine(params: &SynthParams, u: &[f64], v: &[f64], z: &[f64], entry: &GalleryEntry) -> Vec<f32> {
    let eps = if params.sigma > 0.0 {
        observation_noise(params.seed, &entry.image_id, params.dim)
    } else {
        vec![0.0; params.dim]
    };
    (0..params.dim)
        .map(|i| {
            (params.w_shape * u[i] + params.w_texture * v[i] + params.w_noise * z[i] + params.sigma * eps[i]) as f32
        })
        .collect()
}

/// Embedding of one gallery entry. Deterministic in `(entry, params)`.
pub fn synth_embed(entry: &GalleryEntry, params: &SynthParams) -> Vec<f32> {
    let c = entry.codes;
    let u = direction(params.seed, DOMAIN_SHAPE, c.shape, params.dim);
    let v = direction(params.seed, DOMAIN_TEXTURE, c.texture, params.dim);
    let z = direction(params.seed, DOMAIN_NOISE, c.noise, params.dim);
    combine(params, &u, &v, &z, entry)
}

/// Caches factor directions for a whole code space.
struct Embedder {
    params: SynthParams,
    shape: Vec<Vec<f64>>,
    texture: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

impl Embedder {
    fn new(params: SynthParams, space: &CodeSpace) -> Self {
        let table = |domain, n: u32| (0..n).map(|i| direction(params.seed, domain, i, params.dim)).collect();
        Embedder {
            params,
            shape: table(DOMAIN_SHAPE, space.n_shape),
            texture: table(DOMAIN_TEXTURE, space.n_texture),
            noise: table(DOMAIN_NOISE, space.n_noise),
        }
    }

    fn embed(&self, entry: &GalleryEntry) -> Vec<f32> {
        let c = entry.codes;
        combine(
            &self.params,
            &self.shape[c.shape as usize],
            &self.texture[c.texture as usize],
            &self.noise[c.noise as usize],
            entry,
        )
    }

    fn embed_all(&self, manifest: &GalleryManifest, space: SpaceTag) -> Result<EmbeddingSet, EmbeddingError> {
        let entries = manifest.entries();
        #[cfg(feature = "parallel")]
        let vectors: Vec<Vec<f32>> = {
            use rayon::prelude::*;
            entries.par_iter().map(|e| self.embed(e)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let vectors: Vec<Vec<f32>> = entries.iter().map(|e| self.embed(e)).collect();

        EmbeddingSet::from_records(
            space,
            self.params.dim,
            entries.iter().map(|e| e.image_id.clone()).zip(vectors),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthGallery {
    pub manifest: GalleryManifest,
    /// produced by the shape-space (shape-biased) params
    pub shape: EmbeddingSet,
    /// produced by the texture-space (standard) params
    pub texture: EmbeddingSet,
}

pub fn generate_synth_gallery(
    space: CodeSpace,
    shape_params: &SynthParams,
    texture_params: &SynthParams,
) -> Result<SynthGallery, SynthError> {
    shape_params.validate()?;
    texture_params.validate()?;
    let manifest = enumerate_gallery(space)?;
    let shape = Embedder::new(*shape_params, &space).embed_all(&manifest, SpaceTag::Shape)?;
    let texture = Embedder::new(*texture_params, &space).embed_all(&manifest, SpaceTag::Texture)?;
    Ok(SynthGallery { manifest, shape, texture })
}

/// Shape-code accuracy of a shape-biased embedder against a standard one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasExperiment {
    pub biased: AccuracyReport,
    pub unbiased: AccuracyReport,
    /// `biased.accuracy − unbiased.accuracy`
    pub delta: f64,
    pub per_code_delta: ReportDelta,
}

impl BiasExperiment {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("experiment serializes")
    }
}

/// Leave-one-out shape accuracy for a gallery embedded by both param sets.
pub fn run_bias_experiment(
    space: CodeSpace,
    biased: &SynthParams,
    unbiased: &SynthParams,
    metric: DistanceMetric,
) -> Result<BiasExperiment, SynthError> {
    let gallery = generate_synth_gallery(space, biased, unbiased)?;
    experiment_on(&gallery, metric)
}

/// Runs the bias experiment on an already generated gallery.
pub fn experiment_on(gallery: &SynthGallery, metric: DistanceMetric) -> Result<BiasExperiment, SynthError> {
    let score = |set: &EmbeddingSet| -> Result<AccuracyReport, SynthError> {
        let prepared;
        let set = if metric == DistanceMetric::Cosine {
            prepared = l2_normalize(set)?;
            &prepared
        } else {
            set
        };
        Ok(leave_one_out_code_accuracy(set, &gallery.manifest, CodeAxis::ShapeCode, metric)?)
    };
    let biased = score(&gallery.shape)?;
    let unbiased = score(&gallery.texture)?;
    let per_code_delta = compare_reports(&biased, &unbiased)?;
    Ok(BiasExperiment { delta: per_code_delta.accuracy_delta, biased, unbiased, per_code_delta })
}
