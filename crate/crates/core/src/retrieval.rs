//! Exact nearest-neighbor retrieval of gallery entries and code prediction.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingSet, QueryEmbedding, SpaceTag};
use crate::gallery::{BackgroundPolicy, CodeSpace, CodeTuple, GalleryManifest};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("query has dimension {query} but the embedding set has dimension {set}")]
    DimMismatch { query: usize, set: usize },
    #[error("no candidates left to search")]
    EmptyCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cosine distance requires unit-norm vectors ({0} is not normalized)")]
    Unnormalized(&'static str),
    #[error("embedding space mismatch: expected {expected}, found {found}")]
    SpaceMismatch { expected: SpaceTag, found: SpaceTag },
    #[error("embedding `{0}` has no gallery entry")]
    UnknownEntry(String),
    #[error("{axis} code {value} out of range (< {bound})")]
    CodeOutOfRange { axis: &'static str, value: u32, bound: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    SquaredL2,
    /// 1 − dot(u, v) on unit vectors.
    #[default]
    Cosine,
}

impl DistanceMetric {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::SquaredL2 => "squared_l2",
            DistanceMetric::Cosine => "cosine",
        }
    }

    /// Distance between two equal-length vectors, accumulated in f64.
    #[inline]
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            DistanceMetric::SquaredL2 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum(),
            DistanceMetric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
                (1.0 - dot).clamp(0.0, 2.0)
            }
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceMetric::Cosine),
            "squared_l2" | "l2" | "sql2" => Ok(DistanceMetric::SquaredL2),
            other => Err(format!("unknown metric `{other}` (cosine|squared_l2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryHit {
    pub image_id: String,
    pub codes: CodeTuple,
    pub distance: f64,
    pub rank: usize,
}

/// Gallery vectors laid out contiguously with their codes, ready for
/// repeated queries. Rows follow ascending id order.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    space: SpaceTag,
    dim: usize,
    normalized: bool,
    ids: Vec<String>,
    codes: Vec<CodeTuple>,
    data: Vec<f32>,
}

impl GalleryIndex {
    /// Joins `set` with `manifest`; every embedded id must be a gallery entry.
    pub fn new(set: &EmbeddingSet, manifest: &GalleryManifest) -> Result<Self, RetrievalError> {
        let mut ids = Vec::with_capacity(set.len());
        let mut codes = Vec::with_capacity(set.len());
        let mut data = Vec::with_capacity(set.len() * set.dim());
        for (id, vector) in set.iter() {
            let entry = manifest.get(id).ok_or_else(|| RetrievalError::UnknownEntry(id.to_string()))?;
            ids.push(id.to_string());
            codes.push(entry.codes);
            data.extend_from_slice(vector);
        }
        Ok(GalleryIndex { space: set.space(), dim: set.dim(), normalized: set.is_normalized(), ids, codes, data })
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn codes(&self, row: usize) -> CodeTuple {
        self.codes[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    fn check_query(&self, query: &[f32], metric: DistanceMetric) -> Result<(), RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch { query: query.len(), set: self.dim });
        }
        if metric == DistanceMetric::Cosine {
            if !self.normalized {
                return Err(RetrievalError::Unnormalized("embedding set"));
            }
            let n = crate::embedding::norm(query);
            if (n - 1.0).abs() > crate::embedding::UNIT_NORM_TOLERANCE {
                return Err(RetrievalError::Unnormalized("query"));
            }
        }
        Ok(())
    }

    /// The `k` rows closest to `query`, skipping rows for which `skip`
    /// returns true. Ties are broken by ascending id.
    pub fn search<F>(&self, query: &[f32], k: usize, metric: DistanceMetric, skip: F) -> Result<Vec<GalleryHit>, RetrievalError>
    where
        F: Fn(usize) -> bool,
    {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        self.check_query(query, metric)?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&row| !skip(row))
            .map(|row| (metric.distance(query, self.row(row)), row))
            .collect();
        if scored.is_empty() {
            return Err(RetrievalError::EmptyCandidates);
        }
        // rows are in id order, so comparing row numbers breaks ties by id
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (distance, row))| GalleryHit {
                image_id: self.ids[row].clone(),
                codes: self.codes[row],
                distance,
                rank,
            })
            .collect())
    }

    /// Single nearest row other than `row` itself.
    pub fn nearest_excluding(&self, row: usize, metric: DistanceMetric) -> Result<(usize, f64), RetrievalError> {
        let query = self.row(row);
        self.check_query(query, metric)?;
        let mut best: Option<(f64, usize)> = None;
        for other in (0..self.len()).filter(|&o| o != row) {
            let d = metric.distance(query, self.row(other));
            // strict less keeps the lowest row (smallest id) on ties
            if best.is_none_or(|(bd, _)| d.total_cmp(&bd) == Ordering::Less) {
                best = Some((d, other));
            }
        }
        best.map(|(d, r)| (r, d)).ok_or(RetrievalError::EmptyCandidates)
    }
}

/// Exact k-nearest gallery entries to `query`.
pub fn k_nearest(
    query: &QueryEmbedding,
    set: &EmbeddingSet,
    manifest: &GalleryManifest,
    k: usize,
    metric: DistanceMetric,
    exclude: Option<&HashSet<String>>,
) -> Result<Vec<GalleryHit>, RetrievalError> {
    if query.space != set.space() {
        return Err(RetrievalError::SpaceMismatch { expected: set.space(), found: query.space });
    }
    let index = GalleryIndex::new(set, manifest)?;
    match exclude {
        Some(ex) => index.search(&query.vector, k, metric, |row| ex.contains(index.id(row))),
        None => index.search(&query.vector, k, metric, |_| false),
    }
}

/// A code read off the rank-0 hit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodePrediction {
    pub code: u32,
    pub hit: GalleryHit,
}

fn predict(
    query: &QueryEmbedding,
    set: &EmbeddingSet,
    manifest: &GalleryManifest,
    metric: DistanceMetric,
    space: SpaceTag,
    code_of: fn(&CodeTuple) -> u32,
) -> Result<CodePrediction, RetrievalError> {
    for found in [query.space, set.space()] {
        if found != space {
            return Err(RetrievalError::SpaceMismatch { expected: space, found });
        }
    }
    let hit = k_nearest(query, set, manifest, 1, metric, None)?.remove(0);
    Ok(CodePrediction { code: code_of(&hit.codes), hit })
}

/// Texture code T of the texture-space nearest neighbor of `query`.
pub fn predict_texture_code(
    query: &QueryEmbedding,
    texture_set: &EmbeddingSet,
    manifest: &GalleryManifest,
    metric: DistanceMetric,
) -> Result<CodePrediction, RetrievalError> {
    predict(query, texture_set, manifest, metric, SpaceTag::Texture, |c| c.texture)
}

/// Shape code S of the shape-space nearest neighbor of `query`.
pub fn predict_shape_code(
    query: &QueryEmbedding,
    shape_set: &EmbeddingSet,
    manifest: &GalleryManifest,
    metric: DistanceMetric,
) -> Result<CodePrediction, RetrievalError> {
    predict(query, shape_set, manifest, metric, SpaceTag::Shape, |c| c.shape)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeSelection {
    pub texture_code: u32,
    pub shape_code: u32,
    pub texture_hit: GalleryHit,
    pub shape_hit: GalleryHit,
}

impl CodeSelection {
    pub fn new(texture: CodePrediction, shape: CodePrediction) -> Self {
        CodeSelection {
            texture_code: texture.code,
            shape_code: shape.code,
            texture_hit: texture.hit,
            shape_hit: shape.hit,
        }
    }
}

/// Which noise index the composed generator input uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseSource {
    #[default]
    FromShapeHit,
    FromTextureHit,
    Fixed(u32),
}

impl FromStr for NoiseSource {
    type Err = String;

    /// `shape_hit`, `texture_hit` or `fixed:<index>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shape_hit" => Ok(NoiseSource::FromShapeHit),
            "texture_hit" => Ok(NoiseSource::FromTextureHit),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|i| i.parse().ok())
                .map(NoiseSource::Fixed)
                .ok_or_else(|| format!("unknown noise source `{s}` (shape_hit|texture_hit|fixed:<index>)")),
        }
    }
}

/// Generator input assembled from a code selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedInput {
    #[serde(flatten)]
    pub codes: CodeTuple,
}

pub fn compose_input(
    selection: &CodeSelection,
    space: &CodeSpace,
    noise_source: NoiseSource,
) -> Result<ComposedInput, RetrievalError> {
    let check = |axis, value, bound| {
        if value < bound {
            Ok(value)
        } else {
            Err(RetrievalError::CodeOutOfRange { axis, value, bound })
        }
    };
    let shape = check("shape", selection.shape_code, space.n_shape)?;
    let texture = check("texture", selection.texture_code, space.n_texture)?;
    let background = match space.background_policy {
        BackgroundPolicy::TiedToTexture => texture % space.n_background,
        BackgroundPolicy::Fixed(i) => check("background", i, space.n_background)?,
        BackgroundPolicy::Independent => {
            check("background", selection.texture_hit.codes.background, space.n_background)?
        }
    };
    let noise = match noise_source {
        NoiseSource::FromShapeHit => selection.shape_hit.codes.noise,
        NoiseSource::FromTextureHit => selection.texture_hit.codes.noise,
        NoiseSource::Fixed(i) => i,
    };
    let noise = check("noise", noise, space.n_noise)?;
    Ok(ComposedInput { codes: CodeTuple::new(background, shape, texture, noise) })
}
