//! Leave-one-out code accuracy over a gallery's own embeddings, and the
//! nearest-centroid baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{validate_against_manifest, CoverageReport, EmbeddingSet, QueryEmbedding, SpaceTag};
use crate::gallery::{CodeSpace, CodeTuple, GalleryManifest};
use crate::retrieval::{DistanceMetric, GalleryIndex, RetrievalError};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("embeddings do not cover the gallery ({} missing, {} extra)", .0.missing.len(), .0.extra.len())]
    IncompleteCoverage(CoverageReport),
    #[error("leave-one-out needs at least two gallery entries")]
    SingletonGallery,
    #[error("no training vectors for {axis} code {code}")]
    EmptyClass { axis: CodeAxis, code: u32 },
    #[error("query has dimension {query}, model has dimension {model}")]
    DimMismatch { query: usize, model: usize },
    #[error("cannot compare reports on different axes ({0} vs {1})")]
    MismatchedAxes(CodeAxis, CodeAxis),
    #[error("cannot compare reports over different gallery sizes ({0} vs {1})")]
    MismatchedSize(usize, usize),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Code axis a prediction is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CodeAxis {
    #[default]
    #[serde(rename = "shape")]
    ShapeCode,
    #[serde(rename = "texture")]
    TextureCode,
}

impl CodeAxis {
    pub fn code_of(self, codes: &CodeTuple) -> u32 {
        match self {
            CodeAxis::ShapeCode => codes.shape,
            CodeAxis::TextureCode => codes.texture,
        }
    }

    pub fn count(self, space: &CodeSpace) -> u32 {
        match self {
            CodeAxis::ShapeCode => space.n_shape,
            CodeAxis::TextureCode => space.n_texture,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodeAxis::ShapeCode => "shape",
            CodeAxis::TextureCode => "texture",
        }
    }
}

impl std::fmt::Display for CodeAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CodeAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shape" => Ok(CodeAxis::ShapeCode),
            "texture" => Ok(CodeAxis::TextureCode),
            other => Err(format!("unknown code axis `{other}` (shape|texture)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub space: SpaceTag,
    pub code_axis: CodeAxis,
    pub metric: DistanceMetric,
    pub n_queries: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// code → (correct, total)
    #[serde(rename = "per_code")]
    pub per_code_accuracy: BTreeMap<u32, (usize, usize)>,
}

impl AccuracyReport {
    /// Assembles a report from per-query outcomes `(code, correct)`.
    pub fn from_outcomes<I>(space: SpaceTag, code_axis: CodeAxis, metric: DistanceMetric, outcomes: I) -> Self
    where
        I: IntoIterator<Item = (u32, bool)>,
    {
        let mut per_code: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        let (mut n_queries, mut n_correct) = (0, 0);
        for (code, correct) in outcomes {
            let slot = per_code.entry(code).or_default();
            slot.1 += 1;
            n_queries += 1;
            if correct {
                slot.0 += 1;
                n_correct += 1;
            }
        }
        let accuracy = if n_queries == 0 { 0.0 } else { n_correct as f64 / n_queries as f64 };
        AccuracyReport { space, code_axis, metric, n_queries, n_correct, accuracy, per_code_accuracy: per_code }
    }

    pub fn code_accuracy(&self, code: u32) -> Option<f64> {
        self.per_code_accuracy.get(&code).map(|&(c, t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// For each entry, is its nearest other entry on the same code?
pub fn leave_one_out_code_accuracy(
    set: &EmbeddingSet,
    manifest: &GalleryManifest,
    code_axis: CodeAxis,
    metric: DistanceMetric,
) -> Result<AccuracyReport, EvalError> {
    let coverage = validate_against_manifest(set, manifest);
    if !coverage.is_complete() {
        return Err(EvalError::IncompleteCoverage(coverage));
    }
    if manifest.len() < 2 {
        return Err(EvalError::SingletonGallery);
    }
    let index = GalleryIndex::new(set, manifest)?;
    let outcome = |row: usize| -> Result<(u32, bool), RetrievalError> {
        let (nearest, _) = index.nearest_excluding(row, metric)?;
        let code = code_axis.code_of(&index.codes(row));
        Ok((code, code == code_axis.code_of(&index.codes(nearest))))
    };

    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        (0..index.len()).into_par_iter().map(outcome).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<_>, _> = (0..index.len()).map(outcome).collect();

    Ok(AccuracyReport::from_outcomes(set.space(), code_axis, metric, outcomes?))
}

/// Nearest-centroid classifier over one code axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub code_axis: CodeAxis,
    pub dim: usize,
    /// code → arithmetic mean of its member vectors
    pub centroids: BTreeMap<u32, Vec<f64>>,
    /// code → number of training vectors
    pub members: BTreeMap<u32, usize>,
    pub trained_on: CodeSpace,
}

pub fn train_centroid_model(
    set: &EmbeddingSet,
    manifest: &GalleryManifest,
    code_axis: CodeAxis,
) -> Result<CentroidModel, EvalError> {
    let dim = set.dim();
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (id, vector) in set.iter() {
        let entry = manifest.get(id).ok_or_else(|| RetrievalError::UnknownEntry(id.to_string()))?;
        let (sum, n) = sums.entry(code_axis.code_of(&entry.codes)).or_insert_with(|| (vec![0.0; dim], 0));
        for (s, &x) in sum.iter_mut().zip(vector) {
            *s += f64::from(x);
        }
        *n += 1;
    }
    for code in 0..code_axis.count(manifest.code_space()) {
        if !sums.contains_key(&code) {
            return Err(EvalError::EmptyClass { axis: code_axis, code });
        }
    }
    let members = sums.iter().map(|(&code, (_, n))| (code, *n)).collect();
    let centroids = sums
        .into_iter()
        .map(|(code, (sum, n))| (code, sum.into_iter().map(|s| s / n as f64).collect()))
        .collect();
    Ok(CentroidModel { code_axis, dim, centroids, members, trained_on: *manifest.code_space() })
}

/// Code of the closest centroid; ties go to the smallest code.
pub fn centroid_predict(model: &CentroidModel, query: &QueryEmbedding, metric: DistanceMetric) -> Result<u32, EvalError> {
    if query.vector.len() != model.dim {
        return Err(EvalError::DimMismatch { query: query.vector.len(), model: model.dim });
    }
    if metric == DistanceMetric::Cosine && !query.is_unit() {
        return Err(RetrievalError::Unnormalized("query").into());
    }
    let q: Vec<f64> = query.vector.iter().map(|&x| f64::from(x)).collect();
    let mut best: Option<(f64, u32)> = None;
    for (&code, centroid) in &model.centroids {
        let d = match metric {
            DistanceMetric::SquaredL2 => q.iter().zip(centroid).map(|(a, b)| (a - b) * (a - b)).sum(),
            DistanceMetric::Cosine => {
                let norm = centroid.iter().map(|c| c * c).sum::<f64>().sqrt();
                let dot: f64 = q.iter().zip(centroid).map(|(a, b)| a * b).sum();
                if norm == 0.0 {
                    1.0
                } else {
                    1.0 - dot / norm
                }
            }
        };
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, code));
        }
    }
    Ok(best.expect("model has at least one centroid").1)
}

/// Difference `a − b` between two reports on the same axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub code_axis: CodeAxis,
    pub accuracy_delta: f64,
    /// code → per-code accuracy difference; codes absent from one side count
    /// as zero accuracy there
    pub per_code: BTreeMap<u32, f64>,
}

pub fn compare_reports(a: &AccuracyReport, b: &AccuracyReport) -> Result<ReportDelta, EvalError> {
    if a.code_axis != b.code_axis {
        return Err(EvalError::MismatchedAxes(a.code_axis, b.code_axis));
    }
    if a.n_queries != b.n_queries {
        return Err(EvalError::MismatchedSize(a.n_queries, b.n_queries));
    }
    let per_code = a
        .per_code_accuracy
        .keys()
        .chain(b.per_code_accuracy.keys())
        .map(|&code| {
            let delta = a.code_accuracy(code).unwrap_or(0.0) - b.code_accuracy(code).unwrap_or(0.0);
            (code, delta)
        })
        .collect();
    Ok(ReportDelta { code_axis: a.code_axis, accuracy_delta: a.accuracy - b.accuracy, per_code })
}
