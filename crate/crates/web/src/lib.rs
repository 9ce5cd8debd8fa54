//! Browser demo over a synthetic gallery: the bias experiment, a 2-D view of
//! either embedding space, and code inference from two planted queries.
//!
//! Everything is plain Rust returning serializable structs; the
//! `#[wasm_bindgen]` wrappers at the bottom hand JSON strings to the page.

use codelens_core::{
    compose_input, generate_synth_gallery, l2_normalize, predict_shape_code, predict_texture_code, run_bias_experiment,
    synth_embed, CodeSelection, CodeSpace, CodeTuple, DistanceMetric, EmbeddingSet, GalleryEntry, NoiseSource,
    QueryEmbedding, SpaceTag, SynthGallery, SynthParams,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const METRIC: DistanceMetric = DistanceMetric::Cosine;
const POWER_ITERATIONS: usize = 300;

/// Settings shared by all demo operations. The shape-space embedder uses
/// `w_shape`; the texture-space embedder always uses a shape weight of 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoConfig {
    pub n_shape: u32,
    pub n_texture: u32,
    pub n_noise: u32,
    pub dim: usize,
    pub w_shape: f64,
    pub w_texture: f64,
    pub w_noise: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig { n_shape: 8, n_texture: 10, n_noise: 10, dim: 32, w_shape: 4.0, w_texture: 1.0, w_noise: 0.5, sigma: 0.5, seed: 1 }
    }
}

impl DemoConfig {
    fn space(&self) -> CodeSpace {
        CodeSpace::tied(self.n_shape, self.n_texture).with_noise(self.n_noise)
    }

    fn params(&self, w_shape: f64) -> SynthParams {
        SynthParams { dim: self.dim, w_shape, w_texture: self.w_texture, w_noise: self.w_noise, sigma: self.sigma, seed: self.seed }
    }

    fn shape_params(&self) -> SynthParams {
        self.params(self.w_shape)
    }

    fn texture_params(&self) -> SynthParams {
        self.params(1.0)
    }

    fn gallery(&self) -> Result<SynthGallery, String> {
        self.space().validate().map_err(|e| e.to_string())?;
        generate_synth_gallery(self.space(), &self.shape_params(), &self.texture_params()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub biased: f64,
    pub unbiased: f64,
    pub delta: f64,
    /// (shape code, biased accuracy, unbiased accuracy)
    pub per_code: Vec<(u32, f64, f64)>,
}

/// Leave-one-out shape-code accuracy in both spaces.
pub fn bias_experiment(cfg: &DemoConfig) -> Result<ExperimentSummary, String> {
    cfg.space().validate().map_err(|e| e.to_string())?;
    let e = run_bias_experiment(cfg.space(), &cfg.shape_params(), &cfg.texture_params(), METRIC)
        .map_err(|e| e.to_string())?;
    let per_code = e
        .biased
        .per_code_accuracy
        .iter()
        .map(|(&code, &(hit, n))| {
            let (uh, un) = e.unbiased.per_code_accuracy.get(&code).copied().unwrap_or((0, 0));
            let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
            (code, frac(hit, n), frac(uh, un))
        })
        .collect();
    Ok(ExperimentSummary { biased: e.biased.accuracy, unbiased: e.unbiased.accuracy, delta: e.delta, per_code })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub shape: u32,
    pub texture: u32,
}

/// Gallery embeddings of one space projected on their top two principal axes.
pub fn projection(cfg: &DemoConfig, space: SpaceTag) -> Result<Vec<Point>, String> {
    let g = cfg.gallery()?;
    let set = l2_normalize(if space == SpaceTag::Shape { &g.shape } else { &g.texture }).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = set.iter().map(|(_, v)| v.iter().map(|&x| f64::from(x)).collect()).collect();
    let axes = principal_axes(&rows, 2);
    let mean = column_mean(&rows);
    Ok(set
        .ids()
        .zip(&rows)
        .map(|(id, row)| {
            let codes = g.manifest.lookup(id).expect("gallery id").codes;
            let proj = |axis: &[f64]| row.iter().zip(&mean).zip(axis).map(|((x, m), a)| (x - m) * a).sum();
            Point { x: proj(&axes[0]), y: proj(&axes[1]), shape: codes.shape, texture: codes.texture }
        })
        .collect())
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len().max(1) as f64);
    mean
}

/// Top `n` eigenvectors of the sample covariance by power iteration with
/// deflation. Signs are fixed so the largest component is positive.
fn principal_axes(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let dim = rows.first().map_or(0, Vec::len);
    let mean = column_mean(rows);
    let mut cov = vec![vec![0.0; dim]; dim];
    for row in rows {
        let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + ((i + k) % 7) as f64 * 0.1).collect();
        for _ in 0..POWER_ITERATIONS {
            for a in &axes {
                let d: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(a).for_each(|(x, y)| *x -= d * y);
            }
            let w: Vec<f64> = cov.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    axes
}

#[derive(Debug, Clone, Serialize)]
pub struct Inference {
    pub texture_code: u32,
    pub shape_code: u32,
    pub texture_hit: String,
    pub shape_hit: String,
    pub composed: CodeTuple,
    pub texture_correct: bool,
    pub shape_correct: bool,
}

/// Plants I1 with texture `t1` and I2 with shape `s2` as fresh observations
/// (new noise draws), then infers T from I1 and S from I2 and composes them.
pub fn infer(cfg: &DemoConfig, i1: (u32, u32), i2: (u32, u32), noise: u32) -> Result<Inference, String> {
    let space = cfg.space();
    let g = cfg.gallery()?;
    let tuple = |(s, t): (u32, u32)| CodeTuple::new(space.resolve_background(t).unwrap_or(0), s, t, noise);
    for pair in [i1, i2] {
        space.check_tuple(&tuple(pair))?;
    }
    let observe = |label: &str, pair: (u32, u32), params: &SynthParams, tag: SpaceTag| {
        let entry = GalleryEntry { image_id: label.into(), codes: tuple(pair), image_path: None };
        QueryEmbedding::new(label, tag, synth_embed(&entry, params)).normalized()
    };
    let q1 = observe("q_I1", i1, &cfg.texture_params(), SpaceTag::Texture).map_err(|e| e.to_string())?;
    let q2 = observe("q_I2", i2, &cfg.shape_params(), SpaceTag::Shape).map_err(|e| e.to_string())?;
    let unit = |set: &EmbeddingSet| l2_normalize(set).map_err(|e| e.to_string());
    let texture = predict_texture_code(&q1, &unit(&g.texture)?, &g.manifest, METRIC).map_err(|e| e.to_string())?;
    let shape = predict_shape_code(&q2, &unit(&g.shape)?, &g.manifest, METRIC).map_err(|e| e.to_string())?;
    let selection = CodeSelection::new(texture, shape);
    let composed = compose_input(&selection, &space, NoiseSource::FromShapeHit).map_err(|e| e.to_string())?;
    Ok(Inference {
        texture_code: selection.texture_code,
        shape_code: selection.shape_code,
        texture_correct: selection.texture_code == i1.1,
        shape_correct: selection.shape_code == i2.0,
        texture_hit: selection.texture_hit.image_id,
        shape_hit: selection.shape_hit.image_id,
        composed: composed.codes,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("serializable")).map_err(|e| JsValue::from_str(&e))
}

fn config(dim: u32, w_shape: f64, w_texture: f64, w_noise: f64, sigma: f64, seed: u32) -> DemoConfig {
    DemoConfig { dim: dim as usize, w_shape, w_texture, w_noise, sigma, seed: u64::from(seed), ..DemoConfig::default() }
}

#[wasm_bindgen(js_name = biasExperiment)]
pub fn bias_experiment_js(dim: u32, w_shape: f64, w_texture: f64, w_noise: f64, sigma: f64, seed: u32) -> Result<String, JsValue> {
    to_js(bias_experiment(&config(dim, w_shape, w_texture, w_noise, sigma, seed)))
}

/// `space` is `"shape"` or `"texture"`.
#[wasm_bindgen(js_name = projection)]
pub fn projection_js(
    space: &str,
    dim: u32,
    w_shape: f64,
    w_texture: f64,
    w_noise: f64,
    sigma: f64,
    seed: u32,
) -> Result<String, JsValue> {
    let tag = space.parse::<SpaceTag>().map_err(|e| JsValue::from_str(&e.to_string()))?;
    to_js(projection(&config(dim, w_shape, w_texture, w_noise, sigma, seed), tag))
}

#[wasm_bindgen(js_name = inferCodes)]
#[allow(clippy::too_many_arguments)]
pub fn infer_js(
    i1_shape: u32,
    i1_texture: u32,
    i2_shape: u32,
    i2_texture: u32,
    noise: u32,
    w_shape: f64,
    w_noise: f64,
    sigma: f64,
    seed: u32,
) -> Result<String, JsValue> {
    let cfg = config(32, w_shape, 1.0, w_noise, sigma, seed);
    to_js(infer(&cfg, (i1_shape, i1_texture), (i2_shape, i2_texture), noise))
}
