//! Texture code from I1, shape code from I2, composed generator input.

use std::fs;
use std::path::{Path, PathBuf};

use codelens_core::gallery::parse_background_policy;
use codelens_core::{
    compose_input, ingest_embedding_file, l2_normalize, load_manifest, predict_shape_code, predict_texture_code,
    CodeSelection, ComposedInput, DistanceMetric, EmbeddingSet, GalleryHit, NoiseSource, QueryEmbedding, SpaceTag,
};
use serde::{Deserialize, Serialize};

use crate::adapter;
use crate::error::CliError;

/// Pipeline configuration as read from JSON. Relative paths resolve against
/// the directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub texture_embeddings: Option<PathBuf>,
    pub shape_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub metric: Option<String>,
    /// `tied`, `independent` or `fixed`; overrides the manifest's policy
    #[serde(default)]
    pub background_policy: Option<String>,
    #[serde(default)]
    pub fixed_background: Option<u32>,
    /// `shape_hit`, `texture_hit` or `fixed`
    #[serde(default)]
    pub noise_source: Option<String>,
    #[serde(default)]
    pub fixed_noise: Option<u32>,
    #[serde(default)]
    pub embedder_command_texture: Option<String>,
    #[serde(default)]
    pub embedder_command_shape: Option<String>,
    #[serde(default)]
    pub generator_command: Option<String>,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.manifest, &mut config.texture_embeddings, &mut config.shape_embeddings, &mut config.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Fields set in `other` replace fields in `self`.
    pub fn overlay(self, other: PipelineConfig) -> Self {
        PipelineConfig {
            manifest: other.manifest.or(self.manifest),
            texture_embeddings: other.texture_embeddings.or(self.texture_embeddings),
            shape_embeddings: other.shape_embeddings.or(self.shape_embeddings),
            metric: other.metric.or(self.metric),
            background_policy: other.background_policy.or(self.background_policy),
            fixed_background: other.fixed_background.or(self.fixed_background),
            noise_source: other.noise_source.or(self.noise_source),
            fixed_noise: other.fixed_noise.or(self.fixed_noise),
            embedder_command_texture: other.embedder_command_texture.or(self.embedder_command_texture),
            embedder_command_shape: other.embedder_command_shape.or(self.embedder_command_shape),
            generator_command: other.generator_command.or(self.generator_command),
            output_dir: other.output_dir.or(self.output_dir),
        }
    }

    fn required<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        field.as_deref().ok_or_else(|| CliError::Config(format!("missing required setting `{name}`")))
    }

    pub fn metric(&self) -> Result<DistanceMetric, CliError> {
        self.metric.as_deref().map_or(Ok(DistanceMetric::default()), |m| m.parse().map_err(CliError::Config))
    }

    pub fn noise_source(&self) -> Result<NoiseSource, CliError> {
        match (self.noise_source.as_deref(), self.fixed_noise) {
            (None, _) => Ok(NoiseSource::default()),
            (Some("fixed"), Some(i)) => Ok(NoiseSource::Fixed(i)),
            (Some("fixed"), None) => Err(CliError::Config("noise_source `fixed` needs `fixed_noise`".into())),
            (Some(other), _) => other.parse().map_err(CliError::Config),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub i1: String,
    pub i2: String,
    pub texture_code: u32,
    pub shape_code: u32,
    pub composed: ComposedInput,
    pub texture_hit: GalleryHit,
    pub shape_hit: GalleryHit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_image: Option<PathBuf>,
}

fn ingest(path: &Path, space: SpaceTag) -> Result<EmbeddingSet, CliError> {
    ingest_embedding_file(path, space).map_err(|source| CliError::Embedding { path: path.to_path_buf(), source })
}

fn is_cfge(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("cfge"))
}

fn load_query(
    input: &Path,
    label: &str,
    space: SpaceTag,
    embedder: Option<&str>,
    output_dir: &Path,
) -> Result<QueryEmbedding, CliError> {
    if is_cfge(input) {
        return ingest(input, space)?
            .into_single_query()
            .map_err(|source| CliError::Embedding { path: input.to_path_buf(), source });
    }
    let template = embedder.ok_or_else(|| {
        CliError::Config(format!(
            "{} is not a .cfge file and no {space} embedder command is configured",
            input.display()
        ))
    })?;
    let out = output_dir.join(format!("q_{label}.cfge"));
    adapter::embed_image(template, input, &out, space)
}

pub fn run_pipeline(config: &PipelineConfig, i1: &Path, i2: &Path) -> Result<PipelineResult, CliError> {
    let metric = config.metric()?;
    let noise_source = config.noise_source()?;
    let manifest_path = PipelineConfig::required(&config.manifest, "manifest")?;
    let manifest =
        load_manifest(manifest_path).map_err(|source| CliError::Gallery { path: manifest_path.to_path_buf(), source })?;
    let mut space = *manifest.code_space();
    if let Some(name) = config.background_policy.as_deref() {
        space.background_policy = parse_background_policy(name, config.fixed_background)?;
        space.validate()?;
    }

    let mut texture_set = ingest(PipelineConfig::required(&config.texture_embeddings, "texture_embeddings")?, SpaceTag::Texture)?;
    let mut shape_set = ingest(PipelineConfig::required(&config.shape_embeddings, "shape_embeddings")?, SpaceTag::Shape)?;

    let output_dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&output_dir).map_err(|e| CliError::io(&output_dir, e))?;

    // adapters run sequentially: texture, shape, then generator
    let mut q1 = load_query(i1, "I1", SpaceTag::Texture, config.embedder_command_texture.as_deref(), &output_dir)?;
    let mut q2 = load_query(i2, "I2", SpaceTag::Shape, config.embedder_command_shape.as_deref(), &output_dir)?;

    if metric == DistanceMetric::Cosine {
        let normalize = |set: &EmbeddingSet, path: &Option<PathBuf>| {
            l2_normalize(set).map_err(|source| CliError::Embedding { path: path.clone().unwrap_or_default(), source })
        };
        if !texture_set.is_normalized() {
            texture_set = normalize(&texture_set, &config.texture_embeddings)?;
        }
        if !shape_set.is_normalized() {
            shape_set = normalize(&shape_set, &config.shape_embeddings)?;
        }
        let normalize_query = |q: &QueryEmbedding, path: &Path| {
            q.normalized().map_err(|source| CliError::Embedding { path: path.to_path_buf(), source })
        };
        q1 = normalize_query(&q1, i1)?;
        q2 = normalize_query(&q2, i2)?;
    }

    let texture = predict_texture_code(&q1, &texture_set, &manifest, metric)?;
    let shape = predict_shape_code(&q2, &shape_set, &manifest, metric)?;
    log::info!("texture code {} via {}, shape code {} via {}", texture.code, texture.hit.image_id, shape.code, shape.hit.image_id);
    let selection = CodeSelection::new(texture, shape);
    let composed = compose_input(&selection, &space, noise_source)?;

    let generated_image = match config.generator_command.as_deref() {
        Some(template) => {
            let c = composed.codes;
            let out = output_dir.join(format!("generated_b{}_s{}_t{}_z{}.png", c.background, c.shape, c.texture, c.noise));
            adapter::run_shell(&adapter::generator_command(template, &composed, &out))?;
            Some(out)
        }
        None => None,
    };

    Ok(PipelineResult {
        i1: q1.source_label,
        i2: q2.source_label,
        texture_code: selection.texture_code,
        shape_code: selection.shape_code,
        composed,
        texture_hit: selection.texture_hit,
        shape_hit: selection.shape_hit,
        generated_image,
    })
}
