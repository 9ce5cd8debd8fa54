use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use codelens_core::gallery::{parse_background_policy, DEFAULT_NOISE_COUNT};
use codelens_core::synthlab::experiment_on;
use codelens_core::{
    compare_reports, enumerate_gallery, generate_synth_gallery, ingest_embedding_file, l2_normalize,
    leave_one_out_code_accuracy, load_manifest, save_manifest, synth_embed, validate_against_manifest,
    write_embedding_file, AccuracyReport, CodeAxis, CodeSpace, CodeTuple, DistanceMetric, EmbeddingSet,
    GalleryEntry, GalleryManifest, ReportDelta, SpaceTag, SynthParams,
};
use serde::Serialize;

use crate::error::CliError;
use crate::pipeline::{run_pipeline, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "codelens", version, about = "Infer generator shape and texture codes by embedding retrieval")]
pub struct Cli {
    /// Print only the result JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gallery manifests
    #[command(subcommand)]
    Gallery(GalleryCommand),
    /// Embedding file checks
    #[command(subcommand)]
    Embeddings(EmbeddingsCommand),
    /// Texture code from I1, shape code from I2, composed generator input
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Retrieval accuracy reports
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Synthetic gallery with shape-biased and standard embeddings
    Synth(SynthArgs),
    /// Synthetic query embedding for given codes
    SynthQuery(SynthQueryArgs),
}

#[derive(Debug, Subcommand)]
pub enum GalleryCommand {
    /// Write the manifest of every code combination
    Enumerate(EnumerateArgs),
    /// Print one manifest entry
    Lookup {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        id: String,
    },
}

#[derive(Debug, Args)]
pub struct SpaceArgs {
    #[arg(long = "shapes")]
    pub n_shape: u32,
    #[arg(long = "textures")]
    pub n_texture: u32,
    #[arg(long = "noise", default_value_t = DEFAULT_NOISE_COUNT)]
    pub n_noise: u32,
    /// Defaults to the number of texture codes
    #[arg(long = "backgrounds")]
    pub n_background: Option<u32>,
    /// tied | independent | fixed
    #[arg(long, default_value = "tied")]
    pub background_policy: String,
    #[arg(long)]
    pub fixed_background: Option<u32>,
}

impl SpaceArgs {
    pub fn code_space(&self) -> Result<CodeSpace, CliError> {
        let space = CodeSpace {
            n_background: self.n_background.unwrap_or(self.n_texture),
            n_shape: self.n_shape,
            n_texture: self.n_texture,
            n_noise: self.n_noise,
            background_policy: parse_background_policy(&self.background_policy, self.fixed_background)?,
        };
        space.validate()?;
        Ok(space)
    }
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Image path per entry, `{id}` replaced by the image id
    #[arg(long)]
    pub path_template: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EmbeddingsCommand {
    /// Compare an embedding file's ids with a manifest
    Check {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value = "shape")]
        space: SpaceTag,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    Run(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Pipeline config JSON; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub texture_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub shape_embeddings: Option<PathBuf>,
    /// cosine | squared_l2
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub background_policy: Option<String>,
    #[arg(long)]
    pub fixed_background: Option<u32>,
    /// shape_hit | texture_hit | fixed
    #[arg(long)]
    pub noise_source: Option<String>,
    #[arg(long)]
    pub fixed_noise: Option<u32>,
    /// Texture embedder template with {input} and {output}
    #[arg(long)]
    pub embedder_texture: Option<String>,
    /// Shape embedder template with {input} and {output}
    #[arg(long)]
    pub embedder_shape: Option<String>,
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Texture source image, or a one-record texture CFGE file
    #[arg(long)]
    pub i1: PathBuf,
    /// Shape source image, or a one-record shape CFGE file
    #[arg(long)]
    pub i2: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Leave-one-out nearest-neighbor code accuracy
    Accuracy(AccuracyArgs),
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value = "shape")]
    pub space: SpaceTag,
    #[arg(long, default_value = "shape")]
    pub axis: CodeAxis,
    #[arg(long, default_value = "cosine")]
    pub metric: DistanceMetric,
    /// Second embedding file to compare against
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value = "texture")]
    pub compare_space: SpaceTag,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long = "shapes", default_value_t = 8)]
    pub n_shape: u32,
    #[arg(long = "textures", default_value_t = 10)]
    pub n_texture: u32,
    #[arg(long = "noise", default_value_t = DEFAULT_NOISE_COUNT)]
    pub n_noise: u32,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub biased_w_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    pub biased_w_texture: f64,
    #[arg(long, default_value_t = 1.0)]
    pub unbiased_w_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    pub unbiased_w_texture: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value = "cosine")]
    pub metric: DistanceMetric,
    /// Also run the biased-vs-unbiased accuracy experiment
    #[arg(long)]
    pub experiment: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl SynthArgs {
    fn params(&self) -> (SynthParams, SynthParams) {
        let base = SynthParams {
            dim: self.dim,
            w_shape: self.biased_w_shape,
            w_texture: self.biased_w_texture,
            w_noise: self.w_noise,
            sigma: self.sigma,
            seed: self.seed,
        };
        (base, SynthParams { w_shape: self.unbiased_w_shape, w_texture: self.unbiased_w_texture, ..base })
    }
}

#[derive(Debug, Args)]
pub struct SynthQueryArgs {
    #[arg(long)]
    pub shape: u32,
    #[arg(long)]
    pub texture: u32,
    #[arg(long, default_value_t = 0)]
    pub noise: u32,
    #[arg(long, default_value_t = 0)]
    pub background: u32,
    /// Record id; seeds the observation noise
    #[arg(long, default_value = "q_I1")]
    pub label: String,
    /// texture uses the unbiased weights, shape the biased ones
    #[arg(long)]
    pub space: SpaceTag,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub w_shape: Option<f64>,
    #[arg(long)]
    pub w_texture: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub w_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// What a command prints: JSON for `--json`, text otherwise.
pub struct Output {
    pub json: String,
    pub human: String,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn load(path: &Path) -> Result<GalleryManifest, CliError> {
    load_manifest(path).map_err(|source| CliError::Gallery { path: path.to_path_buf(), source })
}

fn ingest(path: &Path, space: SpaceTag) -> Result<EmbeddingSet, CliError> {
    ingest_embedding_file(path, space).map_err(|source| CliError::Embedding { path: path.to_path_buf(), source })
}

fn write_set(set: &EmbeddingSet, path: &Path) -> Result<(), CliError> {
    write_embedding_file(set, path).map_err(|source| CliError::Embedding { path: path.to_path_buf(), source })
}

pub fn run(cli: Cli) -> Result<Output, CliError> {
    match cli.command {
        Command::Gallery(GalleryCommand::Enumerate(args)) => cmd_gallery_enumerate(&args),
        Command::Gallery(GalleryCommand::Lookup { manifest, id }) => {
            let manifest = load(&manifest)?;
            let entry = manifest.lookup(&id)?;
            let c = entry.codes;
            let json = serde_json::json!({
                "id": entry.image_id,
                "background": c.background,
                "shape": c.shape,
                "texture": c.texture,
                "noise": c.noise,
                "path": entry.image_path,
            });
            Ok(Output { json: to_json(&json), human: format!("{} background={} shape={} texture={} noise={}", entry.image_id, c.background, c.shape, c.texture, c.noise) })
        }
        Command::Embeddings(EmbeddingsCommand::Check { manifest, file, space }) => {
            let manifest = load(&manifest)?;
            let set = ingest(&file, space)?;
            let report = validate_against_manifest(&set, &manifest);
            let human = format!("{} vectors, {} missing, {} extra", set.len(), report.missing.len(), report.extra.len());
            if report.is_complete() {
                Ok(Output { json: to_json(&report), human })
            } else {
                Err(CliError::Config(format!("{}: {human}", file.display())))
            }
        }
        Command::Pipeline(PipelineCommand::Run(args)) => cmd_pipeline_run(args),
        Command::Eval(EvalCommand::Accuracy(args)) => cmd_eval_accuracy(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::SynthQuery(args) => cmd_synth_query(&args),
    }
}

pub fn cmd_gallery_enumerate(args: &EnumerateArgs) -> Result<Output, CliError> {
    let mut manifest = enumerate_gallery(args.space.code_space()?)?;
    if let Some(template) = &args.path_template {
        manifest = manifest.with_image_paths(|e| Some(template.replace("{id}", &e.image_id)));
    }
    save_manifest(&manifest, &args.out).map_err(|source| CliError::Gallery { path: args.out.clone(), source })?;
    let summary = serde_json::json!({ "manifest": args.out, "entries": manifest.len() });
    Ok(Output { json: to_json(&summary), human: format!("wrote {} entries to {}", manifest.len(), args.out.display()) })
}

pub fn cmd_pipeline_run(args: PipelineArgs) -> Result<Output, CliError> {
    let base = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let flags = PipelineConfig {
        manifest: args.manifest,
        texture_embeddings: args.texture_embeddings,
        shape_embeddings: args.shape_embeddings,
        metric: args.metric,
        background_policy: args.background_policy,
        fixed_background: args.fixed_background,
        noise_source: args.noise_source,
        fixed_noise: args.fixed_noise,
        embedder_command_texture: args.embedder_texture,
        embedder_command_shape: args.embedder_shape,
        generator_command: args.generator,
        output_dir: args.out_dir,
    };
    let config = base.overlay(flags);
    let result = run_pipeline(&config, &args.i1, &args.i2)?;
    let json = to_json(&result);
    let out_dir = config.output_dir.unwrap_or_else(|| PathBuf::from("."));
    write_file(&out_dir.join("result.json"), &format!("{json}\n"))?;
    let c = result.composed.codes;
    let mut human = format!(
        "texture code {} (from {}), shape code {} (from {})\ncomposed input: background {} shape {} texture {} noise {}",
        result.texture_code, result.texture_hit.image_id, result.shape_code, result.shape_hit.image_id,
        c.background, c.shape, c.texture, c.noise
    );
    if let Some(img) = &result.generated_image {
        human.push_str(&format!("\ngenerated {}", img.display()));
    }
    Ok(Output { json, human })
}

#[derive(Serialize)]
struct ComparedReports<'a> {
    primary: &'a AccuracyReport,
    compare: &'a AccuracyReport,
    delta: f64,
    per_code_delta: &'a ReportDelta,
}

fn accuracy_report(
    manifest: &GalleryManifest,
    path: &Path,
    space: SpaceTag,
    axis: CodeAxis,
    metric: DistanceMetric,
) -> Result<AccuracyReport, CliError> {
    let mut set = ingest(path, space)?;
    let coverage = validate_against_manifest(&set, manifest);
    if !coverage.is_complete() {
        return Err(CliError::Config(format!(
            "{} does not cover the manifest: {} missing, {} extra",
            path.display(),
            coverage.missing.len(),
            coverage.extra.len()
        )));
    }
    if metric == DistanceMetric::Cosine && !set.is_normalized() {
        set = l2_normalize(&set).map_err(|source| CliError::Embedding { path: path.to_path_buf(), source })?;
    }
    Ok(leave_one_out_code_accuracy(&set, manifest, axis, metric)?)
}

fn describe(r: &AccuracyReport) -> String {
    format!("{} space, {} code: {}/{} correct ({:.2}%)", r.space, r.code_axis, r.n_correct, r.n_queries, 100.0 * r.accuracy)
}

pub fn cmd_eval_accuracy(args: &AccuracyArgs) -> Result<Output, CliError> {
    let manifest = load(&args.manifest)?;
    let primary = accuracy_report(&manifest, &args.embeddings, args.space, args.axis, args.metric)?;
    let (json, human) = match &args.compare {
        None => (primary.to_json(), describe(&primary)),
        Some(other) => {
            let compare = accuracy_report(&manifest, other, args.compare_space, args.axis, args.metric)?;
            let delta = compare_reports(&primary, &compare)?;
            let paired = ComparedReports { primary: &primary, compare: &compare, delta: delta.accuracy_delta, per_code_delta: &delta };
            let human = format!("{}\n{}\ndelta {:+.4}", describe(&primary), describe(&compare), delta.accuracy_delta);
            (serde_json::to_string(&paired).expect("serializable"), human)
        }
    };
    if let Some(out) = &args.out {
        write_file(out, &format!("{json}\n"))?;
    }
    Ok(Output { json, human })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Output, CliError> {
    let space = CodeSpace::tied(args.n_shape, args.n_texture).with_noise(args.n_noise);
    space.validate()?;
    let (biased, unbiased) = args.params();
    let gallery = generate_synth_gallery(space, &biased, &unbiased)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let manifest_path = args.out_dir.join("manifest.json");
    save_manifest(&gallery.manifest, &manifest_path).map_err(|source| CliError::Gallery { path: manifest_path.clone(), source })?;
    let shape_path = args.out_dir.join("shape.cfge");
    let texture_path = args.out_dir.join("texture.cfge");
    write_set(&gallery.shape, &shape_path)?;
    write_set(&gallery.texture, &texture_path)?;

    let mut summary = serde_json::json!({
        "manifest": manifest_path,
        "shape_embeddings": shape_path,
        "texture_embeddings": texture_path,
        "entries": gallery.manifest.len(),
    });
    let mut human = format!("wrote {} entries to {}", gallery.manifest.len(), args.out_dir.display());
    if args.experiment {
        let experiment = experiment_on(&gallery, args.metric)?;
        let path = args.out_dir.join("experiment.json");
        write_file(&path, &format!("{}\n", experiment.to_json()))?;
        summary["experiment"] = serde_json::to_value(&experiment).expect("serializable");
        human.push_str(&format!(
            "\nshape accuracy: biased {:.4}, unbiased {:.4}, delta {:+.4}",
            experiment.biased.accuracy, experiment.unbiased.accuracy, experiment.delta
        ));
    }
    Ok(Output { json: to_json(&summary), human })
}

pub fn cmd_synth_query(args: &SynthQueryArgs) -> Result<Output, CliError> {
    let (default_shape, default_texture) = match args.space {
        SpaceTag::Shape => (4.0, 1.0),
        SpaceTag::Texture => (1.0, 1.0),
    };
    let params = SynthParams {
        dim: args.dim,
        w_shape: args.w_shape.unwrap_or(default_shape),
        w_texture: args.w_texture.unwrap_or(default_texture),
        w_noise: args.w_noise,
        sigma: args.sigma,
        seed: args.seed,
    };
    params.validate()?;
    let entry = GalleryEntry {
        image_id: args.label.clone(),
        codes: CodeTuple::new(args.background, args.shape, args.texture, args.noise),
        image_path: None,
    };
    let set = EmbeddingSet::from_records(args.space, args.dim, [(args.label.clone(), synth_embed(&entry, &params))])
        .map_err(|source| CliError::Embedding { path: args.out.clone(), source })?;
    write_set(&set, &args.out)?;
    let summary = serde_json::json!({ "query": args.label, "space": args.space, "out": args.out });
    Ok(Output { json: to_json(&summary), human: format!("wrote {} query {} to {}", args.space, args.label, args.out.display()) })
}
