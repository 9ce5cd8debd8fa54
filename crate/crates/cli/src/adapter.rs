//! External embedder and generator commands.
//!
//! A command is a shell template. `{input}` and `{output}` are replaced by
//! single-quoted paths and the result runs under `sh -c`. Generator commands
//! additionally receive `--background B --shape S --texture T --noise Z --out PATH`.

use std::path::Path;
use std::process::Command;

use codelens_core::{ingest_embedding_file, ComposedInput, QueryEmbedding, SpaceTag};

use crate::error::CliError;

pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

pub fn render_template(template: &str, input: Option<&Path>, output: &Path) -> String {
    let mut rendered = template.replace("{output}", &shell_quote(&output.to_string_lossy()));
    if let Some(input) = input {
        rendered = rendered.replace("{input}", &shell_quote(&input.to_string_lossy()));
    }
    rendered
}

pub fn run_shell(command: &str) -> Result<(), CliError> {
    log::info!("running adapter: {command}");
    let out = Command::new("sh")
        .arg("-c")
        .arg(command)
        .output()
        .map_err(|e| CliError::Adapter { command: command.to_string(), status: e.to_string(), stderr: String::new() })?;
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    if !stderr.trim().is_empty() {
        log::debug!("adapter stderr: {}", stderr.trim());
    }
    if out.status.success() {
        Ok(())
    } else {
        Err(CliError::Adapter { command: command.to_string(), status: out.status.to_string(), stderr })
    }
}

/// Embeds one image with `template` and reads back the single query record.
pub fn embed_image(template: &str, image: &Path, output: &Path, space: SpaceTag) -> Result<QueryEmbedding, CliError> {
    let command = render_template(template, Some(image), output);
    run_shell(&command)?;
    let adapter_err = |source| CliError::AdapterOutput { command: command.clone(), path: output.to_path_buf(), source };
    ingest_embedding_file(output, space).map_err(adapter_err)?.into_single_query().map_err(adapter_err)
}

/// Command line that renders `composed` into `output`.
pub fn generator_command(template: &str, composed: &ComposedInput, output: &Path) -> String {
    let c = composed.codes;
    format!(
        "{} --background {} --shape {} --texture {} --noise {} --out {}",
        render_template(template, None, output),
        c.background,
        c.shape,
        c.texture,
        c.noise,
        shell_quote(&output.to_string_lossy())
    )
}
