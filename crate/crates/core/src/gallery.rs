//! Gallery enumeration: every code combination the generator can render,
//! with a stable image id per combination.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Manifest format version written by this crate.
pub const MANIFEST_VERSION: u16 = 1;

/// Default number of noise vectors per (shape, texture) pair.
pub const DEFAULT_NOISE_COUNT: u32 = 10;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("invalid code space: {field} {reason}")]
    InvalidSpace { field: &'static str, reason: String },
    #[error("no gallery entry with id `{0}`")]
    NotFound(String),
    #[error("malformed manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported manifest version {0} (expected {MANIFEST_VERSION})")]
    UnsupportedVersion(u64),
    #[error("duplicate image id `{0}` in manifest")]
    DuplicateId(String),
    #[error("manifest invariant violated: {0}")]
    InvariantViolation(String),
    #[error("manifest has {found} entries but its code space yields {expected}")]
    CardinalityMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the background code is chosen for a (shape, texture, noise) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[derive(Default)]
pub enum BackgroundPolicy {
    /// background = texture mod n_background
    #[default]
    TiedToTexture,
    /// every background index is enumerated
    Independent,
    Fixed(u32),
}


impl BackgroundPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            BackgroundPolicy::TiedToTexture => "tied",
            BackgroundPolicy::Independent => "independent",
            BackgroundPolicy::Fixed(_) => "fixed",
        }
    }
}

/// The axes of the generator's code space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodeSpace {
    pub n_background: u32,
    pub n_shape: u32,
    pub n_texture: u32,
    pub n_noise: u32,
    pub background_policy: BackgroundPolicy,
}

impl CodeSpace {
    /// A tied-background space with one background per texture code and the
    /// default number of noise vectors.
    pub fn tied(n_shape: u32, n_texture: u32) -> Self {
        CodeSpace {
            n_background: n_texture,
            n_shape,
            n_texture,
            n_noise: DEFAULT_NOISE_COUNT,
            background_policy: BackgroundPolicy::TiedToTexture,
        }
    }

    pub fn with_noise(mut self, n_noise: u32) -> Self {
        self.n_noise = n_noise;
        self
    }

    pub fn validate(&self) -> Result<(), GalleryError> {
        let counts = [
            ("n_background", self.n_background),
            ("n_shape", self.n_shape),
            ("n_texture", self.n_texture),
            ("n_noise", self.n_noise),
        ];
        for (field, count) in counts {
            if count == 0 {
                return Err(GalleryError::InvalidSpace {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if let BackgroundPolicy::Fixed(i) = self.background_policy {
            if i >= self.n_background {
                return Err(GalleryError::InvalidSpace {
                    field: "fixed_background",
                    reason: format!("{i} is out of range for n_background = {}", self.n_background),
                });
            }
        }
        Ok(())
    }

    /// Number of gallery entries this space enumerates.
    pub fn cardinality(&self) -> usize {
        let base = self.n_shape as usize * self.n_texture as usize * self.n_noise as usize;
        match self.background_policy {
            BackgroundPolicy::Independent => base * self.n_background as usize,
            _ => base,
        }
    }

    /// Background code a (texture) pair resolves to, or `None` when the
    /// policy leaves it free.
    pub fn resolve_background(&self, texture: u32) -> Option<u32> {
        match self.background_policy {
            BackgroundPolicy::TiedToTexture => Some(texture % self.n_background),
            BackgroundPolicy::Fixed(i) => Some(i),
            BackgroundPolicy::Independent => None,
        }
    }

    /// Checks a tuple against the index bounds and the background policy.
    pub fn check_tuple(&self, codes: &CodeTuple) -> Result<(), String> {
        let bounds = [
            ("background", codes.background, self.n_background),
            ("shape", codes.shape, self.n_shape),
            ("texture", codes.texture, self.n_texture),
            ("noise", codes.noise, self.n_noise),
        ];
        for (axis, value, bound) in bounds {
            if value >= bound {
                return Err(format!("{axis} code {value} out of range (< {bound})"));
            }
        }
        match self.resolve_background(codes.texture) {
            Some(b) if b != codes.background => Err(format!(
                "background {} disagrees with {} policy (expected {b})",
                codes.background,
                self.background_policy.name()
            )),
            _ => Ok(()),
        }
    }
}

/// One point of the generator's code space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodeTuple {
    pub background: u32,
    pub shape: u32,
    pub texture: u32,
    pub noise: u32,
}

impl CodeTuple {
    pub fn new(background: u32, shape: u32, texture: u32, noise: u32) -> Self {
        CodeTuple { background, shape, texture, noise }
    }

    /// Canonical image id, `g_b{b}_s{s}_t{t}_z{z}`.
    pub fn image_id(&self) -> String {
        self.to_string()
    }

    /// Manifest ordering key: (shape, texture, noise, background).
    pub fn sort_key(&self) -> (u32, u32, u32, u32) {
        (self.shape, self.texture, self.noise, self.background)
    }
}

impl fmt::Display for CodeTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g_b{}_s{}_t{}_z{}", self.background, self.shape, self.texture, self.noise)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GalleryEntry {
    pub image_id: String,
    pub codes: CodeTuple,
    pub image_path: Option<String>,
}

impl GalleryEntry {
    pub fn new(codes: CodeTuple) -> Self {
        GalleryEntry { image_id: codes.image_id(), codes, image_path: None }
    }
}

/// The enumerated gallery. Immutable once built; lookups go through an id
/// index built at construction.
#[derive(Debug, Clone)]
pub struct GalleryManifest {
    version: u16,
    code_space: CodeSpace,
    entries: Vec<GalleryEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for GalleryManifest {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.code_space == other.code_space
            && self.entries == other.entries
    }
}

impl Eq for GalleryManifest {}

/// Enumerates every code combination of `space` in manifest order.
pub fn enumerate_gallery(space: CodeSpace) -> Result<GalleryManifest, GalleryError> {
    space.validate()?;
    let mut entries = Vec::with_capacity(space.cardinality());
    for shape in 0..space.n_shape {
        for texture in 0..space.n_texture {
            for noise in 0..space.n_noise {
                match space.resolve_background(texture) {
                    Some(background) => {
                        entries.push(GalleryEntry::new(CodeTuple::new(background, shape, texture, noise)))
                    }
                    None => {
                        for background in 0..space.n_background {
                            entries.push(GalleryEntry::new(CodeTuple::new(
                                background, shape, texture, noise,
                            )));
                        }
                    }
                }
            }
        }
    }
    GalleryManifest::from_parts(MANIFEST_VERSION, space, entries)
}

impl GalleryManifest {
    /// Builds a manifest from raw parts, checking every invariant.
    pub fn from_parts(
        version: u16,
        code_space: CodeSpace,
        entries: Vec<GalleryEntry>,
    ) -> Result<Self, GalleryError> {
        if version != MANIFEST_VERSION {
            return Err(GalleryError::UnsupportedVersion(version.into()));
        }
        code_space.validate()?;

        let mut index = HashMap::with_capacity(entries.len());
        for (pos, entry) in entries.iter().enumerate() {
            if index.insert(entry.image_id.clone(), pos).is_some() {
                return Err(GalleryError::DuplicateId(entry.image_id.clone()));
            }
        }
        let expected = code_space.cardinality();
        if entries.len() != expected {
            return Err(GalleryError::CardinalityMismatch { expected, found: entries.len() });
        }
        for entry in &entries {
            code_space
                .check_tuple(&entry.codes)
                .map_err(|reason| GalleryError::InvariantViolation(format!("{}: {reason}", entry.image_id)))?;
            if entry.image_id != entry.codes.image_id() {
                return Err(GalleryError::InvariantViolation(format!(
                    "id `{}` does not match its codes (expected `{}`)",
                    entry.image_id,
                    entry.codes.image_id()
                )));
            }
        }
        for pair in entries.windows(2) {
            if pair[0].codes.sort_key() >= pair[1].codes.sort_key() {
                return Err(GalleryError::InvariantViolation(format!(
                    "entries out of order at `{}`",
                    pair[1].image_id
                )));
            }
        }

        Ok(GalleryManifest { version, code_space, entries, index })
    }

    pub fn version(&self) -> u16 {
        self.version
    }

    pub fn code_space(&self) -> &CodeSpace {
        &self.code_space
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, image_id: &str) -> Result<&GalleryEntry, GalleryError> {
        self.get(image_id).ok_or_else(|| GalleryError::NotFound(image_id.to_string()))
    }

    pub fn get(&self, image_id: &str) -> Option<&GalleryEntry> {
        self.index.get(image_id).map(|&pos| &self.entries[pos])
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    /// Attaches a relative image path to each entry.
    pub fn with_image_paths<F>(mut self, mut path_for: F) -> Self
    where
        F: FnMut(&GalleryEntry) -> Option<String>,
    {
        for entry in &mut self.entries {
            entry.image_path = path_for(entry);
        }
        self
    }

    pub fn to_json(&self) -> Result<String, GalleryError> {
        let mut s = serde_json::to_string_pretty(&ManifestWire::from(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, GalleryError> {
        let wire: ManifestWire = serde_json::from_str(text)?;
        wire.into_manifest()
    }
}

pub fn lookup<'m>(manifest: &'m GalleryManifest, image_id: &str) -> Result<&'m GalleryEntry, GalleryError> {
    manifest.lookup(image_id)
}

pub fn save_manifest(manifest: &GalleryManifest, destination: impl AsRef<Path>) -> Result<(), GalleryError> {
    let mut out = BufWriter::new(fs::File::create(destination)?);
    out.write_all(manifest.to_json()?.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn load_manifest(source: impl AsRef<Path>) -> Result<GalleryManifest, GalleryError> {
    let text = fs::read_to_string(source)?;
    GalleryManifest::from_json(&text)
}

// On-disk JSON shape.

#[derive(Serialize, Deserialize)]
struct ManifestWire {
    version: u64,
    code_space: CodeSpaceWire,
    entries: Vec<EntryWire>,
}

#[derive(Serialize, Deserialize)]
struct CodeSpaceWire {
    n_background: u32,
    n_shape: u32,
    n_texture: u32,
    n_noise: u32,
    background_policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_background: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct EntryWire {
    id: String,
    background: u32,
    shape: u32,
    texture: u32,
    noise: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl From<&GalleryManifest> for ManifestWire {
    fn from(m: &GalleryManifest) -> Self {
        let space = &m.code_space;
        let fixed_background = match space.background_policy {
            BackgroundPolicy::Fixed(i) => Some(i),
            _ => None,
        };
        ManifestWire {
            version: m.version.into(),
            code_space: CodeSpaceWire {
                n_background: space.n_background,
                n_shape: space.n_shape,
                n_texture: space.n_texture,
                n_noise: space.n_noise,
                background_policy: space.background_policy.name().to_string(),
                fixed_background,
            },
            entries: m
                .entries
                .iter()
                .map(|e| EntryWire {
                    id: e.image_id.clone(),
                    background: e.codes.background,
                    shape: e.codes.shape,
                    texture: e.codes.texture,
                    noise: e.codes.noise,
                    path: e.image_path.clone(),
                })
                .collect(),
        }
    }
}

/// Parses a policy name as written in manifests and configs.
pub fn parse_background_policy(name: &str, fixed: Option<u32>) -> Result<BackgroundPolicy, GalleryError> {
    match (name, fixed) {
        ("tied", _) => Ok(BackgroundPolicy::TiedToTexture),
        ("independent", _) => Ok(BackgroundPolicy::Independent),
        ("fixed", Some(i)) => Ok(BackgroundPolicy::Fixed(i)),
        ("fixed", None) => Err(GalleryError::InvalidSpace {
            field: "fixed_background",
            reason: "is required when background_policy is \"fixed\"".into(),
        }),
        (other, _) => Err(GalleryError::InvalidSpace {
            field: "background_policy",
            reason: format!("`{other}` is not one of tied, independent, fixed"),
        }),
    }
}

impl ManifestWire {
    fn into_manifest(self) -> Result<GalleryManifest, GalleryError> {
        let version =
            u16::try_from(self.version).map_err(|_| GalleryError::UnsupportedVersion(self.version))?;
        if version != MANIFEST_VERSION {
            return Err(GalleryError::UnsupportedVersion(self.version));
        }
        let cs = self.code_space;
        let space = CodeSpace {
            n_background: cs.n_background,
            n_shape: cs.n_shape,
            n_texture: cs.n_texture,
            n_noise: cs.n_noise,
            background_policy: parse_background_policy(&cs.background_policy, cs.fixed_background)?,
        };
        let entries = self
            .entries
            .into_iter()
            .map(|e| GalleryEntry {
                image_id: e.id,
                codes: CodeTuple::new(e.background, e.shape, e.texture, e.noise),
                image_path: e.path,
            })
            .collect();
        GalleryManifest::from_parts(version, space, entries)
    }
}
