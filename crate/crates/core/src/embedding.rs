//! Embedding sets for the two retrieval spaces and the CFGE binary format.
//!
//! CFGE layout (little-endian, no padding):
//!
//! ```text
//! magic "CFGE" | version u16 = 1 | space u8 | dim u32 | count u64
//! count × ( id_len u16 | id bytes (UTF-8) | dim × f32 )
//! ```
//!
//! Records are written in ascending byte order of their ids, so the file is a
//! pure function of the set contents.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gallery::GalleryManifest;

pub const CFGE_MAGIC: [u8; 4] = *b"CFGE";
pub const CFGE_VERSION: u16 = 1;
pub const CFGE_HEADER_LEN: usize = 19;

/// Prefix carried by query-image ids.
pub const QUERY_ID_PREFIX: &str = "q_";

/// Tolerance on the unit norm of a normalized vector.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("not a CFGE file (bad magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported CFGE version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown space tag {0}")]
    UnknownSpaceTag(u8),
    #[error("embedding space mismatch: expected {expected}, found {found}")]
    SpaceMismatch { expected: SpaceTag, found: SpaceTag },
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error("truncated CFGE data while reading {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record id is not valid UTF-8")]
    InvalidUtf8,
    #[error("record id `{0}…` exceeds 65535 bytes")]
    IdTooLong(String),
    #[error("non-finite component {index} in vector `{id}`")]
    NonFinite { id: String, index: usize },
    #[error("vector `{id}` has length {found}, expected {expected}")]
    DimMismatch { id: String, expected: usize, found: usize },
    #[error("cannot normalize zero vector `{0}`")]
    ZeroVector(String),
    #[error("query file must hold exactly one record, found {0}")]
    NotSingleQuery(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which network produced an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    /// Standard ImageNet-trained backbone.
    Texture,
    /// Shape-biased backbone.
    Shape,
}

impl SpaceTag {
    pub fn to_byte(self) -> u8 {
        match self {
            SpaceTag::Texture => 0,
            SpaceTag::Shape => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, EmbeddingError> {
        match b {
            0 => Ok(SpaceTag::Texture),
            1 => Ok(SpaceTag::Shape),
            other => Err(EmbeddingError::UnknownSpaceTag(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpaceTag::Texture => "texture",
            SpaceTag::Shape => "shape",
        }
    }
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SpaceTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "texture" => Ok(SpaceTag::Texture),
            "shape" => Ok(SpaceTag::Shape),
            other => Err(format!("unknown embedding space `{other}` (texture|shape)")),
        }
    }
}

/// Immutable id → vector map tagged with its embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    space: SpaceTag,
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
    normalized: bool,
}

impl EmbeddingSet {
    /// Builds a set, validating dimensions, finiteness and id uniqueness.
    /// The `normalized` flag is derived from the vectors.
    pub fn from_records<I, S>(space: SpaceTag, dim: usize, records: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut vectors = BTreeMap::new();
        for (id, vector) in records {
            let id = id.into();
            check_vector(&id, &vector, dim)?;
            if id.len() > u16::MAX as usize {
                return Err(EmbeddingError::IdTooLong(id.chars().take(16).collect()));
            }
            if vectors.contains_key(&id) {
                return Err(EmbeddingError::DuplicateId(id));
            }
            vectors.insert(id, vector);
        }
        let normalized = vectors.values().all(|v| is_unit(v));
        Ok(EmbeddingSet { space, dim, vectors, normalized })
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    /// Records in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.vectors.keys().map(String::as_str)
    }

    /// Same vectors under a different space tag.
    pub fn retagged(&self, space: SpaceTag) -> Self {
        EmbeddingSet { space, ..self.clone() }
    }

    /// The record `id` as a query in this set's space.
    pub fn query(&self, id: &str) -> Option<QueryEmbedding> {
        self.get(id).map(|v| QueryEmbedding::new(id, self.space, v.to_vec()))
    }

    /// Interprets a single-record set as a query embedding.
    pub fn into_single_query(self) -> Result<QueryEmbedding, EmbeddingError> {
        if self.vectors.len() != 1 {
            return Err(EmbeddingError::NotSingleQuery(self.vectors.len()));
        }
        let space = self.space;
        let (id, vector) = self.vectors.into_iter().next().expect("one record");
        Ok(QueryEmbedding::new(id, space, vector))
    }
}

/// An embedded query image (`I1` for texture, `I2` for shape).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub source_label: String,
    pub space: SpaceTag,
    pub vector: Vec<f32>,
}

impl QueryEmbedding {
    pub fn new(source_label: impl Into<String>, space: SpaceTag, vector: Vec<f32>) -> Self {
        QueryEmbedding { source_label: source_label.into(), space, vector }
    }

    pub fn is_unit(&self) -> bool {
        is_unit(&self.vector)
    }

    /// Copy scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        Ok(QueryEmbedding { vector: unit_vector(&self.source_label, &self.vector)?, ..self.clone() })
    }
}

fn check_vector(id: &str, vector: &[f32], dim: usize) -> Result<(), EmbeddingError> {
    if vector.len() != dim {
        return Err(EmbeddingError::DimMismatch { id: id.to_string(), expected: dim, found: vector.len() });
    }
    if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite { id: id.to_string(), index });
    }
    Ok(())
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn is_unit(v: &[f32]) -> bool {
    (norm(v) - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

fn unit_vector(id: &str, v: &[f32]) -> Result<Vec<f32>, EmbeddingError> {
    let n = norm(v);
    if n == 0.0 {
        return Err(EmbeddingError::ZeroVector(id.to_string()));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

/// Returns a copy of `set` with every vector scaled to unit L2 norm.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet, EmbeddingError> {
    let vectors = set
        .vectors
        .iter()
        .map(|(id, v)| Ok((id.clone(), unit_vector(id, v)?)))
        .collect::<Result<BTreeMap<_, _>, EmbeddingError>>()?;
    Ok(EmbeddingSet { space: set.space, dim: set.dim, vectors, normalized: true })
}

/// Ids present on one side only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    /// Gallery ids with no embedding.
    pub missing: Vec<String>,
    /// Embedded ids that are not in the gallery.
    pub extra: Vec<String>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }
}

pub fn validate_against_manifest(set: &EmbeddingSet, manifest: &GalleryManifest) -> CoverageReport {
    let missing = manifest
        .entries()
        .iter()
        .filter(|e| !set.contains(&e.image_id))
        .map(|e| e.image_id.clone())
        .collect();
    let extra = set.ids().filter(|id| !manifest.contains(id)).map(str::to_string).collect();
    CoverageReport { missing, extra }
}

// CFGE encoding.

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let record_len: usize = set.vectors.keys().map(|id| 2 + id.len() + 4 * set.dim).sum();
    let mut out = Vec::with_capacity(CFGE_HEADER_LEN + record_len);
    out.extend_from_slice(&CFGE_MAGIC);
    out.extend_from_slice(&CFGE_VERSION.to_le_bytes());
    out.push(set.space.to_byte());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    out.extend_from_slice(&(set.vectors.len() as u64).to_le_bytes());
    for (id, vector) in &set.vectors {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmbeddingError> {
        let end = self.pos.checked_add(n).filter(|&end| end <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(EmbeddingError::Truncated(what.to_string())),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], EmbeddingError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Parsed CFGE header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CfgeHeader {
    pub version: u16,
    pub space: SpaceTag,
    pub dim: u32,
    pub count: u64,
}

fn read_header(r: &mut Reader<'_>) -> Result<CfgeHeader, EmbeddingError> {
    let magic = r.array::<4>("magic")?;
    if magic != CFGE_MAGIC {
        return Err(EmbeddingError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != CFGE_VERSION {
        return Err(EmbeddingError::UnsupportedVersion(version));
    }
    let space = SpaceTag::from_byte(r.array::<1>("space tag")?[0])?;
    let dim = u32::from_le_bytes(r.array("dim")?);
    let count = u64::from_le_bytes(r.array("count")?);
    Ok(CfgeHeader { version, space, dim, count })
}

pub fn decode_header(bytes: &[u8]) -> Result<CfgeHeader, EmbeddingError> {
    read_header(&mut Reader { bytes, pos: 0 })
}

/// Decodes CFGE bytes, whatever their space tag.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet, EmbeddingError> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    if header.dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let dim = header.dim as usize;
    let mut vectors = BTreeMap::new();
    for n in 0..header.count {
        let id_len = u16::from_le_bytes(r.array(&format!("id length of record {n}"))?) as usize;
        let id = std::str::from_utf8(r.take(id_len, &format!("id of record {n}"))?)
            .map_err(|_| EmbeddingError::InvalidUtf8)?
            .to_string();
        let raw = r.take(4 * dim, &format!("vector `{id}`"))?;
        let vector: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        check_vector(&id, &vector, dim)?;
        if vectors.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        vectors.insert(id, vector);
    }
    if r.pos != bytes.len() {
        return Err(EmbeddingError::TrailingBytes(bytes.len() - r.pos));
    }
    let normalized = vectors.values().all(|v| is_unit(v));
    Ok(EmbeddingSet { space: header.space, dim, vectors, normalized })
}

pub fn read_embedding_file(source: impl AsRef<Path>) -> Result<EmbeddingSet, EmbeddingError> {
    decode_embeddings(&fs::read(source)?)
}

/// Reads a CFGE file and checks that it was produced for `expected_space`.
pub fn ingest_embedding_file(
    source: impl AsRef<Path>,
    expected_space: SpaceTag,
) -> Result<EmbeddingSet, EmbeddingError> {
    let bytes = fs::read(source)?;
    let header = decode_header(&bytes)?;
    if header.space != expected_space {
        return Err(EmbeddingError::SpaceMismatch { expected: expected_space, found: header.space });
    }
    decode_embeddings(&bytes)
}

pub fn write_embedding_file(set: &EmbeddingSet, destination: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    fs::write(destination, encode_embeddings(set))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{enumerate_gallery, CodeSpace};

    fn two_records() -> EmbeddingSet {
        EmbeddingSet::from_records(
            SpaceTag::Texture,
            4,
            [("b", vec![1.0, 2.0, 3.0, 4.0]), ("a", vec![-0.5, 0.0, f32::MIN_POSITIVE, 1e30])],
        )
        .unwrap()
    }

    #[test]
    fn empty_set_is_header_only() {
        let set = EmbeddingSet::from_records::<_, String>(SpaceTag::Shape, 8, []).unwrap();
        let bytes = encode_embeddings(&set);
        assert_eq!(bytes.len(), CFGE_HEADER_LEN);
        assert_eq!(&bytes[..4], b"CFGE");
        assert_eq!(bytes[6], 1);
        assert_eq!(decode_embeddings(&bytes).unwrap(), set);
    }

    #[test]
    fn records_written_in_id_order() {
        let bytes = encode_embeddings(&two_records());
        // first record starts right after the header: id_len = 1, id = "a"
        assert_eq!(&bytes[19..22], &[1, 0, b'a']);
        assert_eq!(bytes.len(), 19 + 2 * (2 + 1 + 16));
    }

    #[test]
    fn decode_is_bit_exact() {
        let set = two_records();
        let back = decode_embeddings(&encode_embeddings(&set)).unwrap();
        for (id, v) in set.iter() {
            let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
            let got: Vec<u32> = back.get(id).unwrap().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits, got);
        }
        assert_eq!(back.space(), SpaceTag::Texture);
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_embeddings(&two_records());
        bytes[0] = b'X';
        assert!(matches!(decode_embeddings(&bytes), Err(EmbeddingError::BadMagic(_))));

        let mut bytes = encode_embeddings(&two_records());
        bytes[4] = 2;
        assert!(matches!(decode_embeddings(&bytes), Err(EmbeddingError::UnsupportedVersion(2))));

        let mut bytes = encode_embeddings(&two_records());
        bytes[6] = 7;
        assert!(matches!(decode_embeddings(&bytes), Err(EmbeddingError::UnknownSpaceTag(7))));

        let mut bytes = encode_embeddings(&EmbeddingSet::from_records::<_, String>(SpaceTag::Shape, 3, []).unwrap());
        bytes[7..11].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_embeddings(&bytes), Err(EmbeddingError::ZeroDim)));
    }

    #[test]
    fn record_errors() {
        let bytes = encode_embeddings(&two_records());
        assert!(matches!(decode_embeddings(&bytes[..bytes.len() - 1]), Err(EmbeddingError::Truncated(_))));
        assert!(matches!(decode_embeddings(&bytes[..10]), Err(EmbeddingError::Truncated(_))));

        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_embeddings(&longer), Err(EmbeddingError::TrailingBytes(1))));

        // rename record "b" to "a"
        let mut dup = bytes.clone();
        let second = 19 + 2 + 1 + 16;
        dup[second + 2] = b'a';
        assert!(matches!(decode_embeddings(&dup), Err(EmbeddingError::DuplicateId(id)) if id == "a"));

        let mut nan = bytes.clone();
        nan[19 + 3..19 + 7].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embeddings(&nan), Err(EmbeddingError::NonFinite { index: 0, .. })));

        let mut bad_utf8 = bytes;
        bad_utf8[21] = 0xff;
        assert!(matches!(decode_embeddings(&bad_utf8), Err(EmbeddingError::InvalidUtf8)));
    }

    #[test]
    fn from_records_validates() {
        let err = EmbeddingSet::from_records(SpaceTag::Shape, 2, [("a", vec![1.0])]).unwrap_err();
        assert!(matches!(err, EmbeddingError::DimMismatch { expected: 2, found: 1, .. }));
        let err = EmbeddingSet::from_records(SpaceTag::Shape, 1, [("a", vec![f32::INFINITY])]).unwrap_err();
        assert!(matches!(err, EmbeddingError::NonFinite { .. }));
        let err = EmbeddingSet::from_records(SpaceTag::Shape, 1, [("a", vec![1.0]), ("a", vec![2.0])]).unwrap_err();
        assert!(matches!(err, EmbeddingError::DuplicateId(_)));
    }

    #[test]
    fn ingest_checks_space() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shape.cfge");
        let set = two_records().retagged(SpaceTag::Shape);
        write_embedding_file(&set, &path).unwrap();
        let err = ingest_embedding_file(&path, SpaceTag::Texture).unwrap_err();
        assert!(matches!(err, EmbeddingError::SpaceMismatch { expected: SpaceTag::Texture, found: SpaceTag::Shape }));
        let back = ingest_embedding_file(&path, SpaceTag::Shape).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 4);
        assert_eq!(back, set);
    }

    #[test]
    fn normalize_three_four_five() {
        let set = EmbeddingSet::from_records(SpaceTag::Texture, 2, [("v", vec![3.0, 4.0])]).unwrap();
        assert!(!set.is_normalized());
        let unit = l2_normalize(&set).unwrap();
        assert!(unit.is_normalized());
        assert_eq!(unit.get("v").unwrap(), &[0.6, 0.8]);
        assert_eq!(set.get("v").unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn normalize_unit_vector_is_stable() {
        let set = EmbeddingSet::from_records(SpaceTag::Texture, 3, [("u", vec![0.0, 1.0, 0.0]), ("w", vec![0.6, 0.0, 0.8])]).unwrap();
        let once = l2_normalize(&set).unwrap();
        for (id, v) in set.iter() {
            for (a, b) in v.iter().zip(once.get(id).unwrap()) {
                assert!((a - b).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn normalize_rejects_zero_vector() {
        let set = EmbeddingSet::from_records(SpaceTag::Texture, 2, [("ok", vec![1.0, 0.0]), ("zero", vec![0.0, 0.0])]).unwrap();
        assert!(matches!(l2_normalize(&set), Err(EmbeddingError::ZeroVector(id)) if id == "zero"));
    }

    #[test]
    fn coverage_report() {
        let manifest = enumerate_gallery(CodeSpace::tied(1, 2).with_noise(1)).unwrap();
        let ids: Vec<String> = manifest.entries().iter().map(|e| e.image_id.clone()).collect();
        let full = EmbeddingSet::from_records(SpaceTag::Shape, 1, ids.iter().map(|id| (id.clone(), vec![1.0]))).unwrap();
        assert!(validate_against_manifest(&full, &manifest).is_complete());

        let partial = EmbeddingSet::from_records(SpaceTag::Shape, 1, [(ids[0].clone(), vec![1.0])]).unwrap();
        assert_eq!(validate_against_manifest(&partial, &manifest).missing, vec![ids[1].clone()]);

        let extra = EmbeddingSet::from_records(
            SpaceTag::Shape,
            1,
            ids.iter().cloned().chain(["q_I1".to_string()]).map(|id| (id, vec![1.0])),
        )
        .unwrap();
        let report = validate_against_manifest(&extra, &manifest);
        assert!(report.missing.is_empty());
        assert_eq!(report.extra, vec!["q_I1".to_string()]);
    }

    #[test]
    fn single_query_extraction() {
        let set = EmbeddingSet::from_records(SpaceTag::Shape, 2, [("q_I2", vec![1.0, 0.0])]).unwrap();
        let q = set.into_single_query().unwrap();
        assert_eq!(q.source_label, "q_I2");
        assert_eq!(q.space, SpaceTag::Shape);
        assert!(matches!(two_records().into_single_query(), Err(EmbeddingError::NotSingleQuery(2))));
    }
}
