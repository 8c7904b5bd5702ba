use std::collections::BTreeMap;
use std::path::Path;

use super::{CorpusError, EmbeddingRef};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ECB1";
const HEADER_LEN: usize = 4 + 8 + 8;

/// Row-major `n x d` matrix of image embeddings loaded from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub file_id: String,
    pub n: usize,
    pub d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(file_id: impl Into<String>, n: usize, d: usize, values: Vec<f32>) -> Result<Self, CorpusError> {
        if n.checked_mul(d) != Some(values.len()) {
            return Err(CorpusError::HeaderMismatch {
                expected: n.saturating_mul(d),
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFiniteValue { row: pos / d, col: pos % d });
        }
        Ok(EmbeddingMatrix { file_id: file_id.into(), n, d, values })
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        (i < self.n).then(|| &self.values[i * self.d..(i + 1) * self.d])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Encodes the matrix in the on-disk layout: magic, `n`, `d` (u64 LE), then f32 LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(file_id: impl Into<String>, bytes: &[u8]) -> Result<Self, CorpusError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(CorpusError::BadMagic);
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let d = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        let expected = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| usize::try_from(c).ok());
        if expected != Some(body.len()) || !body.len().is_multiple_of(4) {
            return Err(CorpusError::HeaderMismatch {
                expected: (n.saturating_mul(d)) as usize,
                found: body.len() / 4,
            });
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(file_id, n as usize, d as usize, values)
    }
}

/// Reads an embedding file. The file id defaults to the file stem.
pub fn load_embeddings(path: &Path, file_id: Option<&str>) -> Result<EmbeddingMatrix, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let id = match file_id {
        Some(id) => id.to_string(),
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    EmbeddingMatrix::from_bytes(id, &bytes)
}

/// All embedding matrices of a run, keyed by file id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSet {
    files: BTreeMap<String, EmbeddingMatrix>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, matrix: EmbeddingMatrix) {
        self.files.insert(matrix.file_id.clone(), matrix);
    }

    pub fn get(&self, file_id: &str) -> Option<&EmbeddingMatrix> {
        self.files.get(file_id)
    }

    pub fn resolve(&self, r: &EmbeddingRef) -> Option<&[f32]> {
        self.files
            .get(&r.file_id)
            .and_then(|m| usize::try_from(r.row).ok().and_then(|row| m.row(row)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingMatrix> {
        self.files.values()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Common dimension of all files, or `None` when the set is empty or dimensions differ.
    pub fn dimension(&self) -> Option<usize> {
        let mut dims = self.files.values().map(|m| m.d);
        let first = dims.next()?;
        dims.all(|d| d == first).then_some(first)
    }
}

impl FromIterator<EmbeddingMatrix> for EmbeddingSet {
    fn from_iter<T: IntoIterator<Item = EmbeddingMatrix>>(iter: T) -> Self {
        let mut set = EmbeddingSet::new();
        for m in iter {
            set.insert(m);
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(n: u64, d: u64, vals: &[f32]) -> Vec<u8> {
        let mut b = EMBEDDING_MAGIC.to_vec();
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        for v in vals {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn loads_two_by_three() {
        let m = EmbeddingMatrix::from_bytes("f", &encode(2, 3, &[1., 2., 3., 4., 5., 6.])).unwrap();
        assert_eq!((m.n, m.d), (2, 3));
        assert_eq!(m.row(1).unwrap(), &[4., 5., 6.]);
        assert!(m.row(2).is_none());
    }

    #[test]
    fn short_body_is_header_mismatch() {
        let err = EmbeddingMatrix::from_bytes("f", &encode(2, 3, &[1., 2., 3., 4., 5.])).unwrap_err();
        assert!(matches!(err, CorpusError::HeaderMismatch { expected: 6, found: 5 }));
    }

    #[test]
    fn nan_reports_position() {
        let err = EmbeddingMatrix::from_bytes("f", &encode(2, 3, &[1., 2., 3., 4., 5., f32::NAN]))
            .unwrap_err();
        assert!(matches!(err, CorpusError::NonFiniteValue { row: 1, col: 2 }));
    }

    #[test]
    fn rejects_bad_magic() {
        let mut b = encode(1, 1, &[1.0]);
        b[0] = b'X';
        assert!(matches!(EmbeddingMatrix::from_bytes("f", &b), Err(CorpusError::BadMagic)));
    }

    #[test]
    fn byte_round_trip() {
        let m = EmbeddingMatrix::new("f", 2, 2, vec![0.5, -1.0, 3.25, 0.0]).unwrap();
        assert_eq!(EmbeddingMatrix::from_bytes("f", &m.to_bytes()).unwrap(), m);
    }
}
