use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use super::{csv_reader, csv_writer, check_header, line_of};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"CVDCMEMB";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Row-major float32 feature maps keyed by image id.
///
/// Several ids may share a matrix row. Lookups are exact and the store is
/// immutable once built.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    k: usize,
    data: Vec<f32>,
    index: IndexMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(k: usize, data: Vec<f32>, index: IndexMap<String, usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroDimension);
        }
        if !data.len().is_multiple_of(k) {
            return Err(Error::TruncatedMatrix {
                bytes: data.len() * 4,
                k,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        let rows = data.len() / k;
        for (image_id, &row) in &index {
            if row >= rows {
                return Err(Error::IndexOutOfRange {
                    image_id: image_id.clone(),
                    row,
                    rows,
                });
            }
        }
        Ok(EmbeddingStore { k, data, index })
    }

    /// One row per image, in the given order.
    pub fn from_rows<I, S>(k: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut data = Vec::new();
        let mut index = IndexMap::new();
        for (i, (id, row)) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "embedding row",
                    expected: k,
                    found: row.len(),
                });
            }
            let id = id.into();
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateKey(id));
            }
            data.extend_from_slice(&row);
        }
        Self::new(k, data, index)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.index.get(image_id).map(|&r| self.row(r))
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.k..(row + 1) * self.k]
    }

    /// `(image_id, values)` in index order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &[f32])> + '_ {
        self.index.iter().map(|(id, &r)| (id.as_str(), self.row(r)))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.index.keys().map(String::as_str)
    }

    pub fn matrix(&self) -> &[f32] {
        &self.data
    }

    pub fn index(&self) -> &IndexMap<String, usize> {
        &self.index
    }

    pub fn write(&self, matrix_path: &Path, index_path: &Path) -> Result<()> {
        let file = std::fs::File::create(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(matrix_path, e);
        out.write_all(EMBEDDING_MAGIC).map_err(io)?;
        out.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(self.k as u32).to_le_bytes()).map_err(io)?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        out.flush().map_err(io)?;

        let mut writer = csv_writer(index_path)?;
        writer.write_record(["image_id", "row"])?;
        for (id, row) in &self.index {
            writer.write_record([id.as_str(), &row.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io(index_path, e))?;
        Ok(())
    }
}

/// Keyed equality: same K and the same vector for every image id,
/// regardless of row layout or index order.
impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.len() == other.len()
            && self.iter().all(|(id, v)| {
                other
                    .get(id)
                    .is_some_and(|w| v.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits()))
            })
    }
}

/// Parses the binary header and payload of an embedding matrix.
pub(crate) fn decode_matrix(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if k == 0 {
        return Err(Error::ZeroDimension);
    }
    let payload = &bytes[HEADER_LEN..];
    if !payload.len().is_multiple_of(4 * k) {
        return Err(Error::TruncatedMatrix {
            bytes: payload.len(),
            k,
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((k, data))
}

pub fn load_embeddings(matrix_path: &Path, index_path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
    let (k, data) = decode_matrix(&bytes)?;
    drop(bytes);

    let mut reader = csv_reader(index_path)?;
    check_header(&mut reader, &["image_id", "row"])?;
    let mut index = IndexMap::new();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let row: usize = record[1].trim().parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("row: cannot parse {:?}", &record[1]),
        })?;
        if index.insert(record[0].to_string(), row).is_some() {
            return Err(Error::DuplicateKey(record[0].to_string()));
        }
    }
    EmbeddingStore::new(k, data, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, version: u32, k: u32, values: &[f32]) {
        let mut bytes = EMBEDDING_MAGIC.to_vec();
        bytes.extend_from_slice(&version.to_le_bytes());
        bytes.extend_from_slice(&k.to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn direct_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let (m, i) = (dir.path().join("e.bin"), dir.path().join("e.idx.csv"));
        write_raw(&m, 1, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        std::fs::write(&i, "image_id,row\nimg_a,0\nimg_b,1\n").unwrap();
        let store = load_embeddings(&m, &i).unwrap();
        assert_eq!(store.k(), 4);
        assert_eq!(store.get("img_a").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(store.get("img_b").unwrap()[0], 5.0);
        assert!(store.get("img_c").is_none());
    }

    #[test]
    fn index_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let (m, i) = (dir.path().join("e.bin"), dir.path().join("e.idx.csv"));
        write_raw(&m, 1, 4, &[0.0; 8]);
        std::fs::write(&i, "image_id,row\nimg_a,5\n").unwrap();
        let err = load_embeddings(&m, &i).unwrap_err();
        assert!(err.to_string().contains("index out of range"), "{err}");
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (m, i) = (dir.path().join("e.bin"), dir.path().join("e.idx.csv"));
        std::fs::write(&i, "image_id,row\n").unwrap();

        write_raw(&m, 2, 4, &[0.0; 4]);
        assert!(matches!(load_embeddings(&m, &i), Err(Error::UnsupportedVersion(2))));
        write_raw(&m, 1, 0, &[]);
        assert!(matches!(load_embeddings(&m, &i), Err(Error::ZeroDimension)));
        write_raw(&m, 1, 4, &[0.0; 5]);
        assert!(matches!(load_embeddings(&m, &i), Err(Error::TruncatedMatrix { .. })));
        write_raw(&m, 1, 2, &[0.0, f32::NAN]);
        assert!(matches!(load_embeddings(&m, &i), Err(Error::NonFinite(_))));
        std::fs::write(&m, b"NOTMAGIC\x01\0\0\0\x02\0\0\0").unwrap();
        assert!(matches!(load_embeddings(&m, &i), Err(Error::BadMagic)));
    }

    #[test]
    fn header_layout_is_sixteen_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (m, i) = (dir.path().join("e.bin"), dir.path().join("e.idx.csv"));
        let store = EmbeddingStore::from_rows(3, [("x", vec![1.0f32, -2.0, 0.5])]).unwrap();
        store.write(&m, &i).unwrap();
        let bytes = std::fs::read(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 12);
        assert_eq!(&bytes[..8], b"CVDCMEMB");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(std::fs::read_to_string(&i).unwrap(), "image_id,row\nx,0\n");
    }
}
