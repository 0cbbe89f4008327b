//! `AXDS` dataset files: raw int8 samples plus u8 labels.
//!
//! ```text
//! "AXDS" | version u16 = 1 | count u32 | rank u8 | dims u32 x rank
//!        | count x prod(dims) int8 samples | count u8 labels
//! ```
//! All integers little-endian. Samples carry no quantization parameters;
//! they are interpreted in the input quantization of the model they feed.

use std::path::Path;

use super::{QuantParams, QuantizedTensor, TensorShape};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"AXDS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    shape: TensorShape,
    data: Vec<i8>,
    labels: Vec<u8>,
}

impl Dataset {
    /// `data` holds `labels.len()` samples back to back.
    pub fn new(shape: TensorShape, data: Vec<i8>, labels: Vec<u8>) -> Result<Self> {
        if !shape.is_well_formed() {
            return Err(Error::Format {
                what: "dataset",
                detail: format!("sample shape {shape:?} must have rank 1 or 3 with extents >= 1"),
            });
        }
        if labels.is_empty() {
            return Err(Error::Format {
                what: "dataset",
                detail: "dataset must contain at least one sample".into(),
            });
        }
        if data.len() != labels.len() * shape.len() {
            return Err(Error::Format {
                what: "dataset",
                detail: format!(
                    "{} sample bytes for {} samples of {} elements",
                    data.len(),
                    labels.len(),
                    shape.len()
                ),
            });
        }
        Ok(Self { shape, data, labels })
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[i8] {
        let n = self.shape.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn label(&self, k: usize) -> u8 {
        self.labels[k]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Sample `k` as a tensor in the given quantization.
    pub fn tensor(&self, k: usize, quant: QuantParams) -> QuantizedTensor {
        QuantizedTensor::new(self.shape.clone(), self.sample(k).to_vec(), quant)
    }

    /// First `n` samples and the remainder. Either side may not be empty.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        let cut = n * self.shape.len();
        Ok((
            Dataset::new(self.shape.clone(), self.data[..cut].to_vec(), self.labels[..n].to_vec())?,
            Dataset::new(self.shape.clone(), self.data[cut..].to_vec(), self.labels[n..].to_vec())?,
        ))
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Dataset> {
        Dataset::new(self.shape.clone(), self.data.clone(), labels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&DATASET_MAGIC)
            .u16(VERSION)
            .u32(self.len() as u32)
            .u8(self.shape.rank() as u8);
        for &d in self.shape.dims() {
            w.u32(d as u32);
        }
        w.buf.extend(self.data.iter().map(|&v| v as u8));
        w.bytes(&self.labels);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.magic(DATASET_MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32()? as usize;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = TensorShape::new(dims);
        if !shape.is_well_formed() {
            return Err(Error::Format {
                what: "dataset",
                detail: format!("sample shape {shape:?} must have rank 1 or 3 with extents >= 1"),
            });
        }
        let per_sample = shape.len();
        let data = r
            .take(count.checked_mul(per_sample).ok_or_else(|| Error::Format {
                what: "dataset",
                detail: "sample payload size overflows".into(),
            })?)?
            .iter()
            .map(|&b| b as i8)
            .collect();
        let labels = r.take(count)?.to_vec();
        r.finish()?;
        Dataset::new(shape, data, labels)
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_bytes(&read_file(path.as_ref())?)
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &d.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(count: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = b"AXDS".to_vec();
        b.extend(1u16.to_le_bytes());
        b.extend(count.to_le_bytes());
        b.push(dims.len() as u8);
        for d in dims {
            b.extend(d.to_le_bytes());
        }
        b
    }

    #[test]
    fn two_samples_of_4x4x1() {
        let mut b = header(2, &[4, 4, 1]);
        b.extend((0..32u8).map(|v| v.wrapping_mul(7)));
        b.extend([0u8, 1]);
        let d = Dataset::from_bytes(&b).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.shape().dims(), &[4, 4, 1]);
        assert_eq!(d.labels(), &[0, 1]);
    }

    #[test]
    fn bad_magic() {
        let mut b = header(1, &[1]);
        b[..4].copy_from_slice(b"XXXX");
        b.extend([0u8, 0]);
        assert!(matches!(Dataset::from_bytes(&b), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let mut b = header(5, &[4, 4, 1]);
        b.extend(vec![0u8; 3 * 16]);
        assert!(matches!(Dataset::from_bytes(&b), Err(Error::Truncated { .. })));
    }

    #[test]
    fn sample_bytes_sit_at_documented_offsets() {
        let dims = [2u32, 3, 2];
        let mut b = header(3, &dims);
        let header_len = b.len();
        assert_eq!(header_len, 4 + 2 + 4 + 1 + 4 * 3);
        b.extend((0..36u8).map(|v| v.wrapping_mul(37)));
        b.extend([2u8, 0, 1]);
        let d = Dataset::from_bytes(&b).unwrap();
        for k in 0..3 {
            for j in 0..12 {
                assert_eq!(d.sample(k)[j] as u8, b[header_len + k * 12 + j]);
            }
        }
        assert_eq!(d.to_bytes(), b);
    }

    #[test]
    fn zero_count_rejected() {
        let b = header(0, &[1]);
        assert!(Dataset::from_bytes(&b).is_err());
    }
}
