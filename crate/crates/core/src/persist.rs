//! Binary model and classifier files.
//!
//! All integers and floats are little-endian; matrices are written row-major
//! as `u64 rows, u64 cols` followed by `rows * cols` `f64`s.
//!
//! Model file (`VAGM`, version 1):
//!
//! ```text
//! magic "VAGM" | u32 version
//! u64 n | u64 q | u64 p | f64 beta | f64 final_loss | u64 outer_iterations
//! u64 trace_len | trace_len f64 loss trace
//! n u64 class ids
//! matrix V (n x q) | matrix T (q x p) | matrix A (n x n) | matrix W (n x p)
//! ```
//!
//! Classifier file (`VAGC`, version 1):
//!
//! ```text
//! magic "VAGC" | u32 version | u64 count
//! count x (u64 class_id | u8 provenance | u64 p | p f64 weights)
//! ```
//!
//! Provenance codes: 0 base, 1 transferred, 2 model, 3 fused. Readers reject
//! trailing bytes.

use std::fs;
use std::path::Path;

use crate::classify::{LinearClassifier, Provenance};
use crate::vager::{EmbeddingModel, TrainingStats};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"VAGM";
pub const MODEL_VERSION: u32 = 1;
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"VAGC";
pub const CLASSIFIER_VERSION: u32 = 1;

pub(crate) mod bytes {
    use nalgebra::DMatrix;

    use crate::{Error, Result};

    pub struct ByteReader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> ByteReader<'a> {
        pub fn new(buf: &'a [u8]) -> Self {
            Self { buf, pos: 0 }
        }

        pub fn remaining(&self) -> usize {
            self.buf.len() - self.pos
        }

        fn take(&mut self, len: usize) -> Result<&'a [u8]> {
            if self.remaining() < len {
                return Err(Error::Integrity(format!(
                    "truncated: needed {len} bytes at offset {}, {} left",
                    self.pos,
                    self.remaining()
                )));
            }
            let out = &self.buf[self.pos..self.pos + len];
            self.pos += len;
            Ok(out)
        }

        pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
            let got = self.take(4)?;
            if got != magic {
                return Err(Error::Integrity(format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                )));
            }
            Ok(())
        }

        pub fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }

        pub fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(
                self.take(4)?.try_into().expect("4 bytes"),
            ))
        }

        pub fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(
                self.take(8)?.try_into().expect("8 bytes"),
            ))
        }

        pub fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(
                self.take(8)?.try_into().expect("8 bytes"),
            ))
        }

        /// Count read from the file, checked against the bytes left so that a
        /// corrupt header cannot trigger a huge allocation.
        pub fn count(&mut self, item_bytes: usize) -> Result<usize> {
            let n = self.u64()?;
            match (n as usize).checked_mul(item_bytes) {
                Some(total) if n <= usize::MAX as u64 && total <= self.remaining() => {
                    Ok(n as usize)
                }
                _ => Err(Error::Integrity(format!(
                    "count {n} exceeds the {} bytes left",
                    self.remaining()
                ))),
            }
        }

        pub fn f64_vec(&mut self, len: usize) -> Result<Vec<f64>> {
            let raw = self.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Integrity("array length overflow".into()))?,
            )?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        }

        pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
            let r = self.u64()?;
            let c = self.u64()?;
            if (r, c) != (rows as u64, cols as u64) {
                return Err(Error::Integrity(format!(
                    "matrix {name} has shape {r} x {c}, expected {rows} x {cols}"
                )));
            }
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Integrity(format!("matrix {name} size overflows")))?;
            let data = self.f64_vec(len)?;
            Ok(DMatrix::from_row_slice(rows, cols, &data))
        }

        pub fn finish(&self) -> Result<()> {
            if self.remaining() != 0 {
                return Err(Error::Integrity(format!(
                    "{} trailing bytes",
                    self.remaining()
                )));
            }
            Ok(())
        }
    }

    #[derive(Default)]
    pub struct ByteWriter {
        buf: Vec<u8>,
    }

    impl ByteWriter {
        pub fn bytes(&mut self, b: &[u8]) {
            self.buf.extend_from_slice(b);
        }

        pub fn u8(&mut self, v: u8) {
            self.buf.push(v);
        }

        pub fn u32(&mut self, v: u32) {
            self.bytes(&v.to_le_bytes());
        }

        pub fn u64(&mut self, v: u64) {
            self.bytes(&v.to_le_bytes());
        }

        pub fn f64(&mut self, v: f64) {
            self.bytes(&v.to_le_bytes());
        }

        pub fn f64_slice(&mut self, vs: &[f64]) {
            for v in vs {
                self.f64(*v);
            }
        }

        pub fn matrix(&mut self, m: &DMatrix<f64>) {
            self.u64(m.nrows() as u64);
            self.u64(m.ncols() as u64);
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    self.f64(m[(i, j)]);
                }
            }
        }

        pub fn into_inner(self) -> Vec<u8> {
            self.buf
        }
    }
}

use bytes::{ByteReader, ByteWriter};

pub fn encode_model(model: &EmbeddingModel) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u64(model.n() as u64);
    w.u64(model.q() as u64);
    w.u64(model.p() as u64);
    w.f64(model.beta);
    w.f64(model.stats.final_loss);
    w.u64(model.stats.outer_iterations as u64);
    w.u64(model.stats.loss_trace.len() as u64);
    w.f64_slice(&model.stats.loss_trace);
    for id in &model.class_ids {
        w.u64(*id);
    }
    w.matrix(&model.v);
    w.matrix(&model.t);
    w.matrix(&model.adjacency);
    w.matrix(&model.weights);
    w.into_inner()
}

/// Parses a model file. The solver cache is not stored and comes back empty.
pub fn decode_model(buf: &[u8]) -> Result<EmbeddingModel> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Integrity(format!(
            "model version {version}, expected {MODEL_VERSION}"
        )));
    }
    let n = r.count(8)?;
    let q = r.count(8)?;
    let p = r.count(8)?;
    if n < 2 || q == 0 || p == 0 {
        return Err(Error::Integrity(format!(
            "degenerate shape n={n} q={q} p={p}"
        )));
    }
    let beta = r.f64()?;
    let final_loss = r.f64()?;
    let outer_iterations = r.u64()? as usize;
    let trace_len = r.count(8)?;
    let loss_trace = r.f64_vec(trace_len)?;
    let class_ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let v = r.matrix("V", n, q)?;
    let t = r.matrix("T", q, p)?;
    let adjacency = r.matrix("A", n, n)?;
    let weights = r.matrix("W", n, p)?;
    r.finish()?;
    if [&v, &t, &adjacency, &weights]
        .iter()
        .any(|m| m.iter().any(|x| !x.is_finite()))
        || !beta.is_finite()
    {
        return Err(Error::Integrity("model contains non-finite values".into()));
    }
    Ok(EmbeddingModel {
        class_ids,
        v,
        t,
        beta,
        adjacency,
        weights,
        stats: TrainingStats {
            final_loss,
            outer_iterations,
            loss_trace,
        },
        pinv_cache: None,
    })
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&buf)
}

pub fn encode_classifiers(classifiers: &[LinearClassifier]) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(CLASSIFIER_MAGIC);
    w.u32(CLASSIFIER_VERSION);
    w.u64(classifiers.len() as u64);
    for c in classifiers {
        w.u64(c.class_id);
        w.u8(c.provenance.code());
        w.u64(c.p() as u64);
        w.f64_slice(&c.w);
    }
    w.into_inner()
}

pub fn decode_classifiers(buf: &[u8]) -> Result<Vec<LinearClassifier>> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(CLASSIFIER_MAGIC)?;
    let version = r.u32()?;
    if version != CLASSIFIER_VERSION {
        return Err(Error::Integrity(format!(
            "classifier version {version}, expected {CLASSIFIER_VERSION}"
        )));
    }
    // smallest record: id, provenance, p, two weights
    let count = r.count(8 + 1 + 8 + 16)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let class_id = r.u64()?;
        let code = r.u8()?;
        let provenance = Provenance::from_code(code)
            .ok_or_else(|| Error::Integrity(format!("record {i}: unknown provenance {code}")))?;
        let p = r.count(8)?;
        let w = r.f64_vec(p)?;
        let c = LinearClassifier::new(class_id, provenance, w)
            .map_err(|e| Error::Integrity(format!("record {i}: {e}")))?;
        out.push(c);
    }
    r.finish()?;
    Ok(out)
}

pub fn save_classifiers(classifiers: &[LinearClassifier], path: &Path) -> Result<()> {
    fs::write(path, encode_classifiers(classifiers)).map_err(|e| Error::io(path, e))
}

pub fn load_classifiers(path: &Path) -> Result<Vec<LinearClassifier>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_classifiers(&buf)
}
