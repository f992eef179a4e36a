//! Feature sets, class means, synthetic benchmarks and k-shot splits.
//!
//! Two on-disk feature formats are supported:
//!
//! * CSV: header `class_id,sample_id,f0,...,f{d-1}`, one record per line,
//!   decimal floating point written in shortest round-trip form.
//! * Binary: magic `VAGF`, `u32` version (1), `u64` record count, `u32` d, then
//!   per record `u64` class id, `u64` sample id and `d` little-endian `f64`s.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::persist::bytes::{ByteReader, ByteWriter};
use crate::{seed, ClassId, Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"VAGF";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub class_id: ClassId,
    pub sample_id: u64,
    pub x: Vec<f64>,
}

/// A validated collection of labeled feature vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    d: usize,
    records: Vec<Record>,
}

impl FeatureSet {
    /// Validates dimension, finiteness and `(class_id, sample_id)` uniqueness.
    pub fn new(d: usize, records: Vec<Record>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            check_record(r, d, i + 1, &mut seen)?;
        }
        Ok(Self { d, records })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct class ids in ascending order.
    pub fn class_ids(&self) -> Vec<ClassId> {
        let mut ids: Vec<ClassId> = self.records.iter().map(|r| r.class_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Records of one class, in file order.
    pub fn class_records(&self, class_id: ClassId) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| r.class_id == class_id)
            .collect()
    }

    pub fn class_size(&self, class_id: ClassId) -> usize {
        self.records
            .iter()
            .filter(|r| r.class_id == class_id)
            .count()
    }

    /// Subset with the records whose class id satisfies `keep`.
    pub fn filter_classes(&self, keep: impl Fn(ClassId) -> bool) -> FeatureSet {
        FeatureSet {
            d: self.d,
            records: self
                .records
                .iter()
                .filter(|r| keep(r.class_id))
                .cloned()
                .collect(),
        }
    }

    /// Copy with every vector scaled to unit L2 norm. Zero vectors are left as is.
    pub fn l2_normalized(&self) -> FeatureSet {
        let records = self
            .records
            .iter()
            .map(|r| {
                let norm = r.x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let x = if norm > 0.0 {
                    r.x.iter().map(|v| v / norm).collect()
                } else {
                    r.x.clone()
                };
                Record { x, ..r.clone() }
            })
            .collect();
        FeatureSet { d: self.d, records }
    }

    pub fn load(path: &Path, format: FeatureFormat) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        match format {
            FeatureFormat::Csv => Self::from_csv(&bytes),
            FeatureFormat::Binary => Self::from_binary(&bytes),
        }
    }

    pub fn save(&self, path: &Path, format: FeatureFormat) -> Result<()> {
        let bytes = match format {
            FeatureFormat::Csv => self.to_csv(),
            FeatureFormat::Binary => self.to_binary(),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let mut rows = reader.records();
        let header = match rows.next() {
            Some(h) => h.map_err(|e| Error::Row {
                row: 1,
                msg: e.to_string(),
            })?,
            None => {
                return Err(Error::Row {
                    row: 1,
                    msg: "missing header".into(),
                })
            }
        };
        let d = parse_header(&header)?;

        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (i, row) in rows.enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Row {
                row: line,
                msg: e.to_string(),
            })?;
            if row.len() == 1 && row.get(0) == Some("") {
                continue;
            }
            if row.len() != d + 2 {
                return Err(Error::Row {
                    row: line,
                    msg: format!(
                        "dimension mismatch: expected {} features, found {}",
                        d,
                        row.len().saturating_sub(2)
                    ),
                });
            }
            let int = |j: usize, what: &str| -> Result<u64> {
                row[j].parse::<u64>().map_err(|_| Error::Row {
                    row: line,
                    msg: format!("malformed {what} {:?}", &row[j]),
                })
            };
            let class_id = int(0, "class_id")?;
            let sample_id = int(1, "sample_id")?;
            let x = (2..row.len())
                .map(|j| {
                    row[j].parse::<f64>().map_err(|_| Error::Row {
                        row: line,
                        msg: format!("malformed value {:?} in column {}", &row[j], j + 1),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let rec = Record {
                class_id,
                sample_id,
                x,
            };
            check_record(&rec, d, line, &mut seen)?;
            records.push(rec);
        }
        Ok(Self { d, records })
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = String::from("class_id,sample_id");
        for j in 0..self.d {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{}", r.class_id, r.sample_id));
            for v in &r.x {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(FEATURE_MAGIC)?;
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported feature file version {version}"
            )));
        }
        let count = r.u64()?;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::Integrity("feature dimension is zero".into()));
        }
        let record_bytes = 16u64 + 8 * d as u64;
        if count.checked_mul(record_bytes) != Some(r.remaining() as u64) {
            return Err(Error::Integrity(format!(
                "{count} records of dimension {d} do not match {} payload bytes",
                r.remaining()
            )));
        }
        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(count as usize);
        for i in 0..count as usize {
            let class_id = r.u64()?;
            let sample_id = r.u64()?;
            let x = r.f64_vec(d)?;
            let rec = Record {
                class_id,
                sample_id,
                x,
            };
            check_record(&rec, d, i + 1, &mut seen)?;
            records.push(rec);
        }
        Ok(Self { d, records })
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(FEATURE_MAGIC);
        w.u32(FEATURE_VERSION);
        w.u64(self.records.len() as u64);
        w.u32(self.d as u32);
        for r in &self.records {
            w.u64(r.class_id);
            w.u64(r.sample_id);
            w.f64_slice(&r.x);
        }
        w.into_inner()
    }
}

fn check_record(
    r: &Record,
    d: usize,
    row: usize,
    seen: &mut HashSet<(ClassId, u64)>,
) -> Result<()> {
    if r.x.len() != d {
        return Err(Error::Row {
            row,
            msg: format!("dimension mismatch: expected {d}, found {}", r.x.len()),
        });
    }
    if let Some(j) = r.x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Row {
            row,
            msg: format!("non-finite value in feature {j}"),
        });
    }
    if !seen.insert((r.class_id, r.sample_id)) {
        return Err(Error::Row {
            row,
            msg: format!(
                "duplicate (class_id, sample_id) = ({}, {})",
                r.class_id, r.sample_id
            ),
        });
    }
    Ok(())
}

fn parse_header(header: &csv::StringRecord) -> Result<usize> {
    let bad = |msg: String| Error::Row { row: 1, msg };
    if header.len() < 3 || &header[0] != "class_id" || &header[1] != "sample_id" {
        return Err(bad(
            "header must be class_id,sample_id,f0,...,f{d-1}".to_string()
        ));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(bad(format!("expected column f{j}, found {name:?}")));
        }
    }
    Ok(header.len() - 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

/// Per-class mean feature vectors, rows in ascending class id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    pub class_ids: Vec<ClassId>,
    pub means: DMatrix<f64>,
}

impl ClassMeans {
    pub fn n(&self) -> usize {
        self.class_ids.len()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.means.row(i).transpose()
    }
}

pub fn class_means(fs: &FeatureSet) -> Result<ClassMeans> {
    let mut groups: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
    for r in fs.records() {
        let entry = groups
            .entry(r.class_id)
            .or_insert_with(|| (vec![0.0; fs.d()], 0));
        for (acc, v) in entry.0.iter_mut().zip(&r.x) {
            *acc += v;
        }
        entry.1 += 1;
    }
    if groups.is_empty() {
        return Err(Error::invalid("feature set has no records"));
    }
    let n = groups.len();
    let mut means = DMatrix::zeros(n, fs.d());
    let mut class_ids = Vec::with_capacity(n);
    for (i, (id, (sum, count))) in groups.into_iter().enumerate() {
        if sum.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid(format!("class {id} has a zero mean vector")));
        }
        for (j, s) in sum.iter().enumerate() {
            means[(i, j)] = s / count as f64;
        }
        class_ids.push(id);
    }
    Ok(ClassMeans { class_ids, means })
}

/// Mean of a slice of records, which must be non-empty and share a dimension.
pub fn mean_vector(records: &[&Record]) -> DVector<f64> {
    let d = records[0].x.len();
    let mut sum = DVector::zeros(d);
    for r in records {
        for (acc, v) in sum.iter_mut().zip(&r.x) {
            *acc += v;
        }
    }
    sum / records.len() as f64
}

/// How one novel class is generated from the base centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelClassSpec {
    /// Convex weights over the base centers, length `n_base`.
    pub weights: Vec<f64>,
    /// Std of the isotropic perturbation added to the mixed center.
    pub noise_std: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_base: usize,
    pub d: usize,
    pub samples_per_base: usize,
    pub cluster_std: f64,
    pub center_scale: f64,
    /// Base centers live in a random subspace of this dimension (`d` for full rank).
    pub latent_dim: usize,
    pub novel: Vec<NovelClassSpec>,
    pub seed: u64,
}

/// Id of the first novel class; novel classes are numbered consecutively.
pub const NOVEL_ID_OFFSET: ClassId = 1000;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_base < 2 || self.d < 2 || self.samples_per_base < 2 {
            return Err(Error::invalid(
                "synthetic config needs n_base >= 2, d >= 2, samples_per_base >= 2",
            ));
        }
        if !(self.latent_dim >= 1 && self.latent_dim <= self.d) {
            return Err(Error::invalid("latent_dim must lie in 1..=d"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.cluster_std) || !positive(self.center_scale) {
            return Err(Error::invalid("cluster_std and center_scale must be > 0"));
        }
        for (i, spec) in self.novel.iter().enumerate() {
            if spec.weights.len() != self.n_base {
                return Err(Error::invalid(format!(
                    "novel class {i}: {} mixture weights for {} base classes",
                    spec.weights.len(),
                    self.n_base
                )));
            }
            if spec.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid(format!(
                    "novel class {i}: mixture weights must be nonnegative"
                )));
            }
            let total: f64 = spec.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "novel class {i}: mixture weights sum to {total}, not 1"
                )));
            }
            if !(spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
                return Err(Error::invalid(format!(
                    "novel class {i}: noise_std must be >= 0"
                )));
            }
            if spec.samples < 2 {
                return Err(Error::invalid(format!(
                    "novel class {i}: needs at least 2 samples"
                )));
            }
        }
        Ok(())
    }

    /// The default small-scale benchmark: `n_base` base classes in `d`
    /// dimensions and `n_novel` novel classes, each an even-ish mixture of two
    /// distinct base centers.
    pub fn benchmark(n_base: usize, d: usize, n_novel: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::child(seed, 0x5EED));
        let novel = (0..n_novel)
            .map(|_| {
                let mut picks: Vec<usize> = (0..n_base).collect();
                picks.shuffle(&mut rng);
                let share = rng.random_range(0.35..0.65);
                let mut weights = vec![0.0; n_base];
                weights[picks[0]] = share;
                weights[picks[1]] = 1.0 - share;
                NovelClassSpec {
                    weights,
                    noise_std: 0.1,
                    samples: 120,
                }
            })
            .collect();
        Self {
            n_base,
            d,
            samples_per_base: 120,
            cluster_std: 0.5,
            center_scale: 1.0,
            latent_dim: (d / 4).max(1),
            novel,
            seed,
        }
    }

    /// Like [`SynthConfig::benchmark`], but novel class `i` draws its mixture
    /// weights from a symmetric Dirichlet whose concentration runs log-evenly
    /// from `alpha_max` (diffuse, many contributing bases) down to `alpha_min`
    /// (peaked, close to a single base class).
    pub fn concentration_sweep(
        n_base: usize,
        d: usize,
        n_novel: usize,
        (alpha_min, alpha_max): (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        if !(alpha_min > 0.0 && alpha_max >= alpha_min && alpha_max.is_finite()) {
            return Err(Error::invalid("concentrations must satisfy 0 < min <= max"));
        }
        let mut cfg = Self::benchmark(n_base, d, 0, seed);
        let mut rng = seed::rng(seed::child(seed, 0xD1C1));
        let steps = (n_novel.max(2) - 1) as f64;
        cfg.novel = (0..n_novel)
            .map(|i| {
                let t = i as f64 / steps;
                let alpha = (alpha_max.ln() + t * (alpha_min.ln() - alpha_max.ln())).exp();
                NovelClassSpec {
                    weights: dirichlet(&mut rng, n_base, alpha),
                    noise_std: 0.1,
                    samples: 120,
                }
            })
            .collect();
        Ok(cfg)
    }
}

/// Symmetric Dirichlet draw by normalized Gamma variates; falls back to a
/// single random vertex if every variate underflows.
fn dirichlet(rng: &mut impl Rng, n: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        w.iter_mut().for_each(|x| *x = 0.0);
        w[rng.random_range(0..n)] = 1.0;
    }
    w
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub base: FeatureSet,
    pub novel: FeatureSet,
    /// Base class centers, row per base class.
    pub centers: DMatrix<f64>,
    /// `(novel class id, mixture weights)` per novel class.
    pub truth: Vec<(ClassId, Vec<f64>)>,
}

/// Isotropic Gaussian clusters around seeded centers.
///
/// Centers are `center_scale * (B z)` with `B` a `d x latent_dim` Gaussian
/// basis (entries of variance `1/latent_dim`) and `z` entrywise `|N(0,1)|`, so
/// base classes are mutually positively similar, as rectified network features
/// are. Base class `c` has id `c`; novel class `i` has id
/// `NOVEL_ID_OFFSET + i`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let r = cfg.latent_dim;
    let basis_sd = (1.0 / r as f64).sqrt();
    let basis = DMatrix::from_fn(cfg.d, r, |_, _| {
        basis_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let mut centers = DMatrix::zeros(cfg.n_base, cfg.d);
    for c in 0..cfg.n_base {
        let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal).abs());
        let mu = &basis * z * cfg.center_scale;
        centers.set_row(c, &mu.transpose());
    }

    let noise = Normal::new(0.0, cfg.cluster_std)
        .map_err(|e| Error::invalid(format!("cluster_std: {e}")))?;
    let mut base = Vec::with_capacity(cfg.n_base * cfg.samples_per_base);
    for c in 0..cfg.n_base {
        for s in 0..cfg.samples_per_base {
            let x = (0..cfg.d)
                .map(|j| centers[(c, j)] + noise.sample(&mut rng))
                .collect();
            base.push(Record {
                class_id: c as ClassId,
                sample_id: s as u64,
                x,
            });
        }
    }

    let mut novel = Vec::new();
    let mut truth = Vec::with_capacity(cfg.novel.len());
    for (i, spec) in cfg.novel.iter().enumerate() {
        let id = NOVEL_ID_OFFSET + i as ClassId;
        let mut center = centers.tr_mul(&DVector::from_column_slice(&spec.weights));
        for v in center.iter_mut() {
            *v += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
        for s in 0..spec.samples {
            let x = (0..cfg.d)
                .map(|j| center[j] + noise.sample(&mut rng))
                .collect();
            novel.push(Record {
                class_id: id,
                sample_id: s as u64,
                x,
            });
        }
        truth.push((id, spec.weights.clone()));
    }

    Ok(SyntheticData {
        base: FeatureSet::new(cfg.d, base)?,
        novel: FeatureSet::new(cfg.d, novel)?,
        centers,
        truth,
    })
}

/// Seeded per-class holdout: `per_class` records of every class go to the
/// second set, the rest to the first. Record order within each set follows
/// the input.
pub fn holdout_per_class(
    fs: &FeatureSet,
    per_class: usize,
    seed: u64,
) -> Result<(FeatureSet, FeatureSet)> {
    let mut held = HashSet::new();
    for (i, id) in fs.class_ids().into_iter().enumerate() {
        let members: Vec<usize> = (0..fs.records.len())
            .filter(|&j| fs.records[j].class_id == id)
            .collect();
        if per_class >= members.len() {
            return Err(Error::invalid(format!(
                "cannot hold out {per_class} of the {} samples of class {id}",
                members.len()
            )));
        }
        let mut rng = seed::rng(seed::child(seed, i as u64));
        held.extend(
            rand::seq::index::sample(&mut rng, members.len(), per_class)
                .into_iter()
                .map(|k| members[k]),
        );
    }
    let (mut kept, mut out) = (Vec::new(), Vec::new());
    for (j, r) in fs.records.iter().enumerate() {
        if held.contains(&j) {
            out.push(r.clone())
        } else {
            kept.push(r.clone())
        }
    }
    Ok((
        FeatureSet {
            d: fs.d,
            records: kept,
        },
        FeatureSet {
            d: fs.d,
            records: out,
        },
    ))
}

/// Seeded split of one class into `k` training samples and the remainder.
pub fn split_kshot(
    fs: &FeatureSet,
    class_id: ClassId,
    k: usize,
    seed: u64,
) -> Result<(FeatureSet, FeatureSet)> {
    let mut members: Vec<&Record> = fs.class_records(class_id);
    if k == 0 || k >= members.len() {
        return Err(Error::invalid(format!(
            "k = {k} needs 1 <= k < class size ({}) for class {class_id}",
            members.len()
        )));
    }
    members.shuffle(&mut seed::rng(seed));
    let (train, test) = members.split_at(k);
    let collect = |rs: &[&Record]| FeatureSet {
        d: fs.d,
        records: rs.iter().map(|&r| r.clone()).collect(),
    };
    Ok((collect(train), collect(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(class_id: ClassId, sample_id: u64, x: &[f64]) -> Record {
        Record {
            class_id,
            sample_id,
            x: x.to_vec(),
        }
    }

    #[test]
    fn csv_single_record() {
        let fs = FeatureSet::from_csv(b"class_id,sample_id,f0,f1\n7,0,1.0,2.0\n").unwrap();
        assert_eq!(fs.d(), 2);
        assert_eq!(fs.len(), 1);
        assert_eq!(fs.class_ids(), vec![7]);
        assert_eq!(fs.records()[0].x, vec![1.0, 2.0]);
    }

    #[test]
    fn csv_dimension_mismatch_names_row() {
        let err =
            FeatureSet::from_csv(b"class_id,sample_id,f0\n1,0,1.0\n1,1,1.0,2.0\n").unwrap_err();
        match err {
            Error::Row { row, msg } => {
                assert_eq!(row, 3);
                assert!(msg.contains("dimension"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_bad_values() {
        let hdr = "class_id,sample_id,f0\n";
        for (body, needle) in [
            ("1,0,abc\n", "malformed value"),
            ("1,0,NaN\n", "non-finite"),
            ("1,0,inf\n", "non-finite"),
            ("x,0,1\n", "class_id"),
            ("1,0,1\n1,0,2\n", "duplicate"),
        ] {
            let err = FeatureSet::from_csv(format!("{hdr}{body}").as_bytes()).unwrap_err();
            assert!(err.to_string().contains(needle), "{body:?}: {err}");
        }
        assert!(FeatureSet::from_csv(b"").is_err());
        assert!(FeatureSet::from_csv(b"a,b,c\n").is_err());
    }

    #[test]
    fn binary_rejects_truncation_and_magic() {
        let fs = FeatureSet::new(2, vec![rec(1, 0, &[1.0, 2.0]), rec(1, 1, &[3.0, 4.0])]).unwrap();
        let bytes = fs.to_binary();
        assert_eq!(FeatureSet::from_binary(&bytes).unwrap(), fs);
        for cut in 0..bytes.len() {
            assert!(FeatureSet::from_binary(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            FeatureSet::from_binary(&bad),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn means_identity_and_midpoint() {
        let fs = FeatureSet::new(
            2,
            vec![
                rec(5, 0, &[3.0, -1.0]),
                rec(2, 0, &[0.0, 0.0]),
                rec(2, 1, &[2.0, 4.0]),
            ],
        )
        .unwrap();
        let m = class_means(&fs).unwrap();
        assert_eq!(m.class_ids, vec![2, 5]);
        assert_eq!(m.row(0).as_slice(), &[1.0, 2.0]);
        assert_eq!(m.row(1).as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn zero_mean_rejected() {
        let fs =
            FeatureSet::new(2, vec![rec(1, 0, &[1.0, -1.0]), rec(1, 1, &[-1.0, 1.0])]).unwrap();
        assert!(class_means(&fs).is_err());
    }

    #[test]
    fn synthetic_zero_noise_limits() {
        let mut cfg = SynthConfig::benchmark(5, 4, 1, 3);
        cfg.cluster_std = 1e-300;
        cfg.novel[0].weights = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        cfg.novel[0].noise_std = 0.0;
        let data = generate_synthetic(&cfg).unwrap();
        for r in data.base.records() {
            let c = r.class_id as usize;
            for j in 0..4 {
                assert!((r.x[j] - data.centers[(c, j)]).abs() < 1e-200);
            }
        }
        for r in data.novel.records() {
            for j in 0..4 {
                assert!((r.x[j] - data.centers[(3, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_rejects_unnormalized_weights() {
        let mut cfg = SynthConfig::benchmark(4, 4, 1, 3);
        cfg.novel[0].weights = vec![0.5, 0.5, 0.5, 0.0];
        assert!(generate_synthetic(&cfg).is_err());
        cfg.novel[0].weights = vec![0.25 + 1e-12, 0.25, 0.25, 0.25];
        assert!(generate_synthetic(&cfg).is_ok());
    }

    #[test]
    fn split_boundary_and_errors() {
        let records = (0..10).map(|s| rec(1, s, &[s as f64 + 1.0])).collect();
        let fs = FeatureSet::new(1, records).unwrap();
        let (train, test) = split_kshot(&fs, 1, 9, 0).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
        assert!(split_kshot(&fs, 1, 10, 0).is_err());
        assert!(split_kshot(&fs, 1, 0, 0).is_err());
        assert!(split_kshot(&fs, 2, 1, 0).is_err());

        let ids = |f: &FeatureSet| f.records().iter().map(|r| r.sample_id).collect::<Vec<_>>();
        let (a, _) = split_kshot(&fs, 1, 5, 1).unwrap();
        let (b, _) = split_kshot(&fs, 1, 5, 2).unwrap();
        assert_ne!(ids(&a), ids(&b));
    }

    #[test]
    fn holdout_takes_fixed_count_per_class() {
        let records = (0..12).map(|s| rec(s % 3, s, &[s as f64 + 1.0])).collect();
        let fs = FeatureSet::new(1, records).unwrap();
        let (kept, held) = holdout_per_class(&fs, 2, 5).unwrap();
        assert_eq!((kept.len(), held.len()), (6, 6));
        for id in 0..3 {
            assert_eq!(held.class_size(id), 2);
        }
        assert_eq!(holdout_per_class(&fs, 2, 5).unwrap().1, held);
        assert!(holdout_per_class(&fs, 4, 5).is_err());
    }
}
