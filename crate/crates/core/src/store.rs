//! Multiview INR datasets and their on-disk format.
//!
//! A dataset directory holds `manifest.toml` (architecture, generation
//! parameters, toolkit version) and `weights.wsds`, a little-endian blob:
//!
//! ```text
//! "WSDS" | version u32 | sample count u32
//! per sample: object_id u32 | view_id u32 | label index u32
//!             per tensor (W_1, b_1, ..., W_M, b_M): rank u32 | dims u32.. | f32 data
//! CRC32 (IEEE) of every preceding byte
//! ```
//!
//! Single samples with soft labels (MixUp outputs) use the same tensor
//! encoding under the magic "WSSP"; see [`encode_sample`].

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnrun::{fit_inr, TrainConfig};
use crate::seed::derive_seed;
use crate::signals::{make_signal, ShapeKind, Signal};
use crate::weights::{validate, LabeledSample, Matrix, MlpSpec, WeightSpaceVector};
use crate::TOOLKIT_VERSION;

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_MAGIC: [u8; 4] = *b"WSDS";
pub const SAMPLE_MAGIC: [u8; 4] = *b"WSSP";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WEIGHTS_FILE: &str = "weights.wsds";

/// Seed path component for an object's signal; view ids never reach it.
const SIGNAL_STREAM: u64 = u64::MAX;

/// How a dataset was generated. Together with the spec this determines
/// every weight bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub num_objects: usize,
    pub views_per_object: usize,
    /// Object `i` uses `kinds[i % kinds.len()]`.
    pub kinds: Vec<ShapeKind>,
    pub resolution: usize,
    pub root_seed: u64,
    /// Fit settings; `fit.seed` is replaced per view by a derived seed.
    pub fit: TrainConfig,
}

impl GenerationParams {
    pub fn new(num_objects: usize, views_per_object: usize, resolution: usize, root_seed: u64, fit: TrainConfig) -> Self {
        Self { num_objects, views_per_object, kinds: ShapeKind::ALL.to_vec(), resolution, root_seed, fit }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_objects == 0 || self.views_per_object == 0 {
            return Err(Error::InvalidArgument("need at least one object and one view".to_string()));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("no signal kinds given".to_string()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidArgument(format!("resolution must be >= 2, got {}", self.resolution)));
        }
        self.fit.validate()
    }

    /// The target signal shared by every view of `object`.
    pub fn signal(&self, object: usize) -> Signal {
        let kind = self.kinds[object % self.kinds.len()];
        make_signal(kind, self.resolution, derive_seed(self.root_seed, &[object as u64, SIGNAL_STREAM]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub toolkit_version: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub spec: MlpSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationParams>,
    /// Pipeline applied after generation, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<crate::augment::AugmentPipeline>,
}

/// Weight vectors with one-hot labels and their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct InrDataset {
    spec: MlpSpec,
    samples: Vec<LabeledSample>,
    manifest: Manifest,
}

impl InrDataset {
    /// Checks that every sample validates against `spec`, labels are one-hot
    /// over `num_classes`, and `(object_id, view_id)` pairs are unique.
    pub fn new(spec: MlpSpec, samples: Vec<LabeledSample>, num_classes: usize) -> Result<Self> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            toolkit_version: TOOLKIT_VERSION.to_string(),
            num_samples: samples.len(),
            num_classes,
            spec: spec.clone(),
            generation: None,
            augmentation: None,
        };
        Self::with_manifest(samples, manifest)
    }

    fn with_manifest(samples: Vec<LabeledSample>, manifest: Manifest) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            validate(&s.v, &manifest.spec)?;
            if s.num_classes() != manifest.num_classes || one_hot_index(s.label()).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "sample ({}, {}) needs a one-hot label over {} classes, got {:?}",
                    s.object_id,
                    s.view_id,
                    manifest.num_classes,
                    s.label()
                )));
            }
            if !seen.insert((s.object_id, s.view_id)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate sample (object {}, view {})",
                    s.object_id, s.view_id
                )));
            }
        }
        Ok(Self { spec: manifest.spec.clone(), samples, manifest })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    /// Keeps the samples matching `keep`, in order.
    pub fn filter(&self, keep: impl Fn(&LabeledSample) -> bool) -> Self {
        let samples: Vec<_> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        let manifest = Manifest { num_samples: samples.len(), ..self.manifest.clone() };
        Self { spec: self.spec.clone(), samples, manifest }
    }

    /// Replaces every sample's weights, recording `pipeline` in the manifest.
    pub fn map_weights(
        &self,
        pipeline: Option<&crate::augment::AugmentPipeline>,
        f: impl Fn(usize, &LabeledSample) -> Result<WeightSpaceVector> + Sync,
    ) -> Result<Self> {
        let samples = self
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| Ok(s.with_v(f(i, s)?)))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest { augmentation: pipeline.cloned(), ..self.manifest.clone() };
        Self::with_manifest(samples, manifest)
    }
}

fn one_hot_index(label: &[f32]) -> Option<usize> {
    let hot = label.iter().position(|&y| y == 1.0)?;
    label
        .iter()
        .enumerate()
        .all(|(i, &y)| if i == hot { true } else { y == 0.0 })
        .then_some(hot)
}

/// Fits `views_per_object` INRs to each object's signal, in parallel. The
/// fit for `(object, view)` is seeded by `derive_seed(root_seed, [object,
/// view])`, so the result does not depend on scheduling.
pub fn build_dataset(spec: &MlpSpec, params: &GenerationParams) -> Result<InrDataset> {
    params.validate()?;
    if spec.input_dim() != 2 || spec.output_dim() != 1 {
        return Err(Error::Dimension(format!(
            "shape signals map R^2 -> R, spec maps R^{} -> R^{}",
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..params.num_objects)
        .flat_map(|o| (0..params.views_per_object).map(move |v| (o, v)))
        .collect();
    let fitted: Vec<Result<LabeledSample>> = jobs
        .par_iter()
        .map(|&(object, view)| {
            let signal = params.signal(object);
            let kind = params.kinds[object % params.kinds.len()];
            let cfg = TrainConfig { seed: derive_seed(params.root_seed, &[object as u64, view as u64]), ..params.fit.clone() };
            let v = fit_inr(&signal, spec, &cfg).map_err(|e| Error::FitFailed { object, view, source: Box::new(e) })?;
            LabeledSample::one_hot(v, kind.class_id(), ShapeKind::ALL.len(), object as u32, view as u32)
        })
        .collect();
    let samples = fitted.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        num_samples: samples.len(),
        num_classes: ShapeKind::ALL.len(),
        spec: spec.clone(),
        generation: Some(params.clone()),
        augmentation: None,
    };
    InrDataset::with_manifest(samples, manifest)
}

/// Regenerates a dataset from the generation record in its manifest.
pub fn rebuild(manifest: &Manifest) -> Result<InrDataset> {
    let params = manifest
        .generation
        .as_ref()
        .ok_or_else(|| Error::Manifest("no generation record; cannot rebuild".to_string()))?;
    build_dataset(&manifest.spec, params)
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_tensors(out: &mut Vec<u8>, v: &WeightSpaceVector) {
    for (w, b) in v.weights().iter().zip(v.biases()) {
        put_u32(out, 2);
        put_u32(out, w.rows() as u32);
        put_u32(out, w.cols() as u32);
        for x in w.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        put_u32(out, 1);
        put_u32(out, b.len() as u32);
        for x in b {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn finish(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

/// The WSDS blob for a dataset.
pub fn encode_dataset(d: &InrDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, d.samples.len() as u32);
    for s in &d.samples {
        put_u32(&mut out, s.object_id);
        put_u32(&mut out, s.view_id);
        put_u32(&mut out, one_hot_index(s.label()).expect("dataset labels are one-hot") as u32);
        put_tensors(&mut out, &s.v);
    }
    finish(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!("{what} at byte {} needs {n} bytes, {} remain", self.pos, self.buf.len() - self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Malformed(format!("{what}: size overflow")))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if found != magic {
            return Err(Error::BadMagic { found, expected: magic });
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        Ok(())
    }

    fn dims(&mut self, want_rank: u32, what: &str) -> Result<Vec<usize>> {
        let rank = self.u32(what)?;
        if rank != want_rank {
            return Err(Error::Malformed(format!("{what}: rank {rank}, expected {want_rank}")));
        }
        (0..rank).map(|_| self.u32(what).map(|d| d as usize)).collect()
    }

    /// Reads `layers` (weight, bias) pairs and chains them into a vector.
    fn tensors(&mut self, layers: usize) -> Result<WeightSpaceVector> {
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 1..=layers {
            let what = format!("W_{l}");
            let d = self.dims(2, &what)?;
            let n = d[0].checked_mul(d[1]).ok_or_else(|| Error::Malformed(format!("{what}: size overflow")))?;
            weights.push(Matrix::new(d[0], d[1], self.f32s(n, &what)?)?);
            let what = format!("b_{l}");
            let d = self.dims(1, &what)?;
            biases.push(self.f32s(d[0], &what)?);
        }
        WeightSpaceVector::new(weights, biases).map_err(|e| Error::Malformed(e.to_string()))
    }

    /// Verifies the trailing CRC covers everything before it.
    fn checksum(&mut self) -> Result<()> {
        let body = self.pos;
        let stored = self.u32("checksum")?;
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!("{} trailing bytes after checksum", self.buf.len() - self.pos)));
        }
        let computed = crc32fast::hash(&self.buf[..body]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(())
    }
}

/// Byte length of a WSDS blob with `count` samples of architecture `spec`.
fn expected_len(spec: &MlpSpec, count: usize) -> usize {
    let dims = spec.dims();
    let per_sample: usize = 12 + (0..spec.num_layers())
        .map(|l| (4 + 8 + 4 * dims[l + 1] * dims[l]) + (4 + 4 + 4 * dims[l + 1]))
        .sum::<usize>();
    12 + count * per_sample + 4
}

/// Parses a WSDS blob against its manifest. The checksum is verified
/// before any payload is interpreted.
pub fn decode_dataset(bytes: &[u8], manifest: &Manifest) -> Result<InrDataset> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: manifest.format_version, expected: FORMAT_VERSION });
    }
    let mut r = Reader::new(bytes);
    r.header(DATASET_MAGIC)?;
    let count = r.u32("sample count")? as usize;
    if count != manifest.num_samples {
        return Err(Error::Manifest(format!(
            "manifest lists {} samples, weight file has {count}",
            manifest.num_samples
        )));
    }
    let want = expected_len(&manifest.spec, count);
    if bytes.len() < want {
        return Err(Error::Truncated(format!("weight file has {} bytes, expected {want}", bytes.len())));
    }
    if bytes.len() > want {
        return Err(Error::Malformed(format!("weight file has {} bytes, expected {want}", bytes.len())));
    }
    let mut tail = Reader { buf: bytes, pos: want - 4 };
    tail.checksum()?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let object_id = r.u32("object id")?;
        let view_id = r.u32("view id")?;
        let class = r.u32("label")? as usize;
        let v = r.tensors(manifest.spec.num_layers())?;
        samples.push(LabeledSample::one_hot(v, class, manifest.num_classes, object_id, view_id).map_err(|e| Error::Malformed(e.to_string()))?);
    }
    InrDataset::with_manifest(samples, manifest.clone())
}

pub fn manifest_to_string(m: &Manifest) -> Result<String> {
    toml::to_string(m).map_err(|e| Error::Manifest(e.to_string()))
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
}

/// Writes `manifest.toml` and `weights.wsds` into `dir`, creating it.
pub fn save(d: &InrDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest_to_string(&d.manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, encode_dataset(d)).map_err(|e| Error::io(&wpath, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<InrDataset> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = parse_manifest(&text)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    decode_dataset(&bytes, &manifest)
}

/// A single sample with a soft label:
/// `"WSSP" | version | object_id | view_id | C | C x f32 label | layer count
/// | tensors as in WSDS | CRC32`.
pub fn encode_sample(s: &LabeledSample) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&SAMPLE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, s.object_id);
    put_u32(&mut out, s.view_id);
    put_u32(&mut out, s.num_classes() as u32);
    for y in s.label() {
        out.extend_from_slice(&y.to_le_bytes());
    }
    put_u32(&mut out, s.v.num_layers() as u32);
    put_tensors(&mut out, &s.v);
    finish(out)
}

pub fn decode_sample(bytes: &[u8]) -> Result<LabeledSample> {
    let mut r = Reader::new(bytes);
    r.header(SAMPLE_MAGIC)?;
    let object_id = r.u32("object id")?;
    let view_id = r.u32("view id")?;
    let classes = r.u32("class count")? as usize;
    let label = r.f32s(classes, "label")?;
    let layers = r.u32("layer count")? as usize;
    let v = r.tensors(layers)?;
    r.checksum()?;
    LabeledSample::new(v, label, object_id, view_id).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn save_sample(s: &LabeledSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_sample(s)).map_err(|e| Error::io(path, e))
}

pub fn load_sample(path: impl AsRef<Path>) -> Result<LabeledSample> {
    let path = path.as_ref();
    decode_sample(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
