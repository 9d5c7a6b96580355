//! Binary containers for models and features.
//!
//! Every container starts with a 4-byte magic and a little-endian `u32`
//! format version, followed by `u32` shape fields and row-major
//! little-endian payloads:
//!
//! | magic  | contents                        | shape fields        | payload                                   |
//! |--------|---------------------------------|---------------------|-------------------------------------------|
//! | `LAGM` | [`DiagonalGmm`]                 | K, D                | weights, means, stds as f64               |
//! | `LAGV` | [`SupervectorBundle`]           | method u8, regions, K, D | values as f32                        |
//! | `LAGP` | [`PatchSet`]                    | T, D                | features f32, then coords f32 (T x 2)     |
//! | `LAGC` | [`PcaModel`]                    | input_dim, output_dim | mean f64, basis f64                     |
//! | `LAGN` | [`NapModel`]                    | dim, rank           | mean f64, nuisance basis f64              |
//!
//! Files are written to a temporary name in the target directory and renamed
//! into place, so readers never observe a partial artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::classify::NapModel;
use crate::error::{Error, Result};
use crate::gmm::DiagonalGmm;
use crate::pipeline::{PatchSet, PcaModel};
use crate::vectorize::{Method, SupervectorBundle};

pub const FORMAT_VERSION: u32 = 1;

pub const MODEL_MAGIC: [u8; 4] = *b"LAGM";
pub const VECTOR_MAGIC: [u8; 4] = *b"LAGV";
pub const PATCH_MAGIC: [u8; 4] = *b"LAGP";
pub const PCA_MAGIC: [u8; 4] = *b"LAGC";
pub const NAP_MAGIC: [u8; 4] = *b"LAGN";

struct Encoder(Vec<u8>);

impl Encoder {
    fn new(magic: [u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(&magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self(buf)
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn f32s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.0.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn open(buf: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut d = Self { buf, pos: 0 };
        let found: [u8; 4] = d.take(4)?.try_into().expect("4 bytes");
        if found != magic {
            return Err(Error::BadMagic {
                expected: magic,
                found,
            });
        }
        let version = d.u32()? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(d)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.buf.len() {
            return Err(Error::Truncated);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn encode_gmm(gmm: &DiagonalGmm) -> Result<Vec<u8>> {
    let mut e = Encoder::new(MODEL_MAGIC);
    e.u32(gmm.components())?;
    e.u32(gmm.dim())?;
    e.f64s(gmm.weights().iter());
    e.f64s(gmm.means().iter());
    e.f64s(gmm.stds().iter());
    Ok(e.0)
}

pub fn decode_gmm(buf: &[u8]) -> Result<DiagonalGmm> {
    let mut d = Decoder::open(buf, MODEL_MAGIC)?;
    let (k, dim) = (d.u32()?, d.u32()?);
    let weights = Array1::from(d.f64s(k)?);
    let means = matrix(k, dim, d.f64s(k * dim)?)?;
    let stds = matrix(k, dim, d.f64s(k * dim)?)?;
    d.finish()?;
    DiagonalGmm::new(weights, means, stds)
}

pub fn encode_supervector(v: &SupervectorBundle) -> Result<Vec<u8>> {
    let mut e = Encoder::new(VECTOR_MAGIC);
    e.u8(v.method.tag());
    e.u32(v.regions)?;
    e.u32(v.components)?;
    e.u32(v.dim)?;
    e.f32s(v.values.iter());
    Ok(e.0)
}

pub fn decode_supervector(buf: &[u8]) -> Result<SupervectorBundle> {
    let mut d = Decoder::open(buf, VECTOR_MAGIC)?;
    let tag = d.u8()?;
    let method = Method::from_tag(tag).ok_or_else(|| Error::Malformed(format!("unknown method tag {tag}")))?;
    let (regions, k, dim) = (d.u32()?, d.u32()?, d.u32()?);
    let values = d.f32s(regions * method.block_len(k, dim))?;
    d.finish()?;
    SupervectorBundle::new(method, k, dim, regions, values)
}

pub fn encode_patches(p: &PatchSet) -> Result<Vec<u8>> {
    let mut e = Encoder::new(PATCH_MAGIC);
    e.u32(p.len())?;
    e.u32(p.dim())?;
    e.f32s(p.features().iter());
    e.f32s(p.coords().iter());
    Ok(e.0)
}

pub fn decode_patches(buf: &[u8]) -> Result<PatchSet> {
    let mut d = Decoder::open(buf, PATCH_MAGIC)?;
    let (t, dim) = (d.u32()?, d.u32()?);
    let features = matrix(t, dim, d.f32s(t * dim)?)?;
    let coords = matrix(t, 2, d.f32s(t * 2)?)?;
    d.finish()?;
    PatchSet::new(features, coords)
}

pub fn encode_pca(p: &PcaModel) -> Result<Vec<u8>> {
    let mut e = Encoder::new(PCA_MAGIC);
    e.u32(p.input_dim())?;
    e.u32(p.output_dim())?;
    e.f64s(p.mean().iter());
    e.f64s(p.basis().iter());
    Ok(e.0)
}

pub fn decode_pca(buf: &[u8]) -> Result<PcaModel> {
    let mut d = Decoder::open(buf, PCA_MAGIC)?;
    let (input, output) = (d.u32()?, d.u32()?);
    let mean = Array1::from(d.f64s(input)?);
    let basis = matrix(output, input, d.f64s(input * output)?)?;
    d.finish()?;
    PcaModel::new(mean, basis)
}

pub fn encode_nap(n: &NapModel) -> Result<Vec<u8>> {
    let mut e = Encoder::new(NAP_MAGIC);
    e.u32(n.dim())?;
    e.u32(n.rank())?;
    e.f64s(n.mean().iter());
    e.f64s(n.nuisance_basis().iter());
    Ok(e.0)
}

pub fn decode_nap(buf: &[u8]) -> Result<NapModel> {
    let mut d = Decoder::open(buf, NAP_MAGIC)?;
    let (dim, rank) = (d.u32()?, d.u32()?);
    let mean = Array1::from(d.f64s(dim)?);
    let basis = matrix(rank, dim, d.f64s(rank * dim)?)?;
    d.finish()?;
    NapModel::new(mean, basis)
}

/// Writes `bytes` to `path` through a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

/// Training metadata stored next to a model as `<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub relevance: f64,
    pub variance_floor: f64,
    pub iterations: usize,
    pub training_patches: usize,
    pub final_log_likelihood: f64,
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut name = model_path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn save_gmm(path: &Path, gmm: &DiagonalGmm, meta: Option<&ModelMeta>) -> Result<()> {
    write_atomic(path, &encode_gmm(gmm)?)?;
    if let Some(meta) = meta {
        write_atomic(&sidecar_path(path), serde_json::to_string_pretty(meta)?.as_bytes())?;
    }
    Ok(())
}

pub fn load_gmm(path: &Path) -> Result<DiagonalGmm> {
    decode_gmm(&read_file(path)?)
}

pub fn load_gmm_meta(path: &Path) -> Result<Option<ModelMeta>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(side)?)?))
}

pub fn save_supervector(path: &Path, v: &SupervectorBundle) -> Result<()> {
    write_atomic(path, &encode_supervector(v)?)
}

pub fn load_supervector(path: &Path) -> Result<SupervectorBundle> {
    decode_supervector(&read_file(path)?)
}

pub fn save_patches(path: &Path, p: &PatchSet) -> Result<()> {
    write_atomic(path, &encode_patches(p)?)
}

pub fn load_patches(path: &Path) -> Result<PatchSet> {
    decode_patches(&read_file(path)?)
}

pub fn save_pca(path: &Path, p: &PcaModel) -> Result<()> {
    write_atomic(path, &encode_pca(p)?)
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    decode_pca(&read_file(path)?)
}

pub fn save_nap(path: &Path, n: &NapModel) -> Result<()> {
    write_atomic(path, &encode_nap(n)?)
}

pub fn load_nap(path: &Path) -> Result<NapModel> {
    decode_nap(&read_file(path)?)
}

/// Human-readable summary of any container, chosen by its magic bytes.
pub fn describe_file(path: &Path) -> Result<String> {
    let buf = read_file(path)?;
    let magic: [u8; 4] = buf
        .get(..4)
        .ok_or(Error::Truncated)?
        .try_into()
        .expect("4 bytes");
    let text = match magic {
        MODEL_MAGIC => {
            let m = decode_gmm(&buf)?;
            let (wmin, wmax) = m
                .weights()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(*w), hi.max(*w)));
            let mut s = format!(
                "LAGM mixture\n  K = {}\n  D = {}\n  weight range = [{wmin:.6e}, {wmax:.6e}]\n  min std = {:.6e}\n",
                m.components(),
                m.dim(),
                m.min_std()
            );
            if let Some(meta) = load_gmm_meta(path)? {
                s.push_str(&format!(
                    "  variance floor = {:.3e} (min std >= floor: {})\n  seed = {}\n  iterations = {}\n",
                    meta.variance_floor,
                    m.min_std() >= meta.variance_floor,
                    meta.seed,
                    meta.iterations
                ));
            }
            s
        }
        VECTOR_MAGIC => {
            let v = decode_supervector(&buf)?;
            let norm = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            format!(
                "LAGV supervector\n  method = {}\n  regions = {}\n  K = {}\n  D = {}\n  length = {}\n  L2 norm = {norm:.6e}\n",
                v.method,
                v.regions,
                v.components,
                v.dim,
                v.len()
            )
        }
        PATCH_MAGIC => {
            let p = decode_patches(&buf)?;
            format!("LAGP patch set\n  T = {}\n  D = {}\n", p.len(), p.dim())
        }
        PCA_MAGIC => {
            let p = decode_pca(&buf)?;
            format!("LAGC PCA model\n  input dim = {}\n  output dim = {}\n", p.input_dim(), p.output_dim())
        }
        NAP_MAGIC => {
            let n = decode_nap(&buf)?;
            format!("LAGN NAP model\n  dim = {}\n  rank = {}\n", n.dim(), n.rank())
        }
        other => {
            return Err(Error::Malformed(format!(
                "unrecognized magic {:?}",
                String::from_utf8_lossy(&other)
            )))
        }
    };
    Ok(text)
}
