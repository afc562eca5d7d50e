//! On-disk formats.
//!
//! All multi-byte integers and floats are little-endian.
//!
//! | file            | magic  | layout                                                     |
//! |-----------------|--------|------------------------------------------------------------|
//! | `gather_<id>.bin` | `FBG1` | `u32 T`, `u32 R`, `T*R` `f32`, time-major                 |
//! | `mask_<id>.bin`   | `FBM1` | `u32 T`, `u32 R`, `T*R` `u8`, time-major                  |
//! | `picks_<id>.bin`  | `FBP1` | `u32 R`, `R` `i32` times, `R` `u8` validity flags         |
//! | `prob_<id>.bin`   | `FBQ1` | `u32 T`, `u32 R`, `T*R` `f32` signal-class probability    |

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GatherImage, PickLine, SegmentationMask};

pub const GATHER_MAGIC: &[u8; 4] = b"FBG1";
pub const MASK_MAGIC: &[u8; 4] = b"FBM1";
pub const PICKS_MAGIC: &[u8; 4] = b"FBP1";
pub const PROB_MAGIC: &[u8; 4] = b"FBQ1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

fn read(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Self { path, buf, pos: 0 };
        let got = r.take(4)?;
        if got != magic {
            return Err(r.bad(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(r)
    }

    fn bad(&self, reason: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.bad(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.bad(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4], dims: &[usize], payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload);
    out.extend_from_slice(magic);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn encode_f32_grid(magic: &[u8; 4], grid: &Array2<f32>) -> Vec<u8> {
    let (t, r) = grid.dim();
    let mut out = header(magic, &[t, r], 4 * t * r);
    for v in grid.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_f32_grid(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<Array2<f32>> {
    let mut rd = Reader::new(path, bytes, magic)?;
    let (t, r) = (rd.u32()?, rd.u32()?);
    let body = rd.take(4 * t * r)?;
    rd.finish()?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((t, r), data).expect("length checked"))
}

pub fn encode_gather(gather: &GatherImage) -> Vec<u8> {
    encode_f32_grid(GATHER_MAGIC, &gather.amplitudes)
}

pub fn write_gather(path: &Path, gather: &GatherImage) -> Result<()> {
    write(path, &encode_gather(gather))
}

/// The file stores no sample rate; it comes from the manifest.
pub fn read_gather(path: &Path, sample_rate_ms: f64) -> Result<GatherImage> {
    let grid = decode_f32_grid(path, &read(path)?, GATHER_MAGIC)?;
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "non-finite amplitude".into(),
        });
    }
    Ok(GatherImage::new(grid, sample_rate_ms))
}

pub fn encode_mask(mask: &SegmentationMask) -> Vec<u8> {
    let (t, r) = mask.shape();
    let mut out = header(MASK_MAGIC, &[t, r], t * r);
    out.extend(mask.classes.iter().copied());
    out
}

pub fn write_mask(path: &Path, mask: &SegmentationMask) -> Result<()> {
    write(path, &encode_mask(mask))
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    let bytes = read(path)?;
    let mut rd = Reader::new(path, &bytes, MASK_MAGIC)?;
    let (t, r) = (rd.u32()?, rd.u32()?);
    let body = rd.take(t * r)?.to_vec();
    rd.finish()?;
    let classes = Array2::from_shape_vec((t, r), body).expect("length checked");
    SegmentationMask::new(classes).map_err(|e| rd.bad(e.to_string()))
}

pub fn encode_picks(picks: &PickLine) -> Vec<u8> {
    let r = picks.receivers();
    let mut out = header(PICKS_MAGIC, &[r], 5 * r);
    for &t in &picks.times {
        out.extend_from_slice(&(t as i32).to_le_bytes());
    }
    out.extend(picks.valid.iter().map(|&v| u8::from(v)));
    out
}

pub fn write_picks(path: &Path, picks: &PickLine) -> Result<()> {
    write(path, &encode_picks(picks))
}

pub fn read_picks(path: &Path) -> Result<PickLine> {
    let bytes = read(path)?;
    let mut rd = Reader::new(path, &bytes, PICKS_MAGIC)?;
    let r = rd.u32()?;
    let times_raw = rd.take(4 * r)?;
    let valid_raw = rd.take(r)?;
    rd.finish()?;
    let mut times = Vec::with_capacity(r);
    for c in times_raw.chunks_exact(4) {
        let t = i32::from_le_bytes(c.try_into().unwrap());
        if t < 0 {
            return Err(rd.bad(format!("negative pick time {t}")));
        }
        times.push(t as usize);
    }
    let valid = valid_raw.iter().map(|&v| v != 0).collect();
    Ok(PickLine { times, valid })
}

pub fn write_probabilities(path: &Path, signal_prob: &Array2<f32>) -> Result<()> {
    write(path, &encode_f32_grid(PROB_MAGIC, signal_prob))
}

pub fn read_probabilities(path: &Path) -> Result<Array2<f32>> {
    decode_f32_grid(path, &read(path)?, PROB_MAGIC)
}

/// CSV export: `receiver_index,time_index,time_ms,valid`.
pub fn picks_to_csv(picks: &PickLine, sample_rate_ms: f64) -> String {
    let mut out = String::from("receiver_index,time_index,time_ms,valid\n");
    for (r, (&t, &v)) in picks.times.iter().zip(&picks.valid).enumerate() {
        out.push_str(&format!(
            "{r},{t},{},{}\n",
            t as f64 * sample_rate_ms,
            u8::from(v)
        ));
    }
    out
}

pub fn write_picks_csv(path: &Path, picks: &PickLine, sample_rate_ms: f64) -> Result<()> {
    write(path, picks_to_csv(picks, sample_rate_ms).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Which synthetic condition a record was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Clean,
    Disconnected,
    Noisy,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Clean, Variant::Disconnected, Variant::Noisy];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Disconnected => "disconnected",
            Variant::Noisy => "noisy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub variant: Variant,
    pub time_steps: usize,
    pub receivers: usize,
    pub gather: String,
    pub mask: String,
    pub picks: String,
}

impl Record {
    pub fn new(
        index: usize,
        split: Split,
        variant: Variant,
        time_steps: usize,
        receivers: usize,
    ) -> Self {
        let id = format!("{index:06}");
        Self {
            gather: format!("gather_{id}.bin"),
            mask: format!("mask_{id}.bin"),
            picks: format!("picks_{id}.bin"),
            id,
            split,
            variant,
            time_steps,
            receivers,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate_ms: f64,
    pub seed: u64,
    /// SHA-256 of the generator configuration JSON.
    pub config_hash: String,
    pub splits: SplitSizes,
    pub config: serde_json::Value,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Format {
            path: dir.join(MANIFEST_FILE),
            reason: format!("unsupported manifest version {}", m.version),
        });
    }
    Ok(m)
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

/// A record loaded into memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: Record,
    pub gather: GatherImage,
    pub mask: SegmentationMask,
    pub picks: PickLine,
}

pub fn load_sample(dir: &Path, manifest: &DatasetManifest, record: &Record) -> Result<Sample> {
    Ok(Sample {
        gather: read_gather(&dir.join(&record.gather), manifest.sample_rate_ms)?,
        mask: read_mask(&dir.join(&record.mask))?,
        picks: read_picks(&dir.join(&record.picks))?,
        record: record.clone(),
    })
}
