//! Sample container, dataset manifest and splits.
//!
//! Container layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `SOSD` |
//! | 2 | format version (u16) |
//! | 2 | n_channels (u16) |
//! | 4 | rx_samples (u32) |
//! | 2 | gt_h (u16) |
//! | 2 | gt_w (u16) |
//! | 4 | flags (u32) |
//! | 8 | seed (u64) |
//! | 8 n_channels rx_samples | RF, f64, row-major by channel |
//! | 4 gt_h gt_w | GT, f32, row-major |

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phantom::{GeneratorParams, GeneratorTag};
use crate::rng::{self, Stream};
use crate::solver::Provenance;

pub const MAGIC: &[u8; 4] = b"SOSD";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub flags: u32,
    pub seed: u64,
    /// `n_channels x rx_samples`; may be empty.
    pub rf: Array2<f64>,
    /// `gt_h x gt_w`; may be empty.
    pub gt: Array2<f32>,
}

fn narrow<T: TryFrom<usize>>(v: usize, field: &'static str) -> Result<T> {
    T::try_from(v).map_err(|_| Error::Format {
        field,
        detail: format!("{v} does not fit the header field"),
    })
}

pub fn encode(record: &SampleRecord) -> Result<Vec<u8>> {
    let (nc, ns) = record.rf.dim();
    let (gh, gw) = record.gt.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * nc * ns + 4 * gh * gw);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&narrow::<u16>(nc, "n_channels")?.to_le_bytes());
    out.extend_from_slice(&narrow::<u32>(ns, "rx_samples")?.to_le_bytes());
    out.extend_from_slice(&narrow::<u16>(gh, "gt_h")?.to_le_bytes());
    out.extend_from_slice(&narrow::<u16>(gw, "gt_w")?.to_le_bytes());
    out.extend_from_slice(&record.flags.to_le_bytes());
    out.extend_from_slice(&record.seed.to_le_bytes());
    for v in record.rf.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in record.gt.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SampleRecord> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            section: "header",
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: format!("expected {:?}, found {:?}", MAGIC, &bytes[0..4]),
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let nc = u16_at(6) as usize;
    let ns = u32_at(8) as usize;
    let gh = u16_at(12) as usize;
    let gw = u16_at(14) as usize;
    let flags = u32_at(16);
    let seed = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));

    let rf_len = 8 * nc * ns;
    let gt_len = 4 * gh * gw;
    let body = &bytes[HEADER_LEN..];
    if body.len() < rf_len {
        return Err(Error::Truncated {
            section: "rf payload",
            needed: rf_len,
            available: body.len(),
        });
    }
    if body.len() < rf_len + gt_len {
        return Err(Error::Truncated {
            section: "gt payload",
            needed: gt_len,
            available: body.len() - rf_len,
        });
    }
    if body.len() > rf_len + gt_len {
        return Err(Error::Format {
            field: "payload size",
            detail: format!(
                "{} trailing bytes after the declared payloads",
                body.len() - rf_len - gt_len
            ),
        });
    }
    let rf: Vec<f64> = body[..rf_len]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let gt: Vec<f32> = body[rf_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(SampleRecord {
        flags,
        seed,
        rf: Array2::from_shape_vec((nc, ns), rf).expect("sized above"),
        gt: Array2::from_shape_vec((gh, gw), gt).expect("sized above"),
    })
}

pub fn write_sample(path: impl AsRef<Path>, record: &SampleRecord) -> Result<()> {
    fs::write(path, encode(record)?)?;
    Ok(())
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<SampleRecord> {
    decode(&fs::read(path)?)
}

/// Save a boolean mask as an 8-bit PNG (0 / 255).
pub fn write_mask_png(path: impl AsRef<Path>, mask: &Array2<bool>) -> Result<()> {
    let (h, w) = mask.dim();
    let data = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::input("mask buffer size mismatch"))?;
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_vec(
        (h as usize, w as usize),
        img.into_raw().into_iter().map(|v| v >= 128).collect(),
    )
    .expect("image dimensions"))
}

/// Map in `[lo, hi]` to an 8-bit PNG.
pub fn write_map_png(path: impl AsRef<Path>, values: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (h, w) = values.dim();
    let data = values
        .iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::input("map buffer size mismatch"))?;
    img.save(path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Container path relative to the manifest.
    pub file: String,
    pub seed: u64,
    pub generator_tag: GeneratorTag,
    pub params: GeneratorParams,
    #[serde(default)]
    pub provenance: Provenance,
    /// Inclusion mask on the output lattice, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
    /// Free-form per-sample annotations (corruption targets, sweep case).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub tags: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn new(config: serde_json::Value) -> Self {
        DatasetManifest {
            manifest_version: MANIFEST_VERSION,
            config_hash: config_hash(&config),
            config,
            samples: Vec::new(),
        }
    }

    /// Path of a manifest-relative file.
    pub fn resolve(dir: impl AsRef<Path>, file: &str) -> PathBuf {
        dir.as_ref().join(file)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(
            dir.as_ref().join(MANIFEST_FILE),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    /// Read `manifest.json` from `dir` (or the file itself) and check the hash.
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let (file, dir) = if path.is_dir() {
            (path.join(MANIFEST_FILE), path.to_path_buf())
        } else {
            (
                path.to_path_buf(),
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            )
        };
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&file)?)?;
        manifest.verify_hash()?;
        Ok((manifest, dir))
    }

    pub fn verify_hash(&self) -> Result<()> {
        let actual = config_hash(&self.config);
        if actual != self.config_hash {
            return Err(Error::Format {
                field: "config_hash",
                detail: format!("manifest says {}, config hashes to {actual}", self.config_hash),
            });
        }
        Ok(())
    }

    /// Every listed file exists and decodes.
    pub fn check_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        for e in &self.samples {
            read_sample(Self::resolve(&dir, &e.file))?;
            if let Some(m) = &e.mask_file {
                read_mask_png(Self::resolve(&dir, m))?;
            }
        }
        Ok(())
    }

    fn with_samples(&self, samples: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            samples,
            ..self.clone()
        }
    }
}

/// Hex SHA-256 of the JSON text of `config` with object keys sorted.
pub fn config_hash(config: &serde_json::Value) -> String {
    // serde_json's default map is ordered by key, so this text is canonical
    let text = serde_json::to_string(config).expect("JSON values always serialize");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

fn partition(manifest: &DatasetManifest, n_train: usize, n_val: usize, seed: u64) -> Splits {
    let mut order: Vec<usize> = (0..manifest.samples.len()).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Split));
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        manifest.with_samples(idx.iter().map(|&i| manifest.samples[i].clone()).collect())
    };
    Splits {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    }
}

/// Seeded partition by fractions; the test split takes the remainder.
pub fn split_dataset(manifest: &DatasetManifest, train_frac: f64, val_frac: f64, seed: u64) -> Result<Splits> {
    if !(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0 + 1e-12) {
        return Err(Error::input(format!(
            "split fractions must be non-negative and sum to at most 1 (train {train_frac}, val {val_frac})"
        )));
    }
    let n = manifest.samples.len();
    let n_train = ((train_frac * n as f64).round() as usize).min(n);
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
    Ok(partition(manifest, n_train, n_val, seed))
}

pub const PAPER_TEST_CASES: usize = 150;
pub const PAPER_TRAIN_FRACTION: f64 = 0.9;

/// Hold out 150 test cases, then split the rest 90/10 into train and validation.
pub fn split_paper(manifest: &DatasetManifest, seed: u64) -> Result<Splits> {
    let n = manifest.samples.len();
    if n < PAPER_TEST_CASES {
        return Err(Error::input(format!(
            "the paper split needs at least {PAPER_TEST_CASES} samples, got {n}"
        )));
    }
    let pool = n - PAPER_TEST_CASES;
    let n_train = (PAPER_TRAIN_FRACTION * pool as f64).round() as usize;
    Ok(partition(manifest, n_train, pool - n_train, seed))
}
