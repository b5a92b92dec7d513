//! Prediction pools, labeled-set statistics and their on-disk formats.
//!
//! A pool file is JSONL. The first line is a header
//! `{"format_version": 1, "feature_dim": d, "num_classes": C}` and every
//! following non-blank line is one image:
//! `{"image_id": "...", "instances": [{"category": c, "score": p, "feature": [..], "bbox": [x, y, w, h]}]}`.
//! Features are stored as 32-bit floats and widened to `f64` on load.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub category: usize,
    pub score: f64,
    pub feature: Vec<f64>,
    pub bbox: Option<[f64; 4]>,
}

impl InstancePrediction {
    pub fn new(category: usize, score: f64, feature: Vec<f64>) -> Self {
        Self {
            category,
            score,
            feature,
            bbox: None,
        }
    }
}

/// One image's post-NMS predictions. An instance's index is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub image_id: String,
    pub instances: Vec<InstancePrediction>,
}

impl ImagePrediction {
    pub fn new(image_id: impl Into<String>, instances: Vec<InstancePrediction>) -> Self {
        Self {
            image_id: image_id.into(),
            instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub images: Vec<ImagePrediction>,
}

impl Pool {
    /// Builds a pool after checking every image against `feature_dim` and
    /// `num_classes`.
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        images: Vec<ImagePrediction>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if images.is_empty() {
            return Err(Error::EmptyPool);
        }
        let mut seen = HashSet::with_capacity(images.len());
        for (i, image) in images.iter().enumerate() {
            let line = i as u64 + 2;
            if !seen.insert(image.image_id.as_str()) {
                return Err(Error::DuplicateImageId {
                    line,
                    image_id: image.image_id.clone(),
                });
            }
            for inst in &image.instances {
                check_instance(line, &image.image_id, feature_dim, num_classes, inst)?;
            }
        }
        Ok(Self {
            feature_dim,
            num_classes,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImagePrediction> {
        self.images.iter().find(|im| im.image_id == image_id)
    }

    /// Returns a copy of the pool with every feature multiplied by `factor`.
    pub fn scaled_features(&self, factor: f64) -> Pool {
        let mut out = self.clone();
        for image in &mut out.images {
            for inst in &mut image.instances {
                for v in &mut inst.feature {
                    *v *= factor;
                }
            }
        }
        out
    }

    /// Keeps the images for which `keep` returns true, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&ImagePrediction) -> bool) -> Result<Pool> {
        let images: Vec<_> = self.images.iter().filter(|im| keep(im)).cloned().collect();
        if images.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(Pool {
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            images,
        })
    }

    pub fn total_instances(&self) -> usize {
        self.images.iter().map(|im| im.instances.len()).sum()
    }
}

fn check_instance(
    line: u64,
    image_id: &str,
    feature_dim: usize,
    num_classes: usize,
    inst: &InstancePrediction,
) -> Result<()> {
    if inst.feature.len() != feature_dim {
        return Err(Error::DimensionMismatch {
            line,
            image_id: image_id.to_string(),
            expected: feature_dim,
            found: inst.feature.len(),
        });
    }
    if inst.category >= num_classes {
        return Err(Error::CategoryOutOfRange {
            line,
            image_id: image_id.to_string(),
            category: inst.category as i64,
            num_classes,
        });
    }
    if !(0.0..=1.0).contains(&inst.score) {
        return Err(Error::ScoreOutOfRange {
            line,
            image_id: image_id.to_string(),
            score: inst.score,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    feature_dim: usize,
    num_classes: usize,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    image_id: String,
    instances: Vec<RawInstance>,
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    category: i64,
    score: f64,
    feature: Vec<f32>,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    image_id: &'a str,
    instances: Vec<OutInstance>,
}

#[derive(Serialize)]
struct OutInstance {
    category: usize,
    score: f64,
    feature: Vec<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
}

/// A loaded pool plus the number of instances dropped by the score floor.
#[derive(Debug, Clone)]
pub struct LoadedPool {
    pub pool: Pool,
    pub dropped_below_floor: usize,
}

pub fn load_pool(path: impl AsRef<Path>, score_floor: f64) -> Result<LoadedPool> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pool(BufReader::new(file), score_floor).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Streams a pool from any reader. Only one record is held in raw form at a
/// time.
pub fn read_pool(mut reader: impl BufRead, score_floor: f64) -> Result<LoadedPool> {
    let mut buf = String::new();
    let mut line_no: u64 = 0;

    let header: Header = loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| Error::io(Path::new("<pool>"), e))?;
        if n == 0 {
            return Err(Error::Malformed {
                line: line_no + 1,
                reason: "missing header line".into(),
            });
        }
        line_no += 1;
        if buf.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(buf.trim()).map_err(|e| Error::Malformed {
            line: line_no,
            reason: format!("bad header: {e}"),
        })?;
    };
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Malformed {
            line: line_no,
            reason: format!("unsupported format_version {}", header.format_version),
        });
    }
    if header.num_classes == 0 {
        return Err(Error::Malformed {
            line: line_no,
            reason: "num_classes must be positive".into(),
        });
    }

    let mut images = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut dropped = 0usize;
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| Error::io(Path::new("<pool>"), e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let trimmed = buf.trim();
        if trimmed.is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(raw.image_id.clone()) {
            return Err(Error::DuplicateImageId {
                line: line_no,
                image_id: raw.image_id,
            });
        }
        let mut instances = Vec::with_capacity(raw.instances.len());
        for inst in raw.instances {
            if inst.feature.len() != header.feature_dim {
                return Err(Error::DimensionMismatch {
                    line: line_no,
                    image_id: raw.image_id,
                    expected: header.feature_dim,
                    found: inst.feature.len(),
                });
            }
            if inst.category < 0 || inst.category as u64 >= header.num_classes as u64 {
                return Err(Error::CategoryOutOfRange {
                    line: line_no,
                    image_id: raw.image_id,
                    category: inst.category,
                    num_classes: header.num_classes,
                });
            }
            if !(0.0..=1.0).contains(&inst.score) {
                return Err(Error::ScoreOutOfRange {
                    line: line_no,
                    image_id: raw.image_id,
                    score: inst.score,
                });
            }
            if inst.score < score_floor {
                dropped += 1;
                continue;
            }
            instances.push(InstancePrediction {
                category: inst.category as usize,
                score: inst.score,
                feature: inst.feature.iter().map(|&v| f64::from(v)).collect(),
                bbox: inst.bbox,
            });
        }
        images.push(ImagePrediction {
            image_id: raw.image_id,
            instances,
        });
    }
    if images.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(LoadedPool {
        pool: Pool {
            feature_dim: header.feature_dim,
            num_classes: header.num_classes,
            images,
        },
        dropped_below_floor: dropped,
    })
}

/// Writes the pool in the JSONL wire format. Features are narrowed to `f32`.
pub fn write_pool(pool: &Pool, mut out: impl Write) -> std::io::Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        feature_dim: pool.feature_dim,
        num_classes: pool.num_classes,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for image in &pool.images {
        let record = OutRecord {
            image_id: &image.image_id,
            instances: image
                .instances
                .iter()
                .map(|inst| OutInstance {
                    category: inst.category,
                    score: inst.score,
                    feature: inst.feature.iter().map(|&v| v as f32).collect(),
                    bbox: inst.bbox,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_pool(pool: &Pool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pool(pool, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Per-category instance counts over the labeled set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCounts(pub Vec<u64>);

impl ClassCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self(vec![0; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn add(&mut self, other: &ClassCounts) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn to_stats_json(&self) -> serde_json::Value {
        let counts: BTreeMap<String, u64> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(c, &n)| (c.to_string(), n))
            .collect();
        serde_json::json!({ "num_classes": self.0.len(), "counts": counts })
    }
}

#[derive(Deserialize)]
struct RawStats {
    num_classes: usize,
    counts: BTreeMap<String, i64>,
}

/// Parses a labeled-stats document `{"num_classes": C, "counts": {"<id>": n}}`.
pub fn parse_labeled_stats(text: &str) -> Result<ClassCounts> {
    let raw: RawStats =
        serde_json::from_str(text).map_err(|e| Error::Stats(format!("bad document: {e}")))?;
    if raw.num_classes == 0 {
        return Err(Error::Stats("num_classes must be positive".into()));
    }
    let mut counts = vec![0u64; raw.num_classes];
    for (key, value) in raw.counts {
        let category: usize = key
            .trim()
            .parse()
            .map_err(|_| Error::Stats(format!("category key '{key}' is not a non-negative integer")))?;
        if category >= raw.num_classes {
            return Err(Error::Stats(format!(
                "category {category} out of range (num_classes {})",
                raw.num_classes
            )));
        }
        if value < 0 {
            return Err(Error::Stats(format!(
                "negative count {value} for category {category}"
            )));
        }
        counts[category] = value as u64;
    }
    Ok(ClassCounts(counts))
}

pub fn load_labeled_stats(path: impl AsRef<Path>) -> Result<ClassCounts> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled_stats(&text)
}
