use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| Error::Data(format!("unknown split label `{s}`")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainTag {
    pub dataset: String,
    pub tumor_type: String,
}

impl DomainTag {
    pub fn new(dataset: impl Into<String>, tumor_type: impl Into<String>) -> Self {
        Self { dataset: dataset.into(), tumor_type: tumor_type.into() }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.tumor_type)
    }
}

/// Annotated point; its 50×50 box is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub x: f64,
    pub y: f64,
}

impl Annotation {
    pub fn bbox(&self) -> BBox {
        BBox::annotation(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionRecord {
    /// As written in the manifest, relative to the manifest directory.
    pub image_path: String,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<Annotation>,
    pub domain: DomainTag,
    pub split: Split,
}

impl RegionRecord {
    /// File stem of the image path; used as the region id in outputs.
    pub fn region_id(&self) -> String {
        Path::new(&self.image_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| self.image_path.clone())
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.annotations.iter().map(Annotation::bbox).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_path: String,
    width: usize,
    height: usize,
    dataset: String,
    tumor_type: String,
    split: String,
    annotations: Vec<Annotation>,
}

fn validate(i: usize, r: RawRecord) -> Result<RegionRecord> {
    let fail = |m: String| Err(Error::Data(format!("record {i} (`{}`): {m}", r.image_path)));
    if r.image_path.is_empty() {
        return fail("empty image_path".into());
    }
    if r.width == 0 || r.height == 0 {
        return fail(format!("non-positive size {}×{}", r.width, r.height));
    }
    if r.dataset.is_empty() || r.tumor_type.is_empty() {
        return fail("empty dataset or tumor_type".into());
    }
    let split = match Split::parse(&r.split) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    for a in &r.annotations {
        let inside = a.x >= 0.0 && a.y >= 0.0 && a.x < r.width as f64 && a.y < r.height as f64;
        if !inside {
            return fail(format!("annotation ({}, {}) outside the {}×{} image", a.x, a.y, r.width, r.height));
        }
    }
    Ok(RegionRecord {
        domain: DomainTag::new(r.dataset, r.tumor_type),
        image_path: r.image_path,
        width: r.width,
        height: r.height,
        annotations: r.annotations,
        split,
    })
}

pub fn parse_manifest(text: &str) -> Result<Vec<RegionRecord>> {
    let raw: Vec<RawRecord> = serde_json::from_str(text)?;
    raw.into_iter().enumerate().map(|(i, r)| validate(i, r)).collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<RegionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Json(j) => Error::Data(format!("{}: {j}", path.display())),
        other => other,
    })
}

pub fn manifest_json(records: &[RegionRecord]) -> Result<String> {
    let raw: Vec<RawRecord> = records
        .iter()
        .map(|r| RawRecord {
            image_path: r.image_path.clone(),
            width: r.width,
            height: r.height,
            dataset: r.domain.dataset.clone(),
            tumor_type: r.domain.tumor_type.clone(),
            split: r.split.as_str().to_string(),
            annotations: r.annotations.clone(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&raw)?;
    s.push('\n');
    Ok(s)
}

pub fn save_manifest(path: &Path, records: &[RegionRecord]) -> Result<()> {
    fs::write(path, manifest_json(records)?).map_err(|e| Error::io(path, e))
}

/// Region counts keyed by `(dataset, split)`.
pub fn split_census(records: &[RegionRecord]) -> BTreeMap<(String, Split), usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry((r.domain.dataset.clone(), r.split)).or_insert(0) += 1;
    }
    out
}

/// A manifest together with the directory its image paths resolve against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<RegionRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGE_DIR: &str = "images";

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let records = load_manifest(&root.join(MANIFEST_FILE))?;
        Ok(Self { root: root.to_path_buf(), records })
    }

    pub fn image_path(&self, r: &RegionRecord) -> PathBuf {
        self.root.join(&r.image_path)
    }

    pub fn split(&self, split: Split) -> Vec<&RegionRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}
