use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use conekp::data::annotation::{parse_unvalidated, ConeAnnotation};
use conekp::data::dataset::write_atomic;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    Unlabeled,
    Labeled,
    Rejected,
}

impl std::str::FromStr for ImageStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unlabeled" => Ok(ImageStatus::Unlabeled),
            "labeled" => Ok(ImageStatus::Labeled),
            "rejected" => Ok(ImageStatus::Rejected),
            _ => Err(format!(
                "unknown status `{s}` (expected unlabeled, labeled or rejected)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub status: ImageStatus,
    pub revision: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredAnnotation {
    pub annotation: ConeAnnotation,
    pub revision: u64,
}

/// Outcome of a conditional write.
#[derive(Clone, Debug, PartialEq)]
pub enum WriteOutcome {
    Written { revision: u64 },
    Stale { current: u64 },
}

/// Backing store for images and their annotations. Writes to one
/// annotation are serialized; every successful write bumps its revision.
pub trait AnnotationStore: Send + Sync {
    fn list(&self) -> Result<Vec<ImageEntry>>;
    fn image(&self, id: &str) -> Result<Option<Vec<u8>>>;
    fn annotation(&self, id: &str) -> Result<Option<StoredAnnotation>>;
    /// Writes `ann`. With `expected`, refuses unless the current revision
    /// matches; without it the last writer wins.
    fn put(&self, id: &str, ann: &ConeAnnotation, expected: Option<u64>) -> Result<WriteOutcome>;
    /// Applies `f` to the current annotation (if any) and writes the result
    /// under the same lock.
    fn update(&self, id: &str, f: &dyn Fn(Option<ConeAnnotation>) -> ConeAnnotation) -> Result<(ConeAnnotation, u64)>;
}

/// `images/{id}.png`, `annotations/{id}.json` and a revision sidecar
/// `annotations/{id}.rev` under one directory.
pub struct FsStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

/// Ids are content hashes or file stems; nothing that can leave the
/// directory.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

impl FsStore {
    pub fn open(root: &Path) -> Result<Self> {
        let images = root.join("images");
        if !images.is_dir() {
            bail!("{} has no images/ directory", root.display());
        }
        fs::create_dir_all(root.join("annotations"))
            .with_context(|| format!("creating {}/annotations", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    fn ann_path(&self, id: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{id}.json"))
    }

    fn rev_path(&self, id: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{id}.rev"))
    }

    fn revision(&self, id: &str) -> Result<u64> {
        Ok(match read_optional(&self.rev_path(id))? {
            Some(b) => String::from_utf8_lossy(&b).trim().parse().unwrap_or(0),
            None => 0,
        })
    }

    fn read_annotation(&self, id: &str) -> Result<Option<ConeAnnotation>> {
        Ok(read_optional(&self.ann_path(id))?.and_then(|b| parse_unvalidated(&String::from_utf8_lossy(&b)).ok()))
    }

    fn write(&self, id: &str, ann: &ConeAnnotation, current: u64) -> Result<u64> {
        let next = current + 1;
        write_atomic(&self.ann_path(id), ann.to_json().as_bytes())?;
        write_atomic(&self.rev_path(id), next.to_string().as_bytes())?;
        Ok(next)
    }
}

impl AnnotationStore for FsStore {
    fn list(&self) -> Result<Vec<ImageEntry>> {
        let dir = self.root.join("images");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        ids.into_iter()
            .map(|id| {
                let status = match self.read_annotation(&id)? {
                    None => ImageStatus::Unlabeled,
                    Some(a) if a.rejected => ImageStatus::Rejected,
                    Some(_) => ImageStatus::Labeled,
                };
                let revision = self.revision(&id)?;
                Ok(ImageEntry { id, status, revision })
            })
            .collect()
    }

    fn image(&self, id: &str) -> Result<Option<Vec<u8>>> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_optional(&self.root.join("images").join(format!("{id}.png")))
    }

    fn annotation(&self, id: &str) -> Result<Option<StoredAnnotation>> {
        if !valid_id(id) {
            return Ok(None);
        }
        let Some(annotation) = self.read_annotation(id)? else {
            return Ok(None);
        };
        Ok(Some(StoredAnnotation {
            annotation,
            revision: self.revision(id)?,
        }))
    }

    fn put(&self, id: &str, ann: &ConeAnnotation, expected: Option<u64>) -> Result<WriteOutcome> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.revision(id)?;
        if expected.is_some_and(|e| e != current) {
            return Ok(WriteOutcome::Stale { current });
        }
        Ok(WriteOutcome::Written {
            revision: self.write(id, ann, current)?,
        })
    }

    fn update(&self, id: &str, f: &dyn Fn(Option<ConeAnnotation>) -> ConeAnnotation) -> Result<(ConeAnnotation, u64)> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.revision(id)?;
        let ann = f(self.read_annotation(id)?);
        let revision = self.write(id, &ann, current)?;
        Ok((ann, revision))
    }
}
