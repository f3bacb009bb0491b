//! On-disk repository layout, atomic file writes and the writer lock.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::artefact::ObjectStore;
use crate::canonical::Digest;
use crate::error::{Error, Result};

pub const REPO_DIR: &str = ".curator";

/// Paths inside a `.curator` directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            dir: root.join(REPO_DIR),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }

    pub fn objects(&self) -> PathBuf {
        self.dir.join("objects")
    }

    pub fn phases(&self) -> PathBuf {
        self.dir.join("refs").join("phases")
    }

    pub fn branches(&self, phase: &str) -> PathBuf {
        self.phases().join(phase).join("branches")
    }

    pub fn branch(&self, phase: &str, name: &str) -> PathBuf {
        self.branches(phase).join(name)
    }

    /// Refs of dropped branches, kept so their commits stay reachable.
    pub fn dropped(&self, phase: &str) -> PathBuf {
        self.phases().join(phase).join("dropped")
    }

    pub fn releases(&self) -> PathBuf {
        self.dir.join("refs").join("releases")
    }

    pub fn release(&self, tag: &str) -> PathBuf {
        self.releases().join(tag)
    }

    pub fn rounds(&self) -> PathBuf {
        self.dir.join("rounds")
    }

    pub fn round(&self, id: &str) -> PathBuf {
        self.rounds().join(format!("{id}.json"))
    }

    pub fn stage(&self) -> PathBuf {
        self.dir.join("STAGE.json")
    }

    pub fn head(&self) -> PathBuf {
        self.dir.join("HEAD")
    }

    pub fn lock(&self) -> PathBuf {
        self.dir.join("lock")
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().expect("repository paths have parents");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("tmp");
    let tmp = parent.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn is_temp_file(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.') && n.ends_with(".tmp"))
}

/// Object files fanned out by the first two hex characters of their digest.
#[derive(Debug, Clone)]
pub struct DiskObjects {
    dir: PathBuf,
}

impl DiskObjects {
    pub fn new(dir: PathBuf) -> Self {
        DiskObjects { dir }
    }

    pub fn path_for(&self, id: &Digest) -> PathBuf {
        let hex = id.as_str();
        self.dir.join(&hex[..2]).join(hex)
    }

    /// Re-hashes every object file, failing on the first mismatch.
    /// Returns the number of objects checked.
    pub fn verify_all(&self) -> Result<usize> {
        let mut checked = 0;
        for entry in walkdir::WalkDir::new(&self.dir).min_depth(2).max_depth(2) {
            let entry = entry.map_err(|e| Error::io(&self.dir, e.into()))?;
            if !entry.file_type().is_file() || is_temp_file(entry.path()) {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            let actual = Digest::of(&bytes);
            let fan = entry
                .path()
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            if actual.as_str() != name || !name.starts_with(&fan) {
                return Err(Error::CorruptObject {
                    id: name,
                    reason: format!("content hashes to {actual}"),
                });
            }
            checked += 1;
        }
        Ok(checked)
    }
}

impl ObjectStore for DiskObjects {
    fn get(&self, id: &Digest) -> Result<Option<Vec<u8>>> {
        read_optional(&self.path_for(id))
    }

    fn put(&mut self, bytes: &[u8]) -> Result<Digest> {
        let id = Digest::of(bytes);
        let path = self.path_for(&id);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(id)
    }

    fn has(&self, id: &Digest) -> Result<bool> {
        Ok(self.path_for(id).is_file())
    }
}

/// Exclusive advisory lock on `.curator/lock`, released on drop.
#[derive(Debug)]
pub struct RepoLock {
    _file: File,
}

impl RepoLock {
    /// Fails fast with [`Error::LockHeld`] when another writer holds the lock.
    pub fn acquire(layout: &Layout) -> Result<Self> {
        let path = layout.lock();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(RepoLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(Error::LockHeld),
            Err(TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }
}
