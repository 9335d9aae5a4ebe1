//! Per-scene annotation state and its on-disk form.
//!
//! Clicks live in `clicks/{id}.txt` and accepted cuboids in `label_2/{id}.txt`
//! under the output root. Files are replaced atomically, so a reader sees
//! either the old or the new content.

use std::fs;
use std::io::Write;
use std::path::Path;

use bevclick_core::kitti::{self, CalibRecord, ClickAnnotation, Dataset, KittiError, LabelRecord};
use bevclick_core::Cuboid;

/// Clicks and accepted cuboids of one scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneSession {
    pub clicks: Vec<ClickAnnotation>,
    pub accepted: Vec<Cuboid>,
    pub dirty: bool,
}

impl SceneSession {
    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty() && self.accepted.is_empty()
    }
}

/// Annotation files for one object class under an output root.
#[derive(Debug, Clone)]
pub struct AnnotationStore {
    pub out: Dataset,
    pub class: String,
}

impl AnnotationStore {
    pub fn new(root: impl Into<std::path::PathBuf>, class: impl Into<String>) -> Self {
        Self {
            out: Dataset::new(root),
            class: class.into(),
        }
    }

    /// Previously persisted state; missing files mean an empty session.
    /// Labels of other classes are ignored.
    pub fn load(&self, id: &str) -> Result<SceneSession, KittiError> {
        let accepted = self
            .out
            .load_labels(id)?
            .iter()
            .filter(|r| r.class == self.class)
            .map(LabelRecord::to_cuboid)
            .collect::<Result<_, _>>()?;
        Ok(SceneSession {
            clicks: self.out.load_clicks(id)?,
            accepted,
            dirty: false,
        })
    }

    /// A click as it reads back from disk.
    pub fn canonical_click(&self, x: f64, z: f64) -> Result<ClickAnnotation, KittiError> {
        let text = kitti::write_clicks(&[ClickAnnotation::new(self.class.clone(), x, z)]);
        Ok(kitti::read_clicks(&text)?.remove(0))
    }

    /// A cuboid as it reads back from the label format.
    pub fn canonical_cuboid(&self, cuboid: &Cuboid, calib: &CalibRecord) -> Result<Cuboid, KittiError> {
        let text = kitti::write_labels(&[LabelRecord::from_cuboid(&self.class, cuboid, None, calib)]);
        kitti::parse_labels(&text)?[0].to_cuboid()
    }

    /// Write a dirty session. An empty session that never reached disk
    /// writes nothing. On error the session keeps its state and stays dirty.
    /// Returns whether files were written.
    pub fn persist(&self, id: &str, session: &mut SceneSession, calib: &CalibRecord) -> Result<bool, KittiError> {
        if !session.dirty {
            return Ok(false);
        }
        let (clicks_path, label_path) = (self.out.clicks_path(id), self.out.label_path(id));
        if session.is_empty() && !clicks_path.exists() && !label_path.exists() {
            session.dirty = false;
            return Ok(false);
        }
        let labels: Vec<LabelRecord> = session.accepted.iter().map(|c| LabelRecord::from_cuboid(&self.class, c, None, calib)).collect();
        atomic_write(&clicks_path, kitti::write_clicks(&session.clicks).as_bytes())?;
        atomic_write(&label_path, kitti::write_labels(&labels).as_bytes())?;
        session.dirty = false;
        Ok(true)
    }
}

/// Write to a sibling temporary file, flush it to disk, then rename over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), KittiError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| KittiError::Io { path: p, source }
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(dir: &Path) -> AnnotationStore {
        AnnotationStore::new(dir, "Car")
    }

    #[test]
    fn empty_session_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let mut session = SceneSession {
            dirty: true,
            ..Default::default()
        };
        assert!(!s.persist("000001", &mut session, &CalibRecord::synthetic()).unwrap());
        assert!(!session.dirty);
        assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn persist_then_reload_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let calib = CalibRecord::synthetic();
        let raw = Cuboid::new(3.14159, 0.912345, 20.2718, 1.5234, 1.6123, 3.9087, 0.4321).unwrap();
        let mut session = SceneSession {
            clicks: vec![s.canonical_click(1.23456, 7.891011).unwrap()],
            accepted: vec![s.canonical_cuboid(&raw, &calib).unwrap()],
            dirty: true,
        };
        assert!(s.persist("000002", &mut session, &calib).unwrap());
        assert_eq!(s.load("000002").unwrap(), session);
    }

    #[test]
    fn clearing_a_persisted_session_rewrites_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let calib = CalibRecord::synthetic();
        let mut session = SceneSession {
            clicks: vec![s.canonical_click(1.0, 2.0).unwrap()],
            dirty: true,
            ..Default::default()
        };
        s.persist("a", &mut session, &calib).unwrap();
        session.clicks.clear();
        session.dirty = true;
        assert!(s.persist("a", &mut session, &calib).unwrap());
        assert!(s.load("a").unwrap().is_empty());
    }

    #[test]
    fn failed_write_keeps_state() {
        let dir = tempfile::tempdir().unwrap();
        // A file where the clicks directory should be makes the write fail.
        fs::write(dir.path().join("clicks"), b"").unwrap();
        let s = store(dir.path());
        let mut session = SceneSession {
            clicks: vec![s.canonical_click(1.0, 2.0).unwrap()],
            dirty: true,
            ..Default::default()
        };
        let before = session.clone();
        assert!(s.persist("b", &mut session, &CalibRecord::synthetic()).is_err());
        assert_eq!(session, before);
    }

    #[test]
    fn interrupted_write_leaves_previous_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        atomic_write(&path, b"old").unwrap();
        // A temporary file left behind by a crash before the rename.
        fs::write(dir.path().join(".x.txt.tmp"), b"partial").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"old");
        atomic_write(&path, b"new").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"new");
        assert!(!dir.path().join(".x.txt.tmp").exists());
    }
}
