//! Output directory handling: every artifact is written into a staging
//! directory next to the target and moved into place only after the whole
//! command succeeded.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use koopman_core::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub struct Staging {
    dir: TempDir,
    target: PathBuf,
    files: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// Wall-clock time of the run; the only field that differs between reruns.
    pub created: String,
    pub config: C,
    pub artifacts: Vec<ArtifactRecord>,
    pub summary: S,
    pub warnings: Vec<String>,
}

impl Staging {
    /// Refuses a non-empty target unless `force` is set.
    pub fn new(target: &Path, force: bool) -> Result<Self> {
        if target.exists() {
            if !target.is_dir() {
                return Err(Error::Config(format!("{} exists and is not a directory", target.display())));
            }
            let occupied = std::fs::read_dir(target)?.next().is_some();
            if occupied && !force {
                return Err(Error::Config(format!(
                    "output directory {} is not empty (use --force to replace it)",
                    target.display()
                )));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)?;
        let dir = tempfile::Builder::new().prefix(".koopman-staging-").tempdir_in(&parent)?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Opens `name` for writing inside the staging directory.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        if self.files.iter().any(|f| f == name) || name == MANIFEST {
            return Err(Error::Config(format!("artifact {name} written twice")));
        }
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.path().join(name))?))
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn records(&self) -> Result<Vec<ArtifactRecord>> {
        let mut names = self.files.clone();
        names.sort();
        names
            .into_iter()
            .map(|name| {
                let mut file = File::open(self.dir.path().join(&name))?;
                let mut hasher = Sha256::new();
                let mut buf = [0u8; 1 << 16];
                let mut bytes = 0u64;
                loop {
                    let n = file.read(&mut buf)?;
                    if n == 0 {
                        break;
                    }
                    hasher.update(&buf[..n]);
                    bytes += n as u64;
                }
                Ok(ArtifactRecord {
                    path: name,
                    bytes,
                    sha256: format!("{:x}", hasher.finalize()),
                })
            })
            .collect()
    }

    /// Writes the manifest and moves the directory into place.
    pub fn commit<C: Serialize, S: Serialize>(
        mut self,
        command: &'static str,
        config: C,
        summary: S,
        warnings: Vec<String>,
    ) -> Result<PathBuf> {
        let manifest = Manifest {
            tool: "koopman",
            version: env!("CARGO_PKG_VERSION"),
            command,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config,
            artifacts: self.records()?,
            summary,
            warnings,
        };
        let mut w = BufWriter::new(File::create(self.dir.path().join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        drop(w);
        self.files.clear();

        let staged = self.dir.keep();
        if self.target.exists() {
            let backup = staged.with_extension("previous");
            std::fs::rename(&self.target, &backup)?;
            if let Err(e) = std::fs::rename(&staged, &self.target) {
                std::fs::rename(&backup, &self.target)?;
                let _ = std::fs::remove_dir_all(&staged);
                return Err(e.into());
            }
            std::fs::remove_dir_all(&backup)?;
        } else if let Err(e) = std::fs::rename(&staged, &self.target) {
            let _ = std::fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        Ok(self.target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        {
            let mut s = Staging::new(&target, false).unwrap();
            s.write_json("a.json", &[1, 2]).unwrap();
        }
        assert!(!target.exists());
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_hashes_artifacts() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        let mut s = Staging::new(&target, false).unwrap();
        s.write_with("x.txt", |w| Ok(w.write_all(b"abc")?)).unwrap();
        s.commit("test", (), (), Vec::new()).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(target.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(
            manifest["artifacts"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(manifest["artifacts"][0]["bytes"], 3);
    }

    #[test]
    fn occupied_target_needs_force() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        std::fs::create_dir(&target).unwrap();
        std::fs::write(target.join("old"), "x").unwrap();
        assert!(matches!(Staging::new(&target, false), Err(Error::Config(_))));
        let mut s = Staging::new(&target, true).unwrap();
        s.write_json("new.json", &0).unwrap();
        s.commit("test", (), (), Vec::new()).unwrap();
        assert!(!target.join("old").exists());
        assert!(target.join("new.json").exists());
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 1);
    }
}
