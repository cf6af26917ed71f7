//! `<out>/manifest`: the commands run so far and a hash of every file.
//!
//! ```text
//! run gen-data seed=0 config_sha256=<hex>
//! run train-seg seed=0 config_sha256=<hex>
//! file <sha256> data/test/images/test-00000.pgm
//! ...
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil;

use super::Command;

pub const MANIFEST_NAME: &str = "manifest";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub runs: Vec<String>,
    /// `(sha256, path relative to the output root)`, sorted by path.
    pub files: Vec<(String, String)>,
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(".staging-") || name.ends_with(".partial") {
            continue;
        }
        if p.is_dir() {
            collect(root, &p, out)?;
        } else if p != root.join(MANIFEST_NAME) {
            out.push(p);
        }
    }
    Ok(())
}

impl Manifest {
    pub fn parse(text: &str) -> Manifest {
        let mut m = Manifest::default();
        for line in text.lines() {
            if let Some(run) = line.strip_prefix("run ") {
                m.runs.push(run.to_string());
            } else if let Some(rest) = line.strip_prefix("file ") {
                if let Some((hash, path)) = rest.split_once(' ') {
                    m.files.push((hash.to_string(), path.to_string()));
                }
            }
        }
        m
    }

    pub fn read(out: &Path) -> Result<Manifest> {
        let bytes = fsutil::read(&out.join(MANIFEST_NAME))?;
        Ok(Manifest::parse(&String::from_utf8_lossy(&bytes)))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            s.push_str(&format!("run {r}\n"));
        }
        for (h, p) in &self.files {
            s.push_str(&format!("file {h} {p}\n"));
        }
        s
    }

    pub fn hash_of(&self, rel: &str) -> Option<&str> {
        self.files.iter().find(|(_, p)| p == rel).map(|(h, _)| h.as_str())
    }

    /// Appends a run record and rehashes every file under `out`.
    pub fn update(out: &Path, command: Command, seed: u64, config_sha256: &str) -> Result<Manifest> {
        let path = out.join(MANIFEST_NAME);
        let mut m = if path.exists() {
            Manifest::read(out)?
        } else {
            Manifest::default()
        };
        m.runs.push(format!("{command} seed={seed} config_sha256={config_sha256}"));
        let mut files = Vec::new();
        collect(out, out, &mut files)?;
        m.files = files
            .iter()
            .map(|p| {
                let rel = p
                    .strip_prefix(out)
                    .expect("under out")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                Ok((fsutil::sha256_hex(&fsutil::read(p)?), rel))
            })
            .collect::<Result<Vec<_>>>()?;
        m.files.sort_by(|a, b| a.1.cmp(&b.1));
        fsutil::write_atomic(&path, m.render().as_bytes())?;
        Ok(m)
    }
}
