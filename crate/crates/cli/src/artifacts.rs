//! Output directory with a `checksums.sha256` index of every artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::failure::{Failure, Kind};

pub const CHECKSUMS: &str = "checksums.sha256";

pub struct ArtifactDir {
    dir: PathBuf,
    sums: BTreeMap<String, String>,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn artifact_error(message: String) -> Failure {
    Failure::new(Kind::Artifact, message)
}

impl ArtifactDir {
    /// Opens (creating if needed) `dir`, keeping any existing index.
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| artifact_error(format!("cannot create {}: {e}", dir.display())))?;
        let sums = match fs::read_to_string(dir.join(CHECKSUMS)) {
            Ok(text) => parse_index(&text)?,
            Err(_) => BTreeMap::new(),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            sums,
        })
    }

    /// Opens an existing run directory; the index must be present.
    pub fn open(dir: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(dir.join(CHECKSUMS))
            .map_err(|e| artifact_error(format!("no artifact index in {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            sums: parse_index(&text)?,
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| artifact_error(format!("cannot write {}: {e}", path.display())))?;
        self.sums.insert(name.to_string(), digest(bytes));
        let index: String = self.sums.iter().map(|(n, h)| format!("{h}  {n}\n")).collect();
        fs::write(self.dir.join(CHECKSUMS), index)
            .map_err(|e| artifact_error(format!("cannot write the artifact index: {e}")))
    }

    /// Reads an indexed artifact and checks its digest.
    pub fn read(&self, name: &str) -> Result<Vec<u8>, Failure> {
        let want = self
            .sums
            .get(name)
            .ok_or_else(|| artifact_error(format!("{name} is not listed in {CHECKSUMS}")))?;
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| artifact_error(format!("cannot read {}: {e}", path.display())))?;
        if &digest(&bytes) != want {
            return Err(artifact_error(format!("checksum mismatch for {name}")));
        }
        Ok(bytes)
    }
}

fn parse_index(text: &str) -> Result<BTreeMap<String, String>, Failure> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once("  ")
                .map(|(h, n)| (n.to_string(), h.to_string()))
                .ok_or_else(|| artifact_error(format!("malformed line in {CHECKSUMS}: {l}")))
        })
        .collect()
}
