//! Run manifests: everything needed to repeat a command and check that the
//! repeat reproduced the same bytes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL: &str = "medcast";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    /// Absolute for inputs; relative to the output directory for outputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the verb, excluding `--manifest` and `--out-dir`.
    pub argv: Vec<String>,
    pub seed: u64,
    pub single_thread: bool,
    /// Text of the configuration file the command read, if any.
    #[serde(default)]
    pub config: Option<String>,
    /// Derived settings worth recording (tree layout, hyperparameters, ...).
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<FileDigest>,
    #[serde(default)]
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, seed: u64, single_thread: bool) -> Self {
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            argv,
            seed,
            single_thread,
            config: None,
            settings: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let abs = std::fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest {
            path: abs.to_string_lossy().into_owned(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(FileDigest {
            path: rel.to_string_lossy().into_owned(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.tool != TOOL {
            return Err(Error::format(
                path,
                format!("written by '{}', not {TOOL}", m.tool),
            ));
        }
        Ok(m)
    }

    /// Inputs whose current content differs from the recorded digest.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|d| digest_file(Path::new(&d.path)).map_or(true, |h| h != d.sha256))
            .map(|d| d.path.clone())
            .collect()
    }

    /// Output paths whose digests differ from `other`'s (or are missing in
    /// either manifest).
    pub fn output_differences(&self, other: &RunManifest) -> Vec<String> {
        let mine: BTreeMap<&str, &str> = self
            .outputs
            .iter()
            .map(|d| (d.path.as_str(), d.sha256.as_str()))
            .collect();
        let theirs: BTreeMap<&str, &str> = other
            .outputs
            .iter()
            .map(|d| (d.path.as_str(), d.sha256.as_str()))
            .collect();
        let mut diff: Vec<String> = mine
            .iter()
            .filter(|(p, h)| theirs.get(*p) != Some(h))
            .map(|(p, _)| p.to_string())
            .collect();
        diff.extend(
            theirs
                .keys()
                .filter(|p| !mine.contains_key(*p))
                .map(|p| p.to_string()),
        );
        diff
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Conventional manifest location inside an output directory.
pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.toml")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_known_value() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"abc").unwrap();
        let out = dir.path().join("out");
        std::fs::create_dir_all(&out).unwrap();
        std::fs::write(out.join("x.bin"), b"1").unwrap();

        let mut m = RunManifest::new("synth", vec!["cfg.toml".into()], 7, true);
        m.config = Some("seed = 7\n".into());
        m.settings.insert("tree".into(), "((0,1),(2,3))".into());
        m.add_input(&input).unwrap();
        m.add_output(&out, &out.join("x.bin")).unwrap();
        assert_eq!(m.outputs[0].path, "x.bin");
        let path = manifest_path(dir.path());
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.changed_inputs().is_empty());
        assert!(back.output_differences(&m).is_empty());

        std::fs::write(&input, b"abd").unwrap();
        assert_eq!(back.changed_inputs().len(), 1);
        let mut other = m.clone();
        other.outputs[0].sha256 = digest_bytes(b"2");
        assert_eq!(m.output_differences(&other), vec!["x.bin".to_string()]);
        other.outputs.clear();
        assert_eq!(m.output_differences(&other).len(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("render", vec![], 0, false);
        let text = m.to_toml().unwrap().replace("single_thread", "single_thred");
        let p = dir.path().join("m.toml");
        std::fs::write(&p, text).unwrap();
        let err = RunManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("single_thred"), "{err}");
    }
}
