//! Run manifests: resolved configuration, tool version, content digests of
//! the inputs and wall-clock metadata, as sorted `key = value` text.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{io_err, Error, Result};
use crate::fsutil::{atomic_write, read_to_string};

pub const FILE_NAME: &str = "manifest.txt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a file, or of every regular file in a directory (sorted by name).
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name())
            .collect();
        names.sort();
        for name in names {
            let p = path.join(&name);
            h.update(name.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(std::fs::read(&p).map_err(io_err(&p))?);
        }
    } else {
        h.update(std::fs::read(path).map_err(io_err(path))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Short identifier of a resolved configuration.
pub fn run_id(cfg: &Config) -> String {
    sha256_hex(cfg.render().as_bytes())[..8].to_string()
}

pub fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub run_id: String,
    /// `(name, sha256)` of every input artifact.
    pub digests: Vec<(String, String)>,
    pub config: Config,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        Self {
            command: command.to_string(),
            run_id: run_id(config),
            digests: Vec::new(),
            config: config.clone(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: None,
            status: "running".into(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "tool = galforge {TOOL_VERSION}\ncommand = {}\nrun_id = {}\nstatus = {}\nstarted_unix_ms = {}\n",
            self.command, self.run_id, self.status, self.started_unix_ms
        );
        if let Some(f) = self.finished_unix_ms {
            s.push_str(&format!("finished_unix_ms = {f}\nwall_ms = {}\n", f.saturating_sub(self.started_unix_ms)));
        }
        for (name, d) in &self.digests {
            s.push_str(&format!("digest.{name} = sha256:{d}\n"));
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config.render());
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join(FILE_NAME), self.render().as_bytes())
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> Result<()> {
        self.finished_unix_ms = Some(unix_ms());
        self.status = status.to_string();
        self.write(dir)
    }
}

/// The resolved configuration echoed in a manifest.
pub fn read_config(path: &Path) -> Result<Config> {
    let text = read_to_string(path)?;
    let (_, body) = text.split_once("[config]\n").ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no [config] section".into(),
    })?;
    let mut cfg = Config::default();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = Config::default();
        cfg.set("run.cycles", "3").unwrap();
        cfg.set("gal.b_gal", "ratio:0.5").unwrap();
        let mut m = RunManifest::new("run", &cfg);
        m.digests.push(("world".into(), sha256_hex(b"w")));
        m.write(dir.path()).unwrap();
        m.finish(dir.path(), "ok").unwrap();
        let back = read_config(&dir.path().join(FILE_NAME)).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(run_id(&back), m.run_id);
        let text = std::fs::read_to_string(dir.path().join(FILE_NAME)).unwrap();
        assert!(text.contains("status = ok\n"));
        assert!(text.contains(&format!("tool = galforge {TOOL_VERSION}")));
    }

    #[test]
    fn directory_digest_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1\n").unwrap();
        let before = digest_path(dir.path()).unwrap();
        assert_eq!(before, digest_path(dir.path()).unwrap());
        std::fs::write(dir.path().join("a.csv"), "2\n").unwrap();
        assert_ne!(before, digest_path(dir.path()).unwrap());
    }
}
