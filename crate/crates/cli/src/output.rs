use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ratnet_core::datagen::sha256_hex;

use crate::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run.toml";

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    seeds: &'a BTreeMap<String, u64>,
    config: &'a C,
    outputs: Vec<OutputFile>,
}

/// Output directory of one command run. Files are recorded with their
/// checksums for the manifest.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
    seeds: BTreeMap<String, u64>,
    quiet: bool,
}

impl RunDir {
    pub fn create(dir: &Path, quiet: bool) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            seeds: BTreeMap::new(),
            quiet,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Records a file that something else already wrote into the directory.
    pub fn record(&mut self, name: &str) -> CliResult<()> {
        let p = self.path(name);
        let bytes = std::fs::read(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    pub fn finish<C: Serialize>(self, command: &str, seed: u64, config: &C) -> CliResult<()> {
        let m = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            seeds: &self.seeds,
            config,
            outputs: self.files,
        };
        let text = toml::to_string(&m).map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        let p = self.dir.join(RUN_MANIFEST);
        std::fs::write(&p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        if !self.quiet {
            println!("wrote {}", p.display());
        }
        Ok(())
    }
}
