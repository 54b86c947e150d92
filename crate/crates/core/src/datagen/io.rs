use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::benchmark::{Benchmark, Manifest, ManifestTask};
use super::task::{Sample, Split, TaskDataset};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `task_id,split,global_concept_id,local_label,f0..f{D-1}`, one row per sample.
pub fn dataset_to_csv(ds: &TaskDataset) -> String {
    let mut s = String::from("task_id,split,global_concept_id,local_label");
    for j in 0..ds.dim {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for split in Split::ALL {
        for smp in ds.split(split) {
            let _ = write!(
                s,
                "{},{},{},{}",
                ds.task_id,
                split.as_str(),
                smp.concept,
                smp.local_label
            );
            for v in &smp.features {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

/// Parses a dataset file; `concepts` is the task's local → global map.
pub fn parse_dataset_csv(
    text: &str,
    path: &Path,
    task_id: &str,
    concepts: &[usize],
) -> Result<TaskDataset> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let fixed = ["task_id", "split", "global_concept_id", "local_label"];
    if headers.len() < 4 || headers.iter().take(4).ne(fixed.iter().copied()) {
        return Err(bad(format!("unexpected header {:?}", headers)));
    }
    let dim = headers.len() - 4;
    let mut ds = TaskDataset {
        task_id: task_id.to_string(),
        concepts: concepts.to_vec(),
        dim,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = line + 2;
        if &rec[0] != task_id {
            return Err(bad(format!("row {row}: task `{}` != `{task_id}`", &rec[0])));
        }
        let split = Split::parse(&rec[1]).ok_or_else(|| bad(format!("row {row}: split `{}`", &rec[1])))?;
        let concept: usize = rec[2].parse().map_err(|_| bad(format!("row {row}: concept")))?;
        let local_label: usize = rec[3].parse().map_err(|_| bad(format!("row {row}: label")))?;
        let features = (4..rec.len())
            .map(|j| rec[j].parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("row {row}: feature")))?;
        ds.split_mut(split).push(Sample {
            local_label,
            concept,
            features,
        });
    }
    ds.validate()?;
    Ok(ds)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes every task file plus `manifest.toml` under `dir`.
pub fn write_benchmark(dir: &Path, bench: &Benchmark) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ds, _) in bench.tasks() {
        let entry = bench
            .manifest
            .task(&ds.task_id)
            .expect("every generated task is in the manifest");
        write(&dir.join(&entry.file), &dataset_to_csv(ds))?;
    }
    write(&dir.join(MANIFEST_FILE), &bench.manifest.to_toml())
}

/// A benchmark directory read back from disk with checksums verified.
#[derive(Debug, Clone)]
pub struct LoadedBenchmark {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub tasks: Vec<TaskDataset>,
}

impl LoadedBenchmark {
    pub fn task(&self, id: &str) -> Result<&TaskDataset> {
        self.tasks
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| Error::UnknownTask {
                task: id.to_string(),
                known: self.tasks.iter().map(|t| t.task_id.clone()).collect(),
            })
    }
}

pub fn load_task(dir: &Path, entry: &ManifestTask) -> Result<TaskDataset> {
    let path = dir.join(&entry.file);
    let text = read(&path)?;
    let sum = sha256_hex(text.as_bytes());
    if sum != entry.checksum {
        return Err(Error::Parse {
            path,
            msg: format!("checksum {sum} does not match manifest {}", entry.checksum),
        });
    }
    parse_dataset_csv(&text, &path, &entry.id, &entry.concepts)
}

pub fn load_benchmark(dir: &Path) -> Result<LoadedBenchmark> {
    let manifest = Manifest::from_toml(&read(&dir.join(MANIFEST_FILE))?)?;
    let tasks = manifest
        .tasks
        .iter()
        .map(|t| load_task(dir, t))
        .collect::<Result<_>>()?;
    Ok(LoadedBenchmark {
        dir: dir.to_path_buf(),
        manifest,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_benchmark, BenchmarkConfig};

    #[test]
    fn files_round_trip_bitwise() {
        let bench = make_benchmark(&BenchmarkConfig::three_task()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), &bench).unwrap();
        let loaded = load_benchmark(dir.path()).unwrap();
        assert_eq!(loaded.manifest, bench.manifest);
        for (ds, _) in bench.tasks() {
            assert_eq!(loaded.task(&ds.task_id).unwrap(), ds);
        }
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let bench = make_benchmark(&BenchmarkConfig::three_task()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), &bench).unwrap();
        let p = dir.path().join("T1.csv");
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("T1,train,0,0");
        text.push_str(&",0".repeat(16));
        text.push('\n');
        fs::write(&p, text).unwrap();
        assert!(matches!(load_benchmark(dir.path()), Err(Error::Parse { .. })));
    }
}
