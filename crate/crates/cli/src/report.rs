//! Cross-run comparison over `runs.csv` files: mean ± std per metric for
//! every (run directory, group), and Welch t-tests between run directories
//! for each shared group.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ratnet_core::metrics::{mean, std_dev, t_test, MetricSet};

use crate::commands::RUNS_HEADER;
use crate::output::RunDir;
use crate::{CliError, CliResult, Common};

struct Entry {
    run: String,
    group: String,
    values: Vec<MetricSet>,
}

fn read_runs(dir: &Path) -> CliResult<Vec<(String, MetricSet)>> {
    let path = dir.join("runs.csv");
    let mut rdr = csv::Reader::from_path(&path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = RUNS_HEADER.split(',').collect();
    if header != expected {
        let missing: Vec<&str> = expected.iter().copied().filter(|c| !header.iter().any(|h| h == c)).collect();
        let extra: Vec<&str> = header
            .iter()
            .map(String::as_str)
            .filter(|h| !expected.contains(h))
            .collect();
        return Err(CliError::Runtime(format!(
            "{}: incompatible metric columns (missing: [{}], unexpected: [{}])",
            path.display(),
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let num = |k: usize| -> CliResult<f64> {
            rec[k]
                .parse()
                .map_err(|_| CliError::Runtime(format!("{}: row {}: bad number `{}`", path.display(), i + 1, &rec[k])))
        };
        out.push((
            rec[0].to_string(),
            MetricSet {
                auc: num(2)?,
                f1: num(3)?,
                ap: num(4)?,
                mcc: num(5)?,
            },
        ));
    }
    Ok(out)
}

fn collect(dirs: &[PathBuf]) -> CliResult<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let mut run = dir.display().to_string();
        // a directory given twice still counts as two runs
        if dirs[..i].contains(dir) {
            run = format!("{run}#{}", dirs[..i].iter().filter(|d| *d == dir).count() + 1);
        }
        for (group, m) in read_runs(dir)? {
            match entries.iter_mut().find(|e| e.run == run && e.group == group) {
                Some(e) => e.values.push(m),
                None => entries.push(Entry {
                    run: run.clone(),
                    group,
                    values: vec![m],
                }),
            }
        }
    }
    Ok(entries)
}

fn column(values: &[MetricSet], k: usize) -> Vec<f64> {
    values.iter().map(|m| m.to_array()[k]).collect()
}

pub fn report(dirs: &[PathBuf], c: &Common) -> CliResult<()> {
    let entries = collect(dirs)?;
    let mut summary = String::from("run,group,n,metric,mean,std\n");
    let mut table = String::new();
    let run_w = entries.iter().map(|e| e.run.len()).max().unwrap_or(3).max(3);
    let group_w = entries.iter().map(|e| e.group.len()).max().unwrap_or(5).max(5);
    let _ = write!(table, "{:<run_w$}  {:<group_w$}  {:>4}", "run", "group", "n");
    for name in MetricSet::NAMES {
        let _ = write!(table, "  {:>17}", name.to_uppercase());
    }
    table.push('\n');
    for e in &entries {
        let _ = write!(table, "{:<run_w$}  {:<group_w$}  {:>4}", e.run, e.group, e.values.len());
        for (k, name) in MetricSet::NAMES.iter().enumerate() {
            let col = column(&e.values, k);
            let (m, s) = (mean(&col), if col.len() > 1 { std_dev(&col) } else { 0.0 });
            let _ = writeln!(summary, "{},{},{},{name},{m},{s}", e.run, e.group, e.values.len());
            let _ = write!(table, "  {:>17}", format!("{m:.4} ± {s:.4}"));
        }
        table.push('\n');
    }

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.write("summary.csv", summary.as_bytes())?;
    if dirs.len() > 1 {
        let mut pv = String::from("group,a,b,metric,t,df,p\n");
        let _ = writeln!(table, "\nWelch two-sided p-values");
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.group != b.group || a.run == b.run || a.values.len() < 2 || b.values.len() < 2 {
                    continue;
                }
                let _ = write!(table, "{}: {} vs {}", a.group, a.run, b.run);
                for (k, name) in MetricSet::NAMES.iter().enumerate() {
                    match t_test(&column(&a.values, k), &column(&b.values, k)) {
                        Ok(t) => {
                            let _ = writeln!(pv, "{},{},{},{name},{},{},{}", a.group, a.run, b.run, t.t, t.df, t.p);
                            let _ = write!(table, "  {name} p={:.4}", t.p);
                        }
                        Err(_) => {
                            let _ = writeln!(pv, "{},{},{},{name},,,", a.group, a.run, b.run);
                            let _ = write!(table, "  {name} p=undefined");
                        }
                    }
                }
                table.push('\n');
            }
        }
        out.write("pvalues.csv", pv.as_bytes())?;
    }
    out.write("report.txt", table.as_bytes())?;
    out.say(table.trim_end());
    let runs: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
    out.finish("report", 0, &ReportConfig { runs })
}

#[derive(serde::Serialize)]
struct ReportConfig {
    runs: Vec<String>,
}
