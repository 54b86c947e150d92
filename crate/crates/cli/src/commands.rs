use std::fmt::Write as _;
use std::path::Path;

use ratnet_core::datagen::{
    features_of, load_benchmark, make_benchmark, write_benchmark, LoadedBenchmark, TaskDataset, TaskRole,
    MANIFEST_FILE,
};
use ratnet_core::federated::{rounds_csv, run_federation, Site};
use ratnet_core::metrics::{MetricSet, MetricsReport, MultiScored};
use ratnet_core::model::{embed, from_bytes, to_bytes, ModelState};
use ratnet_core::rng;
use ratnet_core::training::{
    accuracy, few_shot_protocol, fine_tune, incremental_pretrain, init_seed, linear_probe, mean_own_weight,
    predict_scores, pretrain as run_pretrain, reduced_data_protocol,
};
use ratnet_core::transfer::{shuffled_label_control, single_head_baselines, zero_shot_evaluate, CategoryMap};

use crate::config::{self, require, ProbeCmdConfig, SplitName};
use crate::output::RunDir;
use crate::{CliError, CliResult, Common, DEFAULT_SEED};

pub const RUNS_HEADER: &str = "group,run,auc,f1,ap,mcc";

fn resolve_seed(c: &Common, from_config: Option<u64>) -> u64 {
    c.seed.or(from_config).unwrap_or(DEFAULT_SEED)
}

fn load_data(path: &Path) -> CliResult<LoadedBenchmark> {
    load_benchmark(path).map_err(|e| CliError::Runtime(format!("loading benchmark {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> CliResult<ModelState> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_bytes(&bytes).map_err(|e| CliError::Runtime(format!("checkpoint {}: {e}", path.display())))
}

fn require_config(c: &Common) -> CliResult<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))
}

fn runs_csv(rows: &[(String, usize, MetricSet)]) -> String {
    let mut s = format!("{RUNS_HEADER}\n");
    for (group, run, m) in rows {
        let _ = writeln!(s, "{group},{run},{},{},{},{}", m.auc, m.f1, m.ap, m.mcc);
    }
    s
}

fn pretrain_tasks<'a>(data: &'a LoadedBenchmark, ids: Option<&[String]>) -> CliResult<Vec<&'a TaskDataset>> {
    let ids: Vec<String> = match ids {
        Some(ids) => ids.to_vec(),
        None => data
            .manifest
            .with_role(TaskRole::Pretrain)
            .map(|t| t.id.clone())
            .collect(),
    };
    Ok(ids.iter().map(|id| data.task(id)).collect::<ratnet_core::Result<_>>()?)
}

fn default_task(data: &LoadedBenchmark, given: Option<&str>, role: TaskRole) -> CliResult<String> {
    match given {
        Some(t) => Ok(t.to_string()),
        None => data
            .manifest
            .with_role(role)
            .next()
            .map(|t| t.id.clone())
            .ok_or_else(|| CliError::Config(format!("benchmark has no {role:?} task; set `task`"))),
    }
}

/// Tasks the model knows that are also in the benchmark, in model order.
fn known_tasks<'a>(state: &ModelState, data: &'a LoadedBenchmark) -> Vec<&'a TaskDataset> {
    state
        .task_ids()
        .iter()
        .filter_map(|id| data.task(id).ok())
        .collect()
}

fn test_metrics(state: &ModelState, ds: &TaskDataset) -> CliResult<(MultiScored, MetricSet)> {
    let ms = predict_scores(state, &ds.test, &ds.task_id)?;
    let m = ms.macro_metrics()?;
    Ok((ms, m))
}

fn write_report(out: &mut RunDir, prefix: &str, report: &MetricsReport) -> CliResult<()> {
    out.write(&format!("{prefix}.csv"), report.to_csv().as_bytes())?;
    out.write(&format!("{prefix}.txt"), report.to_table().as_bytes())?;
    Ok(())
}

pub fn gen(c: &Common) -> CliResult<()> {
    let mut cfg: config::GenConfig = config::load(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let bench = make_benchmark(&cfg)?;
    let mut out = RunDir::create(&c.out, c.quiet)?;
    write_benchmark(&c.out, &bench)?;
    for t in &bench.manifest.tasks {
        out.record(&t.file)?;
        out.seed(&t.id, t.seed);
    }
    out.record(MANIFEST_FILE)?;
    out.say(format!(
        "benchmark: {} tasks, dim {}, registry {} concepts",
        bench.manifest.tasks.len(),
        bench.manifest.dim,
        bench.manifest.registry_size
    ));
    out.finish("gen", cfg.seed, &cfg)
}

pub fn pretrain(c: &Common) -> CliResult<()> {
    let mut cfg: config::PretrainConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let tasks = pretrain_tasks(&data, cfg.tasks.as_deref())?;
    let p = run_pretrain(&tasks, cfg.model, &cfg.train)?;

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("train", seed);
    out.seed("init", init_seed(&cfg.train));
    out.write("student.ckpt", &to_bytes(&p.student))?;
    out.write("teacher.ckpt", &to_bytes(&p.teacher))?;
    out.write("runlog.csv", p.log.to_csv().as_bytes())?;
    let mut eval = String::from("task,student_accuracy,teacher_accuracy,own_weight\n");
    let mut rows = Vec::new();
    for ds in &tasks {
        let sa = accuracy(&p.student, &ds.test, &ds.task_id)?;
        let ta = accuracy(&p.teacher, &ds.test, &ds.task_id)?;
        let w = mean_own_weight(&p.student, &ds.test, &ds.task_id)?;
        let _ = writeln!(eval, "{},{sa},{ta},{w}", ds.task_id);
        out.say(format!("{}: test accuracy {sa:.4} (teacher {ta:.4}), own weight {w:.3}", ds.task_id));
        rows.push((ds.task_id.clone(), 0, test_metrics(&p.student, ds)?.1));
    }
    out.write("eval.csv", eval.as_bytes())?;
    out.write("runs.csv", runs_csv(&rows).as_bytes())?;
    out.finish("pretrain", seed, &cfg)
}

pub fn finetune(c: &Common) -> CliResult<()> {
    let mut cfg: config::FinetuneConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    let state = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let task = default_task(&data, cfg.task.as_deref(), TaskRole::FewShot)?;
    let target = data.task(&task)?;
    let ft = fine_tune(&state, target, &cfg.train)?;
    let boot = cfg.bootstrap.resolve(rng::derive(seed, &[0xB0]));
    let (ms, m) = test_metrics(&ft.state, target)?;
    let report = MetricsReport::evaluate(&ms, &target.concepts, &boot)?;

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("train", seed);
    out.seed("bootstrap", boot.seed);
    out.write("model.ckpt", &to_bytes(&ft.state))?;
    out.write("runlog.csv", ft.log.to_csv().as_bytes())?;
    write_report(&mut out, "report", &report)?;
    out.write("runs.csv", runs_csv(&[(task.clone(), 0, m)]).as_bytes())?;
    out.say(format!("{task}: test accuracy {:.4}, macro AUC {:.4}", ms.accuracy(), m.auc));
    out.finish("finetune", seed, &cfg)
}

pub fn probe(c: &Common) -> CliResult<()> {
    let mut cfg: ProbeCmdConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    cfg.probe.validate()?;
    let state = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let task = default_task(&data, cfg.task.as_deref(), TaskRole::FewShot)?;
    let ds = data.task(&task)?;
    let probe_seed = rng::derive(seed, &[0x9B]);
    let boot = cfg.bootstrap.resolve(rng::derive(seed, &[0xB0]));

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("probe", probe_seed);
    out.seed("bootstrap", boot.seed);
    let full = linear_probe(&state, &ds.train, &ds.test, ds.classes(), &cfg.probe, probe_seed)?;
    let report = MetricsReport::evaluate(&full.test_scores, &ds.concepts, &boot)?;
    write_report(&mut out, "report", &report)?;
    out.say(format!(
        "{task}: probe test accuracy {:.4}, macro AUC {:.4}",
        full.accuracy(),
        report.macro_avg.auc
    ));
    let rows = match &cfg.fractions {
        None => vec![(task.clone(), 0, report.macro_avg)],
        Some(fractions) => {
            let reduced_seed = rng::derive(seed, &[0x3D]);
            out.seed("reduced", reduced_seed);
            let r = reduced_data_protocol(&state, ds, fractions, cfg.repeats, reduced_seed, &cfg.probe)?;
            let mut csv = String::from("fraction,repeat,train_size,auc,f1,ap,mcc\n");
            for row in &r.rows {
                let m = row.metrics;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    row.fraction, row.repeat, row.train_size, m.auc, m.f1, m.ap, m.mcc
                );
            }
            out.write("reduced.csv", csv.as_bytes())?;
            for (f, stats) in &r.summary {
                out.say(format!(
                    "fraction {f}: AUC {:.4} ± {:.4} over {} repeats",
                    stats.mean.auc, stats.std.auc, stats.n
                ));
            }
            r.rows
                .iter()
                .map(|row| (format!("fraction_{}", row.fraction), row.repeat, row.metrics))
                .collect()
        }
    };
    out.write("runs.csv", runs_csv(&rows).as_bytes())?;
    out.finish("probe", seed, &cfg)
}

pub fn fewshot(c: &Common) -> CliResult<()> {
    let mut cfg: config::FewshotConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    if cfg.shots.is_empty() {
        return Err(CliError::Config("`shots` is empty".into()));
    }
    let state = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let task = default_task(&data, cfg.task.as_deref(), TaskRole::FewShot)?;
    let ds = data.task(&task)?;
    let fs_seed = rng::derive(seed, &[0xF5]);

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("fewshot", fs_seed);
    let mut rows = Vec::new();
    let mut summary = String::from("k,n,median,q1,q3,whisker_low,whisker_high,mean,std,outliers\n");
    for &k in &cfg.shots {
        let r = few_shot_protocol(&state, ds, k, cfg.runs, fs_seed, &cfg.probe)?;
        let b = &r.summary;
        let outliers: Vec<String> = b.outliers.iter().map(f64::to_string).collect();
        let _ = writeln!(
            summary,
            "{k},{},{},{},{},{},{},{},{},{}",
            b.n,
            b.median,
            b.q1,
            b.q3,
            b.whisker_low,
            b.whisker_high,
            b.mean,
            b.std,
            outliers.join(";")
        );
        out.say(format!(
            "k={k}: median AUC {:.4} [q1 {:.4}, q3 {:.4}] over {} runs",
            b.median, b.q1, b.q3, b.n
        ));
        rows.extend(r.metrics.iter().enumerate().map(|(i, m)| (format!("k{k}"), i, *m)));
    }
    out.write("runs.csv", runs_csv(&rows).as_bytes())?;
    out.write("summary.csv", summary.as_bytes())?;
    out.finish("fewshot", seed, &cfg)
}

pub fn zeroshot(c: &Common) -> CliResult<()> {
    let mut cfg: config::ZeroshotConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    let mut state = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    if let Some(tau) = cfg.tau {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CliError::Config(format!("tau must be positive, got {tau}")));
        }
        state.config.tau = tau;
    }
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let task = default_task(&data, cfg.task.as_deref(), TaskRole::ZeroShot)?;
    let target = data.task(&task)?;
    let map = match &cfg.category_map {
        Some(p) => CategoryMap::load(p)?,
        None => CategoryMap::from_concepts(&target.concepts, &known_tasks(&state, &data)),
    };
    map.validate(&state)?;
    let boot = cfg.bootstrap.resolve(rng::derive(seed, &[0xB0]));
    let control_seed = rng::derive(seed, &[0xC0]);

    let rep = zero_shot_evaluate(&state, &target.test, &map, &boot)?;
    let baselines = single_head_baselines(&state, &target.test, &map)?;
    let control = shuffled_label_control(&rep.scores, &map, control_seed, &boot)?;

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("bootstrap", boot.seed);
    out.seed("control", control_seed);
    out.write("category_map.toml", map.to_toml().as_bytes())?;
    write_report(&mut out, "report", &rep.report)?;
    out.write("roc.csv", rep.roc_csv(&map).as_bytes())?;
    let mut b = String::from("head,task,macro_auc\n");
    for (h, auc) in &baselines {
        let _ = writeln!(b, "{h},{},{auc}", state.heads[*h].task_id);
    }
    out.write("baselines.csv", b.as_bytes())?;
    write_report(&mut out, "control", &control.report)?;
    out.write("runs.csv", runs_csv(&[(task.clone(), 0, rep.report.macro_avg)]).as_bytes())?;

    let best = baselines.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    let ci = rep.report.macro_ci[0];
    let cci = control.report.macro_ci[0];
    out.say(format!(
        "{task}: zero-shot macro AUC {:.4} [{:.4}, {:.4}], best single head {best:.4}, shuffled control {:.4} [{:.4}, {:.4}]",
        rep.report.macro_avg.auc, ci.lower, ci.upper, control.report.macro_avg.auc, cci.lower, cci.upper
    ));
    out.finish("zeroshot", seed, &cfg)
}

pub fn increment(c: &Common) -> CliResult<()> {
    let mut cfg: config::IncrementConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    let mut student = load_checkpoint(&require(cfg.student.clone(), "student")?)?;
    let mut teacher = load_checkpoint(&require(cfg.teacher.clone(), "teacher")?)?;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let task = default_task(&data, cfg.task.as_deref(), TaskRole::Incremental)?;
    let new = data.task(&task)?;
    let old = known_tasks(&student, &data);
    let before: Vec<f64> = old
        .iter()
        .map(|ds| accuracy(&student, &ds.test, &ds.task_id))
        .collect::<ratnet_core::Result<_>>()?;
    let log = incremental_pretrain(&mut student, &mut teacher, &old, new, &cfg.train)?;

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("train", seed);
    out.write("student.ckpt", &to_bytes(&student))?;
    out.write("teacher.ckpt", &to_bytes(&teacher))?;
    out.write("runlog.csv", log.to_csv().as_bytes())?;
    let mut eval = String::from("task,before,after\n");
    let mut rows = Vec::new();
    for (ds, b) in old.iter().zip(&before) {
        let a = accuracy(&student, &ds.test, &ds.task_id)?;
        let _ = writeln!(eval, "{},{b},{a}", ds.task_id);
        out.say(format!("{}: accuracy {b:.4} -> {a:.4}", ds.task_id));
        rows.push((ds.task_id.clone(), 0, test_metrics(&student, ds)?.1));
    }
    let a = accuracy(&student, &new.test, &new.task_id)?;
    let _ = writeln!(eval, "{},,{a}", new.task_id);
    out.say(format!("{} (new): accuracy {a:.4}", new.task_id));
    rows.push((new.task_id.clone(), 0, test_metrics(&student, new)?.1));
    out.write("eval.csv", eval.as_bytes())?;
    out.write("runs.csv", runs_csv(&rows).as_bytes())?;
    out.finish("increment", seed, &cfg)
}

pub fn federate(c: &Common) -> CliResult<()> {
    let mut cfg: config::FederateConfig = config::load(Some(require_config(c)?))?;
    let seed = resolve_seed(c, cfg.seed);
    cfg.seed = Some(seed);
    cfg.federation.train.seed = seed;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    if cfg.sites.is_empty() {
        cfg.sites = data
            .manifest
            .with_role(TaskRole::Pretrain)
            .enumerate()
            .map(|(i, t)| config::SiteSpec {
                id: format!("site{i}"),
                tasks: vec![t.id.clone()],
            })
            .collect();
    }
    let sites: Vec<Site> = cfg
        .sites
        .iter()
        .map(|s| {
            let tasks = s
                .tasks
                .iter()
                .map(|t| data.task(t).cloned())
                .collect::<ratnet_core::Result<Vec<_>>>()?;
            Site::new(s.id.clone(), tasks)
        })
        .collect::<ratnet_core::Result<_>>()?;
    let run = run_federation(&sites, cfg.model, &cfg.federation)?;

    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.seed("train", seed);
    out.seed("init", init_seed(&cfg.federation.train));
    out.write("global.ckpt", &to_bytes(&run.global))?;
    out.write("rounds.csv", rounds_csv(&run.records).as_bytes())?;
    let mut eval = String::from("task,accuracy\n");
    let mut rows = Vec::new();
    for ds in known_tasks(&run.global, &data) {
        let a = accuracy(&run.global, &ds.test, &ds.task_id)?;
        let _ = writeln!(eval, "{},{a}", ds.task_id);
        out.say(format!("{}: global test accuracy {a:.4}", ds.task_id));
        rows.push((ds.task_id.clone(), 0, test_metrics(&run.global, ds)?.1));
    }
    out.write("eval.csv", eval.as_bytes())?;
    out.write("runs.csv", runs_csv(&rows).as_bytes())?;
    out.finish("federate", seed, &cfg)
}

pub fn export_embeddings(c: &Common) -> CliResult<()> {
    let cfg: config::ExportConfig = config::load(Some(require_config(c)?))?;
    let state = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let data = load_data(&require(cfg.data.clone(), "data")?)?;
    let tasks: Vec<&TaskDataset> = match &cfg.tasks {
        Some(ids) => ids.iter().map(|id| data.task(id)).collect::<ratnet_core::Result<_>>()?,
        None => data.tasks.iter().collect(),
    };
    let e = state.config.knowledge_dim;
    let mut tsv = String::from("task_id\tconcept_id\tkind");
    for j in 0..e {
        let _ = write!(tsv, "\te{j}");
    }
    tsv.push('\n');
    let mut n = 0usize;
    for ds in tasks {
        let samples = match cfg.split {
            SplitName::Train => &ds.train,
            SplitName::Val => &ds.val,
            SplitName::Test => &ds.test,
        };
        if samples.is_empty() {
            continue;
        }
        let emb = embed(&state, &features_of(samples))?;
        for (i, s) in samples.iter().enumerate() {
            let _ = write!(tsv, "{}\t{}\tsample", ds.task_id, s.concept);
            for v in emb.row(i) {
                let _ = write!(tsv, "\t{v}");
            }
            tsv.push('\n');
            n += 1;
        }
    }
    for (i, id) in state.kb.task_ids().iter().enumerate() {
        let _ = write!(tsv, "{id}\t\tprior");
        for v in state.kb.row(i) {
            let _ = write!(tsv, "\t{v}");
        }
        tsv.push('\n');
    }
    let mut out = RunDir::create(&c.out, c.quiet)?;
    out.write("embeddings.tsv", tsv.as_bytes())?;
    out.say(format!("{n} sample rows, {} knowledge rows", state.kb.len()));
    out.finish("export-embeddings", 0, &cfg)
}
