use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use envisions_core::engine::{evaluate, run_with, EngineError, IterationReport, RunConfig};
use envisions_core::env::{
    generate_dataset, read_tasks, read_witnesses, write_tasks, write_witnesses, Dataset, EnvKind, Split,
};
use envisions_core::metrics::{analysis_file_name, AnalysisSeries};
use envisions_core::policy::Checkpoint;

use crate::UsageError;

const TASKS_FILE: &str = "tasks.jsonl";
const WITNESS_FILE: &str = "witnesses.jsonl";
const REPORTS_FILE: &str = "reports.jsonl";
const CONFIG_FILE: &str = "config.json";

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_tasks(&dir.join(TASKS_FILE), &dataset.tasks)?;
    write_witnesses(&dir.join(WITNESS_FILE), &dataset.witnesses)?;
    Ok(())
}

fn read_dataset(dir: &Path) -> Result<Dataset> {
    let tasks = read_tasks(&dir.join(TASKS_FILE))?;
    let witness_path = dir.join(WITNESS_FILE);
    let witnesses = if witness_path.exists() {
        read_witnesses(&witness_path)?
    } else {
        Default::default()
    };
    Ok(Dataset { tasks, witnesses })
}

fn generate(env: EnvKind, n_train: usize, n_held_out: usize, seed: u64) -> Result<Dataset> {
    let mut dataset = generate_dataset(env, n_train, seed, Split::HeldIn)?;
    if n_held_out > 0 {
        dataset.extend(generate_dataset(env, n_held_out, seed, Split::HeldOut)?);
    }
    Ok(dataset)
}

pub fn gen_data(env: EnvKind, n_train: usize, n_held_out: usize, seed: u64, out: &Path) -> Result<()> {
    let dataset = generate(env, n_train, n_held_out, seed)?;
    write_dataset(out, &dataset)?;
    println!(
        "wrote {n_train} held_in and {n_held_out} held_out {env} tasks to {}",
        out.display()
    );
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    RunConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn run(config_path: &Path, out_dir: &Path, workers: Option<usize>) -> Result<()> {
    let mut config = load_config(config_path)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        config.workers = w;
    }
    let dataset = match &config.dataset {
        Some(dir) => read_dataset(dir)?,
        None => generate(config.env, config.n_held_in, config.n_held_out, config.dataset_seed())?,
    };

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_dataset(&out_dir.join("dataset"), &dataset)?;
    fs::write(
        out_dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;

    let reports_path = out_dir.join(REPORTS_FILE);
    let mut reports = BufWriter::new(
        File::create(&reports_path).with_context(|| format!("creating {}", reports_path.display()))?,
    );
    let output = run_with(&config, &dataset, |r| {
        let line = serde_json::to_string(r).expect("report serializes");
        let io = |e: std::io::Error| EngineError::Dataset(format!("writing {}: {e}", reports_path.display()));
        writeln!(reports, "{line}").map_err(io)?;
        reports.flush().map_err(io)?;
        println!("{}", r.summary_line());
        Ok(())
    });
    let output = match output {
        Err(EngineError::Config(message)) => return Err(usage(message)),
        other => other?,
    };

    output.checkpoint.save(&out_dir.join("checkpoint.json"))?;
    output.pool.persist(&out_dir.join("pool.jsonl"))?;
    let series = output.analysis();
    write_analysis(&series, out_dir, &config)?;
    let last = output.reports.last().expect("warmup report always exists");
    let summary = serde_json::json!({
        "env": config.env,
        "method": config.method,
        "seed": config.seed,
        "iterations": config.iterations,
        "final_held_in_rate": last.held_in_rate,
        "final_held_out_rate": last.held_out_rate,
        "final_diversity": last.diversity,
        "pool_size": output.pool.len(),
    });
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

fn write_analysis(series: &AnalysisSeries, dir: &Path, config: &RunConfig) -> Result<()> {
    let method = config.method.name();
    series.write_csv(&dir.join(analysis_file_name(method, config.seed, "csv")))?;
    series.write_json(&dir.join(analysis_file_name(method, config.seed, "json")))?;
    Ok(())
}

pub fn eval(checkpoint: &Path, dataset: &Path, split: Split, with_refine: bool) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let tasks = read_tasks(&dataset.join(TASKS_FILE))?;
    let excluded: BTreeSet<&str> = ckpt.excluded_task_ids.iter().map(String::as_str).collect();
    let selected: Vec<_> = tasks
        .iter()
        .filter(|t| t.split == split && !excluded.contains(t.id.as_str()))
        .collect();
    let Some(first) = selected.first() else {
        bail!("no {} tasks in {}", split.name(), dataset.display());
    };
    let env = first.env;
    if let Some(t) = selected.iter().find(|t| t.env != env) {
        bail!("dataset mixes environments ({} and {})", env, t.env);
    }
    let max_len = ckpt.max_len.unwrap_or_else(|| env.max_solution_len());
    let outcome = evaluate(&ckpt.model, env, &selected, max_len, with_refine)?;
    println!("{}", outcome.rate());
    Ok(())
}

fn read_reports(run_dir: &Path) -> Result<Vec<IterationReport>> {
    let path = run_dir.join(REPORTS_FILE);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn read_run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunConfig::from_json(&text)?)
}

pub fn analyze(run_dir: &Path, out: Option<&Path>) -> Result<()> {
    let config = read_run_config(run_dir)?;
    let reports = read_reports(run_dir)?;
    let series = AnalysisSeries {
        records: reports.iter().map(IterationReport::analysis_record).collect(),
    };
    let out = out.unwrap_or(run_dir);
    fs::create_dir_all(out)?;
    write_analysis(&series, out, &config)?;
    println!(
        "wrote {} rows to {}",
        series.records.len(),
        out.join(analysis_file_name(config.method.name(), config.seed, "csv")).display()
    );
    Ok(())
}

pub fn compare(runs: &[PathBuf], out: &Path) -> Result<()> {
    if runs.len() < 2 {
        return Err(usage("compare needs at least two run directories"));
    }
    let mut header = vec!["iteration".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut seen = BTreeSet::new();
    for dir in runs {
        let config = read_run_config(dir)?;
        let reports = read_reports(dir)?;
        let mut prefix = format!("{}_{}", config.method.name(), config.seed);
        let mut n = 2;
        while !seen.insert(prefix.clone()) {
            prefix = format!("{}_{}_{n}", config.method.name(), config.seed);
            n += 1;
        }
        header.push(format!("{prefix}_held_in"));
        header.push(format!("{prefix}_held_out"));
        columns.push(reports.iter().map(|r| r.held_in_rate).collect());
        columns.push(reports.iter().map(|r| r.held_out_rate).collect());
    }
    let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
    if columns.iter().any(|c| c.len() != rows) {
        eprintln!("warning: runs have different iteration counts; missing values are left empty");
    }
    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    w.write_record(&header)?;
    for i in 0..rows {
        let mut record = vec![i.to_string()];
        record.extend(columns.iter().map(|c| c.get(i).map(f64::to_string).unwrap_or_default()));
        w.write_record(&record)?;
    }
    w.flush()?;
    println!("merged {} runs into {}", runs.len(), out.display());
    Ok(())
}
