use std::path::{Path, PathBuf};

use adaptseg::data::{load_dataset, Dataset};
use adaptseg::metrics::{csv_value, MetricReport};
use adaptseg::nn::checkpoint::Checkpoint;
use adaptseg::train::{evaluate, StepRecord, TrainState};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::fsutil::{create_dir, prepare_dir, read_text, write_text};

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const AUDIT_FILE: &str = "audit.log";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_HEADER: &str = "iter,pixel_accuracy,foreground_accuracy,avg_precision,avg_recall,avg_f1";

const RUN_FILES: [&str; 5] = [CONFIG_FILE, MANIFEST_FILE, AUDIT_FILE, METRICS_FILE, CHECKPOINT_DIR];

pub fn checkpoint_path(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("iter_{iteration:06}.ckpt"))
}

/// Audit lines, metric rows and eval history of a run, rewritten whole on
/// every flush.
struct RunLog {
    dir: PathBuf,
    audit: Vec<String>,
    metrics: Vec<String>,
    history: Vec<Value>,
    header: Value,
}

impl RunLog {
    fn new(c: &ExperimentConfig) -> Self {
        let header = json!({
            "software": format!("adaptseg {}", env!("CARGO_PKG_VERSION")),
            "seed": c.train.seed,
            "mode": c.mode.name(),
            "config": c.to_json(),
        });
        RunLog { dir: c.run_dir.clone(), audit: Vec::new(), metrics: Vec::new(), history: Vec::new(), header }
    }

    /// Reload the logs of an interrupted run, dropping entries past `iteration`.
    fn resume(c: &ExperimentConfig, iteration: u64) -> CliResult<Self> {
        let mut log = RunLog::new(c);
        let audit = read_text(&log.dir.join(AUDIT_FILE))?;
        log.audit = audit
            .lines()
            .filter(|l| leading_number(l.strip_prefix("t=").unwrap_or("")).is_some_and(|t| t <= iteration))
            .map(String::from)
            .collect();
        let metrics = read_text(&log.dir.join(METRICS_FILE))?;
        log.metrics = metrics
            .lines()
            .skip(1)
            .filter(|l| leading_number(l).is_some_and(|t| t <= iteration))
            .map(String::from)
            .collect();
        let manifest = read_text(&log.dir.join(MANIFEST_FILE))?;
        let manifest: Value = serde_json::from_str(&manifest)
            .map_err(|e| CliError::Io(format!("{}: {e}", log.dir.join(MANIFEST_FILE).display())))?;
        log.history = manifest["history"]
            .as_array()
            .map(|h| h.iter().filter(|e| e["iter"].as_u64().is_some_and(|t| t <= iteration)).cloned().collect())
            .unwrap_or_default();
        Ok(log)
    }

    fn record_steps(&mut self, records: &[StepRecord]) {
        self.audit.extend(records.iter().map(|r| r.to_string()));
    }

    fn record_eval(&mut self, iteration: u64, r: &MetricReport) {
        let row: Vec<String> = r.values()[..5].iter().map(|v| csv_value(*v)).collect();
        self.metrics.push(format!("{iteration},{}", row.join(",")));
        let mut entry = json!({ "iter": iteration });
        if let (Value::Object(e), Ok(Value::Object(scores))) = (&mut entry, serde_json::to_value(r)) {
            e.extend(scores);
        }
        self.history.push(entry);
    }

    fn flush(&self) -> CliResult<()> {
        let mut audit = self.audit.join("\n");
        if !audit.is_empty() {
            audit.push('\n');
        }
        write_text(&self.dir.join(AUDIT_FILE), &audit)?;
        let mut csv = format!("{METRICS_HEADER}\n");
        for row in &self.metrics {
            csv.push_str(row);
            csv.push('\n');
        }
        write_text(&self.dir.join(METRICS_FILE), &csv)?;
        let mut manifest = self.header.clone();
        manifest["history"] = Value::Array(self.history.clone());
        let text = serde_json::to_string_pretty(&manifest).expect("plain JSON values") + "\n";
        write_text(&self.dir.join(MANIFEST_FILE), &text)
    }
}

fn leading_number(s: &str) -> Option<u64> {
    let end = s.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(s.len());
    s[..end].parse().ok()
}

/// Config text without the iteration count, which a resumed run may extend.
fn resumable_text(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("iterations =")).collect::<Vec<_>>().join("\n")
}

fn load(dir: &Path, what: &str) -> CliResult<Dataset> {
    load_dataset(dir).map_err(|e| CliError::Io(format!("cannot load the {what} dataset: {e}")))
}

pub fn train(c: &ExperimentConfig, resume: Option<&Path>, force: bool) -> CliResult<()> {
    let source = load(&c.source_dir, "source")?;
    let target = load(&c.target_train_dir(), "target training")?;
    let test = if c.eval_interval > 0 { Some(load(&c.target_test_dir(), "target test")?) } else { None };
    if let Some(t) = &test {
        if !t.is_labeled() {
            return Err(CliError::Usage(format!("{} has unlabeled samples", c.target_test_dir().display())));
        }
    }

    let (mut state, mut log) = match resume {
        Some(ckpt_path) => {
            let stored = read_text(&c.run_dir.join(CONFIG_FILE))?;
            if resumable_text(&stored) != resumable_text(&c.to_text()) {
                return Err(CliError::Usage(format!(
                    "configuration differs from {}; only `iterations` may change on resume",
                    c.run_dir.join(CONFIG_FILE).display()
                )));
            }
            let ckpt = Checkpoint::load(ckpt_path)?;
            let state = TrainState::<f32>::from_checkpoint(c.train.clone(), &ckpt)?;
            let log = RunLog::resume(c, state.iteration)?;
            eprintln!("resuming at iteration {}", state.iteration);
            (state, log)
        }
        None => {
            prepare_dir(&c.run_dir, &RUN_FILES, force)?;
            (TrainState::<f32>::new(c.train.clone())?, RunLog::new(c))
        }
    };
    write_text(&c.run_dir.join(CONFIG_FILE), &c.to_text())?;
    create_dir(&c.run_dir.join(CHECKPOINT_DIR))?;
    log.flush()?;

    let n = c.train.iterations;
    while state.iteration < n {
        let records = match state.step(&source, &target) {
            Ok(r) => r,
            Err(e) => {
                log.flush()?;
                return Err(e.into());
            }
        };
        let t = state.iteration;
        log.record_steps(&records);
        if let Some(r) = records.iter().find(|r| !r.isolated()) {
            log.flush()?;
            return Err(CliError::Numerical(format!("step isolation violated: {r}")));
        }
        let mut dirty = false;
        if let (Some(test), true) = (&test, t % c.eval_interval.max(1) == 0) {
            let (_, report) = evaluate(&state.models, test)?;
            eprintln!("iter {t}: target avg_f1 {:.4} pixel_accuracy {:.4}", report.avg_f1, report.pixel_accuracy);
            log.record_eval(t, &report);
            dirty = true;
        }
        if (c.checkpoint_interval > 0 && t % c.checkpoint_interval == 0) || t == n {
            state.to_checkpoint().save(checkpoint_path(&c.run_dir, t))?;
            dirty = true;
        }
        if dirty {
            log.flush()?;
        }
    }
    log.flush()?;
    eprintln!("finished {n} iterations in {}", c.run_dir.display());
    Ok(())
}
