use std::path::Path;

use adaptseg::data::{load_dataset, Dataset, NUM_CLASSES};
use adaptseg::metrics::{compute_metrics, ConfusionCounts, MetricReport};
use adaptseg::nn::checkpoint::{load_models, Checkpoint};
use adaptseg::train::evaluate;
use adaptseg::Models32;

use crate::error::{CliError, CliResult};
use crate::fsutil::{create_dir, write_text};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Score label maps stored as the labels of another dataset, matched by sample id.
fn score_predictions(pred: &Dataset, data: &Dataset) -> CliResult<MetricReport> {
    let mut counts = ConfusionCounts::new(NUM_CLASSES);
    for s in &data.samples {
        let p = pred
            .samples
            .iter()
            .find(|p| p.id == s.id)
            .and_then(|p| p.label.as_ref())
            .ok_or_else(|| CliError::Usage(format!("no predicted label map for sample `{}`", s.id)))?;
        counts.add_maps(p, s.label.as_ref().expect("checked labeled"))?;
    }
    Ok(compute_metrics(&counts, 0)?)
}

pub fn eval(checkpoint: Option<&Path>, predictions: Option<&Path>, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let dataset = load_dataset(data)?;
    if dataset.is_empty() {
        return Err(CliError::Usage(format!("{} has no samples", data.display())));
    }
    if !dataset.is_labeled() {
        return Err(CliError::Usage(format!(
            "{} has unlabeled samples; evaluation needs ground truth for every sample, e.g. the target test split",
            data.display()
        )));
    }
    let report = match (checkpoint, predictions) {
        (Some(ckpt), _) => {
            let models: Models32 = load_models(&Checkpoint::load(ckpt)?)?;
            evaluate(&models, &dataset)?.1
        }
        (None, Some(pred)) => score_predictions(&load_dataset(pred)?, &dataset)?,
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --predictions".into())),
    };
    let json = report.to_json();
    print!("{json}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join(REPORT_JSON), &json)?;
        write_text(&dir.join(REPORT_CSV), &report.to_csv())?;
    }
    Ok(())
}
