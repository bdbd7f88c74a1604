//! Pixel accuracy, foreground accuracy and class-averaged precision, recall
//! and F1 from a confusion matrix.

use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `counts[i][j]`: pixels with ground truth `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(k: usize) -> Self {
        ConfusionCounts { k, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tally one pair of equally shaped label maps.
    pub fn add_maps(&mut self, pred: &Tensor<u8>, gt: &Tensor<u8>) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(
                "confusion_counts",
                format!("prediction dims {:?} differ from ground truth {:?}", pred.dims(), gt.dims()),
            ));
        }
        let k = self.k;
        if let Some(bad) = pred.data().iter().chain(gt.data()).find(|&&c| c as usize >= k) {
            return Err(Error::shape("confusion_counts", format!("class id {bad} is not below {k}")));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.k != self.k {
            return Err(Error::InvalidArgument(format!("cannot merge {} and {} class counts", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn gt_total(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.get(i, j)).sum()
    }

    fn pred_total(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }
}

pub fn confusion_counts(pred: &Tensor<u8>, gt: &Tensor<u8>, k: usize) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::new(k);
    c.add_maps(pred, gt)?;
    Ok(c)
}

/// Scores of one evaluation. `None` marks an undefined value: foreground
/// accuracy without foreground ground truth, and the F1 of a class absent
/// from the ground truth (such classes are left out of the averages).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub pixel_accuracy: f64,
    pub foreground_accuracy: Option<f64>,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub avg_f1: f64,
    pub per_class_f1: Vec<Option<f64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(counts: &ConfusionCounts, bg_class: usize) -> Result<MetricReport> {
    let k = counts.k;
    if bg_class >= k {
        return Err(Error::InvalidArgument(format!("background class {bg_class} is not below {k}")));
    }
    let total = counts.total();
    if total == 0 {
        return Err(Error::InvalidArgument("no pixels were evaluated".into()));
    }
    let trace: u64 = (0..k).map(|i| counts.get(i, i)).sum();
    let fg_hit: u64 = (0..k).filter(|&i| i != bg_class).map(|i| counts.get(i, i)).sum();
    let fg_total: u64 = (0..k).filter(|&i| i != bg_class).map(|i| counts.gt_total(i)).sum();

    let mut per_class_f1 = Vec::with_capacity(k);
    let (mut precisions, mut recalls, mut f1s) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..k {
        let gt_c = counts.gt_total(c);
        if gt_c == 0 {
            per_class_f1.push(None);
            continue;
        }
        let tp = counts.get(c, c);
        let pred_c = counts.pred_total(c);
        // 2PR/(P+R) = 2tp/(gt_c + pred_c), and 0 when tp = 0.
        let f1 = (2 * tp, gt_c + pred_c);
        per_class_f1.push(Some(ratio(f1.0, f1.1)));
        precisions.push((tp, pred_c));
        recalls.push((tp, gt_c));
        f1s.push(f1);
    }
    Ok(MetricReport {
        pixel_accuracy: ratio(trace, total),
        foreground_accuracy: (fg_total > 0).then(|| ratio(fg_hit, fg_total)),
        avg_precision: mean_of_ratios(&precisions),
        avg_recall: mean_of_ratios(&recalls),
        avg_f1: mean_of_ratios(&f1s),
        per_class_f1,
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num/den` terms (a zero denominator counts as 0), summed as an
/// exact fraction and rounded once; falls back to floating-point summation
/// if the fraction outgrows 128 bits.
fn mean_of_ratios(terms: &[(u64, u64)]) -> f64 {
    let exact = terms.iter().try_fold((0u128, 1u128), |(n, d), &(tn, td)| {
        if td == 0 || tn == 0 {
            return Some((n, d));
        }
        let (tn, td) = (tn as u128, td as u128);
        let num = n.checked_mul(td)?.checked_add(tn.checked_mul(d)?)?;
        let den = d.checked_mul(td)?;
        let g = gcd(num, den);
        Some((num / g, den / g))
    });
    match exact.and_then(|(n, d)| {
        let den = d.checked_mul(terms.len() as u128)?;
        let g = gcd(n, den);
        Some((n / g, den / g))
    }) {
        Some((n, d)) => n as f64 / d as f64,
        None => terms.iter().map(|&(n, d)| ratio(n, d)).sum::<f64>() / terms.len() as f64,
    }
}

impl MetricReport {
    /// Keys in report order: the five summary scores, then `f1_class_<k>`.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = ["pixel_accuracy", "foreground_accuracy", "avg_precision", "avg_recall", "avg_f1"]
            .map(String::from)
            .to_vec();
        keys.extend((0..self.per_class_f1.len()).map(|c| format!("f1_class_{c}")));
        keys
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v = vec![
            Some(self.pixel_accuracy),
            self.foreground_accuracy,
            Some(self.avg_precision),
            Some(self.avg_recall),
            Some(self.avg_f1),
        ];
        v.extend(self.per_class_f1.iter().copied());
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite report") + "\n"
    }

    /// Header line and one value row; undefined values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let row: Vec<String> = self.values().iter().map(|v| csv_value(*v)).collect();
        format!("{}\n{}\n", self.keys().join(","), row.join(","))
    }
}

pub fn csv_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let keys = self.keys();
        let values = self.values();
        let mut map = s.serialize_map(Some(keys.len()))?;
        for (k, v) in keys.iter().zip(values) {
            map.serialize_entry(k, &v)?;
        }
        map.end()
    }
}
