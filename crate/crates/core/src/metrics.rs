//! Classification metrics from a confusion matrix.

use serde::{Deserialize, Serialize};
use wisense_csi::{Activity, Occupancy, RadioImage};
use wisense_tensor::ops::argmax;
use wisense_tensor::Element;

use crate::error::{CoreError, Result};
use crate::model::{images_to_tensor, BranchyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rod,
    Har,
}

impl Task {
    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Task::Rod => &Occupancy::NAMES,
            Task::Har => &Activity::NAMES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn label(self, img: &RadioImage) -> Option<usize> {
        match self {
            Task::Rod => img.rod.map(Occupancy::index),
            Task::Har => img.har.map(Activity::index),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rod" => Ok(Task::Rod),
            "har" => Ok(Task::Har),
            other => Err(CoreError::Config(format!("unknown task {other:?} (rod, har)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub samples: u64,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub micro_avg: Averages,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricsReport {
    /// Metrics of a square confusion matrix; undefined ratios count as 0.
    pub fn from_confusion(classes: Vec<String>, confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) || classes.len() != k {
            return Err(CoreError::Param(format!("confusion matrix must be {0}×{0}", classes.len())));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(CoreError::Param("confusion matrix is empty".into()));
        }
        let diag: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let mut macro_avg = Averages::default();
        let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
        for c in 0..k {
            let tp = confusion[c][c];
            let predicted: u64 = (0..k).map(|r| confusion[r][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
            macro_avg.precision += p / k as f64;
            macro_avg.recall += r / k as f64;
            macro_avg.f1 += f1(p, r) / k as f64;
            tp_all += tp;
            fp_all += predicted - tp;
            fn_all += actual - tp;
        }
        let (p, r) = (ratio(tp_all, tp_all + fp_all), ratio(tp_all, tp_all + fn_all));
        Ok(MetricsReport {
            classes,
            samples: total,
            accuracy: ratio(diag, total),
            macro_avg,
            micro_avg: Averages {
                precision: p,
                recall: r,
                f1: f1(p, r),
            },
            confusion,
        })
    }

    /// Aligned text rendering: summary lines then the confusion matrix.
    pub fn table(&self) -> String {
        let mut s = format!(
            "samples   {}\naccuracy  {:.4}\n          precision  recall  f1\nmacro     {:>9.4}  {:>6.4}  {:.4}\nmicro     {:>9.4}  {:>6.4}  {:.4}\n\n",
            self.samples,
            self.accuracy,
            self.macro_avg.precision,
            self.macro_avg.recall,
            self.macro_avg.f1,
            self.micro_avg.precision,
            self.micro_avg.recall,
            self.micro_avg.f1,
        );
        let w = self.classes.iter().map(String::len).max().unwrap_or(0).max(6);
        s += &format!("{:w$}", "true\\pred");
        for c in &self.classes {
            s += &format!("  {c:>w$}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            s += &format!("{name:w$}", w = w.max(9));
            for v in row {
                s += &format!("  {v:>w$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Scores `model` on the samples labeled for `task`, `batch` at a time.
pub fn evaluate<T: Element>(
    model: &BranchyModel<T>,
    data: &[RadioImage],
    task: Task,
    batch: usize,
) -> Result<MetricsReport> {
    let labeled: Vec<(&RadioImage, usize)> = data.iter().filter_map(|i| task.label(i).map(|l| (i, l))).collect();
    if labeled.is_empty() {
        return Err(CoreError::Param(format!("no samples labeled for {task:?}")));
    }
    let names = task.class_names();
    let k = names.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for chunk in labeled.chunks(batch.max(1)) {
        let imgs: Vec<&RadioImage> = chunk.iter().map(|(i, _)| *i).collect();
        let (rod, har) = model.predict_logits(&images_to_tensor(&imgs)?)?;
        let logits = match task {
            Task::Rod => rod,
            Task::Har => har,
        };
        for (row, (_, label)) in logits.data().chunks(k).zip(chunk) {
            confusion[*label][argmax(row)] += 1;
        }
    }
    MetricsReport::from_confusion(names, confusion)
}
