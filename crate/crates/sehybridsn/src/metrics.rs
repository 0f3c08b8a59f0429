//! Confusion-matrix accumulation and the three accuracy indices:
//! overall accuracy, average accuracy and the kappa coefficient.

use crate::error::{Error, Result};
use crate::json::Writer;

/// K x K counts, rows = true class, columns = predicted class.
/// Classes are 1-based at the API surface, matching ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    /// Records one (true, predicted) observation; classes in 1..=K.
    pub fn accumulate(&mut self, true_class: u16, predicted_class: u16) -> Result<()> {
        let t = true_class as usize;
        let p = predicted_class as usize;
        if t == 0 || t > self.k || p == 0 || p > self.k {
            return Err(Error::data(format!(
                "class out of range: true {t}, predicted {p}, K={}",
                self.k
            )));
        }
        self.counts[(t - 1) * self.k + (p - 1)] += 1;
        Ok(())
    }

    #[inline]
    pub fn get(&self, true_class: usize, predicted_class: usize) -> u64 {
        self.counts[(true_class - 1) * self.k + (predicted_class - 1)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + i]).sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        self.counts[(true_class - 1) * self.k..true_class * self.k]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, predicted_class: usize) -> u64 {
        (0..self.k)
            .map(|r| self.counts[r * self.k + (predicted_class - 1)])
            .sum()
    }

    /// Cell-wise sum; confusion matrices merge as a monoid.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(Error::shape("cannot merge confusion matrices of different K"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::data("overall accuracy of an empty matrix"));
        }
        Ok(self.trace() as f64 / total as f64)
    }

    /// Mean of per-class recalls over classes with at least one true
    /// sample; empty rows are skipped.
    pub fn average_accuracy(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut classes = 0usize;
        for c in 1..=self.k {
            let row = self.row_sum(c);
            if row > 0 {
                sum += self.get(c, c) as f64 / row as f64;
                classes += 1;
            }
        }
        if classes == 0 {
            return Err(Error::data("average accuracy with no populated classes"));
        }
        Ok(sum / classes as f64)
    }

    /// Per-class recall; None for classes with no true samples.
    pub fn per_class_recall(&self) -> Vec<Option<f64>> {
        (1..=self.k)
            .map(|c| {
                let row = self.row_sum(c);
                if row > 0 {
                    Some(self.get(c, c) as f64 / row as f64)
                } else {
                    None
                }
            })
            .collect()
    }

    /// kappa = (p_o - p_e) / (1 - p_e) with p_e from the marginals.
    /// The degenerate p_e = 1 case is 1 for a perfect diagonal and an
    /// error otherwise.
    pub fn kappa(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::data("kappa of an empty matrix"));
        }
        let t = total as f64;
        let p_o = self.trace() as f64 / t;
        let mut p_e = 0.0;
        for c in 1..=self.k {
            p_e += (self.row_sum(c) as f64 / t) * (self.col_sum(c) as f64 / t);
        }
        if (1.0 - p_e).abs() < 1e-15 {
            if (p_o - 1.0).abs() < 1e-15 {
                return Ok(1.0);
            }
            return Err(Error::numeric("kappa undefined: chance agreement is 1"));
        }
        Ok((p_o - p_e) / (1.0 - p_e))
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            oa: self.overall_accuracy()?,
            aa: self.average_accuracy()?,
            kappa: self.kappa()?,
            per_class: self.per_class_recall(),
            total: self.total(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.k {
            let row: Vec<String> = (0..self.k)
                .map(|c| self.counts[r * self.k + c].to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// OA, AA, kappa and per-class recall for one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
    pub total: u64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut w = Writer::new();
        w.begin_object()
            .key("oa")
            .float(self.oa)
            .key("aa")
            .float(self.aa)
            .key("kappa")
            .float(self.kappa)
            .key("total")
            .uint(self.total)
            .key("per_class")
            .begin_array();
        for pc in &self.per_class {
            match pc {
                Some(v) => w.float(*v),
                None => w.bool(false),
            };
        }
        w.end_array().end_object();
        w.finish()
    }

    /// Table in the usual report layout: one row per class (accuracy in
    /// percent, two decimals), then kappa, OA and AA.
    pub fn render_table(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        out.push_str("Class                              Accuracy\n");
        for (i, pc) in self.per_class.iter().enumerate() {
            let name = class_names
                .get(i)
                .map(|s| s.as_str())
                .unwrap_or("(unnamed)");
            match pc {
                Some(v) => out.push_str(&format!("{:2}  {:30} {:6.2}\n", i + 1, name, v * 100.0)),
                None => out.push_str(&format!("{:2}  {:30}      -\n", i + 1, name)),
            }
        }
        out.push_str(&format!("    {:30} {:6.4}\n", "KAPPA", self.kappa));
        out.push_str(&format!("    {:30} {:6.2}\n", "OA (%)", self.oa * 100.0));
        out.push_str(&format!("    {:30} {:6.2}\n", "AA (%)", self.aa * 100.0));
        out
    }
}
