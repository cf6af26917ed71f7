//! Binary segmentation metrics and per-sample reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kde::{gaussian_kde_auto, KdeCurve};
use crate::label::LabelMap;

/// Pixel counts of a binary confusion matrix for one positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn count(pred: &LabelMap, gt: &LabelMap, positive: u8) -> Result<Self> {
        pred.expect_same_dims("confusion", gt)?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            match (p == positive, g == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// `2TP / (2TP + FP + FN)`; 1.0 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// `FP / (FP + TN)`; 0.0 when there are no negatives.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `FN / (FN + TP)`; 0.0 when there are no positives.
    pub fn fnr(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

pub fn dice(pred: &LabelMap, gt: &LabelMap, positive: u8) -> Result<f64> {
    Ok(Confusion::count(pred, gt, positive)?.dice())
}

pub fn fpr(pred: &LabelMap, gt: &LabelMap, positive: u8) -> Result<f64> {
    Ok(Confusion::count(pred, gt, positive)?.fpr())
}

pub fn fnr(pred: &LabelMap, gt: &LabelMap, positive: u8) -> Result<f64> {
    Ok(Confusion::count(pred, gt, positive)?.fnr())
}

/// Mean and standard error (`sample std / sqrt(n)`) of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
}

impl Summary {
    /// Two-pass mean and unbiased variance. A single value has zero standard error.
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { n, mean, std_err })
    }
}

/// Named metric columns over a list of samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub ids: Vec<String>,
    columns: Vec<(String, Vec<f64>)>,
}

/// Number of grid points used for report density curves.
pub const KDE_GRID_POINTS: usize = 256;

impl MetricsReport {
    pub fn new(ids: Vec<String>) -> Self {
        MetricsReport {
            ids,
            columns: Vec::new(),
        }
    }

    /// Dice, FPR and FNR per sample for binary masks (positive class 1).
    pub fn segmentation(ids: Vec<String>, preds: &[LabelMap], gts: &[LabelMap]) -> Result<Self> {
        if ids.len() != preds.len() || preds.len() != gts.len() {
            return Err(Error::contract(
                "MetricsReport::segmentation",
                format!("{} ids, {} predictions, {} ground truths", ids.len(), preds.len(), gts.len()),
            ));
        }
        let conf = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| Confusion::count(p, g, 1))
            .collect::<Result<Vec<_>>>()?;
        let mut r = MetricsReport::new(ids);
        r.push_column("dice", conf.iter().map(Confusion::dice).collect())?;
        r.push_column("fpr", conf.iter().map(Confusion::fpr).collect())?;
        r.push_column("fnr", conf.iter().map(Confusion::fnr).collect())?;
        Ok(r)
    }

    pub fn push_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.ids.len() {
            return Err(Error::contract(
                "MetricsReport::push_column",
                format!("column `{name}` has {} values for {} samples", values.len(), self.ids.len()),
            ));
        }
        self.columns.push((name.to_string(), values));
        Ok(())
    }

    pub fn metric_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn summary(&self, name: &str) -> Option<Summary> {
        self.column(name).and_then(Summary::of)
    }

    /// Density curve per metric; metrics with no spread are left out.
    pub fn kde_curves(&self) -> Vec<(String, KdeCurve)> {
        self.columns
            .iter()
            .filter_map(|(n, v)| gaussian_kde_auto(v, KDE_GRID_POINTS).ok().map(|c| (n.clone(), c)))
            .collect()
    }

    /// `id,<metric>,...` one row per sample.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("id");
        for (n, _) in &self.columns {
            write!(out, ",{n}").unwrap();
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for (_, v) in &self.columns {
                write!(out, ",{}", v[i]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `method,metric,n,mean,std_err` one row per metric.
    pub fn summary_csv(&self, method: &str) -> String {
        let mut out = String::from("method,metric,n,mean,std_err\n");
        for (n, _) in &self.columns {
            if let Some(s) = self.summary(n) {
                writeln!(out, "{method},{n},{},{},{}", s.n, s.mean, s.std_err).unwrap();
            }
        }
        out
    }

    /// `method,metric,x,density` long-format density curves.
    pub fn kde_csv(&self, method: &str) -> String {
        let mut out = String::from("method,metric,x,density\n");
        for (n, c) in self.kde_curves() {
            for (x, d) in c.grid.iter().zip(&c.density) {
                writeln!(out, "{method},{n},{x},{d}").unwrap();
            }
        }
        out
    }
}
