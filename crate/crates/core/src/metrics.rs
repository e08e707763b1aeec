//! Change-detection scores computed from a streaming confusion matrix.
//!
//! `q[i][j]` counts pixels predicted as class `i` whose ground truth is `j`;
//! class 0 is "no change". All four headline scores (OA, mIoU, SeK, F_scd)
//! and their intermediate terms are pure functions of that matrix.
//!
//! Conventions:
//! - `IoU_nc` uses the union form `q00 / (row0 + col0 - q00)`.
//! - The change-only matrix used by SeK zeroes `q00` alone; change-versus-
//!   background confusions stay in it.
//! - A score whose denominator vanishes is `None` (serialized as `null`),
//!   never a fabricated number.

use std::ops::{Add, AddAssign};

use ndarray::{ArrayView2, ArrayViewD};
use serde::{Deserialize, Serialize};
use tripath_autograd::par;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Empty `(N+1) x (N+1)` matrix for `num_classes = N` change classes.
    pub fn new(num_classes: usize) -> Self {
        let k = num_classes + 1;
        Self { num_classes, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k < 2 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(format!("confusion matrix must be square with at least 2 rows, got {k}")));
        }
        Ok(Self { num_classes: k - 1, counts: rows.iter().flatten().copied().collect() })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn k(&self) -> usize {
        self.num_classes + 1
    }

    pub fn get(&self, pred: usize, gt: usize) -> u64 {
        self.counts[pred * self.k() + gt]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k()).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.k()).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k()).map(|i| self.get(i, j)).sum()
    }

    fn trace_from(&self, start: usize) -> u64 {
        (start..self.k()).map(|i| self.get(i, i)).sum()
    }

    /// Add per-pixel counts from two label maps of identical shape.
    pub fn accumulate(&mut self, pred: ArrayViewD<'_, u8>, gt: ArrayViewD<'_, u8>) -> Result<()> {
        if pred.shape() != gt.shape() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.shape(),
                gt.shape()
            )));
        }
        let k = self.k();
        let n = self.num_classes;
        let mut local = vec![0u64; k * k];
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            let (p, g) = (p as usize, g as usize);
            if p > n || g > n {
                return Err(Error::LabelOutOfRange {
                    sample: if p > n { "prediction".into() } else { "ground truth".into() },
                    value: p.max(g),
                    max: n,
                });
            }
            local[p * k + g] += 1;
        }
        for (a, b) in self.counts.iter_mut().zip(local) {
            *a += b;
        }
        Ok(())
    }

    pub fn accumulate_2d(&mut self, pred: ArrayView2<'_, u8>, gt: ArrayView2<'_, u8>) -> Result<()> {
        self.accumulate(pred.into_dyn(), gt.into_dyn())
    }

    /// Matrix over many `(pred, gt)` pairs; pairs are counted independently
    /// (in parallel when enabled) and merged in order.
    pub fn from_pairs<P, G>(num_classes: usize, pairs: &[(P, G)]) -> Result<Self>
    where
        P: AsRef<[u8]> + Sync,
        G: AsRef<[u8]> + Sync,
    {
        let parts = par::map_slice(pairs, |(p, g)| {
            let mut cm = ConfusionMatrix::new(num_classes);
            let (p, g) = (p.as_ref(), g.as_ref());
            cm.accumulate(
                ndarray::aview1(p).into_dyn(),
                ndarray::aview1(g).into_dyn(),
            )?;
            Ok::<_, Error>(cm)
        });
        let mut total = ConfusionMatrix::new(num_classes);
        for part in parts {
            total.merge(&part?)?;
        }
        Ok(total)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "merging {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        Self { num_classes: self.num_classes, counts: self.counts.iter().map(|c| c * k).collect() }
    }

    /// Fraction of correctly classified pixels.
    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(self.trace_from(0) as f64 / total as f64)
    }

    pub fn miou(&self) -> MiouScores {
        let q00 = self.get(0, 0);
        let union_nc = self.row_sum(0) + self.col_sum(0) - q00;
        let iou_nc = ratio(q00, union_nc);
        let changed: u64 = (1..self.k()).flat_map(|i| (1..self.k()).map(move |j| (i, j))).map(|(i, j)| self.get(i, j)).sum();
        let iou_c = ratio(changed, self.total() - q00);
        let miou = match (iou_nc, iou_c) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        MiouScores { miou, iou_nc, iou_c }
    }

    pub fn sek(&self) -> SekScores {
        let k = self.k();
        let hat = |i: usize, j: usize| if i == 0 && j == 0 { 0 } else { self.get(i, j) };
        let sum_hat = self.total() - self.get(0, 0);
        let rho = ratio(self.trace_from(1), sum_hat);
        let eta = (sum_hat > 0).then(|| {
            let acc: f64 = (0..k)
                .map(|i| {
                    let row: u64 = (0..k).map(|j| hat(i, j)).sum();
                    let col: u64 = (0..k).map(|j| hat(j, i)).sum();
                    row as f64 * col as f64
                })
                .sum();
            acc / (sum_hat as f64 * sum_hat as f64)
        });
        let iou_c = self.miou().iou_c;
        let sek = match (rho, eta, iou_c) {
            (Some(rho), Some(eta), Some(iou_c)) if eta != 1.0 => Some((iou_c - 1.0).exp() * (rho - eta) / (1.0 - eta)),
            _ => None,
        };
        SekScores { sek, rho, eta }
    }

    pub fn f_scd(&self) -> FScdScores {
        let tp = self.trace_from(1);
        let pred_changed: u64 = (1..self.k()).map(|i| self.row_sum(i)).sum();
        let gt_changed: u64 = (1..self.k()).map(|j| self.col_sum(j)).sum();
        let p = ratio(tp, pred_changed);
        let r = ratio(tp, gt_changed);
        let f = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(0.0), _) | (_, Some(0.0)) => Some(0.0),
            _ => None,
        };
        FScdScores { f_scd: f, p_scd: p, r_scd: r }
    }

    /// Standard per-class IoU `q_ii / (row_i + col_i - q_ii)`.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k())
            .map(|i| {
                let qii = self.get(i, i);
                ratio(qii, self.row_sum(i) + self.col_sum(i) - qii)
            })
            .collect()
    }

    pub fn report(&self, class_names: &[String]) -> MetricsReport {
        let m = self.miou();
        let s = self.sek();
        let f = self.f_scd();
        MetricsReport {
            oa: self.overall_accuracy().ok(),
            miou: m.miou,
            iou_nc: m.iou_nc,
            iou_c: m.iou_c,
            sek: s.sek,
            rho: s.rho,
            eta: s.eta,
            p_scd: f.p_scd,
            r_scd: f.r_scd,
            f_scd: f.f_scd,
            per_class_iou: self.per_class_iou(),
            confusion_matrix: self.rows(),
            num_classes: self.num_classes,
            class_names: class_names.to_vec(),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        self.merge(rhs).expect("class count mismatch");
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;
    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self += &rhs;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiouScores {
    pub miou: Option<f64>,
    pub iou_nc: Option<f64>,
    pub iou_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SekScores {
    pub sek: Option<f64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScdScores {
    pub f_scd: Option<f64>,
    pub p_scd: Option<f64>,
    pub r_scd: Option<f64>,
}

/// Serialized evaluation report; undefined scores are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "OA")]
    pub oa: Option<f64>,
    #[serde(rename = "mIoU")]
    pub miou: Option<f64>,
    #[serde(rename = "IoU_nc")]
    pub iou_nc: Option<f64>,
    #[serde(rename = "IoU_c")]
    pub iou_c: Option<f64>,
    #[serde(rename = "SeK")]
    pub sek: Option<f64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    #[serde(rename = "P_scd")]
    pub p_scd: Option<f64>,
    #[serde(rename = "R_scd")]
    pub r_scd: Option<f64>,
    #[serde(rename = "F_scd")]
    pub f_scd: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub confusion_matrix: Vec<Vec<u64>>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}
