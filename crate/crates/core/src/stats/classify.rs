//! Two-class cross-validated classification of feature vectors.

use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const KNN_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Knn,
    NaiveBayes,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ClassifierKind::Knn),
            "naive-bayes" | "nb" => Ok(ClassifierKind::NaiveBayes),
            _ => Err(Error::Config(format!("unknown classifier {s:?} (knn, naive-bayes)"))),
        }
    }
}

/// Pooled out-of-fold results with the second cohort as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvMetrics {
    pub classifier: ClassifierKind,
    pub folds: usize,
    pub seed: u64,
    /// `[[true negatives, false positives], [false negatives, true positives]]`.
    pub confusion: [[usize; 2]; 2],
    pub accuracy: f64,
    pub kappa: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl CvMetrics {
    fn from_confusion(classifier: ClassifierKind, folds: usize, seed: u64, c: [[usize; 2]; 2]) -> Self {
        let [[tn, fp], [fn_, tp]] = c.map(|r| r.map(|x| x as f64));
        let n = tn + fp + fn_ + tp;
        let po = (tn + tp) / n;
        let pe = ((tn + fp) * (tn + fn_) + (fn_ + tp) * (fp + tp)) / (n * n);
        let kappa = if pe < 1.0 { (po - pe) / (1.0 - pe) } else if po == 1.0 { 1.0 } else { 0.0 };
        let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 0.0 };
        CvMetrics {
            classifier,
            folds,
            seed,
            confusion: c,
            accuracy: po,
            kappa,
            sensitivity: ratio(tp, fn_),
            specificity: ratio(tn, fp),
        }
    }
}

/// Training-fold standardization; constant features are left out.
struct Scaler {
    keep: Vec<usize>,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Scaler {
    fn fit(rows: &[&[f64]]) -> Self {
        let n = rows.len() as f64;
        let mut s = Scaler { keep: Vec::new(), mean: Vec::new(), sd: Vec::new() };
        for j in 0..rows[0].len() {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            if v.sqrt() > 1e-12 * (1.0 + m.abs()) {
                s.keep.push(j);
                s.mean.push(m);
                s.sd.push(v.sqrt());
            }
        }
        s
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.keep.iter().enumerate().map(|(k, &j)| (r[j] - self.mean[k]) / self.sd[k]).collect()
    }
}

fn knn(train: &[Vec<f64>], labels: &[bool], x: &[f64]) -> bool {
    let mut d: Vec<(f64, bool)> = train.iter().zip(labels).map(|(t, &l)| (t.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum(), l)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = KNN_K.min(d.len());
    let pos = d[..k].iter().filter(|p| p.1).count();
    2 * pos > k
}

struct GaussianNb {
    prior: [f64; 2],
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
}

impl GaussianNb {
    fn fit(train: &[Vec<f64>], labels: &[bool]) -> Self {
        let d = train[0].len();
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        let mut var = [vec![0.0; d], vec![0.0; d]];
        let mut count = [0.0f64; 2];
        for (r, &l) in train.iter().zip(labels) {
            count[l as usize] += 1.0;
            for (m, x) in mean[l as usize].iter_mut().zip(r) {
                *m += x;
            }
        }
        for c in 0..2 {
            mean[c].iter_mut().for_each(|m| *m /= count[c]);
        }
        for (r, &l) in train.iter().zip(labels) {
            let c = l as usize;
            for ((v, m), x) in var[c].iter_mut().zip(&mean[c]).zip(r) {
                *v += (x - m).powi(2) / count[c];
            }
        }
        // Variance floor relative to the largest feature variance.
        let floor = 1e-9 * var.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
        var.iter_mut().flatten().for_each(|v| *v += floor);
        let n = count[0] + count[1];
        GaussianNb { prior: [count[0] / n, count[1] / n], mean, var }
    }

    fn predict(&self, x: &[f64]) -> bool {
        let score = |c: usize| {
            self.prior[c].ln()
                + x.iter().zip(&self.mean[c]).zip(&self.var[c]).map(|((x, m), v)| -0.5 * ((x - m).powi(2) / v + v.ln())).sum::<f64>()
        };
        score(1) > score(0)
    }
}

/// Stratified k-fold cross-validation of cohort `a` (negative) against `b` (positive).
pub fn classify_cv(a: &[Vec<f64>], b: &[Vec<f64>], kind: ClassifierKind, folds: usize, seed: u64) -> Result<CvMetrics> {
    if folds < 2 {
        return Err(Error::Stats(format!("need at least 2 folds, got {folds}")));
    }
    if a.len() < folds || b.len() < folds {
        return Err(Error::Stats(format!("cohorts of {} and {} samples cannot fill {folds} folds", a.len(), b.len())));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return Err(Error::Stats("samples differ in feature dimension".into()));
    }
    let rows: Vec<&[f64]> = a.iter().chain(b).map(|r| r.as_slice()).collect();
    let labels: Vec<bool> = (0..rows.len()).map(|i| i >= a.len()).collect();
    let mut fold = vec![0usize; rows.len()];
    for (stream, range) in [(0u64, 0..a.len()), (1, a.len()..rows.len())] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut idx: Vec<usize> = range.collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold[i] = k % folds;
        }
    }
    let mut confusion = [[0usize; 2]; 2];
    for f in 0..folds {
        let train_idx: Vec<usize> = (0..rows.len()).filter(|&i| fold[i] != f).collect();
        let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| rows[i]).collect();
        let scaler = Scaler::fit(&train_rows);
        let train: Vec<Vec<f64>> = train_rows.iter().map(|r| scaler.apply(r)).collect();
        let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        let nb = (kind == ClassifierKind::NaiveBayes && !scaler.keep.is_empty()).then(|| GaussianNb::fit(&train, &train_labels));
        for i in (0..rows.len()).filter(|&i| fold[i] == f) {
            let x = scaler.apply(rows[i]);
            let pred = match &nb {
                Some(m) => m.predict(&x),
                None => knn(&train, &train_labels, &x),
            };
            confusion[labels[i] as usize][pred as usize] += 1;
        }
    }
    Ok(CvMetrics::from_confusion(kind, folds, seed, confusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| vec![g.sample(&mut rng) + shift, g.sample(&mut rng), 7.0]).collect()
    }

    #[test]
    fn metrics_from_confusion() {
        let m = CvMetrics::from_confusion(ClassifierKind::Knn, 10, 0, [[40, 10], [5, 45]]);
        assert_eq!(m.accuracy, 0.85);
        assert_eq!(m.sensitivity, 0.9);
        assert_eq!(m.specificity, 0.8);
        assert!((m.kappa - 0.7).abs() < 1e-12);
        assert_eq!(CvMetrics::from_confusion(ClassifierKind::Knn, 2, 0, [[5, 0], [0, 5]]).kappa, 1.0);
    }

    #[test]
    fn separable_cohorts_classify_well() {
        let (a, b) = (gaussian(30, 0.0, 1), gaussian(30, 6.0, 2));
        for kind in [ClassifierKind::Knn, ClassifierKind::NaiveBayes] {
            let m = classify_cv(&a, &b, kind, 10, 3).unwrap();
            assert!(m.accuracy >= 0.95, "{kind:?} {}", m.accuracy);
            assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 60);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let (a, b) = (gaussian(20, 0.0, 4), gaussian(20, 0.5, 5));
        assert_eq!(classify_cv(&a, &b, ClassifierKind::Knn, 5, 9).unwrap(), classify_cv(&a, &b, ClassifierKind::Knn, 5, 9).unwrap());
        assert!(classify_cv(&a[..3], &b, ClassifierKind::Knn, 5, 9).is_err());
    }
}
