//! Classification metrics and run statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            class_names: (0..num_classes).map(|c| format!("class_{c}")).collect(),
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let c = rows.len();
        let mut cm = Self::zeros(c);
        for (t, row) in rows.iter().enumerate() {
            ensure_dim("confusion row length", c, row.as_ref().len())?;
            cm.counts[t * c..(t + 1) * c].copy_from_slice(row.as_ref());
        }
        Ok(cm)
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: preds.len(),
                right: labels.len(),
            });
        }
        let mut cm = Self::zeros(num_classes);
        for (&p, &t) in preds.iter().zip(labels) {
            for idx in [p, t] {
                if idx >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: idx,
                        classes: num_classes,
                    });
                }
            }
            cm.counts[t * num_classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        ensure_dim("class name count", self.num_classes(), names.len())?;
        self.class_names = names;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes() + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let c = self.num_classes();
        &self.counts[truth * c..(truth + 1) * c]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.get(c, c)).sum()
    }

    /// Per-class support (row sums).
    pub fn support(&self) -> Vec<u64> {
        (0..self.num_classes()).map(|t| self.row(t).iter().sum()).collect()
    }

    /// Per-class prediction counts (column sums).
    pub fn predicted(&self) -> Vec<u64> {
        let c = self.num_classes();
        (0..c).map(|p| (0..c).map(|t| self.get(t, p)).sum()).collect()
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Empty("confusion matrix"))
        } else {
            Ok(())
        }
    }
}

/// `100 · trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.ensure_nonempty()?;
    Ok(100.0 * cm.trace() as f64 / cm.total() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A 0/0 ratio was replaced by 0.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> Result<Vec<ClassScores>> {
    cm.ensure_nonempty()?;
    let support = cm.support();
    let predicted = cm.predicted();
    Ok((0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let mut undefined = false;
            let precision = ratio(tp, predicted[c], &mut undefined);
            let recall = ratio(tp, support[c], &mut undefined);
            let f1 = if precision + recall == 0.0 {
                undefined = true;
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                name: cm.class_names[c].clone(),
                precision,
                recall,
                f1,
                support: support[c],
                undefined,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Support-weighted means of the per-class scores.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<WeightedScores> {
    let rows = per_class_prf(cm)?;
    let total = cm.total() as f64;
    let mean = |f: fn(&ClassScores) -> f64| {
        rows.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / total
    };
    Ok(WeightedScores {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassScores>,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub weighted: WeightedScores,
    pub total: u64,
    pub warnings: Vec<String>,
}

impl ClassReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let classes = per_class_prf(cm)?;
        let warnings = classes
            .iter()
            .filter(|c| c.undefined)
            .map(|c| format!("class {} has an undefined score, reported as 0", c.name))
            .collect();
        Ok(Self {
            accuracy: accuracy(cm)? / 100.0,
            weighted: weighted_metrics(cm)?,
            total: cm.total(),
            classes,
            warnings,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub label: String,
    /// Accuracies in percent.
    pub values: Vec<f64>,
}

/// Mean and sample standard deviation (`k − 1` denominator).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, libm::sqrt(ss / (k - 1.0))))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_difference: f64,
    /// Differences had zero spread; `t` is 0 or ±∞ by convention.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on `b − a`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let (mean, std) = mean_std(&diffs)?;
    let k = diffs.len();
    let df = k - 1;
    if std == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(PairedTTest {
            t,
            df,
            p,
            mean_difference: mean,
            degenerate: true,
        });
    }
    let t = mean / (std / libm::sqrt(k as f64));
    Ok(PairedTTest {
        t,
        df,
        p: student_t_two_tailed(t, df as f64)?,
        mean_difference: mean,
        degenerate: false,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::InvalidConfig("degrees of freedom must be > 0".into()));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x)
}

const BETA_TOL: f64 = 1e-12;
const BETA_MAX_ITER: usize = 200;
const TINY: f64 = 1e-300;

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// `I_x(a, b)` via Lentz's continued fraction, using the symmetry
/// `I_x(a, b) = 1 − I_{1−x}(b, a)` where the fraction converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidConfig("beta parameters must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidConfig(format!("x = {x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let front = |a: f64, b: f64, x: f64| {
        libm::exp(a * libm::log(x) + b * libm::log1p(-x) - ln_beta(a, b)) / a
    };
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front(a, b, x) * beta_continued_fraction(a, b, x)?)
    } else {
        Ok(1.0 - front(b, a, 1.0 - x) * beta_continued_fraction(b, a, 1.0 - x)?)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    let clamp = |v: f64| if libm::fabs(v) < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < BETA_TOL {
            return Ok(h);
        }
    }
    Err(Error::InvalidConfig(format!(
        "incomplete beta did not converge for a={a}, b={b}, x={x}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_antidiagonal() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.row(2), &[0, 0, 2]);
        assert_eq!(accuracy(&cm).unwrap(), 100.0);
        let w = weighted_metrics(&cm).unwrap();
        assert_eq!((w.precision, w.recall, w.f1), (1.0, 1.0, 1.0));

        let cm = ConfusionMatrix::from_rows(&[[0u64, 3], [2, 0]]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        let rows = per_class_prf(&cm).unwrap();
        assert_eq!((rows[2].precision, rows[2].recall, rows[2].f1), (0.0, 0.0, 0.0));
        assert!(rows[2].undefined);
        let report = ClassReport::from_confusion(&cm).unwrap();
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn single_class_weighted_equals_class() {
        let cm = ConfusionMatrix::from_rows(&[[5u64, 0], [0, 0]]).unwrap();
        let rows = per_class_prf(&cm).unwrap();
        let w = weighted_metrics(&cm).unwrap();
        assert_eq!(w.precision, rows[0].precision);
        assert_eq!(w.f1, rows[0].f1);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            ConfusionMatrix::from_predictions(&[0], &[0, 1], 2),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(ConfusionMatrix::from_predictions(&[2], &[0], 2).is_err());
        assert!(accuracy(&ConfusionMatrix::zeros(2)).is_err());
        assert!(mean_std(&[1.0]).is_err());
    }

    #[test]
    fn constant_series_and_identical_pairs() {
        assert_eq!(mean_std(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        let a = [1.0, 5.0, 2.0, 8.0];
        let r = paired_ttest(&a, &a).unwrap();
        assert_eq!((r.t, r.df, r.p), (0.0, 3, 1.0));
        let shifted: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let r = paired_ttest(&a, &shifted).unwrap();
        assert!(r.degenerate && r.t == f64::INFINITY && r.p == 0.0);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a
        for &x in &[0.1, 0.5, 0.93] {
            assert!((regularized_incomplete_beta(1.0, 1.0, x).unwrap() - x).abs() < 1e-13);
            let want = libm::pow(x, 2.5);
            assert!((regularized_incomplete_beta(2.5, 1.0, x).unwrap() - want).abs() < 1e-13);
        }
        // t with 1 df is Cauchy: two-tailed p at t = 1 is 1/2
        assert!((student_t_two_tailed(1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(regularized_incomplete_beta(1.0, 1.0, 1.5).is_err());
    }
}
