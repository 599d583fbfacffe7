//! Classification metrics.

use crate::error::{GerkError, Result};

/// Micro-averaged F1: harmonic mean of precision and recall computed from
/// global true/false positive counts. For single-label multi-class
/// prediction every error is one false positive and one false negative, so
/// this equals accuracy.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(GerkError::InvalidRequest("micro_f1 over an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(GerkError::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let tp = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(tp as f64 / predictions.len() as f64)
}

/// Macro-averaged F1 over the classes present in the label set.
pub fn macro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(GerkError::InvalidRequest("macro_f1 over an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(GerkError::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let c = labels
        .iter()
        .chain(predictions)
        .copied()
        .max()
        .unwrap_or(0)
        + 1;
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fnn = vec![0usize; c];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fnn[l] += 1;
        }
    }
    let mut total = 0.0;
    let mut classes = 0usize;
    for j in 0..c {
        if tp[j] + fnn[j] == 0 {
            continue; // class absent from the labels
        }
        classes += 1;
        let denom = 2 * tp[j] + fp[j] + fnn[j];
        if denom > 0 {
            total += 2.0 * tp[j] as f64 / denom as f64;
        }
    }
    Ok(total / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_f1_all_correct() {
        assert_eq!(micro_f1(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn micro_f1_equals_accuracy() {
        let score = micro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((score - 0.75).abs() < 1e-12);
    }

    #[test]
    fn micro_f1_empty_errors() {
        assert!(micro_f1(&[], &[]).is_err());
        assert!(micro_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_known_value() {
        // class 0: tp=1 fp=1 fn=0 -> f1 = 2/3; class 1: tp=2 fp=0 fn=1 -> f1 = 0.8
        let score = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((score - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[1, 1], &[1, 1]).unwrap(), 1.0);
    }
}
