use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: f64,
    /// Mean recall over classes that have at least one sample.
    pub macro_accuracy: f64,
    /// Recall per class; `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::Invalid(format!("class id out of range 0..{num_classes}")));
        }
        confusion[l][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
    let per_class: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[k] as f64 / n as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(MetricsReport {
        overall: correct as f64 / predictions.len() as f64,
        macro_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        confusion,
        count: predictions.len(),
    })
}

/// Row-wise argmax of an `m × K` score matrix; the first maximum wins.
pub fn argmax_rows(scores: &[f64], cols: usize) -> Vec<usize> {
    scores
        .chunks_exact(cols)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_and_overall_differ() {
        let labels = [0, 0, 0, 0, 1, 1];
        let preds = [0, 0, 0, 1, 1, 0];
        let m = compute_metrics(&preds, &labels, 3).unwrap();
        assert!((m.macro_accuracy - 0.625).abs() < 1e-15);
        assert!((m.overall - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.per_class, vec![Some(0.75), Some(0.5), None]);
        assert_eq!(m.confusion[0], vec![3, 1, 0]);
    }

    #[test]
    fn perfect_and_errors() {
        let m = compute_metrics(&[1, 2], &[1, 2], 3).unwrap();
        assert_eq!((m.overall, m.macro_accuracy), (1.0, 1.0));
        assert!(compute_metrics(&[], &[], 3).is_err());
        assert!(compute_metrics(&[0], &[0, 1], 3).is_err());
        assert!(compute_metrics(&[5], &[0], 3).is_err());
    }

    #[test]
    fn argmax_first_wins() {
        assert_eq!(argmax_rows(&[1.0, 3.0, 3.0, 0.0, -1.0, -2.0], 3), vec![1, 0]);
    }
}
