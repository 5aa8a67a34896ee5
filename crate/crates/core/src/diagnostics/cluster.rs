//! Unsupervised clustering accuracy of the mixture model.

use pathfinding::matrix::Matrix;
use pathfinding::prelude::kuhn_munkres;
use thiserror::Error;

use crate::model::IlLidMVae;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("{xs} data points but {labels} labels")]
    LengthMismatch { xs: usize, labels: usize },
    #[error("label {label} out of range for {c} components")]
    LabelOutOfRange { label: usize, c: usize },
    #[error("empty evaluation set")]
    Empty,
}

/// Accuracy of `argmax_y q(y|x)` against the labels, maximized over label
/// permutations by optimal assignment on the confusion matrix.
pub fn clustering_accuracy(
    model: &IlLidMVae,
    xs: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64, ClusterError> {
    if xs.is_empty() {
        return Err(ClusterError::Empty);
    }
    if xs.len() != labels.len() {
        return Err(ClusterError::LengthMismatch {
            xs: xs.len(),
            labels: labels.len(),
        });
    }
    let c = model.n_components;
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(ClusterError::LabelOutOfRange { label: bad, c });
    }
    let mut confusion = vec![vec![0i64; c]; c];
    for (x, &label) in xs.iter().zip(labels) {
        let resp = model.posterior_responsibilities(x);
        let pred = argmax(&resp);
        confusion[pred][label] += 1;
    }
    Ok(assignment_accuracy(&confusion, xs.len()))
}

/// Best total of a confusion matrix over column permutations, divided by the
/// sample count. Exposed so tests can cross-check against brute force.
pub fn assignment_accuracy(confusion: &[Vec<i64>], n: usize) -> f64 {
    let c = confusion.len();
    let weights =
        Matrix::from_vec(c, c, confusion.iter().flatten().copied().collect::<Vec<_>>())
            .expect("square confusion matrix");
    let (total, _assignment) = kuhn_munkres(&weights);
    total as f64 / n as f64
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
