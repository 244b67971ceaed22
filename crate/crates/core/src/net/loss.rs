use super::NetError;
use crate::linalg::Matrix;

/// Mean softmax cross-entropy and its gradient `(softmax − onehot)/|B|`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix), NetError> {
    let (n, classes) = logits.shape();
    if n == 0 {
        return Err(NetError::EmptyBatch);
    }
    if labels.len() != n {
        return Err(NetError::ShapeMismatch);
    }
    let mut grad = Matrix::zeros(n, classes);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NetError::LabelOutOfRange { label, classes });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| libm::exp(z - max)).sum();
        let log_sum = libm::log(sum) + max;
        total += log_sum - row[label];
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = libm::exp(row[c] - log_sum);
            *g = (p - if c == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Fraction of rows whose arg-max logit equals the label (first maximum wins ties).
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == label
        })
        .count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn equal_logits_give_ln2() {
        let (l, _) = softmax_cross_entropy(&Matrix::from_rows(&[&[0.3, 0.3]]), &[1]).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn huge_margin_gives_zero_loss() {
        let (l, g) = softmax_cross_entropy(&Matrix::from_rows(&[&[800.0, -800.0]]), &[0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn rejects_bad_label() {
        assert_eq!(
            softmax_cross_entropy(&Matrix::zeros(1, 2), &[2]).unwrap_err(),
            NetError::LabelOutOfRange { label: 2, classes: 2 }
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = Rng::seed_from_u64(4);
        let mut logits = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect());
        let labels = [0, 2, 1, 1, 0];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..15 {
            let orig = logits.as_slice()[i];
            logits.as_mut_slice()[i] = orig + h;
            let lp = softmax_cross_entropy(&logits, &labels).unwrap().0;
            logits.as_mut_slice()[i] = orig - h;
            let lm = softmax_cross_entropy(&logits, &labels).unwrap().0;
            logits.as_mut_slice()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn accuracy_counts_argmax() {
        let logits = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 1.0]]);
        assert!((accuracy(&logits, &[0, 1, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
