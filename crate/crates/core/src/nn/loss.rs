use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `[b, C]` logits with the max shift.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood of `labels` and its gradient `(softmax − onehot) / b`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = match logits.shape() {
        [b, c] => (*b, *c),
        other => return Err(Error::shape(format!("logits must be [batch, classes], got {other:?}"))),
    };
    if labels.len() != b {
        return Err(Error::shape(format!("{b} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::shape(format!("label {bad} out of range for {c} classes")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (j, g) in grad[i * c..(i + 1) * c].iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::from_vec(&[b, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(rows: &[[f64; 3]]) -> Tensor {
        Tensor::from_vec(&[rows.len(), 3], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln3() {
        for y in 0..3 {
            let (loss, _) = cross_entropy(&logits(&[[0.0, 0.0, 0.0]]), &[y]).unwrap();
            assert!((loss - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_correct_class() {
        let (loss, _) = cross_entropy(&logits(&[[30.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn direct_evaluation() {
        let (loss, grad) = cross_entropy(&logits(&[[1.0, 2.0, 3.0]]), &[2]).unwrap();
        let expected = (1.0 + (-1f64).exp() + (-2f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.40761).abs() < 1e-5);
        let z: f64 = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        assert!((grad.data()[0] - 1f64.exp() / z).abs() < 1e-15);
        assert!((grad.data()[2] - (3f64.exp() / z - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(cross_entropy(&logits(&[[0.0, 0.0, 0.0]]), &[3]).is_err());
        assert!(cross_entropy(&logits(&[[0.0, 0.0, 0.0]]), &[0, 1]).is_err());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let (loss, grad) = cross_entropy(&logits(&[[1000.0, -1000.0, 0.0]]), &[1]).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 3..30)) {
            let b = v.len() / 3;
            let t = Tensor::from_vec(&[b, 3], v[..b * 3].to_vec()).unwrap();
            for row in softmax(&t).data().chunks(3) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn duplicated_batch_has_same_loss(
            v in prop::collection::vec(-10.0f64..10.0, 3..24),
            seed in 0usize..3,
        ) {
            let b = v.len() / 3;
            let labels: Vec<usize> = (0..b).map(|i| (i + seed) % 3).collect();
            let single = Tensor::from_vec(&[b, 3], v[..b * 3].to_vec()).unwrap();
            let mut doubled_data = v[..b * 3].to_vec();
            doubled_data.extend_from_slice(&v[..b * 3]);
            let doubled = Tensor::from_vec(&[2 * b, 3], doubled_data).unwrap();
            let mut doubled_labels = labels.clone();
            doubled_labels.extend_from_slice(&labels);
            let (a, _) = cross_entropy(&single, &labels).unwrap();
            let (d, _) = cross_entropy(&doubled, &doubled_labels).unwrap();
            prop_assert!((a - d).abs() < 1e-12);
        }
    }
}
