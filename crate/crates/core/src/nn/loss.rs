use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Mean over all entries of the squared difference.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mse_loss",
            left: pred.shape(),
            right: target.shape(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("mse_loss of an empty matrix"));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    if pred.is_empty() {
        return Err(Error::invalid("mse_grad of an empty matrix"));
    }
    let n = pred.len() as f64;
    pred.zip_map(target, |p, t| 2.0 * (p - t) / n)
        .map_err(|_| Error::Shape {
            op: "mse_grad",
            left: pred.shape(),
            right: target.shape(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Matrix {
        Matrix::row_vector(v)
    }

    #[test]
    fn examples() {
        assert_eq!(mse_loss(&row(&[1.0, 2.0]), &row(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse_loss(&row(&[1.0, 2.0]), &row(&[0.0, 2.0])).unwrap(), 0.5);
        assert_eq!(mse_loss(&row(&[3.0]), &row(&[0.0])).unwrap(), 9.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            mse_loss(&row(&[1.0, 2.0]), &row(&[1.0])),
            Err(Error::Shape { .. })
        ));
        assert!(mse_grad(&row(&[1.0, 2.0]), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn grad_matches_difference_quotient() {
        let p = row(&[0.3, -1.2, 2.0]);
        let t = row(&[0.0, 1.0, 2.5]);
        let g = mse_grad(&p, &t).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = p.clone();
            up.data_mut()[i] += h;
            let mut down = p.clone();
            down.data_mut()[i] -= h;
            let fd = (mse_loss(&up, &t).unwrap() - mse_loss(&down, &t).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
