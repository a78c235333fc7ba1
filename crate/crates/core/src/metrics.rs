//! Evaluation quantities shared by every solver.

use crate::error::{Error, Result};
use crate::linalg::{norm2, norm2_sq, BlockOperator};
use crate::tv::PixelLayout;

/// `||x - x_true|| / ||x_true||`.
pub fn relative_error(x: &[f64], x_true: &[f64]) -> Result<f64> {
    if x.len() != x_true.len() {
        return Err(Error::Shape(format!(
            "iterate has length {}, ground truth {}",
            x.len(),
            x_true.len()
        )));
    }
    let reference = norm2(x_true);
    if reference == 0.0 {
        return Err(Error::InvalidInput("ground truth is the zero vector".into()));
    }
    let diff: f64 = x.iter().zip(x_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff.sqrt() / reference)
}

/// `||y - A x||^2 + 2 lambda TV(x)`, reshaping `x` through `layout`.
/// Charges one product to the operator.
pub fn objective_value(x: &[f64], op: &BlockOperator, y: &[f64], lambda: f64, layout: &PixelLayout) -> Result<f64> {
    if y.len() != op.nrows() {
        return Err(Error::Shape(format!(
            "measurements have length {}, operator has {} rows",
            y.len(),
            op.nrows()
        )));
    }
    let ax = op.apply(x)?;
    Ok(data_fidelity(y, &ax) + tv_penalty(x, lambda, layout)?)
}

/// `||y - A x||^2` given `A x`.
pub fn data_fidelity(y: &[f64], ax: &[f64]) -> f64 {
    let r: Vec<f64> = y.iter().zip(ax).map(|(a, b)| a - b).collect();
    norm2_sq(&r)
}

/// `2 lambda TV(x)`; skips the TV evaluation when `lambda == 0`.
pub fn tv_penalty(x: &[f64], lambda: f64, layout: &PixelLayout) -> Result<f64> {
    if x.len() != layout.len() {
        return Err(Error::Shape(format!(
            "iterate has length {}, image has {} pixels",
            x.len(),
            layout.len()
        )));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * lambda * layout.tv_value(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SparseMatrix;
    use crate::tv::{tv_value, ImageGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_error_cases() {
        let t = vec![1.0, -2.0, 2.0];
        assert_eq!(relative_error(&t, &t).unwrap(), 0.0);
        assert_eq!(relative_error(&[0.0; 3], &t).unwrap(), 1.0);
        let doubled: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert_eq!(relative_error(&doubled, &t).unwrap(), 1.0);
        assert!(matches!(relative_error(&t, &[0.0; 3]), Err(Error::InvalidInput(_))));
        assert!(matches!(relative_error(&t, &[1.0; 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn relative_error_scale_invariant() {
        let t = vec![0.3, 0.1, -0.7, 2.0];
        let x = vec![0.2, 0.4, -0.5, 1.0];
        let a = relative_error(&x, &t).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * 7.5).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * 7.5).collect();
        assert!((relative_error(&xs, &ts).unwrap() - a).abs() < 1e-15);
    }

    #[test]
    fn objective_zero_at_consistent_constant() {
        let op = BlockOperator::whole(SparseMatrix::identity(4)).unwrap();
        let layout = PixelLayout::row_major(2, 2);
        let x = vec![0.5; 4];
        assert_eq!(objective_value(&x, &op, &x, 3.0, &layout).unwrap(), 0.0);
        assert_eq!(op.matvec_units(), 1.0);
    }

    #[test]
    fn objective_without_tv_is_residual() {
        let op = BlockOperator::whole(SparseMatrix::identity(4)).unwrap();
        let layout = PixelLayout::row_major(2, 2);
        let x = vec![1.0, 0.0, 0.0, 1.0];
        let y = vec![0.0, 0.0, 0.0, 3.0];
        assert_eq!(objective_value(&x, &op, &y, 0.0, &layout).unwrap(), 1.0 + 4.0);
    }

    #[test]
    fn objective_matches_dense_evaluation() {
        let (rows, h, w) = (7, 2, 3);
        let cols = h * w;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = BlockOperator::whole(SparseMatrix::from_dense(rows, cols, &a).unwrap()).unwrap();
        let layout = PixelLayout::row_major(h, w);
        let lambda = 0.37;
        let mut dense = 0.0;
        for r in 0..rows {
            let ax: f64 = (0..cols).map(|c| a[r * cols + c] * x[c]).sum();
            dense += (y[r] - ax).powi(2);
        }
        dense += 2.0 * lambda * tv_value(&ImageGrid::new(h, w, x.clone()).unwrap());
        let got = objective_value(&x, &op, &y, lambda, &layout).unwrap();
        assert!(((got - dense) / dense).abs() < 1e-12);
    }
}
