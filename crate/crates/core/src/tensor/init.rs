use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};

/// Orthogonal initialisation.
///
/// The shape is viewed as a matrix `[shape[0], product(shape[1..])]`. A Gaussian
/// matrix is orthonormalised (two-pass Gram-Schmidt, sign-fixed like a QR with
/// positive `diag(R)`), so rows are orthonormal when rows <= cols and columns
/// are orthonormal otherwise. The result is scaled by `gain`.
pub fn orthogonal_init<R: Rng + ?Sized>(shape: &[usize], gain: f64, rng: &mut R) -> Result<Tensor> {
    if shape.len() < 2 {
        return Err(Error::config(format!(
            "orthogonal init needs at least 2 axes, got {shape:?}"
        )));
    }
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    if rows == 0 || cols == 0 {
        return Ok(Tensor::zeros(shape));
    }
    // Orthonormalise the vectors of the shorter side.
    let (count, dim) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm0 = norm(&v);
        for _ in 0..2 {
            for q in &basis {
                let d = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
            }
        }
        let n = norm(&v);
        // A (vanishingly unlikely) near-dependent draw is simply redrawn.
        if n < 1e-8 * norm0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for (i, q) in basis.iter().enumerate() {
        for (j, &x) in q.iter().enumerate() {
            let (r, c) = if rows <= cols { (i, j) } else { (j, i) };
            data[r * cols + c] = gain * x;
        }
    }
    Tensor::new(shape.to_vec(), data)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
