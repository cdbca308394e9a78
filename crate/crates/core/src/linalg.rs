//! Small dense and Toeplitz solvers shared by the samplers and bound checks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solve `T x = b` for the symmetric Toeplitz matrix with first column `r`
/// (Levinson recursion, O(n^2)).
pub fn levinson(r: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if r.len() < n || r[0] <= 0.0 {
        return Err(Error::Factorisation("Toeplitz column too short or non-positive diagonal".into()));
    }
    let r0 = r[0];
    let rr: Vec<f64> = r[..n].iter().map(|v| v / r0).collect();
    let bb: Vec<f64> = b.iter().map(|v| v / r0).collect();

    let mut x = vec![bb[0]];
    if n == 1 {
        return Ok(x);
    }
    let mut y = vec![-rr[1]];
    let mut alpha = -rr[1];
    let mut beta = 1.0;
    for k in 1..n {
        beta *= 1.0 - alpha * alpha;
        if !(beta > 0.0) {
            return Err(Error::Factorisation(format!("Levinson recursion lost definiteness at order {k}")));
        }
        let dot: f64 = (1..=k).map(|i| rr[i] * x[k - i]).sum();
        let mu = (bb[k] - dot) / beta;
        let mut next: Vec<f64> = (0..k).map(|i| x[i] + mu * y[k - 1 - i]).collect();
        next.push(mu);
        x = next;
        if k < n - 1 {
            let dot: f64 = (1..=k).map(|i| rr[i] * y[k - i]).sum();
            alpha = -(rr[k + 1] + dot) / beta;
            let mut z: Vec<f64> = (0..k).map(|i| y[i] + alpha * y[k - 1 - i]).collect();
            z.push(alpha);
            y = z;
        }
    }
    Ok(x)
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut rs = r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..max_iter {
        if rs.sqrt() <= rel_tol * b_norm {
            return Ok(x);
        }
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Factorisation("operator is not positive definite".into()));
        }
        let step = rs / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_new = r.iter().map(|v| v * v).sum::<f64>();
        let ratio = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + ratio * p[i];
        }
        rs = rs_new;
    }
    if rs.sqrt() <= rel_tol * b_norm {
        Ok(x)
    } else {
        Err(Error::Factorisation(format!(
            "conjugate gradients stalled at relative residual {:.3e}",
            rs.sqrt() / b_norm
        )))
    }
}

pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU inverse together with the 1-norm condition number.
pub fn inverse_with_condition(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let inv = m.clone().lu().try_inverse().ok_or(Error::Conditioning { cond: f64::INFINITY })?;
    let cond = one_norm(m) * one_norm(&inv);
    if !cond.is_finite() {
        return Err(Error::Conditioning { cond: f64::INFINITY });
    }
    Ok((inv, cond))
}
