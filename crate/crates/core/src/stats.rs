//! Summary statistics and least-squares fits.

use statrs::function::erf::erfc;

use crate::par::pairwise_sum;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `E[Y 1{Y > c}]` for `Y ~ N(mu, sigma^2)`.
pub fn truncated_first_moment(mu: f64, sigma: f64, c: f64) -> f64 {
    if sigma <= 0.0 {
        return if mu > c { mu } else { 0.0 };
    }
    let z = (c - mu) / sigma;
    mu * normal_cdf(-z) + sigma * normal_pdf(z)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Sample mean with its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    (mean(xs), std_error(xs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

/// Weighted least squares fit of `y = intercept + slope * x`.
///
/// With `weights = None` the fit is unweighted and the standard errors use the
/// residual variance. With weights `1/sigma_i^2` the standard errors are the
/// model-based ones.
pub fn fit_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, w)| w * (a - xm) * (a - xm)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, b), w)| w * (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let (slope_var, icpt_var) = if weights.is_some() {
        (1.0 / sxx, 1.0 / sw + xm * xm / sxx)
    } else {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let s2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
        (s2 / sxx, s2 * (1.0 / n as f64 + xm * xm / sxx))
    };
    Some(LineFit { slope, intercept, slope_se: slope_var.sqrt(), intercept_se: icpt_var.sqrt() })
}

/// Slope of `log2 |y|` against `log2 x`, unweighted.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().log2()).collect();
    fit_line(&lx, &ly, None).map(|f| f.slope)
}
