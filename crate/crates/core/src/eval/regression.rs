use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Ordinary least squares fit `y = slope * x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    /// Two-sided 95% interval for the slope from the t distribution with n − 2
    /// degrees of freedom.
    pub ci95_slope: (f64, f64),
    pub n_points: usize,
}

/// Fits AUC improvement (y) on the similarity ratio (x).
pub fn sr_improvement_regression(points: &[(f64, f64)]) -> Result<RegressionResult> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "regression needs >= 3 points, got {n}"
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("regression points must be finite"));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::Numerical(
            "similarity ratios have zero variance".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let pearson_r = if syy > 0.0 {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let sse: f64 = points
        .iter()
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let df = nf - 2.0;
    let se = (sse / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    Ok(RegressionResult {
        slope,
        intercept,
        pearson_r,
        r_squared: pearson_r * pearson_r,
        ci95_slope: (slope - t * se, slope + t * se),
        n_points: n,
    })
}
