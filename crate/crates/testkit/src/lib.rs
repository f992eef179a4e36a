//! Slow, dependency-free reference implementations.
//!
//! Everything here is written from scratch over plain row-major `Vec`s so
//! that tests can compare the library against arithmetic that shares no code
//! (and no linear algebra crate) with it.

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(rows: usize, cols: usize) -> Mat {
    vec![vec![0.0; cols]; rows]
}

pub fn transpose(m: &Mat) -> Mat {
    let cols = m.first().map_or(0, Vec::len);
    (0..cols)
        .map(|j| m.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner, "inner dimensions differ");
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn frobenius_sq_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)))
        .sum()
}

/// `‖VT − W‖² + β‖A − VVᵀ‖²` by explicit loops.
pub fn vager_loss(v: &Mat, t: &Mat, w: &Mat, a: &Mat, beta: f64) -> f64 {
    let fit = frobenius_sq_diff(&matmul(v, t), w);
    fit + beta * frobenius_sq_diff(a, &matmul(v, &transpose(v)))
}

/// Central-difference gradient of `f` at `x`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: eigenvalues and
/// the matching eigenvectors as columns.
pub fn jacobi_eigen(sym: &Mat) -> (Vec<f64>, Mat) {
    let n = sym.len();
    let mut a = sym.clone();
    let mut vecs = zeros(n, n);
    for (i, row) in vecs.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                #[allow(clippy::needless_range_loop)]
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in vecs.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), vecs)
}

/// Minimum-norm minimizer of `‖b − M x‖` through the eigendecomposition of
/// `MᵀM`; eigenvalues below `rel_tol · λ_max` count as zero.
pub fn min_norm_lstsq(m: &Mat, b: &[f64], rel_tol: f64) -> Vec<f64> {
    let mt = transpose(m);
    let gram = matmul(&mt, m);
    let rhs = matvec(&mt, b);
    let (vals, vecs) = jacobi_eigen(&gram);
    let lmax = vals.iter().copied().fold(0.0_f64, f64::max);
    let q = gram.len();
    let mut x = vec![0.0; q];
    for (i, &lambda) in vals.iter().enumerate() {
        if lambda <= rel_tol * lmax {
            continue;
        }
        let u: Vec<f64> = (0..q).map(|r| vecs[r][i]).collect();
        let coef = dot(&u, &rhs) / lambda;
        for (xj, uj) in x.iter_mut().zip(&u) {
            *xj += coef * uj;
        }
    }
    x
}

/// AUC by counting every positive/negative pair.
pub fn pair_count_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1;
            } else if p == n {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / (pos.len() * neg.len()) as f64
}

/// `(slope, intercept)` from the 2x2 normal equations solved by Cramer's rule.
pub fn normal_equations_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = sxx * n - sx * sx;
    ((sxy * n - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

/// Pearson correlation by the textbook two-pass formula.
pub fn pearson(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let vx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let vy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Mean with Welford's running update.
pub fn running_mean(rows: &[&[f64]]) -> Vec<f64> {
    let mut mean = vec![0.0; rows[0].len()];
    for (i, row) in rows.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += (x - *m) / (i + 1) as f64;
        }
    }
    mean
}

/// Binomial tail `P(X >= hits)` for `X ~ Bin(trials, p)`.
pub fn binomial_upper_tail(trials: u64, hits: u64, p: f64) -> f64 {
    let mut total = 0.0;
    for x in hits..=trials {
        let mut log_c = 0.0;
        for i in 0..x {
            log_c += ((trials - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        total += (log_c + x as f64 * p.ln() + (trials - x) as f64 * (1.0 - p).ln()).exp();
    }
    total.min(1.0)
}
