//! Least squares and multinomial logit maximum likelihood.
//!
//! Both solvers add an intercept and work internally on centred, unit-scale
//! design columns; returned coefficients are on the caller's original scale.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Ridge added to the OLS normal equations when they are singular.
pub const OLS_FALLBACK_RIDGE: f64 = 1e-8;
/// Ridge applied to every logit fit.
pub const LOGIT_RIDGE: f64 = 1e-6;
pub const LOGIT_MAX_ITER: usize = 100;
pub const LOGIT_TOL: f64 = 1e-8;

/// Column centring/scaling used internally by the solvers.
struct Scaling {
    means: Vec<f64>,
    /// Zero for constant columns, which are then left out of the fit.
    scales: Vec<f64>,
}

impl Scaling {
    fn of(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 0.0 });
        }
        Scaling { means, scales }
    }

    /// Standardized design with a leading intercept column.
    fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(x.nrows(), x.ncols() + 1);
        d.column_mut(0).fill(1.0);
        for j in 0..x.ncols() {
            let s = self.scales[j];
            if s > 0.0 {
                let m = self.means[j];
                for i in 0..x.nrows() {
                    d[(i, j + 1)] = (x[(i, j)] - m) / s;
                }
            }
        }
        d
    }

    /// Map standardized (intercept, slopes) to the original scale.
    fn unscale(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut intercept = theta[0];
        let mut slopes = vec![0.0; self.means.len()];
        for j in 0..self.means.len() {
            if self.scales[j] > 0.0 {
                slopes[j] = theta[j + 1] / self.scales[j];
                intercept -= slopes[j] * self.means[j];
            }
        }
        (intercept, slopes)
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// True when the normal equations needed the fallback ridge.
    pub ridged: bool,
}

/// Ordinary least squares of `y` on `x` plus an intercept.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> OlsFit {
    assert_eq!(x.nrows(), y.len(), "design and response lengths differ");
    let n = y.len();
    let scaling = Scaling::of(x);
    let design = scaling.design(x);
    let q = design.ncols();
    let yv = DVector::from_column_slice(y);
    let mut xtx = design.tr_mul(&design);
    let xty = design.tr_mul(&yv);
    // Dropped constant columns would make the system singular; pin them.
    for j in 1..q {
        if scaling.scales[j - 1] == 0.0 {
            xtx[(j, j)] = 1.0;
        }
    }
    let (theta, ridged) = match Cholesky::new(xtx.clone()) {
        Some(ch) if ch.l().diagonal().min() > 1e-7 * (n as f64).sqrt() => (ch.solve(&xty), false),
        _ => {
            let mut ridged = xtx;
            for j in 1..q {
                ridged[(j, j)] += OLS_FALLBACK_RIDGE * n as f64;
            }
            let ch = Cholesky::new(ridged).expect("ridged normal equations are positive definite");
            (ch.solve(&xty), true)
        }
    };
    let (intercept, slopes) = scaling.unscale(theta.as_slice());
    let fitted = &design * &theta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let rss = residuals.iter().map(|r| r * r).sum();
    OlsFit {
        intercept,
        slopes,
        residuals,
        rss,
        ridged,
    }
}

/// Gaussian log-likelihood at the MLE variance `rss / n`.
pub fn gaussian_log_likelihood(rss: f64, n: usize) -> f64 {
    let n = n as f64;
    let var = (rss / n).max(f64::MIN_POSITIVE);
    -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0)
}

#[derive(Debug, Clone)]
pub struct LogitFit {
    /// Number of outcome classes (≥ 2).
    pub n_classes: usize,
    /// Baseline class, whose linear predictor is fixed at zero.
    pub baseline: u32,
    /// Non-baseline classes in ascending order; one coefficient column each.
    pub classes: Vec<u32>,
    /// Intercept per non-baseline class.
    pub intercepts: Vec<f64>,
    /// `slopes[(j, k)]`: coefficient of design column `j` for `classes[k]`.
    pub slopes: DMatrix<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-likelihood at the start and after each accepted step.
    pub objective_trace: Vec<f64>,
}

impl LogitFit {
    /// Linear predictor for each non-baseline class.
    pub fn linear_predictors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut eta = x * &self.slopes;
        for (k, b) in self.intercepts.iter().enumerate() {
            eta.column_mut(k).add_scalar_mut(*b);
        }
        eta
    }

    /// Class probabilities (`n × n_classes`, columns in class order).
    pub fn probabilities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let eta = self.linear_predictors(x);
        softmax_with_baseline(&eta, self.baseline, &self.classes, self.n_classes)
    }
}

/// Turn per-class linear predictors into probabilities over all classes.
pub fn softmax_with_baseline(eta: &DMatrix<f64>, baseline: u32, classes: &[u32], n_classes: usize) -> DMatrix<f64> {
    let n = eta.nrows();
    let mut p = DMatrix::zeros(n, n_classes);
    for i in 0..n {
        let max = eta.row(i).iter().fold(0.0f64, |a, &b| a.max(b));
        let base = (-max).exp();
        let mut denom = base;
        for k in 0..classes.len() {
            denom += (eta[(i, k)] - max).exp();
        }
        p[(i, baseline as usize)] = base / denom;
        for (k, &c) in classes.iter().enumerate() {
            p[(i, c as usize)] = (eta[(i, k)] - max).exp() / denom;
        }
    }
    p
}

/// Multinomial (or binary, when `n_classes == 2`) logit of `y` on `x` plus
/// intercepts, by damped Newton–Raphson with an L2 ridge on the slopes.
///
/// Convergence: the largest parameter update (standardized scale) falls
/// below `tol`. On non-convergence the best iterate is returned with
/// `converged == false`.
pub fn multinomial_logit(
    x: &DMatrix<f64>,
    y: &[u32],
    n_classes: usize,
    baseline: u32,
    ridge: f64,
    max_iter: usize,
    tol: f64,
) -> LogitFit {
    assert_eq!(x.nrows(), y.len(), "design and response lengths differ");
    assert!(n_classes >= 2, "need at least two classes");
    let n = y.len();
    let classes: Vec<u32> = (0..n_classes as u32).filter(|&c| c != baseline).collect();
    let k_dim = classes.len();
    let scaling = Scaling::of(x);
    let design = scaling.design(x);
    let q = design.ncols();
    let dim = q * k_dim;

    // One-hot of the non-baseline classes.
    let mut onehot = DMatrix::zeros(n, k_dim);
    let mut counts = vec![0usize; n_classes];
    for (i, &c) in y.iter().enumerate() {
        counts[c as usize] += 1;
        if let Some(k) = classes.iter().position(|&cl| cl == c) {
            onehot[(i, k)] = 1.0;
        }
    }

    // theta is stored class-major: theta[k * q + j].
    let mut theta = DVector::zeros(dim);
    let floor = 0.5 / n.max(1) as f64;
    let p_base = (counts[baseline as usize] as f64 / n as f64).max(floor);
    for (k, &c) in classes.iter().enumerate() {
        theta[k * q] = ((counts[c as usize] as f64 / n as f64).max(floor) / p_base).ln();
    }

    let objective = |theta: &DVector<f64>| -> (f64, DMatrix<f64>) {
        let coef = DMatrix::from_column_slice(q, k_dim, theta.as_slice());
        let eta = &design * &coef;
        let p = softmax_with_baseline(&eta, baseline, &classes, n_classes);
        let ll: f64 = y.iter().enumerate().map(|(i, &c)| p[(i, c as usize)].max(1e-300).ln()).sum();
        let penalty: f64 = (0..k_dim)
            .map(|k| (1..q).map(|j| theta[k * q + j].powi(2)).sum::<f64>())
            .sum::<f64>();
        (ll - 0.5 * ridge * penalty, p)
    };

    let (mut penalized, mut probs) = objective(&theta);
    let mut objective_trace = vec![penalized];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        // Gradient.
        let mut grad = DVector::zeros(dim);
        let mut resid = DMatrix::zeros(n, k_dim);
        for (k, &c) in classes.iter().enumerate() {
            for i in 0..n {
                resid[(i, k)] = onehot[(i, k)] - probs[(i, c as usize)];
            }
        }
        let xr = design.tr_mul(&resid);
        for k in 0..k_dim {
            for j in 0..q {
                let pen = if j > 0 { ridge * theta[k * q + j] } else { 0.0 };
                grad[k * q + j] = xr[(j, k)] - pen;
            }
        }
        // Negative Hessian (observed information) plus ridge.
        let mut info = DMatrix::zeros(dim, dim);
        for a in 0..k_dim {
            for b in a..k_dim {
                let ca = classes[a] as usize;
                let cb = classes[b] as usize;
                let mut weighted = design.clone();
                for i in 0..n {
                    let w = if a == b {
                        probs[(i, ca)] * (1.0 - probs[(i, ca)])
                    } else {
                        -probs[(i, ca)] * probs[(i, cb)]
                    };
                    weighted.row_mut(i).scale_mut(w);
                }
                let block = weighted.tr_mul(&design);
                info.view_mut((a * q, b * q), (q, q)).copy_from(&block);
                if a != b {
                    info.view_mut((b * q, a * q), (q, q)).copy_from(&block.transpose());
                }
            }
        }
        for k in 0..k_dim {
            for j in 0..q {
                info[(k * q + j, k * q + j)] += if j > 0 { ridge } else { 1e-12 };
            }
            // Constant (dropped) columns carry no information.
            for j in 1..q {
                if scaling.scales[j - 1] == 0.0 {
                    info[(k * q + j, k * q + j)] += 1.0;
                }
            }
        }
        let step = match Cholesky::<f64, Dyn>::new(info.clone()) {
            Some(ch) => ch.solve(&grad),
            None => {
                let mut damped = info;
                for d in 0..dim {
                    damped[(d, d)] += 1e-6 * (n as f64);
                }
                match Cholesky::new(damped) {
                    Some(ch) => ch.solve(&grad),
                    None => break,
                }
            }
        };
        // Backtracking keeps the penalized likelihood non-decreasing.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &theta + &step * scale;
            let (obj, p) = objective(&candidate);
            if obj >= penalized - 1e-12 * penalized.abs().max(1.0) {
                accepted = Some((candidate, obj, p));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, obj, p)) = accepted else {
            break;
        };
        let max_change = (&candidate - &theta).amax();
        theta = candidate;
        penalized = obj;
        probs = p;
        objective_trace.push(obj);
        if max_change < tol {
            converged = true;
            break;
        }
    }

    let mut intercepts = Vec::with_capacity(k_dim);
    let mut slopes = DMatrix::zeros(x.ncols(), k_dim);
    for k in 0..k_dim {
        let (b0, s) = scaling.unscale(&theta.as_slice()[k * q..(k + 1) * q]);
        intercepts.push(b0);
        for (j, v) in s.into_iter().enumerate() {
            slopes[(j, k)] = v;
        }
    }
    let log_likelihood = y
        .iter()
        .enumerate()
        .map(|(i, &c)| probs[(i, c as usize)].max(1e-300).ln())
        .sum();
    LogitFit {
        n_classes,
        baseline,
        classes,
        intercepts,
        slopes,
        log_likelihood,
        converged,
        iterations,
        objective_trace,
    }
}

/// Log-likelihood of `y` under class probabilities `p`.
pub fn categorical_log_likelihood(p: &DMatrix<f64>, y: &[u32]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &c)| p[(i, c as usize)].max(1e-300).ln())
        .sum()
}
