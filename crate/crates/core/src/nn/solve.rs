//! Direct solvers used by the causal estimators.

use nalgebra::{DMatrix, DVector};

use super::{sigmoid, softplus, NnError, Tensor};

/// L2 penalty on logistic weights (not on the bias).
pub const LOGISTIC_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticFit {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict_all(&self, x: &Tensor) -> Vec<f64> {
        (0..x.rows()).map(|r| self.predict(x.row(r))).collect()
    }
}

fn objective(x: &Tensor, t: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = t.len() as f64;
    let nll: f64 = (0..x.rows())
        .map(|r| {
            let z = b + x.row(r).iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            softplus(z) - t[r] * z
        })
        .sum();
    nll / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Penalized logistic regression by damped Newton iterations from zero.
///
/// Minimizes `mean(log(1 + e^z) - t z) + (l2 / 2) |w|^2` with `z = x w + b`
/// until the gradient norm drops below `1e-6` or 500 iterations pass.
pub fn fit_logistic(x: &Tensor, t: &[u8]) -> Result<LogisticFit, NnError> {
    let (n, d) = x.shape();
    if t.len() != n {
        return Err(NnError::Shape { op: "fit_logistic", left: x.shape(), right: (t.len(), 1) });
    }
    if n < 2 {
        return Err(NnError::TooFewSamples { need: 2, got: n });
    }
    let pos = t.iter().filter(|&&v| v != 0).count();
    if pos == 0 || pos == n {
        return Err(NnError::SingleClass(if pos == 0 { 0 } else { 1 }));
    }
    let tf: Vec<f64> = t.iter().map(|&v| if v != 0 { 1.0 } else { 0.0 }).collect();
    let l2 = LOGISTIC_L2;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = objective(x, &tf, &w, b, l2);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let nf = n as f64;

    while iterations < 500 {
        // gradient and Hessian over [w, b]
        let mut g = DVector::<f64>::zeros(d + 1);
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        for r in 0..n {
            let row = x.row(r);
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let p = sigmoid(z);
            let res = (p - tf[r]) / nf;
            let s = p * (1.0 - p) / nf;
            for i in 0..d {
                g[i] += res * row[i];
                for j in 0..=i {
                    h[(i, j)] += s * row[i] * row[j];
                }
                h[(d, i)] += s * row[i];
            }
            g[d] += res;
            h[(d, d)] += s;
        }
        for i in 0..d {
            g[i] += l2 * w[i];
            h[(i, i)] += l2;
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
            h[(i, d)] = h[(d, i)];
        }
        grad_norm = g.norm();
        if grad_norm < 1e-6 {
            break;
        }
        iterations += 1;
        // bias curvature vanishes only when every point is saturated
        h[(d, d)] += 1e-12;
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let slope = g.dot(&step);
        let mut alpha = 1.0;
        loop {
            let nw: Vec<f64> = w.iter().enumerate().map(|(i, v)| v - alpha * step[i]).collect();
            let nb = b - alpha * step[d];
            let nf_ = objective(x, &tf, &nw, nb, l2);
            if nf_ <= f - 1e-4 * alpha * slope || alpha < 1e-10 {
                w = nw;
                b = nb;
                f = nf_;
                break;
            }
            alpha *= 0.5;
        }
        if !f.is_finite() {
            return Err(NnError::NonFinite { op: "fit_logistic" });
        }
    }
    Ok(LogisticFit { weights: w, bias: b, iterations, grad_norm })
}

/// Solves `(X^T X + lambda I) w = X^T y` by Cholesky.
pub fn fit_ridge(x: &Tensor, y: &[f64], lambda: f64) -> Result<Vec<f64>, NnError> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(NnError::Shape { op: "fit_ridge", left: x.shape(), right: (y.len(), 1) });
    }
    if n == 0 {
        return Err(NnError::TooFewSamples { need: 1, got: 0 });
    }
    let mut xtx = Tensor::zeros(d, d);
    super::gemm(x, true, x, false, &mut xtx, false);
    let mut a = DMatrix::from_row_slice(d, d, xtx.data());
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let mut rhs = DVector::<f64>::zeros(d);
    for r in 0..n {
        for (i, v) in x.row(r).iter().enumerate() {
            rhs[i] += v * y[r];
        }
    }
    let chol = a.cholesky().ok_or(NnError::RankDeficient { lambda })?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(NnError::RankDeficient { lambda });
    }
    Ok(w.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_recovers_slope() {
        let x = Tensor::column(&[1.0, 2.0, 3.0, 4.0]);
        let w = fit_ridge(&x, &[2.0, 4.0, 6.0, 8.0], 1e-10).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_rank_deficient() {
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert!(matches!(fit_ridge(&x, &[1.0, 2.0], 0.0), Err(NnError::RankDeficient { .. })));
        assert!(fit_ridge(&x, &[1.0, 2.0], 1e-3).is_ok());
    }

    #[test]
    fn logistic_symmetric_bias_zero() {
        let x = Tensor::column(&[-2.0, -1.0, 1.0, 2.0, -0.5, 0.5]);
        let fit = fit_logistic(&x, &[0, 1, 0, 1, 1, 0]).unwrap();
        assert!(fit.bias.abs() < 1e-4, "{fit:?}");
    }

    #[test]
    fn logistic_single_class() {
        let x = Tensor::column(&[1.0, 2.0]);
        assert!(matches!(fit_logistic(&x, &[1, 1]), Err(NnError::SingleClass(1))));
    }

    #[test]
    fn logistic_separable_is_monotone() {
        let xs = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let x = Tensor::column(&xs);
        let fit = fit_logistic(&x, &[0, 0, 0, 1, 1, 1]).unwrap();
        let p: Vec<f64> = xs.iter().map(|&v| fit.predict(&[v])).collect();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }
}
