//! Soft-margin kernel SVM trained by sequential minimal optimisation.
//!
//! Solves `min 1/2 a'Qa - e'a` subject to `0 <= a_i <= C`, `y'a = 0`, with
//! `Q_ij = y_i y_j k(x_i, x_j)`. Working pairs are chosen by maximal violation
//! for the first index and second-order gain for the second.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{check_input_dim, check_training_data, Predictor};
use crate::error::{Error, Result};
use crate::util::dot;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
    #[serde(alias = "poly")]
    Polynomial,
    Sigmoid,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Polynomial => "polynomial",
            KernelKind::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub kernel: KernelKind,
    pub c: f64,
    /// Kernel scale; `None` means `1 / n_features`.
    pub gamma: Option<f64>,
    pub degree: u32,
    pub coef0: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            kernel: KernelKind::Linear,
            c: 0.2,
            gamma: None,
            degree: 3,
            coef0: 0.0,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::domain(format!(
                "svm c must be positive, got {}",
                self.c
            )));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::domain(format!(
                    "svm gamma must be positive, got {g}"
                )));
            }
        }
        if self.degree == 0 {
            return Err(Error::domain("svm degree must be at least 1"));
        }
        if !self.coef0.is_finite()
            || !(self.tol > 0.0 && self.tol.is_finite())
            || self.max_iter == 0
        {
            return Err(Error::domain("svm coef0, tol and max_iter must be valid"));
        }
        Ok(())
    }

    fn resolved(&self, dim: usize) -> Kernel {
        Kernel {
            kind: self.kernel,
            gamma: self.gamma.unwrap_or(1.0 / dim as f64),
            degree: self.degree,
            coef0: self.coef0,
        }
    }
}

/// A kernel with every parameter fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl Kernel {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(u, v),
            KernelKind::Rbf => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Polynomial => {
                (self.gamma * dot(u, v) + self.coef0).powi(self.degree as i32)
            }
            KernelKind::Sigmoid => (self.gamma * dot(u, v) + self.coef0).tanh(),
        }
    }
}

pub fn kernel_eval(params: &SvmParams, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "kernel arguments differ in dimension ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    Ok(params.resolved(u.len().max(1)).eval(u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: SvmParams,
    pub seed: u64,
    pub n_features: usize,
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    pub(crate) fn check(&self) -> Result<()> {
        self.params.validate()?;
        if self.support_vectors.len() != self.dual_coef.len()
            || self
                .support_vectors
                .iter()
                .any(|v| v.len() != self.n_features)
            || !self.bias.is_finite()
        {
            return Err(Error::domain("svm support vectors are inconsistent"));
        }
        Ok(())
    }

    fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

impl Predictor for SvmModel {
    /// Signed margin `sum_i a_i y_i k(x_i, x) + b`.
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_input_dim(x, self.n_features)?;
        Ok(self.decision(x))
    }

    fn threshold(&self) -> f64 {
        0.0
    }
}

/// Full solver state at termination.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    /// One multiplier per training row.
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Maximal violating-pair gap at the solution.
    pub kkt_violation: f64,
    /// `sum(a) - 1/2 a'Qa`, the maximised dual.
    pub dual_objective: f64,
    pub kernel: Kernel,
}

pub fn fit(x: &[Vec<f64>], y: &[i8], params: &SvmParams, seed: u64) -> Result<SvmModel> {
    fit_detailed(x, y, params, seed).map(|(m, _)| m)
}

pub fn fit_detailed(
    x: &[Vec<f64>],
    y: &[i8],
    params: &SvmParams,
    seed: u64,
) -> Result<(SvmModel, SvmSolution)> {
    params.validate()?;
    let dim = check_training_data(x, y)?;
    let kernel = params.resolved(dim);
    let sol = solve(x, y, kernel, params)?;

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for (i, &a) in sol.alphas.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            dual_coef.push(a * f64::from(y[i]));
        }
    }
    let model = SvmModel {
        params: params.clone(),
        seed,
        n_features: dim,
        kernel,
        support_vectors,
        dual_coef,
        bias: sol.bias,
    };
    Ok((model, sol))
}

fn solve(x: &[Vec<f64>], y: &[i8], kernel: Kernel, params: &SvmParams) -> Result<SvmSolution> {
    let n = x.len();
    let c = params.c;
    let yf: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| kernel.eval(&x[i], &x[j])).collect())
        .collect();

    let mut alpha = vec![0.0; n];
    // Gradient of 1/2 a'Qa - e'a.
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut gap;
    loop {
        // i: maximal -y_t G_t over the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let up = if yf[t] > 0.0 {
                !upper(alpha[t])
            } else {
                !lower(alpha[t])
            };
            if up && -yf[t] * grad[t] >= gmax {
                gmax = -yf[t] * grad[t];
                i_sel = Some(t);
            }
        }
        // j: best second-order gain over the "low" set.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let low = if yf[t] > 0.0 {
                    !lower(alpha[t])
                } else {
                    !upper(alpha[t])
                };
                if !low {
                    continue;
                }
                let v = yf[t] * grad[t];
                if v >= gmax2 {
                    gmax2 = v;
                }
                let diff = gmax + v;
                if diff > 0.0 {
                    let quad = k[i][i] + k[t][t] - 2.0 * k[i][t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best_obj {
                        best_obj = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        gap = gmax + gmax2;
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gap >= params.tol => (i, j),
            _ => break,
        };
        if iterations >= params.max_iter {
            return Err(Error::Convergence {
                iterations,
                violation: gap,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = yf[i] * yf[j] * k[i][j];
        if yf[i] != yf[j] {
            let mut quad = k[i][i] + k[j][j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[i][i] + k[j][j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += yf[t] * (yf[i] * k[t][i] * di + yf[j] * k[t][j] * dj);
        }
    }

    // Offset from free multipliers, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if upper(alpha[t]) {
            if yf[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if yf[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (ub + lb) / 2.0
    };
    let dual_objective = alpha
        .iter()
        .zip(&grad)
        .map(|(a, g)| a - 0.5 * a * (g + 1.0))
        .sum();

    Ok(SvmSolution {
        alphas: alpha,
        bias: -rho,
        iterations,
        kkt_violation: gap.max(0.0),
        dual_objective,
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let lin = SvmParams::default();
        assert_eq!(kernel_eval(&lin, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let rbf = SvmParams {
            kernel: KernelKind::Rbf,
            gamma: Some(3.7),
            ..Default::default()
        };
        assert_eq!(kernel_eval(&rbf, &[0.2, -1.0], &[0.2, -1.0]).unwrap(), 1.0);
        let poly = SvmParams {
            kernel: KernelKind::Polynomial,
            gamma: Some(1.0),
            coef0: 0.0,
            degree: 2,
            ..Default::default()
        };
        assert_eq!(kernel_eval(&poly, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let sig = SvmParams {
            kernel: KernelKind::Sigmoid,
            gamma: Some(0.5),
            coef0: 0.1,
            ..Default::default()
        };
        let v = kernel_eval(&sig, &[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - 0.6f64.tanh()).abs() < 1e-15);
        assert!(kernel_eval(&lin, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_point_geometry() {
        let x = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let y = [-1, 1];
        let p = SvmParams {
            c: 1e3,
            ..Default::default()
        };
        let (m, sol) = fit_detailed(&x, &y, &p, 0).unwrap();
        assert_eq!(m.support_vectors.len(), 2);
        assert!(sol.alphas.iter().all(|&a| a > 0.0));
        assert!(m.score(&[0.0, 0.0]).unwrap().abs() < 1e-9);
        assert!((m.score(&[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-6);
        assert!(sol.dual_objective >= 0.0);
    }

    #[test]
    fn xor_with_rbf() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let y = [-1, -1, 1, 1];
        let p = SvmParams {
            kernel: KernelKind::Rbf,
            gamma: Some(1.0),
            c: 100.0,
            ..Default::default()
        };
        let m = fit(&x, &y, &p, 0).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.predict_label(xi).unwrap(), yi);
        }
    }

    #[test]
    fn iteration_cap_reports_violation() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 / 10.0, (i % 3) as f64])
            .collect();
        let y: Vec<i8> = (0..20).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let p = SvmParams {
            kernel: KernelKind::Rbf,
            c: 10.0,
            max_iter: 1,
            tol: 1e-9,
            ..Default::default()
        };
        match fit(&x, &y, &p, 0) {
            Err(Error::Convergence { violation, .. }) => assert!(violation > 0.0),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
