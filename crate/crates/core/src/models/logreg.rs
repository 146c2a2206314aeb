//! Regularised logistic regression.
//!
//! Minimises the mean binary cross-entropy on targets `(y + 1) / 2` plus
//! `(1 / c) * R(w)`, where `R` is `||w||_1` or `||w||^2 / 2`. The bias is not
//! penalised. L2 uses damped Newton steps, L1 uses proximal gradient steps;
//! both backtrack so every accepted step lowers the objective.

use serde::{Deserialize, Serialize};

use super::{check_input_dim, check_training_data, targets, Predictor};
use crate::error::{Error, Result};
use crate::util::{dot, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegParams {
    pub penalty: Penalty,
    /// Inverse regularisation strength.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            penalty: Penalty::L2,
            c: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl LogRegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::domain(format!(
                "logreg c must be positive, got {}",
                self.c
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("logreg max_iter must be positive"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::domain("logreg tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub params: LogRegParams,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub(crate) fn check(&self) -> Result<()> {
        self.params.validate()?;
        if self.weights.is_empty()
            || self
                .weights
                .iter()
                .chain([&self.bias])
                .any(|v| !v.is_finite())
        {
            return Err(Error::domain("logreg weights must be finite and non-empty"));
        }
        Ok(())
    }
}

impl Predictor for LogRegModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_input_dim(x, self.weights.len())?;
        Ok(sigmoid(dot(&self.weights, x) + self.bias))
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

/// Record of an optimisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Objective value at the start and after every accepted step.
    pub objective: Vec<f64>,
    /// Stationarity measure at the final iterate (gradient norm for L2,
    /// proximal-gradient mapping norm for L1).
    pub final_gradient_norm: f64,
    pub converged: bool,
}

/// Mean cross-entropy plus the smooth penalty. `theta` holds the weights
/// followed by the bias. For L1 the returned gradient uses `sign(w)` (zero at zero).
pub fn loss_and_gradient(
    x: &[Vec<f64>],
    y: &[i8],
    theta: &[f64],
    penalty: Penalty,
    c: f64,
) -> (f64, Vec<f64>) {
    let t = targets(y);
    let (mut loss, mut grad) = data_loss_and_gradient(x, &t, theta);
    let d = theta.len() - 1;
    let lambda = 1.0 / c;
    match penalty {
        Penalty::L2 => {
            for k in 0..d {
                loss += 0.5 * lambda * theta[k] * theta[k];
                grad[k] += lambda * theta[k];
            }
        }
        Penalty::L1 => {
            for k in 0..d {
                loss += lambda * theta[k].abs();
                grad[k] += lambda * sign(theta[k]);
            }
        }
    }
    (loss, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn data_loss_and_gradient(x: &[Vec<f64>], t: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let d = theta.len() - 1;
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (row, &ti) in x.iter().zip(t) {
        let z = dot(&theta[..d], row) + theta[d];
        loss += softplus(z) - ti * z;
        let r = sigmoid(z) - ti;
        for k in 0..d {
            grad[k] += r * row[k];
        }
        grad[d] += r;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss, grad)
}

fn data_loss(x: &[Vec<f64>], t: &[f64], theta: &[f64]) -> f64 {
    let d = theta.len() - 1;
    x.iter()
        .zip(t)
        .map(|(row, &ti)| {
            let z = dot(&theta[..d], row) + theta[d];
            softplus(z) - ti * z
        })
        .sum::<f64>()
        / x.len() as f64
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

pub fn fit(x: &[Vec<f64>], y: &[i8], params: &LogRegParams, seed: u64) -> Result<LogRegModel> {
    fit_traced(x, y, params, seed).map(|(m, _)| m)
}

pub fn fit_traced(
    x: &[Vec<f64>],
    y: &[i8],
    params: &LogRegParams,
    seed: u64,
) -> Result<(LogRegModel, FitTrace)> {
    params.validate()?;
    let d = check_training_data(x, y)?;
    let t = targets(y);
    let (theta, trace) = match params.penalty {
        Penalty::L2 => newton_l2(x, &t, d, params),
        Penalty::L1 => proximal_l1(x, &t, d, params),
    };
    let model = LogRegModel {
        params: params.clone(),
        seed,
        weights: theta[..d].to_vec(),
        bias: theta[d],
    };
    Ok((model, trace))
}

fn l2_objective(x: &[Vec<f64>], t: &[f64], theta: &[f64], lambda: f64) -> f64 {
    let d = theta.len() - 1;
    data_loss(x, t, theta) + 0.5 * lambda * theta[..d].iter().map(|w| w * w).sum::<f64>()
}

fn newton_l2(x: &[Vec<f64>], t: &[f64], d: usize, p: &LogRegParams) -> (Vec<f64>, FitTrace) {
    let lambda = 1.0 / p.c;
    let n = x.len() as f64;
    let mut theta = vec![0.0; d + 1];
    let mut f = l2_objective(x, t, &theta, lambda);
    let mut trace = vec![f];
    let mut gnorm = f64::INFINITY;
    let mut converged = false;

    for _ in 0..p.max_iter {
        let (_, mut g) = data_loss_and_gradient(x, t, &theta);
        for k in 0..d {
            g[k] += lambda * theta[k];
        }
        gnorm = norm(&g);
        if gnorm <= p.tol {
            converged = true;
            break;
        }

        // Hessian of the objective over (w, b).
        let mut h = vec![vec![0.0; d + 1]; d + 1];
        for row in x {
            let z = dot(&theta[..d], row) + theta[d];
            let s = sigmoid(z);
            let wgt = s * (1.0 - s) / n;
            for a in 0..=d {
                let xa = if a < d { row[a] } else { 1.0 };
                for b in 0..=a {
                    let xb = if b < d { row[b] } else { 1.0 };
                    h[a][b] += wgt * xa * xb;
                }
            }
        }
        #[allow(clippy::needless_range_loop)]
        for a in 0..=d {
            for b in 0..a {
                h[b][a] = h[a][b];
            }
            h[a][a] += if a < d { lambda } else { 0.0 } + 1e-12;
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut dir = cholesky_solve(&h, &neg_g).unwrap_or_else(|| neg_g.clone());
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = neg_g;
            slope = -gnorm * gnorm;
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let fc = l2_objective(x, t, &cand, lambda);
            if fc <= f + 1e-4 * step * slope {
                if fc < f {
                    theta = cand;
                    f = fc;
                    trace.push(f);
                    accepted = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable decrease left along the Newton direction.
            break;
        }
    }
    if !converged {
        let (_, mut g) = data_loss_and_gradient(x, t, &theta);
        for k in 0..d {
            g[k] += lambda * theta[k];
        }
        gnorm = norm(&g);
        converged = gnorm <= p.tol;
    }
    (
        theta,
        FitTrace {
            objective: trace,
            final_gradient_norm: gnorm,
            converged,
        },
    )
}

fn l1_objective(x: &[Vec<f64>], t: &[f64], theta: &[f64], lambda: f64) -> f64 {
    let d = theta.len() - 1;
    data_loss(x, t, theta) + lambda * theta[..d].iter().map(|w| w.abs()).sum::<f64>()
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

fn proximal_l1(x: &[Vec<f64>], t: &[f64], d: usize, p: &LogRegParams) -> (Vec<f64>, FitTrace) {
    let lambda = 1.0 / p.c;
    let mut theta = vec![0.0; d + 1];
    let mut trace = vec![l1_objective(x, t, &theta, lambda)];
    let mut step = 1.0;
    let mut mapping_norm = f64::INFINITY;
    let mut converged = false;

    for _ in 0..p.max_iter {
        let (f, g) = data_loss_and_gradient(x, t, &theta);
        let mut cand;
        loop {
            cand = theta
                .iter()
                .zip(&g)
                .enumerate()
                .map(|(k, (w, gk))| {
                    let v = w - step * gk;
                    if k < d {
                        soft_threshold(v, step * lambda)
                    } else {
                        v
                    }
                })
                .collect::<Vec<_>>();
            let diff: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let model = f + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * step);
            if data_loss(x, t, &cand) <= model + 1e-15 || step < 1e-12 {
                mapping_norm = norm(&diff) / step;
                break;
            }
            step *= 0.5;
        }
        if mapping_norm <= p.tol {
            converged = true;
            break;
        }
        let obj = l1_objective(x, t, &cand, lambda);
        if obj > *trace.last().expect("non-empty trace") {
            break;
        }
        theta = cand;
        trace.push(obj);
        step *= 2.0;
    }
    (
        theta,
        FitTrace {
            objective: trace,
            final_gradient_norm: mapping_norm,
            converged,
        },
    )
}

/// Solves `a * x = b` for symmetric positive-definite `a`.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v <= 0.0 || !v.is_finite() {
                    return None;
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * out[k]).sum();
        out[i] = (z[i] - s) / l[i][i];
    }
    Some(out)
}
