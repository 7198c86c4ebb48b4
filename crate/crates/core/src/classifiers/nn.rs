use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{argmax_lowest_f64, Dataset};

pub const DEFAULT_EPOCHS: usize = 1000;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// Single-layer softmax network: inputs plus bias to one output per
/// category. Weights are row-major `categories x (features + 1)`, bias last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptronNet {
    pub n_features: usize,
    pub n_categories: usize,
    pub weights: Vec<f64>,
    pub trained: bool,
    /// Set when training stopped at the epoch limit before the gradient
    /// norm fell below the tolerance.
    pub non_convergence: bool,
    pub epochs_run: usize,
    pub final_loss: f64,
}

impl PerceptronNet {
    pub fn untrained(n_features: usize, n_categories: usize) -> Self {
        Self {
            n_features,
            n_categories,
            weights: vec![0.0; n_categories * (n_features + 1)],
            trained: false,
            non_convergence: false,
            epochs_run: 0,
            final_loss: f64::NAN,
        }
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(softmax(&logits(&self.weights, x, self.n_categories)))
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_lowest_f64(&self.probabilities(x)?))
    }
}

pub fn nn_classify(net: &PerceptronNet, x: &[f64]) -> Result<usize> {
    net.classify(x)
}

fn logits(w: &[f64], x: &[f64], c: usize) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..c)
        .map(|k| {
            let row = &w[k * stride..(k + 1) * stride];
            row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()]
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of the softmax outputs and its gradient with respect
/// to the weights.
pub fn loss_and_gradient(weights: &[f64], data: &Dataset) -> (f64, Vec<f64>) {
    let f = data.n_features();
    let c = data.n_categories;
    let stride = f + 1;
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (x, &y) in data.rows.iter().zip(&data.labels) {
        let z = logits(weights, x, c);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        for k in 0..c {
            let p = (z[k] - lse).exp();
            let d = p - if k == y { 1.0 } else { 0.0 };
            let row = &mut grad[k * stride..(k + 1) * stride];
            for j in 0..f {
                row[j] += d * x[j];
            }
            row[f] += d;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

pub fn loss(weights: &[f64], data: &Dataset) -> f64 {
    loss_and_gradient(weights, data).0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains from zero weights with Moller's scaled conjugate gradient, one
/// SCG iteration per epoch, stopping once the gradient norm drops below
/// [`GRADIENT_TOLERANCE`]. Accepted steps never increase the loss.
pub fn train_nn(data: &Dataset, epochs: usize) -> Result<PerceptronNet> {
    if data.present_categories() < 2 {
        return Err(Error::TooFewCategories(data.present_categories()));
    }
    let mut net = PerceptronNet::untrained(data.n_features(), data.n_categories);
    let mut w = net.weights.clone();
    let n_w = w.len();
    let (mut e, g) = loss_and_gradient(&w, data);
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let (sigma0, mut lambda, mut lambda_bar) = (1e-4, 1e-6, 0.0);
    let mut success = true;
    let mut delta = 0.0;
    let mut converged = dot(&r, &r).sqrt() < GRADIENT_TOLERANCE;
    let mut epoch = 0;

    while epoch < epochs && !converged {
        epoch += 1;
        let p2 = dot(&p, &p);
        if p2 == 0.0 {
            converged = true;
            break;
        }
        if success {
            let sigma = sigma0 / p2.sqrt();
            let shifted: Vec<f64> = w.iter().zip(&p).map(|(a, b)| a + sigma * b).collect();
            let (_, g_shift) = loss_and_gradient(&shifted, data);
            // r = -E'(w)
            let s: Vec<f64> = g_shift.iter().zip(&r).map(|(gs, rv)| (gs + rv) / sigma).collect();
            delta = dot(&p, &s);
        }
        // scale
        let mut d = delta + (lambda - lambda_bar) * p2;
        if d <= 0.0 {
            lambda_bar = 2.0 * (lambda - d / p2);
            d = -d + lambda * p2;
            lambda = lambda_bar;
        }
        let mu = dot(&p, &r);
        let alpha = mu / d;
        let candidate: Vec<f64> = w.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
        let (e_new, g_new) = loss_and_gradient(&candidate, data);
        let comparison = 2.0 * d * (e - e_new) / (mu * mu);
        if comparison >= 0.0 && e_new <= e {
            w = candidate;
            e = e_new;
            let r_new: Vec<f64> = g_new.iter().map(|v| -v).collect();
            lambda_bar = 0.0;
            success = true;
            if epoch % n_w == 0 {
                p = r_new.clone();
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &r)) / mu;
                p = r_new.iter().zip(&p).map(|(a, b)| a + beta * b).collect();
            }
            r = r_new;
            if comparison >= 0.75 {
                lambda *= 0.25;
            }
        } else {
            lambda_bar = lambda;
            success = false;
        }
        if comparison < 0.25 {
            lambda += d * (1.0 - comparison) / p2;
        }
        lambda = lambda.clamp(1e-15, 1e100);
        converged = dot(&r, &r).sqrt() < GRADIENT_TOLERANCE;
    }

    net.weights = w;
    net.trained = true;
    net.non_convergence = !converged;
    net.epochs_run = epoch;
    net.final_loss = e;
    Ok(net)
}
