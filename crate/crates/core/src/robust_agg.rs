//! Smoothed geometric median aggregation via the Weiszfeld iteration, and the
//! weighted-mean baseline.

use crate::model::{distance, norm, ModelParams};

/// Tolerance on `sum(alpha) == 1`.
const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggError {
    #[error("no points to aggregate")]
    Empty,
    #[error("{points} points but {weights} weights")]
    LengthMismatch { points: usize, weights: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("weight {index} is {value}, must be positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, must sum to 1")]
    WeightSum(f64),
    #[error("smoothing must be positive, got {0}")]
    Smoothing(f64),
    #[error("max_iter must be at least 1")]
    MaxIter,
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
}

/// Points, weights and stopping rule of one geometric-median solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationProblem {
    points: Vec<ModelParams>,
    weights: Vec<f64>,
    smoothing: f64,
    max_iter: usize,
    tol: f64,
}

impl AggregationProblem {
    pub fn new(
        points: Vec<ModelParams>,
        weights: Vec<f64>,
        smoothing: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<Self, AggError> {
        validate_points(&points, &weights)?;
        if !(smoothing > 0.0) {
            return Err(AggError::Smoothing(smoothing));
        }
        if max_iter == 0 {
            return Err(AggError::MaxIter);
        }
        if !(tol > 0.0) {
            return Err(AggError::Tolerance(tol));
        }
        Ok(Self {
            points,
            weights,
            smoothing,
            max_iter,
            tol,
        })
    }

    /// Equal weights `1/K`.
    pub fn uniform(
        points: Vec<ModelParams>,
        smoothing: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<Self, AggError> {
        let k = points.len().max(1);
        let weights = vec![1.0 / k as f64; points.len()];
        Self::new(points, weights, smoothing, max_iter, tol)
    }

    pub fn points(&self) -> &[ModelParams] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }
}

fn validate_points(points: &[ModelParams], weights: &[f64]) -> Result<(), AggError> {
    if points.is_empty() {
        return Err(AggError::Empty);
    }
    if points.len() != weights.len() {
        return Err(AggError::LengthMismatch {
            points: points.len(),
            weights: weights.len(),
        });
    }
    let dim = points[0].dim();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.dim() != dim) {
        return Err(AggError::DimensionMismatch {
            index,
            expected: dim,
            found: p.dim(),
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &a)| !(a > 0.0)) {
        return Err(AggError::NonPositiveWeight { index, value });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(AggError::WeightSum(total));
    }
    Ok(())
}

/// Result of a Weiszfeld run.
#[derive(Debug, Clone, PartialEq)]
pub struct WeiszfeldState {
    pub z: ModelParams,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Huber-like smoothing of the Euclidean norm: `|z|^2 / (2 nu) + nu / 2`
/// inside the ball of radius `nu`, `|z|` outside.
pub fn smoothed_norm(z: &[f64], nu: f64) -> f64 {
    smooth(norm(z), nu)
}

fn smooth(r: f64, nu: f64) -> f64 {
    if r <= nu {
        r * r / (2.0 * nu) + nu / 2.0
    } else {
        r
    }
}

/// `g_nu(z) = sum_k alpha_k |z - w_k|_(nu)`.
pub fn gm_objective(z: &[f64], problem: &AggregationProblem) -> f64 {
    problem
        .points
        .iter()
        .zip(&problem.weights)
        .map(|(w, a)| a * smooth(distance(z, w), problem.smoothing))
        .sum()
}

/// `beta_k = alpha_k / max(nu, |z - w_k|)`.
pub fn weiszfeld_weight(z: &[f64], w_k: &[f64], alpha_k: f64, nu: f64) -> f64 {
    alpha_k / nu.max(distance(z, w_k))
}

/// One reweighted average `sum beta_k w_k / sum beta_k`, summed in device
/// order.
pub fn weiszfeld_step(z: &[f64], problem: &AggregationProblem) -> ModelParams {
    let mut num = vec![0.0; z.len()];
    let mut den = 0.0;
    for (w, &a) in problem.points.iter().zip(&problem.weights) {
        let beta = weiszfeld_weight(z, w, a, problem.smoothing);
        for (acc, x) in num.iter_mut().zip(w.iter()) {
            *acc += beta * x;
        }
        den += beta;
    }
    num.iter_mut().for_each(|v| *v /= den);
    ModelParams::from(num)
}

/// Runs the smoothed Weiszfeld iteration from `init` until two consecutive
/// iterates are within `tol` (absolute, Euclidean) or `max_iter` steps.
pub fn weiszfeld_ideal(init: &ModelParams, problem: &AggregationProblem) -> WeiszfeldState {
    weiszfeld_ideal_observed(init, problem, |_| {})
}

/// [`weiszfeld_ideal`], calling `observe` on the initial point and on every
/// iterate.
pub fn weiszfeld_ideal_observed<F: FnMut(&[f64])>(
    init: &ModelParams,
    problem: &AggregationProblem,
    mut observe: F,
) -> WeiszfeldState {
    let mut z = init.clone();
    observe(&z);
    for it in 1..=problem.max_iter {
        let next = weiszfeld_step(&z, problem);
        observe(&next);
        let moved = distance(&next, &z);
        z = next;
        if moved <= problem.tol {
            return WeiszfeldState {
                z,
                iterations_used: it,
                converged: true,
            };
        }
    }
    WeiszfeldState {
        z,
        iterations_used: problem.max_iter,
        converged: false,
    }
}

/// Weighted mean `sum alpha_k w_k`.
pub fn mean_aggregate(points: &[ModelParams], weights: &[f64]) -> Result<ModelParams, AggError> {
    validate_points(points, weights)?;
    let mut out = vec![0.0; points[0].dim()];
    for (w, &a) in points.iter().zip(weights) {
        for (acc, x) in out.iter_mut().zip(w.iter()) {
            *acc += a * x;
        }
    }
    Ok(ModelParams::from(out))
}
