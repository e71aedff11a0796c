//! Independent oracles shared by the integration tests. Nothing here calls
//! into the crate's aggregation code.

#![allow(dead_code)]

use airfl::model::ModelParams;
use airfl::robust_agg::AggregationProblem;
use rand::Rng;
use rand_distr::StandardNormal;

/// Neumaier-compensated sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    neumaier_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y))).sqrt()
}

/// `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = neumaier_sum(b.iter().map(|v| v * v)).sqrt().max(floor);
    euclid(a, b) / scale
}

/// Smoothed norm written out from its definition.
pub fn smoothed(r: f64, nu: f64) -> f64 {
    if r <= nu {
        r * r / (2.0 * nu) + nu / 2.0
    } else {
        r
    }
}

/// Weighted smoothed-distance objective, recomputed with compensated sums.
pub fn objective(z: &[f64], points: &[Vec<f64>], weights: &[f64], nu: f64) -> f64 {
    neumaier_sum(
        points
            .iter()
            .zip(weights)
            .map(|(p, a)| a * smoothed(euclid(z, p), nu)),
    )
}

/// Minimizes the 2-D objective by repeated grid search with shrinking
/// windows, then polishes with a backtracking subgradient descent.
pub fn brute_force_gm_2d(points: &[Vec<f64>], weights: &[f64], nu: f64) -> (Vec<f64>, f64) {
    let f = |x: f64, y: f64| objective(&[x, y], points, weights, nu);
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1])),
    );
    // the minimizer lies in the convex hull, hence in the bounding box
    let pad = 1e-9 + 0.01 * ((hi_x - lo_x).max(hi_y - lo_y));
    lo_x -= pad;
    hi_x += pad;
    lo_y -= pad;
    hi_y += pad;

    const N: usize = 60;
    let mut best = ((lo_x + hi_x) / 2.0, (lo_y + hi_y) / 2.0);
    let mut best_val = f(best.0, best.1);
    for _ in 0..60 {
        let (sx, sy) = ((hi_x - lo_x) / N as f64, (hi_y - lo_y) / N as f64);
        for i in 0..=N {
            for j in 0..=N {
                let (x, y) = (lo_x + i as f64 * sx, lo_y + j as f64 * sy);
                let v = f(x, y);
                if v < best_val {
                    best_val = v;
                    best = (x, y);
                }
            }
        }
        // keep a window of a few cells around the incumbent
        lo_x = best.0 - 4.0 * sx;
        hi_x = best.0 + 4.0 * sx;
        lo_y = best.1 - 4.0 * sy;
        hi_y = best.1 + 4.0 * sy;
        if sx.max(sy) < 1e-13 {
            break;
        }
    }

    // subgradient polish with step halving; only accepts improvements
    let mut step = 1e-6;
    for _ in 0..2000 {
        let mut g = [0.0, 0.0];
        for (p, a) in points.iter().zip(weights) {
            let dx = best.0 - p[0];
            let dy = best.1 - p[1];
            let r = (dx * dx + dy * dy).sqrt();
            let denom = r.max(nu);
            g[0] += a * dx / denom;
            g[1] += a * dy / denom;
        }
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn == 0.0 || step < 1e-18 {
            break;
        }
        let cand = (best.0 - step * g[0] / gn, best.1 - step * g[1] / gn);
        let v = f(cand.0, cand.1);
        if v < best_val {
            best = cand;
            best_val = v;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    (vec![best.0, best.1], best_val)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Random instance with `k` points in `d` dimensions and random positive
/// weights summing to one.
pub fn random_problem<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    d: usize,
    nu: f64,
    max_iter: usize,
    tol: f64,
) -> AggregationProblem {
    let points: Vec<ModelParams> = (0..k)
        .map(|_| ModelParams::from(gaussian_vec(rng, d, 1.0)))
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    AggregationProblem::new(points, weights, nu, max_iter, tol).expect("valid instance")
}

pub fn as_vecs(problem: &AggregationProblem) -> Vec<Vec<f64>> {
    problem.points().iter().map(|p| p.to_vec()).collect()
}
