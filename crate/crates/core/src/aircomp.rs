//! Over-the-air Weiszfeld aggregation on a simulated single-antenna
//! multiple-access uplink.
//!
//! Each inner Weiszfeld iteration is one transmission block: every device
//! sends `m = d + 1` analog symbols carrying `[beta_k w_k, beta_k s]`, where
//! `s = sqrt(|z|^2 / d)` is derived from the broadcast iterate. Devices invert
//! their own channel (perfect CSI), scale to the power budget with a soft
//! threshold, and the receiver sees the noisy sum. The server reads the real
//! part and recovers `z = a / b * s`.

use std::ops::{Add, Mul};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{distance, norm, ModelParams};
use crate::robust_agg::{weiszfeld_weight, AggregationProblem, WeiszfeldState};

/// Smallest |b| the receiver will divide by.
pub const DEFAULT_B_FLOOR: f64 = 1e-12;

/// Transmission attempts per inner iteration before the solve is abandoned.
const ATTEMPTS_PER_ITERATION: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AirError {
    #[error("broadcast iterate is the zero vector; message scale is undefined")]
    DegenerateBroadcast,
    #[error("channel coefficient is zero; cannot invert")]
    ChannelSingularity,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("decode failure: received scale {b:e} below floor {floor:e}")]
    DecodeFailure { b: f64, floor: f64 },
    #[error("decode failed twice at inner iteration {iteration}; last received scale {b:e}")]
    Aborted {
        iteration: usize,
        b: f64,
        /// Failed blocks over the whole solve, including the final two.
        failures: usize,
    },
    #[error("invalid air configuration: {0}")]
    Config(String),
}

/// A complex number as a pair of reals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, rhs: Complex) -> Complex {
        Complex::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, rhs: Complex) -> Complex {
        Complex::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

/// Squared Euclidean norm of a complex vector.
pub fn energy(x: &[Complex]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum()
}

/// How the soft threshold `C` is chosen in each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `C = mult * |z|^2 / m`.
    Scaled(f64),
    /// `C = max_k |x'_k|^2 / m`: every device lands on the same power scale
    /// and none is distorted.
    Aligned,
}

impl Threshold {
    /// `Scaled(mult)`, with an infinite multiplier meaning [`Threshold::Aligned`].
    pub fn from_multiplier(mult: f64) -> Self {
        if mult.is_infinite() {
            Threshold::Aligned
        } else {
            Threshold::Scaled(mult)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirConfig {
    /// Per-symbol transmit power budget `P`.
    pub power: f64,
    /// Receiver noise variance `sigma^2` (total over real and imaginary parts).
    pub noise_var: f64,
    pub threshold: Threshold,
    pub b_floor: f64,
}

impl AirConfig {
    pub fn new(power: f64, noise_var: f64, threshold: Threshold) -> Result<Self, AirError> {
        let cfg = Self {
            power,
            noise_var,
            threshold,
            b_floor: DEFAULT_B_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AirError> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(AirError::Config(format!("power must be positive, got {}", self.power)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(AirError::Config(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            )));
        }
        if let Threshold::Scaled(mult) = self.threshold {
            if !(mult > 0.0 && mult.is_finite()) {
                return Err(AirError::Config(format!(
                    "threshold multiplier must be positive, got {mult}"
                )));
            }
        }
        if !(self.b_floor >= 0.0) {
            return Err(AirError::Config(format!("b_floor must be non-negative, got {}", self.b_floor)));
        }
        Ok(())
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex {
    let sd = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(sd * re, sd * im)
}

/// `K` i.i.d. CN(0, 1) channel coefficients.
pub fn draw_channels<R: Rng + ?Sized>(devices: usize, rng: &mut R) -> Vec<Complex> {
    (0..devices).map(|_| complex_gaussian(rng, 1.0)).collect()
}

/// `m` i.i.d. CN(0, sigma^2) noise samples. Always consumes `2m` normals, so
/// the stream position does not depend on `sigma^2`.
pub fn draw_noise<R: Rng + ?Sized>(len: usize, noise_var: f64, rng: &mut R) -> Vec<Complex> {
    (0..len).map(|_| complex_gaussian(rng, noise_var)).collect()
}

/// Norm assumed for a zero broadcast iterate (the first block of round 0).
///
/// The decode error relative to the spread of the local models grows with
/// the broadcast norm, while a scale far below `alpha_k / sqrt(C_mult)` pushes
/// every device into the distorted regime. Local models near the zero
/// iterate sit between the two, so a small fixed norm works for both.
pub const ZERO_BROADCAST_NORM: f64 = 1e-2;

/// Common scale `sqrt(|z|^2 / d)` appended to every message. The zero iterate
/// uses [`ZERO_BROADCAST_NORM`] instead, which every device and the server
/// agree on.
pub fn broadcast_scale(z: &[f64]) -> f64 {
    let root_d = (z.len() as f64).sqrt();
    let s = norm(z) / root_d;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        ZERO_BROADCAST_NORM / root_d
    }
}

/// `[beta w_k, beta sqrt(|z|^2 / d)]`.
pub fn build_message(beta: f64, w_k: &[f64], z: &[f64]) -> Result<Vec<f64>, AirError> {
    if w_k.len() != z.len() {
        return Err(AirError::LengthMismatch {
            expected: z.len(),
            found: w_k.len(),
        });
    }
    if norm(z) == 0.0 {
        return Err(AirError::DegenerateBroadcast);
    }
    Ok(build_message_scaled(beta, w_k, broadcast_scale(z)))
}

/// `[beta w_k, beta scale]`.
pub fn build_message_scaled(beta: f64, w_k: &[f64], scale: f64) -> Vec<f64> {
    let mut out: Vec<f64> = w_k.iter().map(|v| beta * v).collect();
    out.push(beta * scale);
    out
}

/// `x' = conj(h) m / |h|^2`, so that `h x' = m`.
pub fn channel_invert(message: &[f64], h: Complex) -> Result<Vec<Complex>, AirError> {
    let gain = h.norm_sqr();
    if gain == 0.0 {
        return Err(AirError::ChannelSingularity);
    }
    let pre = h.conj().scale(1.0 / gain);
    Ok(message.iter().map(|&v| pre.scale(v)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerScaled {
    pub rho: f64,
    pub x: Vec<Complex>,
    /// The device's own power demand exceeded the threshold.
    pub distorted: bool,
}

/// `rho = sqrt(P / max(C, |x'|^2 / m))`, `x = rho x'`.
pub fn power_scale(inverted: &[Complex], power: f64, threshold: f64) -> PowerScaled {
    let per_symbol = energy(inverted) / inverted.len() as f64;
    let rho = (power / threshold.max(per_symbol)).sqrt();
    PowerScaled {
        rho,
        x: inverted.iter().map(|c| c.scale(rho)).collect(),
        distorted: per_symbol > threshold,
    }
}

/// `y = sum_k h_k x_k + n`, accumulated in device order.
pub fn superpose(
    xs: &[Vec<Complex>],
    hs: &[Complex],
    noise: &[Complex],
) -> Result<Vec<Complex>, AirError> {
    if xs.len() != hs.len() {
        return Err(AirError::LengthMismatch {
            expected: xs.len(),
            found: hs.len(),
        });
    }
    let mut y = noise.to_vec();
    for (x, &h) in xs.iter().zip(hs) {
        if x.len() != y.len() {
            return Err(AirError::LengthMismatch {
                expected: y.len(),
                found: x.len(),
            });
        }
        for (acc, &xi) in y.iter_mut().zip(x) {
            *acc = *acc + h * xi;
        }
    }
    Ok(y)
}

/// Reads `[a, b] = Re(y)` and returns `a / b * sqrt(|z_prev|^2 / d)`.
pub fn receiver_decode(y: &[Complex], z_prev: &[f64], b_floor: f64) -> Result<ModelParams, AirError> {
    let d = z_prev.len();
    if y.len() != d + 1 {
        return Err(AirError::LengthMismatch {
            expected: d + 1,
            found: y.len(),
        });
    }
    let b = y[d].re;
    if !(b.abs() >= b_floor) || b == 0.0 {
        return Err(AirError::DecodeFailure { b, floor: b_floor });
    }
    let factor = broadcast_scale(z_prev) / b;
    Ok(ModelParams::from(
        y[..d].iter().map(|c| c.re * factor).collect::<Vec<_>>(),
    ))
}

/// Outcome of an over-the-air Weiszfeld solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AirWeiszfeldState {
    pub state: WeiszfeldState,
    /// Device transmissions whose power demand exceeded the threshold,
    /// summed over all blocks.
    pub distorted: usize,
    /// Blocks that failed to decode and were retransmitted.
    pub decode_failures: usize,
    /// Largest `|x_k|^2 / (m P)` over all transmissions.
    pub peak_power_ratio: f64,
    pub transmissions: usize,
}

/// Per-block details handed to an observer.
#[derive(Debug)]
pub struct BlockRecord<'a> {
    pub iteration: usize,
    pub z_prev: &'a [f64],
    pub z_next: &'a [f64],
    pub rhos: &'a [f64],
    pub energies: &'a [f64],
}

/// Runs the Weiszfeld iteration with every reweighted average computed over
/// the air. Channels and noise are redrawn for every block.
pub fn weiszfeld_aircomp<R1, R2>(
    init: &ModelParams,
    problem: &AggregationProblem,
    air: &AirConfig,
    channel_rng: &mut R1,
    noise_rng: &mut R2,
) -> Result<AirWeiszfeldState, AirError>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    weiszfeld_aircomp_observed(init, problem, air, channel_rng, noise_rng, |_| {})
}

pub fn weiszfeld_aircomp_observed<R1, R2, F>(
    init: &ModelParams,
    problem: &AggregationProblem,
    air: &AirConfig,
    channel_rng: &mut R1,
    noise_rng: &mut R2,
    mut observe: F,
) -> Result<AirWeiszfeldState, AirError>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
    F: FnMut(&BlockRecord<'_>),
{
    air.validate()?;
    let d = problem.dim();
    if init.dim() != d {
        return Err(AirError::LengthMismatch {
            expected: d,
            found: init.dim(),
        });
    }
    let m = d + 1;
    let devices = problem.points().len();
    let mut out = AirWeiszfeldState {
        state: WeiszfeldState {
            z: init.clone(),
            iterations_used: 0,
            converged: false,
        },
        distorted: 0,
        decode_failures: 0,
        peak_power_ratio: 0.0,
        transmissions: 0,
    };
    let mut rhos = vec![0.0; devices];
    let mut energies = vec![0.0; devices];

    for it in 1..=problem.max_iter() {
        let z = &out.state.z;
        let scale = broadcast_scale(z);
        let messages: Vec<Vec<f64>> = problem
            .points()
            .iter()
            .zip(problem.weights())
            .map(|(w, &a)| build_message_scaled(weiszfeld_weight(z, w, a, problem.smoothing()), w, scale))
            .collect();

        let mut decoded = None;
        let mut last_b = 0.0;
        for _attempt in 0..ATTEMPTS_PER_ITERATION {
            let hs = draw_channels(devices, channel_rng);
            let noise = draw_noise(m, air.noise_var, noise_rng);
            let inverted = messages
                .iter()
                .zip(&hs)
                .map(|(msg, &h)| channel_invert(msg, h))
                .collect::<Result<Vec<_>, _>>()?;
            let threshold = match air.threshold {
                Threshold::Scaled(mult) => mult * scale * scale * d as f64 / m as f64,
                Threshold::Aligned => inverted
                    .iter()
                    .map(|x| energy(x) / m as f64)
                    .fold(0.0, f64::max),
            };
            let mut xs = Vec::with_capacity(devices);
            for (k, x_inv) in inverted.iter().enumerate() {
                let scaled = power_scale(x_inv, air.power, threshold);
                let e = energy(&scaled.x);
                out.peak_power_ratio = out.peak_power_ratio.max(e / (m as f64 * air.power));
                out.distorted += usize::from(scaled.distorted);
                out.transmissions += 1;
                rhos[k] = scaled.rho;
                energies[k] = e;
                xs.push(scaled.x);
            }
            let y = superpose(&xs, &hs, &noise)?;
            match receiver_decode(&y, z, air.b_floor) {
                Ok(next) => {
                    decoded = Some(next);
                    break;
                }
                Err(AirError::DecodeFailure { b, .. }) => {
                    out.decode_failures += 1;
                    last_b = b;
                }
                Err(e) => return Err(e),
            }
        }
        let next = decoded.ok_or(AirError::Aborted {
            iteration: it,
            b: last_b,
            failures: out.decode_failures,
        })?;
        observe(&BlockRecord {
            iteration: it,
            z_prev: z,
            z_next: &next,
            rhos: &rhos,
            energies: &energies,
        });
        let moved = distance(&next, z);
        out.state.z = next;
        out.state.iterations_used = it;
        if moved <= problem.tol() {
            out.state.converged = true;
            break;
        }
    }
    Ok(out)
}
