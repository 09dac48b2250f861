//! Quenched decay rate of a Brownian motion confined to a unit-width tube
//! centered on an independent Brownian path, and the derived constant
//! `gamma_sigma = sigma_Q^2 gamma(sigma_A / sigma_Q)`.
//!
//! Works in the tube-relative coordinate x = B - beta W, which is killed
//! outside [-width/2, width/2]. Conditional on the center's increments the
//! relative coordinate makes Gaussian steps with mean -beta dW and variance
//! dt, so the surviving density is propagated by a dense transition matrix;
//! the drift enters as a rank-one scaling of a fixed kernel, keeping each
//! step at O(grid^2) multiply-adds.
//!
//! Killing only at grid times lets paths slip out and back between checks
//! and biases the rate low by O(sqrt(dt)). The default mode multiplies each
//! transition by the probability that a bridge between the step's endpoints
//! stays inside the tube; the bridge variance rate is 1 + beta^2 because
//! both the particle and the unseen interior of the center fluctuate within
//! a step.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::stats::ModelConstants;
use crate::streams::{stream, DOMAIN_GAMMA};

#[derive(Debug, Clone, Serialize)]
pub struct GammaParams {
    /// Horizon t of the confinement event.
    pub horizon: f64,
    /// Time step of the density propagation.
    pub dt: f64,
    /// Number of spatial grid points across the tube; odd so the origin is
    /// a grid point.
    pub grid: usize,
    /// Independent center paths to average over.
    pub replicas: usize,
    /// Time window of the slope regression.
    pub window: (f64, f64),
    /// Tube width; the defining constant uses 1.
    pub tube_width: f64,
    /// Apply the within-step bridge exit correction.
    pub bridge_correction: bool,
    pub seed: u64,
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams {
            horizon: 50.0,
            dt: 0.01,
            grid: 201,
            replicas: 20,
            window: (25.0, 50.0),
            tube_width: 1.0,
            bridge_correction: true,
            seed: 0,
        }
    }
}

impl GammaParams {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > self.dt) {
            return Err(Error::InvalidParameter {
                name: "horizon/dt",
                reason: format!(
                    "need 0 < dt < horizon, got dt = {}, horizon = {}",
                    self.dt, self.horizon
                ),
            });
        }
        if !(self.tube_width > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tube_width",
                reason: "must be positive".to_string(),
            });
        }
        let (w0, w1) = self.window;
        if !(0.0 <= w0 && w0 < w1 && w1 <= self.horizon) {
            return Err(Error::InvalidParameter {
                name: "window",
                reason: format!("need 0 <= start < end <= horizon, got ({w0}, {w1})"),
            });
        }
        if self.replicas == 0 {
            return Err(Error::InvalidParameter {
                name: "replicas",
                reason: "need at least one replica".to_string(),
            });
        }
        validate_grid(self.grid)?;
        validate_step(self.dt, self.tube_width)?;
        Ok(())
    }
}

fn validate_grid(grid: usize) -> Result<()> {
    if grid < 51 || grid % 2 == 0 {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: format!("need an odd grid of at least 51 points, got {grid}"),
        });
    }
    Ok(())
}

fn validate_step(dt: f64, width: f64) -> Result<()> {
    // The kernel is integrated over the tube only; require its +-5 std
    // reach to fit so the discarded mass stays below ~1e-12 of a step.
    let reach = 5.0 * dt.sqrt();
    if reach > width {
        return Err(Error::StepSizeTooLarge { dt, width, reach });
    }
    Ok(())
}

/// Fixed per-run propagation kernel. `matrix[i * m + j]` carries the
/// centered Gaussian density, the quadrature weight of source j, and the
/// optional bridge survival factor for the endpoint pair (j, i).
struct TubeKernel {
    m: usize,
    h: f64,
    dt: f64,
    matrix: Vec<f64>,
}

impl TubeKernel {
    fn new(dt: f64, grid: usize, width: f64, bridge_variance_rate: Option<f64>) -> TubeKernel {
        let m = grid;
        let h = width / (m - 1) as f64;
        let half = 0.5 * width;
        let norm = 1.0 / (2.0 * PI * dt).sqrt();
        let xs: Vec<f64> = (0..m).map(|i| -half + i as f64 * h).collect();
        let mut matrix = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let d = xs[i] - xs[j];
                let weight = if j == 0 || j == m - 1 { 0.5 * h } else { h };
                let mut v = norm * (-d * d / (2.0 * dt)).exp() * weight;
                if let Some(rate) = bridge_variance_rate {
                    let var = rate * dt;
                    let up = 1.0 - (-2.0 * (half - xs[i]) * (half - xs[j]) / var).exp();
                    let dn = 1.0 - (-2.0 * (xs[i] + half) * (xs[j] + half) / var).exp();
                    v *= up.max(0.0) * dn.max(0.0);
                }
                matrix[i * m + j] = v;
            }
        }
        TubeKernel { m, h, dt, matrix }
    }

    /// Advance the density one step with center increment `c`, renormalize,
    /// and return the log of the surviving mass ratio.
    fn step(&self, f: &mut Vec<f64>, scratch: &mut Vec<f64>, c: f64) -> f64 {
        let m = self.m;
        let mid = (m - 1) / 2;
        // exp(-(x_i - x_j + c)^2 / 2dt) factors through exp(-d^2/2dt)
        // u_i v_j s with u, v geometric in the grid index; center the
        // powers to keep them in range.
        let r = -self.h * c / self.dt;
        let s = (-c * c / (2.0 * self.dt)).exp();
        scratch.clear();
        scratch.extend((0..m).map(|j| (-(r * (j as f64 - mid as f64))).exp() * f[j]));
        let mut total = 0.0;
        for i in 0..m {
            let row = &self.matrix[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                acc += row[j] * scratch[j];
            }
            let v = acc * s * (r * (i as f64 - mid as f64)).exp();
            f[i] = v;
            let w = if i == 0 || i == m - 1 { 0.5 * self.h } else { self.h };
            total += v * w;
        }
        if !(total > 0.0) || !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        let inv = 1.0 / total;
        for v in f.iter_mut() {
            *v *= inv;
        }
        total.ln()
    }
}

/// Cumulative log survival mass after each step, starting from a point mass
/// at the tube center. `center_increments[k]` is the center's displacement
/// during step k (beta dW in the defining event).
fn tube_log_mass(
    center_increments: &[f64],
    dt: f64,
    grid: usize,
    width: f64,
    bridge_variance_rate: Option<f64>,
) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    validate_step(dt, width)?;
    if !(width > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt/width",
            reason: "must be positive".to_string(),
        });
    }
    let kernel = TubeKernel::new(dt, grid, width, bridge_variance_rate);
    let m = grid;
    let mid = (m - 1) / 2;
    // Point mass at the center: density 1/h over one cell.
    let mut f = vec![0.0; m];
    f[mid] = 1.0 / kernel.h;
    let mut scratch = Vec::with_capacity(m);
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(center_increments.len());
    for (k, &c) in center_increments.iter().enumerate() {
        let step_log = kernel.step(&mut f, &mut scratch, c);
        if step_log == f64::NEG_INFINITY {
            return Err(Error::MassUnderflow {
                step: k + 1,
                steps: center_increments.len(),
            });
        }
        cum += step_log;
        out.push(cum);
    }
    Ok(out)
}

/// Surviving mass after each grid-time truncation step for a realized
/// center path, in linear scale. Kills only at step boundaries (no bridge
/// correction), so the sequence is exactly the discrete-time confinement
/// probability. Errors when the mass underflows f64 range; long horizons
/// should use `estimate_gamma`, which accumulates in log scale.
pub fn quenched_tube_mass(w_increments: &[f64], dt: f64, grid: usize) -> Result<Vec<f64>> {
    let logs = tube_log_mass(w_increments, dt, grid, 1.0, None)?;
    let steps = logs.len();
    let mut out = Vec::with_capacity(steps);
    for (k, &lg) in logs.iter().enumerate() {
        let mass = lg.exp();
        if !(mass > 0.0) {
            return Err(Error::MassUnderflow { step: k + 1, steps });
        }
        out.push(mass);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicaSlope {
    pub replica: usize,
    pub slope: f64,
    /// Cumulative log mass at the horizon, for diagnostics.
    pub log_mass_final: f64,
}

/// Point estimate of the tube decay rate at one beta.
#[derive(Debug, Clone, Serialize)]
pub struct GammaEstimate {
    pub beta: f64,
    pub value: f64,
    pub stderr: f64,
    pub params: GammaParams,
    pub per_replica: Vec<ReplicaSlope>,
}

fn regression_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

/// Estimate gamma(beta): for each replica, draw a center path, propagate
/// the confined density over the horizon, and fit the slope of -log mass
/// against time over the regression window; average slopes over replicas.
/// Deterministic given the seed, independent of thread count.
pub fn estimate_gamma(beta: f64, params: &GammaParams) -> Result<GammaEstimate> {
    params.validate()?;
    if !beta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "beta",
            reason: "must be finite".to_string(),
        });
    }
    let steps = (params.horizon / params.dt).round() as usize;
    let (w0, w1) = params.window;
    let window_count = (0..steps)
        .filter(|k| {
            let t = (k + 1) as f64 * params.dt;
            t >= w0 && t <= w1
        })
        .count();
    if window_count < 10 {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: format!("regression window covers only {window_count} steps, need >= 10"),
        });
    }
    let bridge = params.bridge_correction.then_some(1.0 + beta * beta);
    let scale = beta * params.dt.sqrt();
    let slopes: Result<Vec<ReplicaSlope>> = (0..params.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(params.seed, DOMAIN_GAMMA, r as u64);
            let incs: Vec<f64> = (0..steps)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let logs = tube_log_mass(&incs, params.dt, params.grid, params.tube_width, bridge)?;
            let pts: Vec<(f64, f64)> = logs
                .iter()
                .enumerate()
                .filter_map(|(k, &lg)| {
                    let t = (k + 1) as f64 * params.dt;
                    (t >= w0 && t <= w1).then_some((t, -lg))
                })
                .collect();
            Ok(ReplicaSlope {
                replica: r,
                slope: regression_slope(&pts),
                log_mass_final: *logs.last().unwrap(),
            })
        })
        .collect();
    let per_replica = slopes?;
    let n = per_replica.len() as f64;
    let value = per_replica.iter().map(|s| s.slope).sum::<f64>() / n;
    let var = per_replica
        .iter()
        .map(|s| (s.slope - value) * (s.slope - value))
        .sum::<f64>()
        / n;
    let stderr = (var / n).sqrt();
    Ok(GammaEstimate {
        beta,
        value,
        stderr,
        params: params.clone(),
        per_replica,
    })
}

/// The model-level tube constant `sigma_Q^2 gamma(sigma_A / sigma_Q)`.
#[derive(Debug, Clone, Serialize)]
pub struct GammaSigma {
    pub beta: f64,
    pub value: f64,
    pub stderr: f64,
    /// Underlying tube estimate; absent for degenerate environments, where
    /// gamma(0) = pi^2/2 is exact.
    pub estimate: Option<GammaEstimate>,
}

pub fn gamma_sigma(constants: &ModelConstants, params: &GammaParams) -> Result<GammaSigma> {
    let sq = constants.sigma_q;
    if !(sq > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma_q",
            reason: "must be positive".to_string(),
        });
    }
    if constants.sigma_a == 0.0 {
        return Ok(GammaSigma {
            beta: 0.0,
            value: sq * sq * PI * PI / 2.0,
            stderr: 0.0,
            estimate: None,
        });
    }
    let beta = constants.sigma_a / sq;
    let est = estimate_gamma(beta, params)?;
    Ok(GammaSigma {
        beta,
        value: sq * sq * est.value,
        stderr: sq * sq * est.stderr,
        estimate: Some(est),
    })
}
