//! Closed-form and ODE-based rate computations for the barrier problem:
//! the critical barrier coefficient, the roots controlling the
//! supercritical and stretched-barrier regimes, and a shooting solver for
//! the singular integral equation behind the subcritical extinction rate.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Critical barrier coefficient `a_c = 3 (6 gamma_sigma)^(1/3) / (2 theta)`:
/// the population dies out for `a < a_c` and survives with positive
/// probability for `a > a_c`.
pub fn critical_a(gamma_sigma: f64, theta: f64) -> Result<f64> {
    if !(gamma_sigma > 0.0) || !gamma_sigma.is_finite() {
        return Err(Error::InvalidParameter {
            name: "gamma_sigma",
            reason: format!("must be positive and finite, got {gamma_sigma}"),
        });
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be positive and finite, got {theta}"),
        });
    }
    Ok(1.5 * (6.0 * gamma_sigma).cbrt() / theta)
}

/// Critical coefficient of the time-homogeneous analogue,
/// `3 (3 pi^2 theta^2 kappa''(theta))^(1/3) / (2 theta)`. Coincides with
/// `critical_a` when `gamma_sigma = pi^2 theta^2 kappa''(theta) / 2`, the
/// value the tube constant takes in a non-random environment.
pub fn homogeneous_critical_a(theta: f64, kappa_d2: f64) -> Result<f64> {
    if !(kappa_d2 > 0.0) || !kappa_d2.is_finite() {
        return Err(Error::InvalidParameter {
            name: "kappa_d2",
            reason: format!("must be positive and finite, got {kappa_d2}"),
        });
    }
    critical_a(0.5 * PI * PI * theta * theta * kappa_d2, theta)
}

/// Barrier-shift response curve `psi(b) = b + 3 gamma_sigma / (theta^3 b^2)`
/// whose minimum over b > 0 equals `critical_a`.
pub fn barrier_shift_response(b: f64, gamma_sigma: f64, theta: f64) -> f64 {
    b + 3.0 * gamma_sigma / (theta.powi(3) * b * b)
}

/// Largest `b > 0` with `psi(b) = a`, found by bisection on the increasing
/// branch to the right of the stationary point `b* = (6 gamma_sigma)^(1/3) /
/// theta`. Requires `a >= critical_a` (below it the equation has no real
/// root); at `a = critical_a` the double root `b*` is returned.
pub fn b2_root(a: f64, gamma_sigma: f64, theta: f64) -> Result<f64> {
    let a_c = critical_a(gamma_sigma, theta)?;
    let tol = 1e-12 * a_c.max(1.0);
    if a < a_c - tol {
        return Err(Error::OutsideRegime { a, a_c });
    }
    let b_star = (6.0 * gamma_sigma).cbrt() / theta;
    if a <= a_c + tol {
        return Ok(b_star);
    }
    // psi(b*) = a_c < a and psi(a) = a + positive > a bracket the root.
    let mut lo = b_star;
    let mut hi = a;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if barrier_shift_response(mid, gamma_sigma, theta) > a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Extinction-rate limit for stretched barriers `a i^alpha` with
/// `alpha < 1/3`: `-(3 gamma_sigma)^(1/3)`, independent of a.
pub fn rate_2b(gamma_sigma: f64) -> f64 {
    assert!(
        gamma_sigma > 0.0 && gamma_sigma.is_finite(),
        "gamma_sigma must be positive and finite"
    );
    -(3.0 * gamma_sigma).cbrt()
}

/// Root of the steep-barrier balance equation together with the companion
/// lower-bound rate.
#[derive(Debug, Clone, Serialize)]
pub struct XbRoot {
    pub x: f64,
    /// `|3 gamma_sigma / x^2 - x - 3 theta b|` at the returned root.
    pub residual: f64,
    /// Companion rate `sqrt(gamma_sigma / (theta b))` bounding the
    /// extinction exponent from the other side.
    pub lower_bound_rate: f64,
}

/// Unique positive solution of `3 gamma_sigma / x^2 - x = 3 theta b`. The
/// left side falls strictly from +inf to -inf, so bisection applies on any
/// bracket.
pub fn x_b_root(b: f64, gamma_sigma: f64, theta: f64) -> Result<XbRoot> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidParameter {
            name: "b",
            reason: format!("must be positive and finite, got {b}"),
        });
    }
    if !(gamma_sigma > 0.0) || !(theta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma_sigma/theta",
            reason: "must be positive".to_string(),
        });
    }
    let target = 3.0 * theta * b;
    let g = |x: f64| 3.0 * gamma_sigma / (x * x) - x;
    let mut lo = 1.0;
    while g(lo) <= target {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: "root collapsed below representable range".to_string(),
            });
        }
    }
    let mut hi = lo;
    while g(hi) > target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: "root escaped above representable range".to_string(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok(XbRoot {
        x,
        residual: (g(x) - target).abs(),
        lower_bound_rate: (gamma_sigma / (theta * b)).sqrt(),
    })
}

/// Solution of the barrier integral equation
/// `q(t) = q(0) + a t^(1/3) - (gamma_sigma / theta^3) int_0^t q(x)^-2 dx`
/// with `q(0) > 0`, `q(1) = 0`. The extinction rate for barriers inside the
/// critical window is `-theta q(0)`.
#[derive(Debug, Clone, Serialize)]
pub struct RateSolution {
    pub a: f64,
    pub gamma_sigma: f64,
    pub theta: f64,
    pub q0: f64,
    pub t_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    /// |q(1)| achieved by the shot that was accepted.
    pub residual_at_1: f64,
    /// Value of `int_0^1 q(x)^-2 dx` (finite despite the endpoint zero).
    pub integral_check: f64,
    /// Extinction rate `-theta q(0)`.
    pub rate: f64,
}

struct Shot {
    /// q(1) for this initial value; negative when the path hit zero early.
    endpoint: f64,
    q: Vec<f64>,
    integral: f64,
}

/// Graded mesh `t_k = 1 - (1 - k/M)^(3/2)` clustering points at the
/// singular endpoint.
fn graded_mesh(mesh: usize) -> Vec<f64> {
    (0..=mesh)
        .map(|k| 1.0 - (1.0 - k as f64 / mesh as f64).powf(1.5))
        .collect()
}

// Past this distance from t = 1 the march hands over to the local profile
// q ~ C (1-t)^(1/3), whose tail integral is 3 (1-t) / q^2 exactly.
const ANSATZ_CUTOFF: f64 = 1e-4;

/// One forward march of the integral equation. Each step treats q as
/// linear, for which `int q^-2 dt = dt / (q_left q_right)` exactly; solving
/// the resulting quadratic keeps the update implicit and stable. Returns
/// the endpoint value q(1), completing the last `ANSATZ_CUTOFF` of the
/// interval with the local one-third-power profile.
fn shoot_path(a: f64, coeff: f64, ts: &[f64], q0: f64, keep: bool) -> Shot {
    let mut q_prev = q0;
    let mut integral = 0.0;
    let mut q = Vec::new();
    if keep {
        q.reserve(ts.len());
        q.push(q0);
    }
    let mut cut = ts.len() - 1;
    for k in 1..ts.len() {
        let t = ts[k];
        if 1.0 - t < ANSATZ_CUTOFF {
            cut = k - 1;
            break;
        }
        let dt = t - ts[k - 1];
        let head = q0 + a * t.cbrt() - coeff * integral;
        let disc = head * head - 4.0 * coeff * dt / q_prev;
        if disc < 0.0 || head <= 0.0 {
            // Path crashes inside this step: report how much of [0, 1] was
            // left, so shots that die earlier rank as more negative.
            return Shot {
                endpoint: -(1.0 - t) - 1e-9,
                q,
                integral,
            };
        }
        let q_next = 0.5 * (head + disc.sqrt());
        integral += dt / (q_prev * q_next);
        if keep {
            q.push(q_next);
        }
        q_prev = q_next;
    }
    let t_cut = ts[cut];
    // Local profile tail: with q ~ C (1-t)^(1/3) and C = q(t_cut) /
    // (1-t_cut)^(1/3), the remaining integral is 3 (1-t_cut) / q(t_cut)^2.
    let tail = 3.0 * (1.0 - t_cut) / (q_prev * q_prev);
    let endpoint = q0 + a - coeff * (integral + tail);
    if keep {
        let c = q_prev / (1.0 - t_cut).cbrt();
        for &t in &ts[cut + 1..] {
            q.push(c * (1.0 - t).max(0.0).cbrt());
        }
    }
    Shot {
        endpoint,
        q,
        integral: integral + tail,
    }
}

/// Endpoint value q(1) produced by a single shot with initial value `q0`.
/// Exposed so the monotonicity of the shot in `q0` (which justifies
/// bisection) can be checked directly.
pub fn shoot_endpoint(a: f64, gamma_sigma: f64, theta: f64, mesh: usize, q0: f64) -> Result<f64> {
    validate_shooting_inputs(a, gamma_sigma, theta, mesh)?;
    let ts = graded_mesh(mesh);
    Ok(shoot_path(a, gamma_sigma / theta.powi(3), &ts, q0, false).endpoint)
}

fn validate_shooting_inputs(a: f64, gamma_sigma: f64, theta: f64, mesh: usize) -> Result<()> {
    if !(gamma_sigma > 0.0) || !(theta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma_sigma/theta",
            reason: "must be positive".to_string(),
        });
    }
    if !a.is_finite() || a < 0.0 {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: format!("the integral equation is solved for a >= 0 only, got {a}"),
        });
    }
    if mesh < 100 {
        return Err(Error::InvalidParameter {
            name: "mesh",
            reason: format!("need at least 100 mesh points, got {mesh}"),
        });
    }
    Ok(())
}

/// Shooting solver for the barrier integral equation on the window
/// `0 <= a < critical_a`: bisects the initial value `q(0)` until the path
/// lands at `q(1) = 0`, marching on a graded mesh and traversing the
/// endpoint singularity with the local one-third-power profile.
pub fn solve_q_shooting(
    a: f64,
    alpha: f64,
    gamma_sigma: f64,
    theta: f64,
    mesh: usize,
) -> Result<RateSolution> {
    if (alpha - 1.0 / 3.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("only the t^(1/3) barrier profile is supported, got alpha = {alpha}"),
        });
    }
    validate_shooting_inputs(a, gamma_sigma, theta, mesh)?;
    let a_c = critical_a(gamma_sigma, theta)?;
    if a >= a_c {
        return Err(Error::OutsideRegime { a, a_c });
    }
    let ts = graded_mesh(mesh);
    let coeff = gamma_sigma / theta.powi(3);

    let mut lo = 1e-8;
    let mut hi = a + (3.0 * gamma_sigma).cbrt() / theta;
    let shot_at = |q0: f64| shoot_path(a, coeff, &ts, q0, false).endpoint;
    if shot_at(lo) > 0.0 {
        return Err(Error::ShootingFailed {
            reason: format!("shot from q(0) = {lo:e} already overshoots"),
        });
    }
    // At a = 0 the nominal upper bound is the root itself; marching error
    // can leave its shot a hair negative, so inflate until it overshoots.
    let mut bump = 1e-6 * hi.max(1.0);
    while shot_at(hi) < 0.0 {
        hi += bump;
        bump *= 2.0;
        if bump > 1e6 {
            return Err(Error::ShootingFailed {
                reason: "no overshooting initial value found".to_string(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shot_at(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let q0 = 0.5 * (lo + hi);
    let shot = shoot_path(a, coeff, &ts, q0, true);
    let residual_at_1 = shot.endpoint.abs();
    if !(residual_at_1 <= 1e-8) {
        return Err(Error::ShootingFailed {
            reason: format!("endpoint residual {residual_at_1:e} after bisection"),
        });
    }
    if !shot.integral.is_finite() {
        return Err(Error::ShootingFailed {
            reason: "singular integral failed to stay finite".to_string(),
        });
    }
    // The defining equation forces a positive, eventually decreasing path.
    if shot.q[..shot.q.len() - 1].iter().any(|&v| !(v > 0.0)) {
        return Err(Error::ShootingFailed {
            reason: "interior path touched zero".to_string(),
        });
    }
    let last = &shot.q[shot.q.len().saturating_sub(10)..];
    if last.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::ShootingFailed {
            reason: "path not decreasing near the endpoint".to_string(),
        });
    }
    Ok(RateSolution {
        a,
        gamma_sigma,
        theta,
        q0,
        t_grid: ts,
        q_grid: shot.q,
        residual_at_1,
        integral_check: shot.integral,
        rate: -theta * q0,
    })
}
