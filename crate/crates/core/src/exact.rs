//! Exact survival probabilities for constant environments.
//!
//! When every generation reproduces by the same brood law, the survival
//! probability of the killed process satisfies a one-dimensional backward
//! recursion over the particle's offset from the barrier centering:
//!
//! `q_i(x) = 1 - E[ prod_j (1 - q_{i+1}(x + z_j + s) 1{x + z_j + s <= bar_{i+1}}) ]`
//!
//! with `q_n = 1`, step shift `s = kappa(theta)/theta` in random-centered
//! mode, and `bar_i = a i^alpha`. Iterating the recursion on a grid gives
//! the survival probability to any horizon with no Monte Carlo noise, far
//! beyond the reach of direct sampling. Used as an oracle for the
//! simulators on models with a single mixture component.

use crate::env::EnvironmentModel;
use crate::error::{Error, Result};
use crate::law::{normal_cdf, BroodLaw};
use crate::sim::{BarrierMode, BarrierSpec};
use crate::stats::solve_theta_star;

/// Fractional coverage of the grid cell at `y` by the half-line `y <= bar`.
fn cell_weight(y: f64, bar: f64, h: f64) -> f64 {
    ((bar - y) / h + 0.5).clamp(0.0, 1.0)
}

/// Grid lookup with linear interpolation, clamped at both ends.
fn interp(q: &[f64], x_min: f64, h: f64, x: f64) -> f64 {
    let t = (x - x_min) / h;
    if t <= 0.0 {
        return q[0];
    }
    let last = q.len() - 1;
    if t >= last as f64 {
        return q[last];
    }
    let j = t as usize;
    let frac = t - j as f64;
    q[j] * (1.0 - frac) + q[j + 1] * frac
}

/// Exact `P(Y_n > 0)` for a single-law (degenerate) environment model by
/// grid iteration of the survival recursion. `step` is the grid spacing;
/// halving it should move the answer only in the third significant digit.
pub fn exact_survival(
    model: &EnvironmentModel,
    barrier: &BarrierSpec,
    n: usize,
    step: f64,
) -> Result<f64> {
    if !model.is_degenerate() {
        return Err(Error::InvalidParameter {
            name: "model",
            reason: "survival recursion needs a single-component environment".into(),
        });
    }
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: format!("grid step must lie in (0, 0.5], got {step}"),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "horizon must be at least 1".into(),
        });
    }
    if barrier.is_none() {
        return Err(Error::InvalidParameter {
            name: "barrier",
            reason: "survival recursion needs a killing barrier".into(),
        });
    }
    let law = model.law(0);
    let shift = match barrier.mode {
        BarrierMode::RandomCentered => {
            let c = solve_theta_star(model)?;
            law.kappa(c.theta_star) / c.theta_star
        }
        BarrierMode::FixedCentered => 0.0,
    };

    let bar_top = barrier.a * (n as f64).powf(barrier.alpha);
    // Depth at which survival saturates: a particle this deep spawns enough
    // descendants to make eventual survival near certain, so the profile is
    // flat and the bottom edge can be extrapolated as constant.
    let depth = 20.0_f64.max(6.0 * (n as f64).cbrt() + 10.0);
    let h = step;
    let m = ((bar_top + depth) / h).ceil() as usize + 1;
    let x_min = bar_top - h * (m - 1) as f64;

    // q at the horizon: being alive is surviving.
    let mut q = vec![1.0f64; m];
    let mut masked = vec![0.0f64; m];
    let mut next = vec![0.0f64; m];

    enum Kernel {
        // Gaussian displacements: translation-invariant weights, one inner
        // product per grid point, plus pgf of the count law.
        Gaussian { weights: Vec<f64>, reach: isize, sigma: f64, drift: f64 },
        Finite,
    }
    let kernel = match law {
        BroodLaw::Gaussian(g) => {
            let sigma = g.sigma;
            let drift = g.mu + shift;
            let reach = ((6.5 * sigma + drift.abs()) / h).ceil() as isize;
            let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let weights: Vec<f64> = (-reach..=reach)
                .map(|d| {
                    let z = (d as f64 * h - drift) / sigma;
                    norm * (-0.5 * z * z).exp() * h
                })
                .collect();
            Kernel::Gaussian { weights, reach, sigma, drift }
        }
        BroodLaw::Finite(_) => Kernel::Finite,
    };

    for i in (0..n).rev() {
        let bar = barrier.a * ((i + 1) as f64).powf(barrier.alpha);
        match &kernel {
            Kernel::Gaussian { weights, reach, sigma, drift } => {
                for (j, cell) in masked.iter_mut().enumerate() {
                    let y = x_min + j as f64 * h;
                    *cell = q[j] * cell_weight(y, bar, h);
                }
                for (idx, out) in next.iter_mut().enumerate() {
                    let mut u = 0.0;
                    let lo = idx as isize - reach;
                    let hi = idx as isize + reach;
                    for j in lo.max(0)..=hi.min(m as isize - 1) {
                        u += masked[j as usize] * weights[(j - lo) as usize];
                    }
                    // Mass of the step kernel falling below the grid.
                    if lo < 0 {
                        let x = x_min + idx as f64 * h;
                        let tail = normal_cdf((x_min - 0.5 * h - x - drift) / sigma);
                        u += q[0] * tail;
                    }
                    let u = u.clamp(0.0, 1.0);
                    *out = 1.0 - law.count_pgf(1.0 - u);
                }
            }
            Kernel::Finite => {
                let BroodLaw::Finite(f) = law else { unreachable!() };
                for (idx, out) in next.iter_mut().enumerate() {
                    let x = x_min + idx as f64 * h;
                    let mut dead = 0.0;
                    for atom in f.atoms() {
                        let mut prod = 1.0;
                        for &z in &atom.displacements {
                            let y = x + z + shift;
                            if y <= bar {
                                prod *= 1.0 - interp(&q, x_min, h, y);
                            }
                        }
                        dead += atom.prob * prod;
                    }
                    *out = 1.0 - dead;
                }
            }
        }
        std::mem::swap(&mut q, &mut next);
    }
    Ok(interp(&q, x_min, h, 0.0).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::presets;
    use crate::sim::survival_counts;

    fn binary_gaussian() -> EnvironmentModel {
        presets::degenerate_gaussian(2, 0.0, 1.0)
    }

    fn critical_barrier(a: f64) -> BarrierSpec {
        BarrierSpec::new(a, 1.0 / 3.0, BarrierMode::RandomCentered).unwrap()
    }

    #[test]
    fn one_step_closed_form() {
        // Binary brood, standard Gaussian steps, a = 0: each child survives
        // the single killing step with probability Phi(-theta), so
        // p(1) = 1 - (1 - Phi(-theta))^2.
        let model = binary_gaussian();
        let theta = (2.0 * (2.0_f64).ln()).sqrt();
        let phi = normal_cdf(-theta);
        let expect = 1.0 - (1.0 - phi) * (1.0 - phi);
        let p = exact_survival(&model, &critical_barrier(0.0), 1, 0.01).unwrap();
        assert!((p - expect).abs() < 2e-4, "p {p} vs closed form {expect}");
    }

    #[test]
    fn matches_direct_monte_carlo() {
        let model = binary_gaussian();
        let barrier = critical_barrier(0.0);
        let n = 27;
        let p = exact_survival(&model, &barrier, n, 0.02).unwrap();
        let replicas = 400_000;
        let (hits, _) = survival_counts(&model, &barrier, n, replicas, 10_000, 5).unwrap();
        assert!(hits > 50);
        let p_hat = hits as f64 / replicas as f64;
        let log_gap = (p.ln() - p_hat.ln()).abs();
        let mc_se = 1.0 / (hits as f64).sqrt();
        assert!(
            log_gap < 4.0 * mc_se,
            "recursion {p:.3e} vs MC {p_hat:.3e} (log gap {log_gap:.3}, se {mc_se:.3})"
        );
    }

    #[test]
    fn grid_refinement_is_stable() {
        let model = binary_gaussian();
        let barrier = critical_barrier(0.0);
        let coarse = exact_survival(&model, &barrier, 64, 0.04).unwrap();
        let fine = exact_survival(&model, &barrier, 64, 0.02).unwrap();
        assert!(
            ((coarse - fine) / fine).abs() < 0.01,
            "coarse {coarse:.6e} vs fine {fine:.6e}"
        );
    }

    #[test]
    fn higher_barrier_means_more_survival() {
        let model = binary_gaussian();
        let p0 = exact_survival(&model, &critical_barrier(0.0), 27, 0.02).unwrap();
        let p1 = exact_survival(&model, &critical_barrier(1.0), 27, 0.02).unwrap();
        let p3 = exact_survival(&model, &critical_barrier(3.0), 27, 0.02).unwrap();
        assert!(p0 < p1 && p1 < p3, "{p0} {p1} {p3}");
        let p_longer = exact_survival(&model, &critical_barrier(0.0), 64, 0.02).unwrap();
        assert!(p_longer < p0, "survival must fall with the horizon");
    }

    #[test]
    fn finite_law_branch_runs_and_decays() {
        // Binary +-1 steps: theta exists (min-step broods are thin).
        let model = presets::skewed_binary();
        let barrier = critical_barrier(0.5);
        let p8 = exact_survival(&model, &barrier, 8, 0.02).unwrap();
        let p27 = exact_survival(&model, &barrier, 27, 0.02).unwrap();
        assert!(p8 > 0.0 && p8 < 1.0);
        assert!(p27 < p8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = binary_gaussian();
        let b = critical_barrier(0.0);
        assert!(exact_survival(&model, &b, 0, 0.02).is_err());
        assert!(exact_survival(&model, &b, 5, 0.0).is_err());
        assert!(exact_survival(&model, &BarrierSpec::none(), 5, 0.02).is_err());
        let mixture = presets::two_sigma_family();
        assert!(exact_survival(&mixture, &b, 5, 0.02).is_err());
    }
}
