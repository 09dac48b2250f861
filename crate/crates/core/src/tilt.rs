//! Exponential size-biased tilting of a reproduction law.
//!
//! For a law L with brood `(N, zeta_1..zeta_N)` and tilt `theta`, the
//! tilted step law picks the pair `(X, xi)` with
//!
//! ```text
//! P(X in dx, xi = n)  propto  E[ sum_{i<=N} 1{zeta_i in dx} 1{N = n} e^{-theta zeta_i} ]
//! ```
//!
//! so a child is selected with weight `e^{-theta zeta}` within its brood and
//! broods are weighted by their total `e^{-theta}`-mass. The normalizer is
//! `exp(kappa(theta))`. Closed forms:
//!
//! * finite law: one tilted atom per (brood atom, child) pair;
//! * Gaussian law: `X ~ N(mu - theta sigma^2, sigma^2)` independent of the
//!   mark `xi`, which follows the size-biased count law.
//!
//! Identities used throughout: `E[X] = -kappa'(theta)` and
//! `Var[X] = kappa''(theta)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::law::{BroodLaw, CountLaw};

/// One atom of a tilted finite law: displacement, parent brood size, weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedAtom {
    pub x: f64,
    pub xi: u32,
    pub prob: f64,
}

/// The spine step distribution obtained by tilting one reproduction law.
#[derive(Debug, Clone)]
pub enum TiltedStepLaw {
    Finite {
        theta: f64,
        /// `exp(kappa(theta))`.
        normalizer: f64,
        atoms: Vec<TiltedAtom>,
        cum: Vec<f64>,
    },
    Gaussian {
        theta: f64,
        normalizer: f64,
        /// `mu - theta sigma^2`.
        mean: f64,
        sigma: f64,
        counts: CountLaw,
    },
}

/// Tilt `law` by `theta`. Errors when the normalizer is zero or non-finite.
pub fn tilt_law(law: &BroodLaw, theta: f64) -> Result<TiltedStepLaw> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be finite, got {theta}"),
        });
    }
    let z = law.kappa(theta).exp();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NonFiniteKappa {
            law_id: law.id().to_string(),
            theta,
            index: 0,
        });
    }
    match law {
        BroodLaw::Finite(l) => {
            let mut atoms = Vec::new();
            for atom in l.atoms() {
                let xi = atom.displacements.len() as u32;
                for &zeta in &atom.displacements {
                    atoms.push(TiltedAtom {
                        x: zeta,
                        xi,
                        prob: atom.prob * (-theta * zeta).exp() / z,
                    });
                }
            }
            let mut acc = 0.0;
            let mut cum: Vec<f64> = atoms
                .iter()
                .map(|a| {
                    acc += a.prob;
                    acc
                })
                .collect();
            if let Some(last) = cum.last_mut() {
                *last = f64::INFINITY;
            } else {
                return Err(Error::InvalidParameter {
                    name: "law",
                    reason: "cannot tilt a law with no children".into(),
                });
            }
            Ok(TiltedStepLaw::Finite {
                theta,
                normalizer: z,
                atoms,
                cum,
            })
        }
        BroodLaw::Gaussian(l) => Ok(TiltedStepLaw::Gaussian {
            theta,
            normalizer: z,
            mean: l.mu - theta * l.sigma * l.sigma,
            sigma: l.sigma,
            counts: l.count.size_biased()?,
        }),
    }
}

impl TiltedStepLaw {
    pub fn theta(&self) -> f64 {
        match self {
            TiltedStepLaw::Finite { theta, .. } | TiltedStepLaw::Gaussian { theta, .. } => *theta,
        }
    }

    /// `exp(kappa(theta))` of the underlying law.
    pub fn normalizer(&self) -> f64 {
        match self {
            TiltedStepLaw::Finite { normalizer, .. }
            | TiltedStepLaw::Gaussian { normalizer, .. } => *normalizer,
        }
    }

    /// Total probability mass; 1 up to round-off.
    pub fn total_mass(&self) -> f64 {
        match self {
            TiltedStepLaw::Finite { atoms, .. } => atoms.iter().map(|a| a.prob).sum(),
            TiltedStepLaw::Gaussian { .. } => 1.0,
        }
    }

    /// `E[X] = -kappa'(theta)`.
    pub fn mean_x(&self) -> f64 {
        match self {
            TiltedStepLaw::Finite { atoms, .. } => atoms.iter().map(|a| a.prob * a.x).sum(),
            TiltedStepLaw::Gaussian { mean, .. } => *mean,
        }
    }

    /// `Var[X] = kappa''(theta)`.
    pub fn variance_x(&self) -> f64 {
        match self {
            TiltedStepLaw::Finite { atoms, .. } => {
                let m = self.mean_x();
                atoms.iter().map(|a| a.prob * (a.x - m) * (a.x - m)).sum()
            }
            TiltedStepLaw::Gaussian { sigma, .. } => sigma * sigma,
        }
    }

    /// `E |X - E[X]|^p`, the absolute central moment of the displacement.
    pub fn abs_central_moment(&self, p: f64) -> f64 {
        match self {
            TiltedStepLaw::Finite { atoms, .. } => {
                let m = self.mean_x();
                atoms.iter().map(|a| a.prob * (a.x - m).abs().powf(p)).sum()
            }
            TiltedStepLaw::Gaussian { sigma, .. } => {
                // E|N(0, s^2)|^p = s^p 2^{p/2} Gamma((p+1)/2) / sqrt(pi)
                sigma.powf(p) * 2.0_f64.powf(p / 2.0) * gamma_fn((p + 1.0) / 2.0)
                    / std::f64::consts::PI.sqrt()
            }
        }
    }

    /// Draw one spine step: the displacement and the brood-size mark.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, u32) {
        match self {
            TiltedStepLaw::Finite { atoms, cum, .. } => {
                let u: f64 = rng.random();
                let a = &atoms[cum.partition_point(|&c| c < u)];
                (a.x, a.xi)
            }
            TiltedStepLaw::Gaussian {
                mean,
                sigma,
                counts,
                ..
            } => {
                let normal = Normal::new(*mean, *sigma).expect("sigma validated");
                (normal.sample(rng), counts.sample(rng))
            }
        }
    }

    /// Draw only the displacement (used where the mark is not needed).
    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            TiltedStepLaw::Finite { atoms, cum, .. } => {
                let u: f64 = rng.random();
                atoms[cum.partition_point(|&c| c < u)].x
            }
            TiltedStepLaw::Gaussian { mean, sigma, .. } => {
                let normal = Normal::new(*mean, *sigma).expect("sigma validated");
                normal.sample(rng)
            }
        }
    }

    /// Atoms of the tilted law when the base law has finite support.
    pub fn atoms(&self) -> Option<&[TiltedAtom]> {
        match self {
            TiltedStepLaw::Finite { atoms, .. } => Some(atoms),
            TiltedStepLaw::Gaussian { .. } => None,
        }
    }
}
