//! Per-generation reproduction laws.
//!
//! A law describes one brood: how many children a particle leaves and their
//! displacements relative to the parent. Two families are provided:
//!
//! * [`FiniteLaw`]: finitely many explicit broods with given probabilities.
//! * [`GaussianLaw`]: brood size drawn from a finite count distribution,
//!   displacements i.i.d. `N(mu, sigma^2)` independent of the size.
//!
//! Every law carries its log-Laplace transform
//! `kappa(theta) = log E[sum_{i<=N} exp(-theta zeta_i)]` in closed form,
//! together with first and second derivatives. [`BroodLaw::kappa_mc`] gives
//! an independent Monte Carlo estimate of `E[sum exp(-theta zeta_i)]` used
//! by cross-checks; it is the fallback for laws added later without a
//! closed form.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;

fn validate_weights(name: &'static str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidParameter {
            name,
            reason: "needs at least one atom".into(),
        });
    }
    let mut total = 0.0;
    for &p in probs {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("atom probability {p} is not in (0, 1]"),
            });
        }
        total += p;
    }
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("atom probabilities sum to {total}, not 1"),
        });
    }
    Ok(())
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cum.last_mut() {
        *last = f64::INFINITY; // guard against round-off at the top
    }
    cum
}

fn pick<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cum.partition_point(|&c| c < u)
}

/// One atom of a finite-support law: a probability and the brood it yields.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub prob: f64,
    pub displacements: Vec<f64>,
}

impl Atom {
    pub fn new(prob: f64, displacements: Vec<f64>) -> Self {
        Atom {
            prob,
            displacements,
        }
    }
}

/// Finite-support reproduction law.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLaw {
    id: String,
    atoms: Vec<Atom>,
    cum: Vec<f64>,
}

impl FiniteLaw {
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>) -> Result<Self> {
        let probs: Vec<f64> = atoms.iter().map(|a| a.prob).collect();
        validate_weights("FiniteLaw.atoms", &probs)?;
        for atom in &atoms {
            if atom.displacements.iter().any(|z| !z.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "FiniteLaw.atoms",
                    reason: "displacements must be finite".into(),
                });
            }
        }
        let cum = cumulative(atoms.iter().map(|a| a.prob));
        Ok(FiniteLaw {
            id: id.into(),
            atoms,
            cum,
        })
    }

    /// Deterministic brood: `count` children, all displaced by `shift`.
    pub fn deterministic(id: impl Into<String>, count: usize, shift: f64) -> Result<Self> {
        FiniteLaw::new(id, vec![Atom::new(1.0, vec![shift; count])])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
}

/// Finite distribution of brood sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct CountLaw {
    atoms: Vec<(f64, u32)>,
    cum: Vec<f64>,
}

impl CountLaw {
    pub fn new(atoms: Vec<(f64, u32)>) -> Result<Self> {
        let probs: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        validate_weights("CountLaw.atoms", &probs)?;
        let cum = cumulative(atoms.iter().map(|a| a.0));
        Ok(CountLaw { atoms, cum })
    }

    pub fn fixed(n: u32) -> Self {
        CountLaw::new(vec![(1.0, n)]).expect("point mass is always valid")
    }

    pub fn atoms(&self) -> &[(f64, u32)] {
        &self.atoms
    }

    /// `E[N]`.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(p, n)| p * n as f64).sum()
    }

    /// `E[N^p]` for real `p` (atoms with `n = 0` contribute 0 for `p > 0`).
    pub fn moment(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(w, n)| w * (n as f64).powf(p))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.atoms[pick(&self.cum, rng)].1
    }

    /// Size-biased version: `P*(n) = n P(n) / E[N]`. Errors when `E[N] = 0`.
    pub fn size_biased(&self) -> Result<CountLaw> {
        let mean = self.mean();
        if mean <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "CountLaw",
                reason: "size-biasing needs E[N] > 0".into(),
            });
        }
        let atoms: Vec<(f64, u32)> = self
            .atoms
            .iter()
            .filter(|&&(_, n)| n > 0)
            .map(|&(p, n)| (p * n as f64 / mean, n))
            .collect();
        CountLaw::new(atoms)
    }
}

/// Brood size from a finite count law, displacements i.i.d. `N(mu, sigma^2)`
/// and independent of the size.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    id: String,
    pub count: CountLaw,
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianLaw {
    pub fn new(id: impl Into<String>, count: CountLaw, mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "GaussianLaw",
                reason: format!("need finite mu and sigma > 0, got mu = {mu}, sigma = {sigma}"),
            });
        }
        Ok(GaussianLaw {
            id: id.into(),
            count,
            mu,
            sigma,
        })
    }
}

/// A reproduction law of one of the supported families.
#[derive(Debug, Clone, PartialEq)]
pub enum BroodLaw {
    Finite(FiniteLaw),
    Gaussian(GaussianLaw),
}

impl BroodLaw {
    pub fn id(&self) -> &str {
        match self {
            BroodLaw::Finite(l) => &l.id,
            BroodLaw::Gaussian(l) => &l.id,
        }
    }

    /// Draw one brood, appending displacements to `out` (cleared first).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match self {
            BroodLaw::Finite(l) => {
                let atom = &l.atoms[pick(&l.cum, rng)];
                out.extend_from_slice(&atom.displacements);
            }
            BroodLaw::Gaussian(l) => {
                let n = l.count.sample(rng);
                let normal = Normal::new(l.mu, l.sigma).expect("validated at construction");
                for _ in 0..n {
                    out.push(normal.sample(rng));
                }
            }
        }
    }

    /// Draw one brood as a fresh vector of displacements.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::new();
        self.sample_into(rng, &mut out);
        out
    }

    /// `kappa(theta)`, `kappa'(theta)`, `kappa''(theta)` in one pass.
    ///
    /// May return non-finite values (for example `kappa = -inf` when the law
    /// can die out almost surely at `theta` with `E[N] = 0`); environment
    /// construction rejects those.
    pub fn kappa_all(&self, theta: f64) -> (f64, f64, f64) {
        match self {
            BroodLaw::Finite(l) => {
                // z = sum p e^{-theta zeta}; z1 = sum p zeta e^{-theta zeta}; z2 with zeta^2.
                let (mut z, mut z1, mut z2) = (0.0, 0.0, 0.0);
                for atom in &l.atoms {
                    for &zeta in &atom.displacements {
                        let w = atom.prob * (-theta * zeta).exp();
                        z += w;
                        z1 += w * zeta;
                        z2 += w * zeta * zeta;
                    }
                }
                let mean = z1 / z;
                (z.ln(), -mean, z2 / z - mean * mean)
            }
            BroodLaw::Gaussian(l) => {
                let s2 = l.sigma * l.sigma;
                (
                    l.count.mean().ln() - theta * l.mu + theta * theta * s2 / 2.0,
                    s2 * theta - l.mu,
                    s2,
                )
            }
        }
    }

    pub fn kappa(&self, theta: f64) -> f64 {
        self.kappa_all(theta).0
    }

    pub fn kappa_d1(&self, theta: f64) -> f64 {
        self.kappa_all(theta).1
    }

    pub fn kappa_d2(&self, theta: f64) -> f64 {
        self.kappa_all(theta).2
    }

    /// Monte Carlo estimate of `E[sum_i exp(-theta zeta_i)]` (not its log)
    /// with its standard error. Cross-checks the closed forms and serves as
    /// the fallback transform for sampled-only laws.
    pub fn kappa_mc<R: Rng + ?Sized>(&self, theta: f64, samples: usize, rng: &mut R) -> (f64, f64) {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut brood = Vec::new();
        for _ in 0..samples {
            self.sample_into(rng, &mut brood);
            let v: f64 = brood.iter().map(|&z| (-theta * z).exp()).sum();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / samples as f64;
        let var = (sumsq / samples as f64 - mean * mean).max(0.0);
        (mean, (var / samples as f64).sqrt())
    }

    /// `E[N]`, the mean brood size.
    pub fn mean_offspring(&self) -> f64 {
        match self {
            BroodLaw::Finite(l) => l
                .atoms
                .iter()
                .map(|a| a.prob * a.displacements.len() as f64)
                .sum(),
            BroodLaw::Gaussian(l) => l.count.mean(),
        }
    }

    /// `E[N^p]`.
    pub fn count_moment(&self, p: f64) -> f64 {
        match self {
            BroodLaw::Finite(l) => l
                .atoms
                .iter()
                .map(|a| a.prob * (a.displacements.len() as f64).powf(p))
                .sum(),
            BroodLaw::Gaussian(l) => l.count.moment(p),
        }
    }

    /// `E[s^N]`, the probability generating function of the brood size.
    pub fn count_pgf(&self, s: f64) -> f64 {
        match self {
            BroodLaw::Finite(l) => l
                .atoms
                .iter()
                .map(|a| a.prob * s.powi(a.displacements.len() as i32))
                .sum(),
            BroodLaw::Gaussian(l) => l
                .count
                .atoms()
                .iter()
                .map(|&(w, k)| w * s.powi(k as i32))
                .sum(),
        }
    }

    /// `E[#{i <= N : zeta_i <= x}]`, the expected number of children at or
    /// below `x`.
    pub fn expected_children_below(&self, x: f64) -> f64 {
        match self {
            BroodLaw::Finite(l) => l
                .atoms
                .iter()
                .map(|a| a.prob * a.displacements.iter().filter(|&&z| z <= x).count() as f64)
                .sum(),
            BroodLaw::Gaussian(l) => {
                l.count.mean() * normal_cdf((x - l.mu) / l.sigma)
            }
        }
    }

    /// Explicit atoms when the law has finite support.
    pub fn atoms(&self) -> Option<&[Atom]> {
        match self {
            BroodLaw::Finite(l) => Some(l.atoms()),
            BroodLaw::Gaussian(_) => None,
        }
    }

    /// Full support as `(probability, count, displacements)` rows.
    /// Errors for laws with continuous displacement distributions.
    pub fn enumerate(&self) -> Result<Vec<(f64, usize, Vec<f64>)>> {
        match self {
            BroodLaw::Finite(l) => Ok(l
                .atoms
                .iter()
                .map(|a| (a.prob, a.displacements.len(), a.displacements.clone()))
                .collect()),
            BroodLaw::Gaussian(_) => Err(Error::UnboundedSupport {
                law_id: self.id().to_string(),
            }),
        }
    }
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{stream, DOMAIN_ENV};

    fn binary_pm1() -> BroodLaw {
        // Two children, one displaced +1 and one -1.
        BroodLaw::Finite(FiniteLaw::new("pm1", vec![Atom::new(1.0, vec![1.0, -1.0])]).unwrap())
    }

    #[test]
    fn binary_zero_displacement_kappa_is_log2() {
        let law = BroodLaw::Finite(FiniteLaw::deterministic("b2", 2, 0.0).unwrap());
        let (k, k1, k2) = law.kappa_all(1.0);
        assert!((k - 2.0_f64.ln()).abs() < 1e-15, "kappa = {k}");
        assert!(k1.abs() < 1e-15 && k2.abs() < 1e-15);
    }

    #[test]
    fn gaussian_kappa_closed_form() {
        let law = BroodLaw::Gaussian(GaussianLaw::new("g", CountLaw::fixed(2), 0.0, 1.0).unwrap());
        let (k, k1, k2) = law.kappa_all(1.0);
        assert!((k - (2.0_f64.ln() + 0.5)).abs() < 1e-15);
        assert!((k1 - 1.0).abs() < 1e-15);
        assert!((k2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn finite_law_derivatives_match_central_differences() {
        let law = binary_pm1();
        let h = 1e-5;
        for &theta in &[0.3, 0.9, 1.7] {
            let (_, k1, k2) = law.kappa_all(theta);
            let d1 = (law.kappa(theta + h) - law.kappa(theta - h)) / (2.0 * h);
            let d2 = (law.kappa(theta + h) - 2.0 * law.kappa(theta) + law.kappa(theta - h))
                / (h * h);
            assert!((k1 - d1).abs() < 1e-8, "kappa' mismatch at {theta}: {k1} vs {d1}");
            assert!((k2 - d2).abs() < 1e-5, "kappa'' mismatch at {theta}: {k2} vs {d2}");
        }
    }

    #[test]
    fn kappa_mc_agrees_with_closed_form() {
        let mut rng = stream(11, DOMAIN_ENV, 0);
        for law in [
            binary_pm1(),
            BroodLaw::Gaussian(
                GaussianLaw::new(
                    "g",
                    CountLaw::new(vec![(0.4, 1), (0.6, 3)]).unwrap(),
                    0.2,
                    0.8,
                )
                .unwrap(),
            ),
        ] {
            for &theta in &[0.0, 0.5, 1.2] {
                let (mc, se) = law.kappa_mc(theta, 200_000, &mut rng);
                let exact = law.kappa(theta).exp();
                // The 1e-9 relative term absorbs accumulation round-off when
                // the summand is deterministic and se = 0.
                assert!(
                    (mc - exact).abs() <= 4.0 * se + 1e-9 * exact.abs(),
                    "law {} theta {theta}: mc {mc} vs exact {exact} (se {se})",
                    law.id()
                );
            }
        }
    }

    #[test]
    fn expected_children_below_matches_enumeration() {
        let law = binary_pm1();
        assert_eq!(law.expected_children_below(-1.0), 1.0);
        assert_eq!(law.expected_children_below(0.999), 1.0);
        assert_eq!(law.expected_children_below(1.0), 2.0);
    }

    #[test]
    fn size_biased_count_law() {
        let c = CountLaw::new(vec![(0.5, 1), (0.5, 3)]).unwrap();
        let sb = c.size_biased().unwrap();
        // P*(1) = 1*0.5/2 = 0.25, P*(3) = 3*0.5/2 = 0.75.
        assert!((sb.atoms()[0].0 - 0.25).abs() < 1e-15);
        assert!((sb.atoms()[1].0 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn enumerate_rejects_gaussian() {
        let law = BroodLaw::Gaussian(GaussianLaw::new("g", CountLaw::fixed(2), 0.0, 1.0).unwrap());
        assert!(matches!(law.enumerate(), Err(Error::UnboundedSupport { .. })));
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(FiniteLaw::new("bad", vec![Atom::new(0.7, vec![0.0])]).is_err());
        assert!(CountLaw::new(vec![(0.5, 1), (0.6, 2)]).is_err());
        assert!(GaussianLaw::new("bad", CountLaw::fixed(1), 0.0, 0.0).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        // The erfc backend is good to ~1e-11; that is ample for the moment
        // reports that consume this.
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.9750021048517795).abs() < 1e-9);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-9);
    }
}
