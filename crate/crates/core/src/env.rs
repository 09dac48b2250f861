//! Environment models: the distribution from which each generation's
//! reproduction law is drawn, independently over time.
//!
//! Every supported model expands to a finite list of weighted component
//! laws, so annealed expectations over the environment are exact finite
//! sums. A degenerate model (a single component) is the classical
//! time-homogeneous case.

use rand::Rng;

use crate::error::{Error, Result};
use crate::law::{BroodLaw, CountLaw, GaussianLaw};
use crate::streams::{stream, DOMAIN_ENV};

/// Gaussian-family environment: the count law and the displacement
/// parameters `(mu, sigma)` are drawn independently of each other, each
/// from a finite weighted list. `tau1 > 6` and `tau2 > 4` are the moment
/// exponents under which the family satisfies the standing conditions;
/// they are recorded for reporting.
#[derive(Debug, Clone)]
pub struct GaussianFamilySpec {
    pub count_laws: Vec<(f64, CountLaw)>,
    pub displacement_params: Vec<(f64, (f64, f64))>,
    pub tau1: f64,
    pub tau2: f64,
}

impl GaussianFamilySpec {
    pub fn new(
        count_laws: Vec<(f64, CountLaw)>,
        displacement_params: Vec<(f64, (f64, f64))>,
    ) -> Self {
        GaussianFamilySpec {
            count_laws,
            displacement_params,
            tau1: 6.5,
            tau2: 4.5,
        }
    }
}

/// Distribution over reproduction laws, i.i.d. across generations.
#[derive(Debug, Clone)]
pub struct EnvironmentModel {
    id: String,
    components: Vec<(f64, BroodLaw)>,
    cum: Vec<f64>,
    /// Moment exponents recorded for Gaussian-family models.
    pub taus: Option<(f64, f64)>,
}

impl EnvironmentModel {
    /// Point mass: the same law every generation.
    pub fn degenerate(law: BroodLaw) -> Self {
        let id = format!("degenerate({})", law.id());
        EnvironmentModel {
            id,
            components: vec![(1.0, law)],
            cum: vec![f64::INFINITY],
            taus: None,
        }
    }

    /// Finite mixture with the given weights.
    pub fn mixture(id: impl Into<String>, components: Vec<(f64, BroodLaw)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter {
                name: "EnvironmentModel.components",
                reason: "needs at least one component".into(),
            });
        }
        let mut total = 0.0;
        for &(w, _) in &components {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "EnvironmentModel.components",
                    reason: format!("weight {w} is not in (0, 1]"),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "EnvironmentModel.components",
                reason: format!("weights sum to {total}, not 1"),
            });
        }
        let cum = {
            let mut acc = 0.0;
            let mut cum: Vec<f64> = components
                .iter()
                .map(|&(w, _)| {
                    acc += w;
                    acc
                })
                .collect();
            *cum.last_mut().unwrap() = f64::INFINITY;
            cum
        };
        Ok(EnvironmentModel {
            id: id.into(),
            components,
            cum,
            taus: None,
        })
    }

    /// Product expansion of a Gaussian-family specification: one component
    /// per (count law, displacement parameter) pair. Independence of the
    /// brood size from `(mu, sigma)` holds by construction.
    pub fn gaussian_family(id: impl Into<String>, spec: GaussianFamilySpec) -> Result<Self> {
        if !(spec.tau1 > 6.0) || !(spec.tau2 > 4.0) {
            return Err(Error::InvalidParameter {
                name: "GaussianFamilySpec",
                reason: format!(
                    "moment exponents need tau1 > 6 and tau2 > 4, got ({}, {})",
                    spec.tau1, spec.tau2
                ),
            });
        }
        let id = id.into();
        let mut components = Vec::new();
        for (ci, &(wc, ref count)) in spec.count_laws.iter().enumerate() {
            for (di, &(wd, (mu, sigma))) in spec.displacement_params.iter().enumerate() {
                let law = GaussianLaw::new(
                    format!("{id}[c{ci},d{di}]"),
                    count.clone(),
                    mu,
                    sigma,
                )?;
                components.push((wc * wd, BroodLaw::Gaussian(law)));
            }
        }
        let mut model = EnvironmentModel::mixture(id, components)?;
        model.taus = Some((spec.tau1, spec.tau2));
        Ok(model)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// True when the environment is a point mass (time-homogeneous case).
    pub fn is_degenerate(&self) -> bool {
        self.components.len() == 1
    }

    /// Canonical finite expansion: weighted component laws summing to 1.
    pub fn components(&self) -> &[(f64, BroodLaw)] {
        &self.components
    }

    pub fn law(&self, index: usize) -> &BroodLaw {
        &self.components[index].1
    }

    /// Declared moment exponents when built as a Gaussian family.
    pub fn taus(&self) -> Option<(f64, f64)> {
        self.taus
    }

    /// Draw the component index of one generation's law.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.components.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        self.cum.partition_point(|&c| c < u)
    }

    /// Exact annealed average of a per-law functional.
    pub fn average<F: Fn(&BroodLaw) -> f64>(&self, f: F) -> f64 {
        self.components.iter().map(|(w, law)| w * f(law)).sum()
    }

    /// Closed-form critical tilt when every component is Gaussian:
    /// `theta* = sqrt(2 E[log E N] / E[sigma^2])`. `None` otherwise, or when
    /// the formula is undefined.
    pub fn gaussian_family_theta(&self) -> Option<f64> {
        let mut mean_log_n = 0.0;
        let mut mean_s2 = 0.0;
        for (w, law) in &self.components {
            match law {
                BroodLaw::Gaussian(g) => {
                    mean_log_n += w * g.count.mean().ln();
                    mean_s2 += w * g.sigma * g.sigma;
                }
                BroodLaw::Finite(_) => return None,
            }
        }
        if mean_log_n > 0.0 && mean_s2 > 0.0 {
            Some((2.0 * mean_log_n / mean_s2).sqrt())
        } else {
            None
        }
    }
}

/// One drawn environment: the law of each generation `1..=n`, with the
/// per-generation log-Laplace values at a fixed tilt and their running sum.
#[derive(Debug, Clone)]
pub struct RealizedEnvironment {
    pub laws: Vec<BroodLaw>,
    pub theta: f64,
    /// `kappa_i(theta)` for `i = 1..=n` (index 0 is generation 1).
    pub kappa_at_theta: Vec<f64>,
    /// `K_i = sum_{j<=i} kappa_j(theta)`, length `n + 1`, `K_0 = 0`.
    pub cum_kappa: Vec<f64>,
    pub seed: u64,
}

impl RealizedEnvironment {
    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    /// Assemble from explicit laws (used by fixtures and tests).
    pub fn from_laws(laws: Vec<BroodLaw>, theta: f64, seed: u64) -> Result<Self> {
        let mut kappa_at_theta = Vec::with_capacity(laws.len());
        let mut cum_kappa = Vec::with_capacity(laws.len() + 1);
        cum_kappa.push(0.0);
        for (i, law) in laws.iter().enumerate() {
            let k = law.kappa(theta);
            if !k.is_finite() {
                return Err(Error::NonFiniteKappa {
                    law_id: law.id().to_string(),
                    theta,
                    index: i + 1,
                });
            }
            kappa_at_theta.push(k);
            cum_kappa.push(cum_kappa[i] + k);
        }
        Ok(RealizedEnvironment {
            laws,
            theta,
            kappa_at_theta,
            cum_kappa,
            seed,
        })
    }
}

/// Draw `n` generations of laws from the model. Deterministic given
/// `(model, n, theta, seed)`.
pub fn draw_environment(
    model: &EnvironmentModel,
    n: usize,
    theta: f64,
    seed: u64,
) -> Result<RealizedEnvironment> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be finite, got {theta}"),
        });
    }
    let mut rng = stream(seed, DOMAIN_ENV, 0);
    let laws: Vec<BroodLaw> = (0..n)
        .map(|_| model.law(model.draw_index(&mut rng)).clone())
        .collect();
    RealizedEnvironment::from_laws(laws, theta, seed)
}

/// Ready-made models used by tests, the acceptance suite, and the CLI.
pub mod presets {
    use super::*;
    use crate::law::{Atom, FiniteLaw};

    /// Degenerate binary branching, no displacement. Trivial bookkeeping
    /// checks only: it has no critical tilt.
    pub fn binary_flat() -> EnvironmentModel {
        EnvironmentModel::degenerate(BroodLaw::Finite(
            FiniteLaw::deterministic("binary-flat", 2, 0.0).unwrap(),
        ))
    }

    /// Degenerate Gaussian law: fixed brood size, i.i.d. normal displacements.
    pub fn degenerate_gaussian(count: u32, mu: f64, sigma: f64) -> EnvironmentModel {
        EnvironmentModel::degenerate(BroodLaw::Gaussian(
            GaussianLaw::new("gaussian", CountLaw::fixed(count), mu, sigma).unwrap(),
        ))
    }

    /// Degenerate Gaussian model with standard-normal associated walk:
    /// brood size in {1, 2} with E[N] = sqrt(e), standard normal
    /// displacements. Then theta* = 1, sigma_Q = 1, and the tilted walk
    /// increment theta*X + kappa(theta*) is exactly N(0, 1).
    pub fn unit_dispersion_gaussian() -> EnvironmentModel {
        let sqrt_e = 0.5_f64.exp();
        let count = CountLaw::new(vec![(2.0 - sqrt_e, 1), (sqrt_e - 1.0, 2)]).unwrap();
        EnvironmentModel::degenerate(BroodLaw::Gaussian(
            GaussianLaw::new("unit-dispersion", count, 0.0, 1.0).unwrap(),
        ))
    }

    /// Random environment of Gaussian laws: binary broods, displacement
    /// scale sigma in {0.8, 1.25} with equal weights. sigma_A > 0.
    pub fn two_sigma_family() -> EnvironmentModel {
        let spec = GaussianFamilySpec::new(
            vec![(1.0, CountLaw::fixed(2))],
            vec![(0.5, (0.0, 0.8)), (0.5, (0.0, 1.25))],
        );
        EnvironmentModel::gaussian_family("two-sigma", spec).unwrap()
    }

    /// Degenerate finite-support law with a critical tilt: two children,
    /// displacements i.i.d. -1 (prob 1/4) or +1 (prob 3/4). The expected
    /// number of children at the minimum is 1/2 < 1, so the tilt equation
    /// has a root.
    pub fn skewed_binary() -> EnvironmentModel {
        let atoms = vec![
            Atom::new(0.0625, vec![-1.0, -1.0]),
            Atom::new(0.1875, vec![-1.0, 1.0]),
            Atom::new(0.1875, vec![1.0, -1.0]),
            Atom::new(0.5625, vec![1.0, 1.0]),
        ];
        EnvironmentModel::degenerate(BroodLaw::Finite(
            FiniteLaw::new("skewed-binary", atoms).unwrap(),
        ))
    }

    /// Mixture with a critical tilt in which one component places every
    /// child strictly above the tilted center: the condition-4 moment
    /// `E |log E_L[#{i : theta zeta_i + kappa_1(theta) <= y}]|^lambda5`
    /// is infinite for every y < 0.
    pub fn condition4_violating_mixture() -> EnvironmentModel {
        // Component with room below: two children, displacements i.i.d.
        // -1 (prob 1/5) or +1 (prob 4/5); E[#children at minimum] = 2/5.
        let spread = FiniteLaw::new(
            "spread",
            vec![
                Atom::new(0.04, vec![-1.0, -1.0]),
                Atom::new(0.16, vec![-1.0, 1.0]),
                Atom::new(0.16, vec![1.0, -1.0]),
                Atom::new(0.64, vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        // Component with both children pinned at -1: theta*(-1) + kappa(theta)
        // = log 2 > 0 for every tilt, so it never puts children below y < 0.
        let pinned = FiniteLaw::deterministic("pinned", 2, -1.0).unwrap();
        EnvironmentModel::mixture(
            "lower-gap-mixture",
            vec![
                (0.5, BroodLaw::Finite(spread)),
                (0.5, BroodLaw::Finite(pinned)),
            ],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{Atom, FiniteLaw};

    pub(crate) fn binary_flat() -> EnvironmentModel {
        EnvironmentModel::degenerate(BroodLaw::Finite(
            FiniteLaw::deterministic("b2", 2, 0.0).unwrap(),
        ))
    }

    fn two_law_mixture() -> EnvironmentModel {
        let a = BroodLaw::Finite(FiniteLaw::new("pm1", vec![Atom::new(1.0, vec![1.0, -1.0])]).unwrap());
        let b = BroodLaw::Finite(
            FiniteLaw::new(
                "skew",
                vec![
                    Atom::new(0.9, vec![-1.0, -1.0, -1.0]),
                    Atom::new(0.1, vec![1.0]),
                ],
            )
            .unwrap(),
        );
        EnvironmentModel::mixture("mix", vec![(0.5, a), (0.5, b)]).unwrap()
    }

    #[test]
    fn cumulative_kappa_telescopes_exactly() {
        // K must be the running sum computed once, bit for bit.
        let env = draw_environment(&two_law_mixture(), 50, 0.7, 3).unwrap();
        let mut acc = 0.0;
        assert_eq!(env.cum_kappa[0], 0.0);
        for i in 1..=50 {
            acc += env.kappa_at_theta[i - 1];
            assert_eq!(env.cum_kappa[i], acc, "K_{i} is not the exact running sum");
        }
    }

    #[test]
    fn degenerate_binary_cumulative_kappa() {
        let env = draw_environment(&binary_flat(), 3, 1.0, 0).unwrap();
        let l2 = 2.0_f64.ln();
        for i in 1..=3 {
            assert!(
                (env.cum_kappa[i] - i as f64 * l2).abs() < 1e-14,
                "K_{i} should be {i} log 2"
            );
        }
    }

    #[test]
    fn same_seed_same_environment() {
        let model = two_law_mixture();
        let a = draw_environment(&model, 40, 1.0, 9).unwrap();
        let b = draw_environment(&model, 40, 1.0, 9).unwrap();
        let c = draw_environment(&model, 40, 1.0, 10).unwrap();
        for i in 0..40 {
            assert_eq!(a.laws[i].id(), b.laws[i].id());
        }
        assert!(
            (0..40).any(|i| a.laws[i].id() != c.laws[i].id()),
            "different seeds should give different draws"
        );
    }

    #[test]
    fn mixture_draws_are_iid() {
        // Lag-1 autocorrelation of component indicators should vanish.
        let model = two_law_mixture();
        let n = 100_000;
        let mut rng = stream(5, DOMAIN_ENV, 1);
        let draws: Vec<f64> = (0..n).map(|_| model.draw_index(&mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var: f64 = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let cov: f64 = draws
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        let rho = cov / var;
        assert!(
            rho.abs() < 4.0 / (n as f64).sqrt(),
            "lag-1 autocorrelation {rho} too large for i.i.d. draws"
        );
    }

    #[test]
    fn gaussian_family_product_expansion() {
        let spec = GaussianFamilySpec::new(
            vec![(1.0, CountLaw::fixed(2))],
            vec![(0.5, (0.0, 0.8)), (0.5, (0.0, 1.25))],
        );
        let model = EnvironmentModel::gaussian_family("fam", spec).unwrap();
        assert_eq!(model.components().len(), 2);
        assert!(!model.is_degenerate());
        assert!(model.taus.is_some());

        // Count part independent of displacement part by construction:
        // empirical correlation between N and sigma over draws is ~0.
        let spec2 = GaussianFamilySpec::new(
            vec![(0.5, CountLaw::fixed(1)), (0.5, CountLaw::fixed(3))],
            vec![(0.5, (0.0, 0.8)), (0.5, (0.0, 1.25))],
        );
        let model2 = EnvironmentModel::gaussian_family("fam2", spec2).unwrap();
        let mut rng = stream(2, DOMAIN_ENV, 2);
        let n = 100_000;
        let (mut sn, mut ss, mut sns) = (0.0, 0.0, 0.0);
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let law = model2.law(model2.draw_index(&mut rng));
            if let BroodLaw::Gaussian(g) = law {
                let nn = g.count.mean();
                let sg = g.sigma;
                sn += nn;
                ss += sg;
                sns += nn * sg;
                pairs.push((nn, sg));
            }
        }
        let (mn, ms) = (sn / n as f64, ss / n as f64);
        let cov = sns / n as f64 - mn * ms;
        let sdn = (pairs.iter().map(|p| (p.0 - mn).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sds = (pairs.iter().map(|p| (p.1 - ms).powi(2)).sum::<f64>() / n as f64).sqrt();
        let corr = cov / (sdn * sds);
        assert!(
            corr.abs() < 4.0 / (n as f64).sqrt(),
            "count and displacement draws should be independent, corr = {corr}"
        );
    }

    #[test]
    fn gaussian_family_theta_closed_form() {
        let model = EnvironmentModel::degenerate(BroodLaw::Gaussian(
            GaussianLaw::new("g", CountLaw::fixed(2), 0.0, 1.0).unwrap(),
        ));
        let theta = model.gaussian_family_theta().unwrap();
        assert!((theta - (2.0 * 2.0_f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_kappa_reports_index() {
        // E[N] = 0 makes kappa = -inf for a Gaussian law.
        let dead = BroodLaw::Gaussian(
            GaussianLaw::new("dead", CountLaw::fixed(0), 0.0, 1.0).unwrap(),
        );
        let err = draw_environment(&EnvironmentModel::degenerate(dead), 2, 1.0, 0).unwrap_err();
        match err {
            Error::NonFiniteKappa { index, .. } => assert_eq!(index, 1),
            other => panic!("expected NonFiniteKappa, got {other}"),
        }
    }
}
