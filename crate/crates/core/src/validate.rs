//! Built-in validation suites.
//!
//! The centrepiece is a brute-force log-likelihood evaluator written
//! directly from the model definition, structured nothing like the
//! optimized one, cross-checked against it on random small instances.
//! Further suites exercise the delta-update contract and the proposal
//! density identity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use statrs::distribution::{Continuous, ContinuousCDF, Gamma as GammaDist};

use crate::data::DistanceIndex;
use crate::error::{Error, Result};
use crate::gp::{
    build_covariance, proposal_log_ratio_identity, sample_prior, underrelaxed_propose,
    JitterPolicy, KernelParams,
};
use crate::likelihood::{
    log_likelihood, log_likelihood_delta, AugmentedState, InfectiousPeriodParams,
};
use crate::rates::{RateFunction, TabulatedRates};

/// Outcome of one validation suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub max_discrepancy: f64,
    /// Human-readable account of the first failure, if any.
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} with {} cases, {} failures, max discrepancy {:.3e}{}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases,
            self.failures,
            self.max_discrepancy,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.detail)
            }
        )
    }
}

/// Brute-force log-likelihood straight from the model definition.
///
/// Classifies farms into sets explicitly and loops over ordered pairs with
/// branch-by-branch exposure windows. Slow and simple on purpose: it shares
/// no structure with the optimized evaluator.
pub fn naive_log_likelihood(
    state: &AugmentedState,
    rates: &RateFunction,
    params: &InfectiousPeriodParams,
    dist: &DistanceIndex,
) -> Result<f64> {
    let n = state.infection_time.len();
    let mut set_b = Vec::new();
    let mut set_c = Vec::new();
    let mut set_d = Vec::new();
    for j in 0..n {
        let infected = state.infection_time[j].is_finite();
        let natural = state.natural_cull[j].is_finite();
        let preemptive = state.preemptive_cull[j].is_finite();
        if infected && natural {
            set_b.push(j);
        } else if infected && preemptive {
            set_c.push(j);
        } else if preemptive {
            set_d.push(j);
        }
    }
    let removal = |j: usize| -> f64 { state.natural_cull[j].min(state.preemptive_cull[j]) };

    let gamma = GammaDist::new(params.shape, params.rate)
        .map_err(|e| Error::Numerical(format!("invalid gamma parameters: {e}")))?;
    let mut total = 0.0f64;

    // Infectious-period terms: density for natural culls, survivor for
    // pre-emptive culls of infected farms.
    for &j in &set_b {
        let period = removal(j) - state.infection_time[j];
        total += gamma.pdf(period).ln();
    }
    for &j in &set_c {
        let period = removal(j) - state.infection_time[j];
        total += gamma.sf(period).ln();
    }

    // Infection hazards at each non-index infection time.
    for j in set_b.iter().chain(&set_c).copied() {
        if j == state.omega {
            continue;
        }
        let t = state.infection_time[j];
        let mut pressure = 0.0;
        for k in set_b.iter().chain(&set_c).copied() {
            if k == j {
                continue;
            }
            if state.infection_time[k] < t && t < removal(k) {
                pressure += rates.beta(dist, k, j);
            }
        }
        total += pressure.ln();
    }

    // Integrated avoidance pressure.
    let mut psi = 0.0;
    for j in set_b.iter().chain(&set_c).copied() {
        let start = state.infection_time[j];
        let stop = removal(j);
        for k in 0..n {
            if k == j {
                continue;
            }
            // Exposure of k to j ends when k is infected (B, C), culled
            // (D), or never (A).
            let end = if state.infection_time[k].is_finite() {
                state.infection_time[k]
            } else if state.preemptive_cull[k].is_finite() {
                removal(k)
            } else {
                f64::INFINITY
            };
            if end <= start {
                continue;
            }
            let duration = end.min(stop) - start;
            psi += rates.beta(dist, j, k) * duration;
        }
    }
    total -= psi;

    if total.is_nan() {
        return Err(Error::Numerical(
            "naive log-likelihood evaluated to NaN".into(),
        ));
    }
    Ok(total)
}

/// A random small instance: augmented state, tabulated rates, period
/// parameters, and coordinates.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub state: AugmentedState,
    pub rates: RateFunction,
    pub params: InfectiousPeriodParams,
    pub dist: DistanceIndex,
}

/// Draw a random valid instance with at most `max_farms` farms and at most
/// `max_infected` infected farms. The index case may be naturally or
/// pre-emptively culled; remaining farms are split among sets B, C, D, A.
pub fn random_instance(
    max_farms: usize,
    max_infected: usize,
    rng: &mut impl Rng,
) -> RandomInstance {
    let n = rng.gen_range(2..=max_farms.max(2));
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0))
        .collect();
    let dist = DistanceIndex::new(coords);

    let mut beta = vec![0.0f64; n * n];
    for j in 0..n {
        for k in (j + 1)..n {
            let b = 0.05 + rng.gen::<f64>() * 1.95;
            beta[j * n + k] = b;
            beta[k * n + j] = b;
        }
        beta[j * n + j] = 1.0;
    }
    let rates = RateFunction::Tabulated(TabulatedRates::new(n, beta).unwrap());

    let params = InfectiousPeriodParams::new(
        1.2 + rng.gen::<f64>() * 4.8,
        0.3 + rng.gen::<f64>() * 2.2,
    )
    .unwrap();

    let n_infected = rng.gen_range(1..=max_infected.min(n).max(1));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let infected = &order[..n_infected];
    let omega = infected[0];

    let mut infection_time = vec![f64::INFINITY; n];
    let mut natural_cull = vec![f64::INFINITY; n];
    let mut preemptive_cull = vec![f64::INFINITY; n];

    let i_omega = -3.0 * rng.gen::<f64>();
    infection_time[omega] = i_omega;
    for &j in &infected[1..] {
        infection_time[j] = i_omega + 0.01 + rng.gen::<f64>() * 4.0;
    }
    for &j in infected {
        let removal = infection_time[j] + 0.05 + rng.gen::<f64>() * 5.0;
        if rng.gen::<f64>() < 0.7 {
            natural_cull[j] = removal;
        } else {
            preemptive_cull[j] = removal;
        }
    }
    for &j in &order[n_infected..] {
        if rng.gen::<f64>() < 0.4 {
            preemptive_cull[j] = i_omega + rng.gen::<f64>() * 6.0;
        }
    }

    RandomInstance {
        state: AugmentedState {
            infection_time,
            natural_cull,
            preemptive_cull,
            omega,
        },
        rates,
        params,
        dist,
    }
}

/// Cross-check the optimized log-likelihood against the brute-force one on
/// random instances. `perturbation` is added to the optimized value to let
/// tests confirm the suite actually detects discrepancies; production runs
/// pass 0.
pub fn likelihood_oracle_suite(cases: usize, seed: u64, perturbation: f64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    let mut max_disc = 0.0f64;
    let mut detail = String::new();
    for case in 0..cases {
        let instance = random_instance(6, 4, &mut rng);
        let fast = log_likelihood(
            &instance.state,
            &instance.rates,
            &instance.params,
            &instance.dist,
        )? + perturbation;
        let slow = naive_log_likelihood(
            &instance.state,
            &instance.rates,
            &instance.params,
            &instance.dist,
        )?;
        let agree_infinite = fast == f64::NEG_INFINITY && slow == f64::NEG_INFINITY;
        if agree_infinite {
            continue;
        }
        let disc = if fast.is_finite() && slow.is_finite() {
            (fast - slow).abs() / slow.abs().max(1.0)
        } else {
            f64::INFINITY
        };
        max_disc = max_disc.max(disc);
        if !(disc <= 1e-10) {
            failures += 1;
            if detail.is_empty() {
                detail = format!("case {case}: optimized {fast}, brute-force {slow}");
            }
        }
    }
    Ok(SuiteReport {
        name: "likelihood-oracle".into(),
        cases,
        failures,
        max_discrepancy: max_disc,
        detail,
    })
}

/// A legal single-farm infection-time change drawn from a valid state.
fn random_move(instance: &RandomInstance, rng: &mut impl Rng) -> Option<(usize, f64)> {
    let state = &instance.state;
    let n = state.infection_time.len();
    let omega = state.omega;
    let i_omega = state.infection_time[omega];
    let min_other = (0..n)
        .filter(|&j| j != omega && state.infection_time[j].is_finite())
        .map(|j| state.infection_time[j])
        .fold(f64::INFINITY, f64::min);

    let mut options: Vec<usize> = Vec::new();
    // 0: shift a non-index infected farm; 1: delete a pre-emptively culled
    // infected farm; 2: add a time to an uninfected culled farm; 3: shift
    // the index time.
    let shiftable: Vec<usize> = (0..n)
        .filter(|&j| j != omega && state.infection_time[j].is_finite())
        .filter(|&j| state.natural_cull[j].min(state.preemptive_cull[j]) > i_omega)
        .collect();
    if !shiftable.is_empty() {
        options.push(0);
    }
    let deletable: Vec<usize> = (0..n)
        .filter(|&j| {
            j != omega && state.infection_time[j].is_finite() && state.preemptive_cull[j].is_finite()
        })
        .collect();
    if !deletable.is_empty() {
        options.push(1);
    }
    let addable: Vec<usize> = (0..n)
        .filter(|&j| {
            !state.infection_time[j].is_finite()
                && state.preemptive_cull[j].is_finite()
                && state.preemptive_cull[j] > i_omega
        })
        .collect();
    if !addable.is_empty() {
        options.push(2);
    }
    let omega_ceiling = min_other.min(state.natural_cull[omega].min(state.preemptive_cull[omega]));
    options.push(3);

    match options[rng.gen_range(0..options.len())] {
        0 => {
            let j = shiftable[rng.gen_range(0..shiftable.len())];
            let removal = state.natural_cull[j].min(state.preemptive_cull[j]);
            let u = rng.gen::<f64>() * 0.98 + 0.01;
            Some((j, i_omega + u * (removal - i_omega)))
        }
        1 => {
            let j = deletable[rng.gen_range(0..deletable.len())];
            Some((j, f64::INFINITY))
        }
        2 => {
            let j = addable[rng.gen_range(0..addable.len())];
            let u = rng.gen::<f64>() * 0.98 + 0.01;
            Some((j, i_omega + u * (state.preemptive_cull[j] - i_omega)))
        }
        _ => {
            let u = rng.gen::<f64>() * 0.98 + 0.01;
            Some((omega, omega_ceiling - u * 2.0))
        }
    }
}

/// Check the delta evaluator against full re-evaluation over random legal
/// moves from random finite-density states.
pub fn delta_contract_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    let mut max_disc = 0.0f64;
    let mut detail = String::new();
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < cases {
        attempts += 1;
        if attempts > cases * 50 {
            return Err(Error::Numerical(
                "could not generate enough finite-density instances".into(),
            ));
        }
        let instance = random_instance(6, 4, &mut rng);
        let base = log_likelihood(
            &instance.state,
            &instance.rates,
            &instance.params,
            &instance.dist,
        )?;
        if !base.is_finite() {
            continue;
        }
        let Some((farm, new_time)) = random_move(&instance, &mut rng) else {
            continue;
        };
        let delta = log_likelihood_delta(
            &instance.state,
            &instance.rates,
            &instance.params,
            &instance.dist,
            farm,
            new_time,
        )?;
        let mut moved = instance.state.clone();
        moved.infection_time[farm] = new_time;
        let full = log_likelihood(&moved, &instance.rates, &instance.params, &instance.dist)?;
        done += 1;

        if full == f64::NEG_INFINITY || delta == f64::NEG_INFINITY {
            if full != f64::NEG_INFINITY || delta != f64::NEG_INFINITY {
                failures += 1;
                if detail.is_empty() {
                    detail = format!(
                        "case {done}: farm {farm} -> {new_time}: delta {delta}, full change {}",
                        full - base
                    );
                }
            }
            continue;
        }
        let disc = ((full - base) - delta).abs();
        max_disc = max_disc.max(disc);
        if !(disc <= 1e-9) {
            failures += 1;
            if detail.is_empty() {
                detail = format!(
                    "case {done}: farm {farm} -> {new_time}: delta {delta}, full change {}",
                    full - base
                );
            }
        }
    }
    Ok(SuiteReport {
        name: "delta-contract".into(),
        cases,
        failures,
        max_discrepancy: max_disc,
        detail,
    })
}

/// Check the underrelaxed-proposal density identity on random field pairs.
pub fn proposal_identity_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = JitterPolicy::default();
    let mut failures = 0usize;
    let mut max_disc = 0.0f64;
    let mut detail = String::new();
    for case in 0..cases {
        let n = rng.gen_range(2..=20usize);
        let mut knots = Vec::with_capacity(n);
        let mut d = 0.0;
        for _ in 0..n {
            knots.push(d);
            d += 0.5 + rng.gen::<f64>() * 1.5;
        }
        let params = KernelParams::new(
            0.5 + rng.gen::<f64>() * 11.5,
            0.2 + rng.gen::<f64>() * 7.8,
        )?;
        let cov = build_covariance(&knots, &params, &policy)?;
        let g = sample_prior(&cov, &mut rng);
        let delta = 0.05 + rng.gen::<f64>() * 0.9;
        let g_new = if rng.gen::<f64>() < 0.5 {
            underrelaxed_propose(&g, delta, &cov, &mut rng)?
        } else {
            sample_prior(&cov, &mut rng)
        };
        let (lhs, rhs) = proposal_log_ratio_identity(&g, &g_new, delta, &cov)?;
        let disc = (lhs - rhs).abs();
        max_disc = max_disc.max(disc);
        if !(disc <= 1e-8) {
            failures += 1;
            if detail.is_empty() {
                detail = format!("case {case}: lhs {lhs}, rhs {rhs}");
            }
        }
    }
    Ok(SuiteReport {
        name: "proposal-identity".into(),
        cases,
        failures,
        max_discrepancy: max_disc,
        detail,
    })
}

/// One marginal from the prior-reproduction run.
#[derive(Debug, Clone)]
pub struct PriorMarginal {
    pub name: &'static str,
    pub mean: f64,
    pub expected_mean: f64,
    /// Integrated autocorrelation time of the retained series.
    pub iact: f64,
    pub effective_samples: f64,
    /// Kolmogorov-Smirnov distance of an IACT-decimated subsample against
    /// the exponential prior CDF.
    pub ks_statistic: f64,
    /// 1% critical value for that subsample size.
    pub ks_critical: f64,
}

impl PriorMarginal {
    pub fn passes(&self, mean_tolerance: f64, min_effective: f64) -> bool {
        self.passes_with(mean_tolerance, min_effective, 1.0)
    }

    /// Like `passes`, with the KS critical value relaxed by `ks_scale`
    /// (1.0 is the 1% level; 1.2 is roughly the 0.1% level).
    pub fn passes_with(&self, mean_tolerance: f64, min_effective: f64, ks_scale: f64) -> bool {
        (self.mean - self.expected_mean).abs() <= mean_tolerance * self.expected_mean
            && self.effective_samples >= min_effective
            && self.ks_statistic < ks_scale * self.ks_critical
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: mean {:.3} (expect {:.1}), eff. samples {:.0}, KS {:.5} vs critical {:.5}",
            self.name,
            self.mean,
            self.expected_mean,
            self.effective_samples,
            self.ks_statistic,
            self.ks_critical
        )
    }
}

fn ks_against_exponential(subsample: &mut Vec<f64>, rate: f64) -> f64 {
    subsample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = subsample.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in subsample.iter().enumerate() {
        let cdf = 1.0 - (-rate * x).exp();
        d = d.max(cdf - i as f64 / m).max((i + 1) as f64 / m - cdf);
    }
    d
}

fn marginal_report(name: &'static str, series: &[f64], prior_rate: f64) -> PriorMarginal {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let iact = crate::posterior::integrated_autocorrelation_time(series).max(1.0);
    let step = iact.ceil() as usize;
    let mut subsample: Vec<f64> = series.iter().step_by(step.max(1)).copied().collect();
    let ks = ks_against_exponential(&mut subsample, prior_rate);
    PriorMarginal {
        name,
        mean,
        expected_mean: 1.0 / prior_rate,
        iact,
        effective_samples: n / iact,
        ks_statistic: ks,
        ks_critical: 1.6276 / (subsample.len() as f64).sqrt(),
    }
}

/// Run the sampler with every likelihood term disabled and report how well
/// the removal rate, the length scale, and the negated index infection
/// time reproduce their shared exponential prior.
pub fn prior_reproduction_suite(
    iterations: u64,
    burn_in: u64,
    thinning: u64,
    seed: u64,
) -> Result<Vec<PriorMarginal>> {
    use crate::data::{Dataset, FarmRecord, TimeOrigin};
    use crate::mcmc::{run_chain, ChainOptions, PriorConfig, TuningConfig};

    let dataset = Dataset::new(
        vec![FarmRecord {
            id: 1,
            x: 0.0,
            y: 0.0,
            cull_time: 0.0,
            preemptive: false,
            flock_type: None,
            flock_size: None,
        }],
        TimeOrigin::Offset(0.0),
    )?;
    let prior_rate = 0.01;
    let prior = PriorConfig {
        prior_rate,
        alpha: 1.0,
        shape: 4.0,
    };
    let tuning = TuningConfig {
        iterations,
        burn_in,
        thinning,
        moves_per_iteration: 0,
        g_updates_per_iteration: 1,
        delta: 0.999,
        sigma_length_scale: 100.0,
        sigma_gamma: 100.0,
        sigma_i_omega: 100.0,
        sample_length_scale: true,
        initial_length_scale: 100.0,
        initial_gamma: None,
        adapt: true,
        audit_interval: 0,
        checkpoint_interval: 0,
        prior_only: true,
    };
    let out = run_chain(
        &dataset,
        &[0.0, 1.0, 2.0, 3.0],
        &prior,
        &tuning,
        seed,
        0,
        &ChainOptions::default(),
    )?;
    let gamma: Vec<f64> = out.records.iter().map(|r| r.gamma).collect();
    let length: Vec<f64> = out.records.iter().map(|r| r.length_scale).collect();
    let neg_i: Vec<f64> = out.records.iter().map(|r| -r.i_omega).collect();
    Ok(vec![
        marginal_report("gamma", &gamma, prior_rate),
        marginal_report("length_scale", &length, prior_rate),
        marginal_report("neg_i_omega", &neg_i, prior_rate),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_suite_passes_on_random_instances() {
        let report = likelihood_oracle_suite(300, 42, 0.0).unwrap();
        assert!(report.passed(), "{}", report.summary_line());
    }

    #[test]
    fn oracle_suite_detects_a_perturbed_evaluator() {
        let report = likelihood_oracle_suite(300, 42, 1e-6).unwrap();
        assert!(!report.passed(), "negative control failed to fail");
    }

    #[test]
    fn delta_suite_passes_on_random_moves() {
        let report = delta_contract_suite(300, 43).unwrap();
        assert!(report.passed(), "{}", report.summary_line());
    }

    #[test]
    fn prior_reproduction_mechanics_on_a_short_run() {
        // Loose thresholds; the acceptance suite runs the long version.
        let reports = prior_reproduction_suite(60_000, 10_000, 2, 3).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert!(
                (r.mean - 100.0).abs() < 20.0,
                "{} mean {}",
                r.name,
                r.mean
            );
            assert!(r.effective_samples > 250.0, "{}", r.summary_line());
            assert!(r.iact >= 1.0);
            assert!(r.ks_statistic < 3.0 * r.ks_critical, "{}", r.summary_line());
        }
    }

    #[test]
    fn identity_suite_passes() {
        let report = proposal_identity_suite(100, 44).unwrap();
        assert!(report.passed(), "{}", report.summary_line());
    }

    #[test]
    fn generator_covers_all_set_memberships() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut saw_omega_preemptive = false;
        let mut saw_c = false;
        let mut saw_d = false;
        let mut saw_a = false;
        for _ in 0..500 {
            let instance = random_instance(6, 4, &mut rng);
            let s = &instance.state;
            if s.preemptive_cull[s.omega].is_finite() {
                saw_omega_preemptive = true;
            }
            for j in 0..s.infection_time.len() {
                let infected = s.infection_time[j].is_finite();
                let pre = s.preemptive_cull[j].is_finite();
                let nat = s.natural_cull[j].is_finite();
                if infected && pre {
                    saw_c = true;
                }
                if !infected && pre {
                    saw_d = true;
                }
                if !infected && !pre && !nat {
                    saw_a = true;
                }
            }
        }
        assert!(saw_omega_preemptive && saw_c && saw_d && saw_a);
    }

    #[test]
    fn naive_evaluator_matches_a_hand_case() {
        // Two farms: index infected at -1 with natural cull at 1, neighbour
        // uninfected and never culled. With constant rate b the likelihood
        // is p(2) * exp(-2b).
        let state = AugmentedState {
            infection_time: vec![-1.0, f64::INFINITY],
            natural_cull: vec![1.0, f64::INFINITY],
            preemptive_cull: vec![f64::INFINITY, f64::INFINITY],
            omega: 0,
        };
        let params = InfectiousPeriodParams::new(4.0, 0.8).unwrap();
        let rates = RateFunction::Tabulated(
            TabulatedRates::new(2, vec![1.0, 0.4, 0.4, 1.0]).unwrap(),
        );
        let dist = DistanceIndex::new(vec![(0.0, 0.0), (1.0, 0.0)]);
        let got = naive_log_likelihood(&state, &rates, &params, &dist).unwrap();
        let gamma = GammaDist::new(4.0, 0.8).unwrap();
        let expected = gamma.pdf(2.0).ln() - 2.0 * 0.4;
        assert!((got - expected).abs() < 1e-12);
    }
}
