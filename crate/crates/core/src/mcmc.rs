//! Data-augmentation MCMC over the transmission-kernel posterior.
//!
//! Each sweep updates the grid log-rate field by an underrelaxed proposal
//! accepted on the likelihood ratio alone, then the length scale (optional),
//! the removal rate, the index-case label and time, and finally a block of
//! latent infection-time moves: shifting, adding, or deleting infection
//! times of pre-emptively culled farms. Latent moves go through the delta
//! evaluator; periodic audits compare the running log-likelihood against a
//! fresh evaluation and re-anchor it.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{classify, Dataset, DistanceIndex};
use crate::error::{Error, Result};
use crate::gp::{
    build_covariance, underrelaxed_propose, CovarianceMatrix, JitterPolicy, KernelParams,
};
use crate::likelihood::{
    gamma_term_sum, log_gamma_pdf, log_likelihood, log_likelihood_delta, AugmentedState,
    InfectiousPeriodParams,
};
use crate::rates::{GpRates, PairTable, RateFunction};
use crate::trace::{
    read_checkpoint, read_trace, write_checkpoint, Checkpoint, TraceHeader, TraceRecord,
    TraceWriter, TuningSnapshot, TRACE_SCHEMA_VERSION,
};

/// Fixed model constants and shared exponential prior rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Rate of the exponential priors on the length scale, the removal
    /// rate, and the negated index infection time.
    pub prior_rate: f64,
    /// Fixed GP amplitude.
    pub alpha: f64,
    /// Fixed infectious-period shape.
    pub shape: f64,
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prior_rate", self.prior_rate),
            ("alpha", self.alpha),
            ("shape", self.shape),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Run lengths, proposal scales, and switches for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    /// Latent infection-time updates per sweep.
    pub moves_per_iteration: u32,
    /// Rate-field updates per sweep; the underrelaxed proposal mixes at a
    /// rate bounded by its mixing parameter, so extra draws per sweep buy
    /// effective samples linearly in cost.
    pub g_updates_per_iteration: u32,
    /// Underrelaxation mixing parameter in (0, 1]; 1 is an independent
    /// prior redraw.
    pub delta: f64,
    pub sigma_length_scale: f64,
    pub sigma_gamma: f64,
    pub sigma_i_omega: f64,
    pub sample_length_scale: bool,
    pub initial_length_scale: f64,
    /// Starting removal rate; drawn from its prior when absent.
    pub initial_gamma: Option<f64>,
    /// Adapt proposal scales toward target rates during burn-in.
    pub adapt: bool,
    /// Sweeps between cached-likelihood audits; 0 disables.
    pub audit_interval: u64,
    /// Sweeps between checkpoints; 0 writes only a final checkpoint.
    pub checkpoint_interval: u64,
    /// Drop every likelihood contribution, leaving the priors as the
    /// target; used by the prior-reproduction validation suite.
    pub prior_only: bool,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            iterations: 10_000,
            burn_in: 2_000,
            thinning: 10,
            moves_per_iteration: 10,
            g_updates_per_iteration: 1,
            delta: 0.2,
            sigma_length_scale: 1.0,
            sigma_gamma: 0.1,
            sigma_i_omega: 0.5,
            sample_length_scale: true,
            initial_length_scale: 1.0,
            initial_gamma: None,
            adapt: true,
            audit_interval: 500,
            checkpoint_interval: 0,
            prior_only: false,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if self.g_updates_per_iteration == 0 {
            return Err(Error::Config(
                "g_updates_per_iteration must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("sigma_length_scale", self.sigma_length_scale),
            ("sigma_gamma", self.sigma_gamma),
            ("sigma_i_omega", self.sigma_i_omega),
            ("initial_length_scale", self.initial_length_scale),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if let Some(g) = self.initial_gamma {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::Config(format!(
                    "initial_gamma must be positive and finite, got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of one Metropolis-Hastings update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    /// Raw log acceptance ratio (uncapped).
    pub log_acceptance: f64,
}

impl UpdateOutcome {
    fn rejected() -> Self {
        UpdateOutcome {
            accepted: false,
            log_acceptance: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize)]
pub struct AcceptanceCounter {
    pub attempted: u64,
    pub accepted: u64,
}

impl AcceptanceCounter {
    fn tally(&mut self, outcome: &UpdateOutcome) {
        self.attempted += 1;
        if outcome.accepted {
            self.accepted += 1;
        }
    }

    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }
}

/// Per-update acceptance tallies over the executed portion of a run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize)]
pub struct AcceptanceSummary {
    pub g: AcceptanceCounter,
    pub length_scale: AcceptanceCounter,
    pub gamma: AcceptanceCounter,
    pub omega: AcceptanceCounter,
    pub i_omega: AcceptanceCounter,
    pub moves: AcceptanceCounter,
    pub adds: AcceptanceCounter,
    pub deletes: AcceptanceCounter,
}

/// Where to stream the trace and checkpoints.
#[derive(Debug, Default, Clone)]
pub struct ChainOptions {
    pub trace_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub resume: bool,
}

/// Everything a finished (or continued) run hands back.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub acceptance: AcceptanceSummary,
    pub final_tuning: TuningSnapshot,
}

/// Shared context for the latent infection-time updates.
pub struct LatentContext<'a> {
    pub rates: &'a RateFunction,
    pub params: &'a InfectiousPeriodParams,
    pub dist: &'a DistanceIndex,
}

fn metropolis(log_acceptance: f64, rng: &mut impl Rng) -> bool {
    if log_acceptance >= 0.0 {
        true
    } else {
        let u: f64 = rng.gen();
        u.ln() < log_acceptance
    }
}

fn period_proposal(params: &InfectiousPeriodParams, rng: &mut impl Rng) -> Result<f64> {
    let dist = Gamma::new(params.shape, 1.0 / params.rate)
        .map_err(|e| Error::Numerical(format!("invalid period proposal parameters: {e}")))?;
    Ok(dist.sample(rng))
}

/// Refresh one non-index infection time from the period-anchored proposal.
/// Returns `None` when no farm is eligible.
pub fn move_update(
    state: &mut AugmentedState,
    log_lik: &mut f64,
    ctx: &LatentContext,
    rng: &mut impl Rng,
) -> Result<Option<UpdateOutcome>> {
    let pool: Vec<usize> = (0..state.n())
        .filter(|&j| j != state.omega && state.is_infected(j))
        .collect();
    if pool.is_empty() {
        return Ok(None);
    }
    let farm = pool[rng.gen_range(0..pool.len())];
    let removal = state.removal(farm);
    let draw = period_proposal(ctx.params, rng)?;
    let proposal = removal - draw;
    if proposal <= state.infection_time[state.omega] {
        return Ok(Some(UpdateOutcome::rejected()));
    }
    let dlik = log_likelihood_delta(state, ctx.rates, ctx.params, ctx.dist, farm, proposal)?;
    let old_period = removal - state.infection_time[farm];
    let log_acc = dlik + log_gamma_pdf(old_period, ctx.params) - log_gamma_pdf(draw, ctx.params);
    let accepted = metropolis(log_acc, rng);
    if accepted {
        state.infection_time[farm] = proposal;
        *log_lik += dlik;
    }
    Ok(Some(UpdateOutcome {
        accepted,
        log_acceptance: log_acc,
    }))
}

/// Propose infecting one currently-uninfected pre-emptively culled farm.
/// Returns `None` when every such farm already carries an infection time.
pub fn add_update(
    state: &mut AugmentedState,
    log_lik: &mut f64,
    ctx: &LatentContext,
    rng: &mut impl Rng,
) -> Result<Option<UpdateOutcome>> {
    let pool: Vec<usize> = (0..state.n()).filter(|&j| state.in_d(j)).collect();
    if pool.is_empty() {
        return Ok(None);
    }
    let farm = pool[rng.gen_range(0..pool.len())];
    let removal = state.preemptive_cull[farm];
    let draw = period_proposal(ctx.params, rng)?;
    let proposal = removal - draw;
    if proposal <= state.infection_time[state.omega] {
        return Ok(Some(UpdateOutcome::rejected()));
    }
    let dlik = log_likelihood_delta(state, ctx.rates, ctx.params, ctx.dist, farm, proposal)?;
    let deletable_after = state.c_count() + 1 - usize::from(state.in_c(state.omega));
    let log_acc = dlik + (pool.len() as f64).ln() - (deletable_after as f64).ln()
        - log_gamma_pdf(draw, ctx.params);
    let accepted = metropolis(log_acc, rng);
    if accepted {
        state.infection_time[farm] = proposal;
        *log_lik += dlik;
    }
    Ok(Some(UpdateOutcome {
        accepted,
        log_acceptance: log_acc,
    }))
}

/// Propose removing the infection time of one pre-emptively culled infected
/// farm (never the index case). Returns `None` when none is eligible.
pub fn delete_update(
    state: &mut AugmentedState,
    log_lik: &mut f64,
    ctx: &LatentContext,
    rng: &mut impl Rng,
) -> Result<Option<UpdateOutcome>> {
    let pool: Vec<usize> = (0..state.n())
        .filter(|&j| j != state.omega && state.in_c(j))
        .collect();
    if pool.is_empty() {
        return Ok(None);
    }
    let farm = pool[rng.gen_range(0..pool.len())];
    let old_period = state.preemptive_cull[farm] - state.infection_time[farm];
    let dlik = log_likelihood_delta(
        state,
        ctx.rates,
        ctx.params,
        ctx.dist,
        farm,
        f64::INFINITY,
    )?;
    let d_count_after = (0..state.n()).filter(|&j| state.in_d(j)).count() + 1;
    let log_acc = dlik + log_gamma_pdf(old_period, ctx.params) + (pool.len() as f64).ln()
        - (d_count_after as f64).ln();
    let accepted = metropolis(log_acc, rng);
    if accepted {
        state.infection_time[farm] = f64::INFINITY;
        *log_lik += dlik;
    }
    Ok(Some(UpdateOutcome {
        accepted,
        log_acceptance: log_acc,
    }))
}

const ADAPT_G: usize = 0;
const ADAPT_L: usize = 1;
const ADAPT_GAMMA: usize = 2;
const ADAPT_I_OMEGA: usize = 3;

struct Chain<'a> {
    dist: DistanceIndex,
    knots: &'a [f64],
    prior: &'a PriorConfig,
    config: &'a TuningConfig,
    policy: JitterPolicy,
    state: AugmentedState,
    g_bar: DVector<f64>,
    length_scale: f64,
    gamma: f64,
    log_lik: f64,
    knot_cov: CovarianceMatrix,
    rates: RateFunction,
    scratch: RateFunction,
    delta: f64,
    sigma_length_scale: f64,
    sigma_gamma: f64,
    sigma_i_omega: f64,
    adapt_counts: [u64; 4],
    rng: ChaCha8Rng,
}

fn gp_ref(rates: &RateFunction) -> &GpRates {
    match rates {
        RateFunction::Gp(gp) => gp,
        _ => unreachable!("chain rates are always GP-backed"),
    }
}

fn gp_mut(rates: &mut RateFunction) -> &mut GpRates {
    match rates {
        RateFunction::Gp(gp) => gp,
        _ => unreachable!("chain rates are always GP-backed"),
    }
}

impl<'a> Chain<'a> {
    fn period(&self) -> InfectiousPeriodParams {
        InfectiousPeriodParams {
            shape: self.prior.shape,
            rate: self.gamma,
        }
    }

    fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn update_g(&mut self) -> Result<UpdateOutcome> {
        let proposal = underrelaxed_propose(&self.g_bar, self.delta, &self.knot_cov, &mut self.rng)?;
        if self.config.prior_only {
            self.g_bar = proposal;
            return Ok(UpdateOutcome {
                accepted: true,
                log_acceptance: 0.0,
            });
        }
        gp_mut(&mut self.scratch).set_field(proposal.clone())?;
        let params = self.period();
        let new_lik = log_likelihood(&self.state, &self.scratch, &params, &self.dist)?;
        let log_acc = new_lik - self.log_lik;
        let accepted = metropolis(log_acc, &mut self.rng);
        if accepted {
            std::mem::swap(&mut self.rates, &mut self.scratch);
            self.g_bar = proposal;
            self.log_lik = new_lik;
        }
        Ok(UpdateOutcome {
            accepted,
            log_acceptance: log_acc,
        })
    }

    fn update_length_scale(&mut self) -> Result<UpdateOutcome> {
        let proposal = self.length_scale + self.sigma_length_scale * self.standard_normal();
        if proposal <= 0.0 {
            return Ok(UpdateOutcome::rejected());
        }
        let params_new = KernelParams::new(self.prior.alpha, proposal)?;
        // A proposal whose covariance cannot be factorized even with the
        // escalated jitter is treated as numerically infeasible: reject.
        let Ok(cov_new) = build_covariance(self.knots, &params_new, &self.policy) else {
            return Ok(UpdateOutcome::rejected());
        };
        let gp_old = self.knot_cov.log_density(&self.g_bar)?;
        let gp_new = cov_new.log_density(&self.g_bar)?;
        let prior_term = -self.prior.prior_rate * (proposal - self.length_scale);

        if self.config.prior_only {
            let log_acc = gp_new - gp_old + prior_term;
            let accepted = metropolis(log_acc, &mut self.rng);
            if accepted {
                self.length_scale = proposal;
                self.knot_cov = cov_new;
            }
            return Ok(UpdateOutcome {
                accepted,
                log_acceptance: log_acc,
            });
        }

        let table = gp_ref(&self.rates).table().clone();
        let Ok((projector, log_rates)) =
            table.project_with_length_scale(&self.g_bar, proposal, &self.policy)
        else {
            return Ok(UpdateOutcome::rejected());
        };
        let new_table = Arc::new(table.with_projector(projector));
        let candidate = RateFunction::Gp(GpRates::from_projected(
            new_table.clone(),
            self.g_bar.clone(),
            &log_rates,
        ));
        let params = self.period();
        let new_lik = log_likelihood(&self.state, &candidate, &params, &self.dist)?;
        let log_acc = gp_new - gp_old + prior_term + new_lik - self.log_lik;
        let accepted = metropolis(log_acc, &mut self.rng);
        if accepted {
            self.length_scale = proposal;
            self.knot_cov = cov_new;
            self.scratch = candidate.clone();
            self.rates = candidate;
            self.log_lik = new_lik;
        }
        Ok(UpdateOutcome {
            accepted,
            log_acceptance: log_acc,
        })
    }

    fn update_gamma(&mut self) -> Result<UpdateOutcome> {
        let proposal = self.gamma + self.sigma_gamma * self.standard_normal();
        if proposal <= 0.0 {
            return Ok(UpdateOutcome::rejected());
        }
        let prior_term = -self.prior.prior_rate * (proposal - self.gamma);
        if self.config.prior_only {
            let accepted = metropolis(prior_term, &mut self.rng);
            if accepted {
                self.gamma = proposal;
            }
            return Ok(UpdateOutcome {
                accepted,
                log_acceptance: prior_term,
            });
        }
        let old_terms = gamma_term_sum(&self.state, &self.period());
        let new_terms = gamma_term_sum(
            &self.state,
            &InfectiousPeriodParams {
                shape: self.prior.shape,
                rate: proposal,
            },
        );
        let log_acc = new_terms - old_terms + prior_term;
        let accepted = metropolis(log_acc, &mut self.rng);
        if accepted {
            self.gamma = proposal;
            self.log_lik += new_terms - old_terms;
        }
        Ok(UpdateOutcome {
            accepted,
            log_acceptance: log_acc,
        })
    }

    /// Swap the index label with the second-earliest infected farm,
    /// exchanging their infection times. Symmetric: after the swap the old
    /// index holds the second-earliest time.
    fn update_omega(&mut self) -> Result<Option<UpdateOutcome>> {
        let omega = self.state.omega;
        let mut second: Option<(f64, usize)> = None;
        for j in 0..self.state.n() {
            if j == omega || !self.state.is_infected(j) {
                continue;
            }
            let key = (self.state.infection_time[j], j);
            if second.map_or(true, |(t, idx)| key < (t, idx)) {
                second = Some(key);
            }
        }
        let Some((t2, candidate)) = second else {
            return Ok(None);
        };
        let t1 = self.state.infection_time[omega];
        if t2 >= self.state.removal(omega) {
            // The old index would be infected at or after its own removal.
            return Ok(Some(UpdateOutcome::rejected()));
        }
        let mut proposed = self.state.clone();
        proposed.infection_time[omega] = t2;
        proposed.infection_time[candidate] = t1;
        proposed.omega = candidate;
        let params = self.period();
        let new_lik = log_likelihood(&proposed, &self.rates, &params, &self.dist)?;
        let log_acc = new_lik - self.log_lik;
        let accepted = metropolis(log_acc, &mut self.rng);
        if accepted {
            self.state = proposed;
            self.log_lik = new_lik;
        }
        Ok(Some(UpdateOutcome {
            accepted,
            log_acceptance: log_acc,
        }))
    }

    /// Random-walk update of the index infection time through a normal
    /// proposal truncated above at the earliest other infection time; the
    /// truncation enters the proposal ratio.
    fn update_i_omega(&mut self) -> Result<UpdateOutcome> {
        let omega = self.state.omega;
        let current = self.state.infection_time[omega];
        let upper = (0..self.state.n())
            .filter(|&j| j != omega && self.state.is_infected(j))
            .map(|j| self.state.infection_time[j])
            .fold(f64::INFINITY, f64::min);
        let sigma = self.sigma_i_omega;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let cap = if upper.is_finite() {
            normal.cdf((upper - current) / sigma)
        } else {
            1.0
        };
        let u: f64 = self.rng.gen();
        let p = u * cap;
        if p <= 0.0 {
            return Ok(UpdateOutcome::rejected());
        }
        let proposal = current + sigma * normal.inverse_cdf(p);
        if !proposal.is_finite()
            || proposal > 0.0
            || proposal >= self.state.removal(omega)
        {
            return Ok(UpdateOutcome::rejected());
        }
        let prior_term = self.prior.prior_rate * (proposal - current);
        let truncation_term = if upper.is_finite() {
            normal.cdf((upper - current) / sigma).ln()
                - normal.cdf((upper - proposal) / sigma).ln()
        } else {
            0.0
        };
        let dlik = if self.config.prior_only {
            0.0
        } else {
            let params = self.period();
            log_likelihood_delta(&self.state, &self.rates, &params, &self.dist, omega, proposal)?
        };
        let log_acc = dlik + prior_term + truncation_term;
        let accepted = metropolis(log_acc, &mut self.rng);
        if accepted {
            self.state.infection_time[omega] = proposal;
            self.log_lik += dlik;
        }
        Ok(UpdateOutcome {
            accepted,
            log_acceptance: log_acc,
        })
    }

    fn adapt(&mut self, which: usize, outcome: &UpdateOutcome) {
        if !self.config.adapt {
            return;
        }
        let count = &mut self.adapt_counts[which];
        *count += 1;
        let step = (*count as f64).powf(-0.7);
        let alpha = outcome.log_acceptance.exp().min(1.0);
        match which {
            ADAPT_G => {
                let clamped = self.delta.clamp(1e-4, 1.0 - 1e-9);
                let logit = (clamped / (1.0 - clamped)).ln() + step * (alpha - 0.23);
                self.delta = (1.0 / (1.0 + (-logit).exp())).clamp(1e-4, 1.0 - 1e-9);
            }
            ADAPT_L => {
                self.sigma_length_scale =
                    (self.sigma_length_scale.ln() + step * (alpha - 0.44)).exp().clamp(1e-8, 1e6);
            }
            ADAPT_GAMMA => {
                self.sigma_gamma =
                    (self.sigma_gamma.ln() + step * (alpha - 0.44)).exp().clamp(1e-8, 1e6);
            }
            _ => {
                self.sigma_i_omega =
                    (self.sigma_i_omega.ln() + step * (alpha - 0.44)).exp().clamp(1e-8, 1e6);
            }
        }
    }

    /// Fresh full evaluation against the running value; re-anchors on pass.
    fn audit(&mut self) -> Result<()> {
        self.state.check_structure()?;
        if self.config.prior_only {
            return Ok(());
        }
        let params = self.period();
        let fresh = log_likelihood(&self.state, &self.rates, &params, &self.dist)?;
        if !fresh.is_finite() {
            return Err(Error::Mcmc(format!(
                "audit found a degenerate chain state (log-likelihood {fresh})"
            )));
        }
        if (fresh - self.log_lik).abs() > 1e-6 {
            return Err(Error::Mcmc(format!(
                "cached log-likelihood drifted: running {}, fresh {}",
                self.log_lik, fresh
            )));
        }
        self.log_lik = fresh;
        Ok(())
    }

    fn tuning_snapshot(&self) -> TuningSnapshot {
        TuningSnapshot {
            delta: self.delta,
            sigma_length_scale: self.sigma_length_scale,
            sigma_gamma: self.sigma_gamma,
            sigma_i_omega: self.sigma_i_omega,
            adapt_counts: self.adapt_counts,
        }
    }

    fn record(&self, sweep: u64) -> TraceRecord {
        let infections: Vec<(usize, f64)> = (0..self.state.n())
            .filter(|&j| self.state.is_infected(j))
            .map(|j| (j, self.state.infection_time[j]))
            .collect();
        let c_members: Vec<usize> = (0..self.state.n())
            .filter(|&j| self.state.in_c(j))
            .collect();
        TraceRecord {
            sweep,
            g_bar: self.g_bar.iter().copied().collect(),
            length_scale: self.length_scale,
            gamma: self.gamma,
            omega: self.state.omega,
            i_omega: self.state.infection_time[self.state.omega],
            log_likelihood: self.log_lik,
            infections,
            c_members,
        }
    }

    fn checkpoint(&self, sweep: u64, records_written: u64) -> Checkpoint {
        let infections: Vec<(usize, f64)> = (0..self.state.n())
            .filter(|&j| self.state.is_infected(j))
            .map(|j| (j, self.state.infection_time[j]))
            .collect();
        Checkpoint {
            schema_version: TRACE_SCHEMA_VERSION,
            sweep,
            records_written,
            g_bar: self.g_bar.iter().copied().collect(),
            length_scale: self.length_scale,
            gamma: self.gamma,
            omega: self.state.omega,
            infections,
            log_likelihood: self.log_lik,
            tuning: self.tuning_snapshot(),
            rng: self.rng.clone(),
        }
    }
}

/// Observed cull times as augmented-state vectors with no infection times.
fn bare_state(dataset: &Dataset, omega: usize) -> AugmentedState {
    let n = dataset.len();
    let mut natural_cull = vec![f64::INFINITY; n];
    let mut preemptive_cull = vec![f64::INFINITY; n];
    for (j, farm) in dataset.farms().iter().enumerate() {
        if farm.cull_time.is_finite() {
            if farm.preemptive {
                preemptive_cull[j] = farm.cull_time;
            } else {
                natural_cull[j] = farm.cull_time;
            }
        }
    }
    AugmentedState {
        infection_time: vec![f64::INFINITY; n],
        natural_cull,
        preemptive_cull,
        omega,
    }
}

const INIT_ATTEMPTS: usize = 200;

#[allow(clippy::too_many_arguments)]
fn init_chain<'a>(
    dataset: &Dataset,
    dist: DistanceIndex,
    active: &[usize],
    omega: usize,
    knots: &'a [f64],
    prior: &'a PriorConfig,
    config: &'a TuningConfig,
    mut rng: ChaCha8Rng,
) -> Result<Chain<'a>> {
    let policy = JitterPolicy::default();
    let knot_params = KernelParams::new(prior.alpha, config.initial_length_scale)?;
    let knot_cov = build_covariance(knots, &knot_params, &policy)?;
    let table = Arc::new(PairTable::new(
        &dist,
        active,
        knots,
        config.initial_length_scale,
        &policy,
    )?);
    let gamma_prior = Exp::new(prior.prior_rate)
        .map_err(|e| Error::Config(format!("invalid prior rate: {e}")))?;

    let naturally_culled: Vec<usize> = (0..dataset.len())
        .filter(|&j| {
            let farm = &dataset.farms()[j];
            farm.cull_time.is_finite() && !farm.preemptive
        })
        .collect();

    // The field starts at the prior mean: a random prior draw sits O(alpha)
    // log-units from the posterior and relaxes asymmetrically under the
    // underrelaxed proposal, biasing weakly identified distances for any
    // fixed burn-in.
    'attempt: for _ in 0..INIT_ATTEMPTS {
        let g_bar = DVector::zeros(knots.len());
        let gamma = config
            .initial_gamma
            .unwrap_or_else(|| gamma_prior.sample(&mut rng));
        let params = InfectiousPeriodParams::new(prior.shape, gamma)?;
        let period_dist = Gamma::new(params.shape, 1.0 / params.rate)
            .map_err(|e| Error::Config(format!("invalid infectious-period draw: {e}")))?;

        let mut state = bare_state(dataset, omega);
        let r_omega = state.removal(omega);
        let mut i_omega = f64::INFINITY;
        for _ in 0..100 {
            let draw = r_omega - period_dist.sample(&mut rng);
            if draw < 0.0 {
                i_omega = draw;
                break;
            }
        }
        if !i_omega.is_finite() {
            continue 'attempt;
        }
        state.infection_time[omega] = i_omega;
        for &j in &naturally_culled {
            if j == omega {
                continue;
            }
            let r_j = state.natural_cull[j];
            let mut placed = false;
            for _ in 0..1000 {
                let draw = r_j - period_dist.sample(&mut rng);
                if draw > i_omega {
                    state.infection_time[j] = draw;
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }

        let rates = RateFunction::Gp(GpRates::new(table.clone(), g_bar.clone())?);
        let log_lik = if config.prior_only {
            0.0
        } else {
            let ll = log_likelihood(&state, &rates, &params, &dist)?;
            if !ll.is_finite() {
                continue 'attempt;
            }
            ll
        };
        let scratch = rates.clone();
        return Ok(Chain {
            dist,
            knots,
            prior,
            config,
            policy,
            state,
            g_bar,
            length_scale: config.initial_length_scale,
            gamma,
            log_lik,
            knot_cov,
            rates,
            scratch,
            delta: config.delta,
            sigma_length_scale: config.sigma_length_scale,
            sigma_gamma: config.sigma_gamma,
            sigma_i_omega: config.sigma_i_omega,
            adapt_counts: [0; 4],
            rng,
        });
    }
    Err(Error::Mcmc(format!(
        "chain initialization failed after {INIT_ATTEMPTS} attempts: every drawn start had \
         zero likelihood; set initial_gamma to a smaller value so initial infectious periods \
         are longer"
    )))
}

fn restore_chain<'a>(
    dataset: &Dataset,
    dist: DistanceIndex,
    active: &[usize],
    knots: &'a [f64],
    prior: &'a PriorConfig,
    config: &'a TuningConfig,
    checkpoint: &Checkpoint,
) -> Result<Chain<'a>> {
    if checkpoint.g_bar.len() != knots.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint grid has {} knots, run configured {}",
            checkpoint.g_bar.len(),
            knots.len()
        )));
    }
    let policy = JitterPolicy::default();
    let knot_params = KernelParams::new(prior.alpha, checkpoint.length_scale)?;
    let knot_cov = build_covariance(knots, &knot_params, &policy)?;
    let table = Arc::new(PairTable::new(
        &dist,
        active,
        knots,
        checkpoint.length_scale,
        &policy,
    )?);
    let mut state = bare_state(dataset, checkpoint.omega);
    for &(farm, time) in &checkpoint.infections {
        if farm >= state.n() {
            return Err(Error::Checkpoint(format!(
                "checkpoint infection index {farm} outside 0..{}",
                state.n()
            )));
        }
        state.infection_time[farm] = time;
    }
    state.check_structure()?;
    let g_bar = DVector::from_vec(checkpoint.g_bar.clone());
    let rates = RateFunction::Gp(GpRates::new(table, g_bar.clone())?);
    let params = InfectiousPeriodParams::new(prior.shape, checkpoint.gamma)?;
    let log_lik = if config.prior_only {
        0.0
    } else {
        let fresh = log_likelihood(&state, &rates, &params, &dist)?;
        if (fresh - checkpoint.log_likelihood).abs() > 1e-6 {
            return Err(Error::Checkpoint(format!(
                "checkpoint log-likelihood {} does not match recomputed {}",
                checkpoint.log_likelihood, fresh
            )));
        }
        fresh
    };
    let scratch = rates.clone();
    Ok(Chain {
        dist,
        knots,
        prior,
        config,
        policy,
        state,
        g_bar,
        length_scale: checkpoint.length_scale,
        gamma: checkpoint.gamma,
        log_lik,
        knot_cov,
        rates,
        scratch,
        delta: checkpoint.tuning.delta,
        sigma_length_scale: checkpoint.tuning.sigma_length_scale,
        sigma_gamma: checkpoint.tuning.sigma_gamma,
        sigma_i_omega: checkpoint.tuning.sigma_i_omega,
        adapt_counts: checkpoint.tuning.adapt_counts,
        rng: checkpoint.rng.clone(),
    })
}

/// Run one chain to completion (or continue it from a checkpoint).
///
/// The chain is seeded from `seed` with a distinct stream per
/// `chain_index`, so multi-chain runs are reproducible independent of
/// scheduling.
pub fn run_chain(
    dataset: &Dataset,
    knots: &[f64],
    prior: &PriorConfig,
    tuning: &TuningConfig,
    seed: u64,
    chain_index: u64,
    options: &ChainOptions,
) -> Result<ChainOutput> {
    prior.validate()?;
    tuning.validate()?;
    if knots.is_empty() {
        return Err(Error::Config("pseudo grid has no knots".into()));
    }
    let classification = classify(dataset);
    let omega = classification
        .naturally_culled
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let fa = &dataset.farms()[a];
            let fb = &dataset.farms()[b];
            (fa.cull_time, a).partial_cmp(&(fb.cull_time, b)).unwrap()
        })
        .ok_or_else(|| {
            Error::Data("no naturally culled farms; cannot seed the chain".into())
        })?;
    let mut active = classification.naturally_culled.clone();
    active.extend_from_slice(&classification.preemptively_culled);
    active.sort_unstable();
    let dist = dataset.distance_index();

    let header = TraceHeader {
        schema_version: TRACE_SCHEMA_VERSION,
        n_farms: dataset.len(),
        knots: knots.to_vec(),
        alpha: prior.alpha,
        shape: prior.shape,
        prior_rate: prior.prior_rate,
        seed,
        chain: chain_index,
        fixed_length_scale: if tuning.sample_length_scale {
            None
        } else {
            Some(tuning.initial_length_scale)
        },
    };

    let existing_checkpoint = match (&options.checkpoint_path, options.resume) {
        (Some(path), true) if path.exists() => Some(read_checkpoint(path)?),
        _ => None,
    };

    let (mut chain, start_sweep, mut records, mut writer) = match existing_checkpoint {
        Some(ck) => {
            let chain = restore_chain(dataset, dist, &active, knots, prior, tuning, &ck)?;
            let (records, writer) = match &options.trace_path {
                Some(path) => {
                    let existing = read_trace(path)?;
                    if existing.header != header {
                        return Err(Error::Checkpoint(format!(
                            "trace {} belongs to a different run configuration",
                            path.display()
                        )));
                    }
                    let kept: Vec<TraceRecord> = existing
                        .records
                        .into_iter()
                        .take(ck.records_written as usize)
                        .collect();
                    if (kept.len() as u64) < ck.records_written {
                        return Err(Error::Checkpoint(format!(
                            "trace {} is behind its checkpoint",
                            path.display()
                        )));
                    }
                    let writer = TraceWriter::resume(path, &header, ck.records_written)?;
                    (kept, Some(writer))
                }
                None => (Vec::new(), None),
            };
            (chain, ck.sweep, records, writer)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chain_index);
            let chain = init_chain(dataset, dist, &active, omega, knots, prior, tuning, rng)?;
            let writer = match &options.trace_path {
                Some(path) => Some(TraceWriter::create(path, &header)?),
                None => None,
            };
            (chain, 0, Vec::new(), writer)
        }
    };

    let mut acceptance = AcceptanceSummary::default();

    for sweep in start_sweep..tuning.iterations {
        let adapt_now = tuning.adapt && sweep < tuning.burn_in;

        for _ in 0..tuning.g_updates_per_iteration {
            let g_out = chain.update_g()?;
            acceptance.g.tally(&g_out);
            if adapt_now {
                chain.adapt(ADAPT_G, &g_out);
            }
        }

        if tuning.sample_length_scale {
            let l_out = chain.update_length_scale()?;
            acceptance.length_scale.tally(&l_out);
            if adapt_now {
                chain.adapt(ADAPT_L, &l_out);
            }
        }

        let gamma_out = chain.update_gamma()?;
        acceptance.gamma.tally(&gamma_out);
        if adapt_now {
            chain.adapt(ADAPT_GAMMA, &gamma_out);
        }

        if !tuning.prior_only {
            if let Some(omega_out) = chain.update_omega()? {
                acceptance.omega.tally(&omega_out);
            }
        }

        let i_out = chain.update_i_omega()?;
        acceptance.i_omega.tally(&i_out);
        if adapt_now {
            chain.adapt(ADAPT_I_OMEGA, &i_out);
        }

        if !tuning.prior_only {
            let params = chain.period();
            for _ in 0..tuning.moves_per_iteration {
                let kind = chain.rng.gen_range(0..3u8);
                let ctx = LatentContext {
                    rates: &chain.rates,
                    params: &params,
                    dist: &chain.dist,
                };
                let outcome = match kind {
                    0 => move_update(&mut chain.state, &mut chain.log_lik, &ctx, &mut chain.rng)?,
                    1 => add_update(&mut chain.state, &mut chain.log_lik, &ctx, &mut chain.rng)?,
                    _ => delete_update(&mut chain.state, &mut chain.log_lik, &ctx, &mut chain.rng)?,
                };
                if let Some(outcome) = outcome {
                    match kind {
                        0 => acceptance.moves.tally(&outcome),
                        1 => acceptance.adds.tally(&outcome),
                        _ => acceptance.deletes.tally(&outcome),
                    }
                }
            }
        }

        if sweep >= tuning.burn_in && (sweep - tuning.burn_in + 1) % tuning.thinning == 0 {
            let record = chain.record(sweep);
            if let Some(writer) = writer.as_mut() {
                writer.append(&record)?;
            }
            records.push(record);
        }

        if tuning.audit_interval > 0 && (sweep + 1) % tuning.audit_interval == 0 {
            chain.audit()?;
        }

        let at_checkpoint = tuning.checkpoint_interval > 0
            && (sweep + 1) % tuning.checkpoint_interval == 0;
        let at_end = sweep + 1 == tuning.iterations;
        if (at_checkpoint || at_end) && options.checkpoint_path.is_some() {
            if let Some(writer) = writer.as_mut() {
                writer.flush()?;
            }
            let written = writer.as_ref().map_or(records.len() as u64, |w| {
                w.records_written()
            });
            let checkpoint = chain.checkpoint(sweep + 1, written);
            write_checkpoint(options.checkpoint_path.as_ref().unwrap(), &checkpoint)?;
        }
    }
    if let Some(writer) = writer.as_mut() {
        writer.flush()?;
    }

    Ok(ChainOutput {
        header,
        records,
        acceptance,
        final_tuning: chain.tuning_snapshot(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FarmRecord, TimeOrigin, NEVER};
    use crate::likelihood::log_likelihood;
    use crate::rates::TabulatedRates;
    use crate::sim::{export_observed, random_layout, simulate_outbreak, CullingPolicy};

    fn single_farm_dataset() -> Dataset {
        Dataset::new(
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
        )
        .unwrap()
    }

    fn prior_config() -> PriorConfig {
        PriorConfig {
            prior_rate: 0.01,
            alpha: 1.0,
            shape: 4.0,
        }
    }

    #[test]
    fn prior_only_chain_reproduces_exponential_priors() {
        let dataset = single_farm_dataset();
        let knots = vec![0.0, 1.0, 2.0, 3.0];
        let prior = prior_config();
        let tuning = TuningConfig {
            iterations: 120_000,
            burn_in: 20_000,
            thinning: 5,
            moves_per_iteration: 0,
            g_updates_per_iteration: 1,
            delta: 0.999,
            sigma_length_scale: 60.0,
            sigma_gamma: 60.0,
            sigma_i_omega: 60.0,
            sample_length_scale: true,
            initial_length_scale: 50.0,
            initial_gamma: None,
            adapt: true,
            audit_interval: 0,
            checkpoint_interval: 0,
            prior_only: true,
        };
        let out = run_chain(
            &dataset,
            &knots,
            &prior,
            &tuning,
            2024,
            0,
            &ChainOptions::default(),
        )
        .unwrap();
        assert_eq!(out.records.len(), 20_000);
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let gammas: Vec<f64> = out.records.iter().map(|r| r.gamma).collect();
        let lengths: Vec<f64> = out.records.iter().map(|r| r.length_scale).collect();
        let neg_i: Vec<f64> = out.records.iter().map(|r| -r.i_omega).collect();
        // Exp(0.01) has mean 100; loose in-module bounds, the acceptance
        // suite runs the strict version.
        for (name, xs) in [("gamma", &gammas), ("length", &lengths), ("i", &neg_i)] {
            let m = mean(xs);
            assert!(
                (m - 100.0).abs() < 15.0,
                "{name} prior mean off: {m} (expected near 100)"
            );
            assert!(xs.iter().all(|&x| x > 0.0), "{name} left its support");
        }
    }

    #[test]
    fn latent_updates_keep_the_cached_likelihood_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tried = 0;
        let instance = loop {
            tried += 1;
            assert!(tried < 200);
            let inst = crate::validate::random_instance(6, 4, &mut rng);
            let ll = log_likelihood(&inst.state, &inst.rates, &inst.params, &inst.dist).unwrap();
            if ll.is_finite() {
                break inst;
            }
        };
        let mut state = instance.state.clone();
        let mut log_lik =
            log_likelihood(&state, &instance.rates, &instance.params, &instance.dist).unwrap();
        let ctx = LatentContext {
            rates: &instance.rates,
            params: &instance.params,
            dist: &instance.dist,
        };
        for _ in 0..5_000 {
            match rng.gen_range(0..3u8) {
                0 => move_update(&mut state, &mut log_lik, &ctx, &mut rng).unwrap(),
                1 => add_update(&mut state, &mut log_lik, &ctx, &mut rng).unwrap(),
                _ => delete_update(&mut state, &mut log_lik, &ctx, &mut rng).unwrap(),
            };
        }
        let fresh =
            log_likelihood(&state, &instance.rates, &instance.params, &instance.dist).unwrap();
        assert!(
            (fresh - log_lik).abs() < 1e-8,
            "cached {log_lik}, fresh {fresh}"
        );
        state.check_structure().unwrap();
    }

    fn small_observed_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let farms = random_layout(30, 6.0, None, &mut rng).unwrap();
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let rates = RateFunction::ExpDecay {
            scale: 0.8,
            decay: 2.0,
        };
        let params = InfectiousPeriodParams::new(4.0, 0.8).unwrap();
        let policy = CullingPolicy::simple_ring(1.0).unwrap();
        for attempt in 0..50 {
            let mut sim_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + attempt));
            let result =
                simulate_outbreak(&dataset, &rates, &params, 0, &policy, &mut sim_rng).unwrap();
            if result.infected_count() >= 4 && !result.preemptive_uninfected.is_empty() {
                let (observed, _) = export_observed(&result, &dataset).unwrap();
                return observed;
            }
        }
        panic!("no usable outbreak found");
    }

    fn smoke_tuning() -> TuningConfig {
        TuningConfig {
            iterations: 300,
            burn_in: 100,
            thinning: 4,
            moves_per_iteration: 5,
            g_updates_per_iteration: 1,
            delta: 0.3,
            sigma_length_scale: 0.5,
            sigma_gamma: 0.3,
            sigma_i_omega: 1.0,
            sample_length_scale: false,
            initial_length_scale: 2.0,
            initial_gamma: Some(1.0),
            adapt: true,
            audit_interval: 25,
            checkpoint_interval: 0,
            prior_only: false,
        }
    }

    #[test]
    fn chain_runs_on_a_simulated_outbreak() {
        let dataset = small_observed_dataset(31);
        let knots: Vec<f64> = (0..24).map(|i| i as f64 * 0.4).collect();
        let prior = PriorConfig {
            prior_rate: 0.01,
            alpha: 4.0,
            shape: 4.0,
        };
        let tuning = smoke_tuning();
        let dir = std::env::temp_dir().join(format!("chain-smoke-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let options = ChainOptions {
            trace_path: Some(dir.join("trace.jsonl")),
            checkpoint_path: None,
            resume: false,
        };
        let out = run_chain(&dataset, &knots, &prior, &tuning, 9, 0, &options).unwrap();
        assert_eq!(out.records.len(), 50);
        // Fixed length scale never moves.
        assert!(out.records.iter().all(|r| r.length_scale == 2.0));
        // Naturally culled farms stay infected in every retained sweep.
        let natural: Vec<usize> = dataset
            .farms()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.cull_time.is_finite() && !f.preemptive)
            .map(|(j, _)| j)
            .collect();
        for record in &out.records {
            for &j in &natural {
                assert!(record.infections.iter().any(|&(farm, _)| farm == j));
            }
            assert!(record.log_likelihood.is_finite());
            // Index time is the minimum infection time.
            let min_time = record
                .infections
                .iter()
                .map(|&(_, t)| t)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(record.i_omega, min_time);
        }
        // The streamed trace re-reads identically.
        let trace = read_trace(dir.join("trace.jsonl")).unwrap();
        assert_eq!(trace.records, out.records);
        assert_eq!(trace.header, out.header);
        // Sampler actually moved.
        assert!(out.acceptance.g.attempted == 300);
        assert!(out.acceptance.g.accepted > 0);
        assert!(out.acceptance.gamma.accepted > 0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resumed_run_matches_an_uninterrupted_one() {
        let dataset = small_observed_dataset(77);
        let knots: Vec<f64> = (0..16).map(|i| i as f64 * 0.6).collect();
        let prior = PriorConfig {
            prior_rate: 0.01,
            alpha: 4.0,
            shape: 4.0,
        };
        let mut tuning = smoke_tuning();
        tuning.iterations = 400;
        tuning.burn_in = 120;
        tuning.checkpoint_interval = 100;
        tuning.sample_length_scale = true;

        let dir = std::env::temp_dir().join(format!("chain-resume-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        // Uninterrupted reference.
        let straight_opts = ChainOptions {
            trace_path: Some(dir.join("straight.jsonl")),
            checkpoint_path: Some(dir.join("straight.ckpt")),
            resume: false,
        };
        let straight = run_chain(&dataset, &knots, &prior, &tuning, 55, 3, &straight_opts).unwrap();

        // Interrupted at 200 sweeps, then resumed to completion.
        let mut phase1 = tuning.clone();
        phase1.iterations = 200;
        phase1.burn_in = 120;
        let resumed_opts = ChainOptions {
            trace_path: Some(dir.join("resumed.jsonl")),
            checkpoint_path: Some(dir.join("resumed.ckpt")),
            resume: false,
        };
        run_chain(&dataset, &knots, &prior, &phase1, 55, 3, &resumed_opts).unwrap();
        let continue_opts = ChainOptions {
            resume: true,
            ..resumed_opts.clone()
        };
        let resumed = run_chain(&dataset, &knots, &prior, &tuning, 55, 3, &continue_opts).unwrap();

        assert_eq!(straight.records, resumed.records);
        let bytes_a = std::fs::read(dir.join("straight.jsonl")).unwrap();
        let bytes_b = std::fs::read(dir.join("resumed.jsonl")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn chains_with_different_streams_differ() {
        let dataset = small_observed_dataset(13);
        let knots: Vec<f64> = (0..16).map(|i| i as f64 * 0.6).collect();
        let prior = PriorConfig {
            prior_rate: 0.01,
            alpha: 4.0,
            shape: 4.0,
        };
        let tuning = smoke_tuning();
        let opts = ChainOptions::default();
        let a = run_chain(&dataset, &knots, &prior, &tuning, 21, 0, &opts).unwrap();
        let b = run_chain(&dataset, &knots, &prior, &tuning, 21, 1, &opts).unwrap();
        let c = run_chain(&dataset, &knots, &prior, &tuning, 21, 0, &opts).unwrap();
        assert_ne!(a.records, b.records);
        assert_eq!(a.records, c.records);
    }

    #[test]
    fn initialization_requires_natural_culls() {
        let farms = vec![
            FarmRecord {
                id: 1,
                x: 0.0,
                y: 0.0,
                cull_time: 2.0,
                preemptive: true,
                flock_type: None,
                flock_size: None,
            },
            FarmRecord {
                id: 2,
                x: 1.0,
                y: 0.0,
                cull_time: NEVER,
                preemptive: false,
                flock_type: None,
                flock_size: None,
            },
        ];
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let err = run_chain(
            &dataset,
            &[0.0, 1.0],
            &prior_config(),
            &TuningConfig::default(),
            1,
            0,
            &ChainOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("naturally culled"));
    }

    #[test]
    fn hopeless_initialization_names_the_remedy() {
        // Two natural culls 100 days apart with an enormous initial removal
        // rate: initial periods are tiny, the second farm can never overlap
        // the first, so every start has zero likelihood.
        let farms = vec![
            FarmRecord {
                id: 1,
                x: 0.0,
                y: 0.0,
                cull_time: 0.0,
                preemptive: false,
                flock_type: None,
                flock_size: None,
            },
            FarmRecord {
                id: 2,
                x: 0.5,
                y: 0.0,
                cull_time: 100.0,
                preemptive: false,
                flock_type: None,
                flock_size: None,
            },
        ];
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let tuning = TuningConfig {
            initial_gamma: Some(500.0),
            sample_length_scale: false,
            ..TuningConfig::default()
        };
        let err = run_chain(
            &dataset,
            &[0.0, 0.5, 1.0],
            &prior_config(),
            &tuning,
            1,
            0,
            &ChainOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("initial_gamma"));
    }

    #[test]
    fn add_and_delete_balance_on_a_toy_posterior() {
        // Two farms infected for sure (index + natural cull), one
        // pre-emptively culled farm whose infection status is latent.
        // Add/delete moves alone must visit both configurations.
        let state = AugmentedState {
            infection_time: vec![-2.0, 1.0, f64::INFINITY],
            natural_cull: vec![3.0, 4.0, f64::INFINITY],
            preemptive_cull: vec![f64::INFINITY, f64::INFINITY, 3.5],
            omega: 0,
        };
        let params = InfectiousPeriodParams::new(3.0, 0.9).unwrap();
        let beta = 0.4;
        let rates = RateFunction::Tabulated(
            TabulatedRates::new(3, vec![1.0, beta, beta, beta, 1.0, beta, beta, beta, 1.0])
                .unwrap(),
        );
        let dist = DistanceIndex::new(vec![(0.0, 0.0), (1.0, 0.0), (0.5, 0.5)]);
        let ctx = LatentContext {
            rates: &rates,
            params: &params,
            dist: &dist,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut state = state;
        let mut log_lik = log_likelihood(&state, &rates, &params, &dist).unwrap();
        let mut with_infection = 0u64;
        let total = 100_000u64;
        for _ in 0..total {
            if rng.gen::<bool>() {
                add_update(&mut state, &mut log_lik, &ctx, &mut rng).unwrap();
            } else {
                delete_update(&mut state, &mut log_lik, &ctx, &mut rng).unwrap();
            }
            if state.is_infected(2) {
                with_infection += 1;
            }
        }
        let fresh = log_likelihood(&state, &rates, &params, &dist).unwrap();
        assert!((fresh - log_lik).abs() < 1e-8);
        let frac = with_infection as f64 / total as f64;
        assert!(
            frac > 0.02 && frac < 0.98,
            "add/delete chain stuck: P(infected) = {frac}"
        );
    }
}
