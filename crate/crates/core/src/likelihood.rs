//! Augmented log-likelihood of the outbreak model: infectious-pressure
//! integral, per-infection hazards, and gamma infectious-period terms, with
//! both a full evaluator and a single-farm delta evaluator.
//!
//! Farms split into A (never culled), B (culled on infection grounds),
//! C (pre-emptively culled while infected), and D (pre-emptively culled
//! uninfected); C/D membership is latent. The likelihood is zero (log -inf)
//! for impossible-but-well-formed states; malformed states are errors.

use crate::data::{DistanceIndex, NEVER};
use crate::error::{Error, Result};
use crate::rates::RateFunction;

use statrs::function::gamma::{gamma_ur, ln_gamma};

/// Latent augmentation: infection times plus the initial case.
///
/// A pre-emptively culled farm is in C exactly when its infection time is
/// finite, so C/D membership is carried by the time vector itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    /// Infection time per farm; `NEVER` if never infected.
    pub infection_time: Vec<f64>,
    /// Culling time on infection grounds; `NEVER` if none.
    pub natural_cull: Vec<f64>,
    /// Pre-emptive culling time; `NEVER` if none.
    pub preemptive_cull: Vec<f64>,
    /// Index of the initial case.
    pub omega: usize,
}

impl AugmentedState {
    pub fn n(&self) -> usize {
        self.infection_time.len()
    }

    /// Effective removal: the earlier of the two culling events.
    #[inline]
    pub fn removal(&self, j: usize) -> f64 {
        self.natural_cull[j].min(self.preemptive_cull[j])
    }

    #[inline]
    pub fn is_infected(&self, j: usize) -> bool {
        self.infection_time[j].is_finite()
    }

    #[inline]
    pub fn in_b(&self, j: usize) -> bool {
        self.natural_cull[j].is_finite()
    }

    #[inline]
    pub fn in_c(&self, j: usize) -> bool {
        self.preemptive_cull[j].is_finite() && self.is_infected(j)
    }

    #[inline]
    pub fn in_d(&self, j: usize) -> bool {
        self.preemptive_cull[j].is_finite() && !self.is_infected(j)
    }

    pub fn infected_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.is_infected(j)).collect()
    }

    /// Number of infected pre-emptively culled farms.
    pub fn c_count(&self) -> usize {
        (0..self.n()).filter(|&j| self.in_c(j)).count()
    }

    /// Structural validity: errors describe corrupted states, never states
    /// that are merely impossible under the model.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.n();
        if self.natural_cull.len() != n || self.preemptive_cull.len() != n {
            return Err(Error::Data("state vectors have mismatched lengths".into()));
        }
        if self.omega >= n {
            return Err(Error::Data(format!("initial case {} outside 0..{n}", self.omega)));
        }
        if !self.is_infected(self.omega) {
            return Err(Error::Data("initial case is not infected".into()));
        }
        let i_omega = self.infection_time[self.omega];
        for j in 0..n {
            let i = self.infection_time[j];
            let rc = self.natural_cull[j];
            let rp = self.preemptive_cull[j];
            if i.is_nan() || rc.is_nan() || rp.is_nan() {
                return Err(Error::Data(format!("farm {j} has NaN times")));
            }
            if rc.is_finite() && rp.is_finite() {
                return Err(Error::Data(format!("farm {j} has two removal events")));
            }
            if rc.is_finite() && !i.is_finite() {
                return Err(Error::Data(format!(
                    "farm {j} culled on infection grounds but never infected"
                )));
            }
            if i.is_finite() {
                let r = self.removal(j);
                if !r.is_finite() {
                    return Err(Error::Data(format!("farm {j} infected but never removed")));
                }
                if i > r {
                    return Err(Error::Data(format!(
                        "farm {j} infected at {i} after its removal at {r}"
                    )));
                }
                if i < i_omega {
                    return Err(Error::Data(format!(
                        "farm {j} infected at {i}, before the initial case at {i_omega}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gamma infectious-period parameters in shape-rate form; mean shape/rate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InfectiousPeriodParams {
    pub shape: f64,
    pub rate: f64,
}

impl InfectiousPeriodParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::Config(format!("gamma shape must be positive, got {shape}")));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Config(format!("gamma rate must be positive, got {rate}")));
        }
        Ok(InfectiousPeriodParams { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Gamma density at `x`; errors on negative `x`.
pub fn gamma_pdf(x: f64, params: &InfectiousPeriodParams) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Numerical(format!("gamma density needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(match params.shape {
            s if s > 1.0 => 0.0,
            s if s == 1.0 => params.rate,
            _ => f64::INFINITY,
        });
    }
    Ok(log_gamma_pdf(x, params).exp())
}

/// Upper-tail probability S(x); errors on negative `x`.
pub fn gamma_survivor(x: f64, params: &InfectiousPeriodParams) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Numerical(format!("gamma survivor needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_ur(params.shape, params.rate * x))
}

/// log gamma density; -inf for x <= 0.
#[inline]
pub fn log_gamma_pdf(x: f64, params: &InfectiousPeriodParams) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    params.shape * params.rate.ln() + (params.shape - 1.0) * x.ln()
        - params.rate * x
        - ln_gamma(params.shape)
}

/// log upper-tail probability; -inf when the tail underflows.
#[inline]
pub fn log_gamma_survivor(x: f64, params: &InfectiousPeriodParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_ur(params.shape, params.rate * x).ln()
}

/// Exposure integral between an infector and a target farm: beta times the
/// overlap of the infector's infectious window with the target's
/// susceptibility, anchored at the target's infection time (or removal time
/// for farms in D).
#[inline]
pub fn avoidance_exponent(
    beta_d: f64,
    infector_infection: f64,
    infector_removal: f64,
    target_infection: f64,
    target_removal: f64,
    target_in_d: bool,
) -> Result<f64> {
    if !(beta_d >= 0.0) {
        return Err(Error::Numerical(format!("rate must be non-negative, got {beta_d}")));
    }
    if !infector_infection.is_finite() || !infector_removal.is_finite() {
        return Err(Error::Data("infector times must be finite".into()));
    }
    let anchor = if target_in_d {
        target_removal
    } else {
        target_infection
    };
    let delta = infector_removal.min(anchor) - infector_infection.min(anchor);
    if delta < 0.0 || delta.is_nan() {
        return Err(Error::Data(format!(
            "negative exposure window {delta}: corrupted state"
        )));
    }
    Ok(beta_d * delta)
}

#[inline]
fn exposure_window(i_j: f64, r_j: f64, anchor: f64) -> f64 {
    r_j.min(anchor) - i_j.min(anchor)
}

/// Target-side anchor time for farm `k`: infection time for A/B/C farms
/// (+inf for A), removal time for D farms.
#[inline]
fn target_anchor(state: &AugmentedState, k: usize) -> f64 {
    if state.in_d(k) {
        state.removal(k)
    } else {
        state.infection_time[k]
    }
}

/// The infectious-pressure sum over all infector/target pairs (self-pairs
/// excluded).
pub fn total_pressure(
    state: &AugmentedState,
    rates: &RateFunction,
    dist: &DistanceIndex,
) -> Result<f64> {
    state.check_structure()?;
    let n = state.n();
    let mut psi = 0.0;
    for j in 0..n {
        if !state.is_infected(j) {
            continue;
        }
        let i_j = state.infection_time[j];
        let r_j = state.removal(j);
        for k in 0..n {
            if k == j {
                continue;
            }
            let delta = exposure_window(i_j, r_j, target_anchor(state, k));
            if delta < 0.0 || delta.is_nan() {
                return Err(Error::Data(format!(
                    "negative exposure window for pair ({j}, {k})"
                )));
            }
            if delta > 0.0 {
                psi += rates.beta(dist, j, k) * delta;
            }
        }
    }
    Ok(psi)
}

/// Overall hazard on farm `j` at its infection moment: the summed rates of
/// farms infectious at that instant. Zero means the infection is impossible
/// under the current state.
pub fn hazard_at_infection(
    state: &AugmentedState,
    rates: &RateFunction,
    dist: &DistanceIndex,
    j: usize,
) -> Result<f64> {
    if j == state.omega {
        return Err(Error::Data(
            "the initial case has no infection-hazard contribution".into(),
        ));
    }
    if !state.is_infected(j) {
        return Err(Error::Data(format!("farm {j} is not infected")));
    }
    let i_j = state.infection_time[j];
    let mut phi = 0.0;
    for k in 0..state.n() {
        if k == j {
            continue;
        }
        if state.infection_time[k] < i_j && i_j < state.removal(k) {
            phi += rates.beta(dist, k, j);
        }
    }
    Ok(phi)
}

/// Sum of the infectious-period terms: log density over B, log survivor
/// over C. -inf when any period is non-positive.
pub fn gamma_term_sum(state: &AugmentedState, params: &InfectiousPeriodParams) -> f64 {
    let mut total = 0.0;
    for j in 0..state.n() {
        if !state.is_infected(j) {
            continue;
        }
        let period = state.removal(j) - state.infection_time[j];
        if period <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += if state.in_b(j) {
            log_gamma_pdf(period, params)
        } else {
            log_gamma_survivor(period, params)
        };
    }
    total
}

/// Full augmented log-likelihood; Ok(-inf) marks a zero-density state,
/// errors mark corrupted ones.
pub fn log_likelihood(
    state: &AugmentedState,
    rates: &RateFunction,
    params: &InfectiousPeriodParams,
    dist: &DistanceIndex,
) -> Result<f64> {
    state.check_structure()?;
    if dist.len() != state.n() {
        return Err(Error::Data(format!(
            "distance index covers {} farms, state has {}",
            dist.len(),
            state.n()
        )));
    }

    let gamma_terms = gamma_term_sum(state, params);
    if gamma_terms == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }

    let mut hazard_terms = 0.0;
    for j in 0..state.n() {
        if j == state.omega || !state.is_infected(j) {
            continue;
        }
        let phi = hazard_at_infection(state, rates, dist, j)?;
        if phi == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        hazard_terms += phi.ln();
    }

    let total = gamma_terms + hazard_terms - total_pressure(state, rates, dist)?;
    if total.is_nan() {
        return Err(Error::Numerical("log-likelihood evaluated to NaN".into()));
    }
    Ok(total)
}

/// Change in log-likelihood from setting farm `farm`'s infection time to
/// `new_time` (possibly `NEVER`), touching only terms involving that farm.
/// The current state must have finite log-likelihood.
pub fn log_likelihood_delta(
    state: &AugmentedState,
    rates: &RateFunction,
    params: &InfectiousPeriodParams,
    dist: &DistanceIndex,
    farm: usize,
    new_time: f64,
) -> Result<f64> {
    let n = state.n();
    if farm >= n {
        return Err(Error::Data(format!("farm {farm} outside 0..{n}")));
    }
    let old_time = state.infection_time[farm];
    if new_time.is_nan() {
        return Err(Error::Data("proposed infection time is NaN".into()));
    }
    if new_time == old_time {
        return Ok(0.0);
    }
    let r_farm = state.removal(farm);
    if farm == state.omega {
        if !new_time.is_finite() {
            return Err(Error::Data("the initial case must stay infected".into()));
        }
        let min_other = (0..n)
            .filter(|&j| j != farm && state.is_infected(j))
            .map(|j| state.infection_time[j])
            .fold(f64::INFINITY, f64::min);
        if new_time > min_other {
            return Err(Error::Data(format!(
                "initial-case time {new_time} would follow another infection at {min_other}"
            )));
        }
    } else {
        if new_time.is_finite() && new_time < state.infection_time[state.omega] {
            return Err(Error::Data(format!(
                "farm {farm} proposed before the initial case"
            )));
        }
        if !new_time.is_finite() && state.in_b(farm) {
            return Err(Error::Data(format!(
                "farm {farm} was culled on infection grounds and must stay infected"
            )));
        }
    }
    if new_time.is_finite() {
        if !r_farm.is_finite() {
            return Err(Error::Data(format!(
                "farm {farm} has no removal and cannot be infected"
            )));
        }
        if new_time > r_farm {
            return Err(Error::Data(format!(
                "farm {farm} proposed infection at {new_time} after removal at {r_farm}"
            )));
        }
    }

    // Infectious-period term for the farm itself.
    let own_gamma = |time: f64| -> f64 {
        if !time.is_finite() {
            return 0.0;
        }
        let period = r_farm - time;
        if period <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if state.in_b(farm) {
            log_gamma_pdf(period, params)
        } else {
            log_gamma_survivor(period, params)
        }
    };
    let gamma_delta = own_gamma(new_time) - own_gamma(old_time);
    // own_gamma(old) is finite because the current state is.

    // Pressure, farm as infector: its entire row under old and new times.
    let infector_row = |time: f64| -> Result<f64> {
        if !time.is_finite() {
            return Ok(0.0);
        }
        let mut row = 0.0;
        for k in 0..n {
            if k == farm {
                continue;
            }
            // Targets keep their current status; only the farm's time moves.
            let anchor = target_anchor(state, k);
            let delta = exposure_window(time, r_farm, anchor);
            if delta < 0.0 {
                return Err(Error::Data(format!(
                    "negative exposure window for pair ({farm}, {k})"
                )));
            }
            if delta > 0.0 {
                row += rates.beta(dist, farm, k) * delta;
            }
        }
        Ok(row)
    };
    let mut pressure_delta = infector_row(new_time)? - infector_row(old_time)?;

    // Pressure, farm as target: its anchor shifts for every infector.
    let anchor_of = |time: f64| -> f64 {
        if time.is_finite() {
            time
        } else {
            // Uninfected: preemptively culled farms anchor at removal (D),
            // never-culled ones at +inf (A).
            if state.preemptive_cull[farm].is_finite() {
                state.preemptive_cull[farm]
            } else {
                NEVER
            }
        }
    };
    let old_anchor = anchor_of(old_time);
    let new_anchor = anchor_of(new_time);
    if old_anchor != new_anchor {
        for m in 0..n {
            if m == farm || !state.is_infected(m) {
                continue;
            }
            let i_m = state.infection_time[m];
            let r_m = state.removal(m);
            let change =
                exposure_window(i_m, r_m, new_anchor) - exposure_window(i_m, r_m, old_anchor);
            if change != 0.0 {
                pressure_delta += rates.beta(dist, m, farm) * change;
            }
        }
    }

    // Hazard terms: the farm's own, plus any farm whose infectious set
    // gains or loses this farm.
    let mut hazard_delta = 0.0;
    let phi_excluding_farm = |m: usize, at: f64| -> f64 {
        let mut phi = 0.0;
        for k in 0..n {
            if k == m || k == farm {
                continue;
            }
            if state.infection_time[k] < at && at < state.removal(k) {
                phi += rates.beta(dist, k, m);
            }
        }
        phi
    };
    if farm != state.omega {
        if old_time.is_finite() {
            let phi_old = phi_excluding_farm(farm, old_time);
            if phi_old == 0.0 {
                return Err(Error::Data(
                    "current state has a zero hazard; delta undefined".into(),
                ));
            }
            hazard_delta -= phi_old.ln();
        }
        if new_time.is_finite() {
            hazard_delta += phi_excluding_farm(farm, new_time).ln();
        }
    }
    for m in 0..n {
        if m == farm || m == state.omega || !state.is_infected(m) {
            continue;
        }
        let i_m = state.infection_time[m];
        let in_old = old_time < i_m && i_m < r_farm;
        let in_new = new_time < i_m && i_m < r_farm;
        if in_old == in_new {
            continue;
        }
        let beta = rates.beta(dist, farm, m);
        let phi_rest = phi_excluding_farm(m, i_m);
        let phi_old = if in_old { phi_rest + beta } else { phi_rest };
        let phi_new = if in_new { phi_rest + beta } else { phi_rest };
        if phi_old == 0.0 {
            return Err(Error::Data(
                "current state has a zero hazard; delta undefined".into(),
            ));
        }
        hazard_delta += phi_new.ln() - phi_old.ln();
    }

    let delta = gamma_delta + hazard_delta - pressure_delta;
    if delta.is_nan() {
        return Err(Error::Numerical("likelihood delta evaluated to NaN".into()));
    }
    Ok(delta)
}
