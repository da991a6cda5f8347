//! Outbreak simulator: continuous-time spatial SIR with gamma-distributed
//! infectious periods and ring-culling control policies.
//!
//! Farms infect susceptible neighbours at pairwise rate beta(d_jk) while
//! infectious. A farm's infectious period ends with a natural cull, which
//! may trigger a ring cull of its neighbourhood. Pre-emptive (ring) culls
//! never trigger further culls.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DistanceIndex, FarmRecord, FlockType, TimeOrigin, NEVER};
use crate::error::{Error, Result};
use crate::likelihood::{AugmentedState, InfectiousPeriodParams};
use crate::rates::RateFunction;

/// Ring-culling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CullMode {
    /// No pre-emptive culling.
    None,
    /// Every farm within the ring is culled immediately.
    SimpleRing,
    /// Ring size and daily cull capacity depend on outbreak size.
    CappedRing,
}

/// One capacity row of a capped ring policy: applies while the cumulative
/// infection count is at most `infection_bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRow {
    pub infection_bound: u64,
    /// Farms cullable per calendar day under this row.
    pub daily_cap: u64,
    /// Multiplier on the base ring radius.
    pub radius_fraction: f64,
}

/// Ring-culling policy around each natural cull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CullingPolicy {
    pub mode: CullMode,
    /// Base ring radius, km.
    #[serde(default)]
    pub radius: f64,
    /// Capacity schedule; used only by `CappedRing`.
    #[serde(default)]
    pub thresholds: Vec<ThresholdRow>,
}

impl CullingPolicy {
    pub fn none() -> Self {
        CullingPolicy {
            mode: CullMode::None,
            radius: 0.0,
            thresholds: Vec::new(),
        }
    }

    pub fn simple_ring(radius: f64) -> Result<Self> {
        let policy = CullingPolicy {
            mode: CullMode::SimpleRing,
            radius,
            thresholds: Vec::new(),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn capped_ring(radius: f64, thresholds: Vec<ThresholdRow>) -> Result<Self> {
        let policy = CullingPolicy {
            mode: CullMode::CappedRing,
            radius,
            thresholds,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Escalating default schedule: no culling below 34 cumulative
    /// infections, 3 farms/day within half the ring up to 54, then 6
    /// farms/day over the full ring.
    pub fn default_thresholds() -> Vec<ThresholdRow> {
        vec![
            ThresholdRow {
                infection_bound: 33,
                daily_cap: 0,
                radius_fraction: 0.0,
            },
            ThresholdRow {
                infection_bound: 54,
                daily_cap: 3,
                radius_fraction: 0.5,
            },
            ThresholdRow {
                infection_bound: u64::MAX,
                daily_cap: 6,
                radius_fraction: 1.0,
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.radius.is_finite() || self.radius < 0.0 {
            return Err(Error::Config(format!(
                "ring radius must be finite and non-negative, got {}",
                self.radius
            )));
        }
        if self.mode == CullMode::CappedRing {
            if self.thresholds.is_empty() {
                return Err(Error::Config(
                    "capped ring policy needs at least one threshold row".into(),
                ));
            }
            for pair in self.thresholds.windows(2) {
                if pair[0].infection_bound >= pair[1].infection_bound {
                    return Err(Error::Config(
                        "threshold rows must have strictly increasing infection bounds".into(),
                    ));
                }
            }
            for row in &self.thresholds {
                if !(0.0..=1.0).contains(&row.radius_fraction) {
                    return Err(Error::Config(format!(
                        "radius fraction must lie in [0, 1], got {}",
                        row.radius_fraction
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row in force at `cumulative` infections: the first row whose bound
    /// covers the count, or the last row once all bounds are exceeded.
    fn active_row(&self, cumulative: u64) -> &ThresholdRow {
        self.thresholds
            .iter()
            .find(|row| cumulative <= row.infection_bound)
            .unwrap_or_else(|| self.thresholds.last().unwrap())
    }
}

/// What happened to a farm at an event time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// `source` is the infecting farm; the index case has none.
    Infection { source: Option<usize> },
    NaturalCull,
    /// Ring cull triggered by the natural cull at `center`.
    PreemptiveCull { center: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub farm: usize,
    pub kind: EventKind,
}

/// Complete realization of one simulated outbreak, including latent
/// infection times.
#[derive(Debug, Clone)]
pub struct OutbreakResult {
    pub omega: usize,
    /// Per farm; `NEVER` if never infected.
    pub infection_time: Vec<f64>,
    pub natural_cull_time: Vec<f64>,
    pub preemptive_cull_time: Vec<f64>,
    pub events: Vec<Event>,
    /// Never culled (set A).
    pub never_culled: Vec<usize>,
    /// Naturally culled (set B).
    pub natural: Vec<usize>,
    /// Pre-emptively culled while infected (set C).
    pub preemptive_infected: Vec<usize>,
    /// Pre-emptively culled while susceptible (set D).
    pub preemptive_uninfected: Vec<usize>,
}

impl OutbreakResult {
    pub fn infected_count(&self) -> usize {
        self.natural.len() + self.preemptive_infected.len()
    }

    pub fn culled_count(&self) -> usize {
        self.natural.len() + self.preemptive_infected.len() + self.preemptive_uninfected.len()
    }

    /// Ground-truth augmented state, e.g. for likelihood checks.
    pub fn to_augmented_state(&self) -> AugmentedState {
        AugmentedState {
            infection_time: self.infection_time.clone(),
            natural_cull: self.natural_cull_time.clone(),
            preemptive_cull: self.preemptive_cull_time.clone(),
            omega: self.omega,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Susceptible,
    Infectious,
    Removed,
}

struct Sim<'a> {
    dist: &'a DistanceIndex,
    rates: &'a RateFunction,
    policy: &'a CullingPolicy,
    status: Vec<Status>,
    infection_time: Vec<f64>,
    natural_cull_time: Vec<f64>,
    preemptive_cull_time: Vec<f64>,
    /// Scheduled natural removal per infectious farm.
    removal: Vec<f64>,
    /// Total infection pressure on each susceptible farm.
    hazard: Vec<f64>,
    events: Vec<Event>,
    cumulative_infections: u64,
    /// Pre-emptive culls already performed per calendar day (capped mode).
    culled_per_day: HashMap<i64, u64>,
}

impl<'a> Sim<'a> {
    fn new(
        dist: &'a DistanceIndex,
        rates: &'a RateFunction,
        policy: &'a CullingPolicy,
    ) -> Self {
        let n = dist.len();
        Sim {
            dist,
            rates,
            policy,
            status: vec![Status::Susceptible; n],
            infection_time: vec![NEVER; n],
            natural_cull_time: vec![NEVER; n],
            preemptive_cull_time: vec![NEVER; n],
            removal: vec![NEVER; n],
            hazard: vec![0.0; n],
            events: Vec::new(),
            cumulative_infections: 0,
            culled_per_day: HashMap::new(),
        }
    }

    fn infect(&mut self, farm: usize, time: f64, source: Option<usize>, period: f64) {
        self.status[farm] = Status::Infectious;
        self.infection_time[farm] = time;
        self.removal[farm] = time + period;
        self.cumulative_infections += 1;
        self.events.push(Event {
            time,
            farm,
            kind: EventKind::Infection { source },
        });
        for k in 0..self.status.len() {
            if self.status[k] == Status::Susceptible {
                self.hazard[k] += self.rates.beta(self.dist, farm, k);
            }
        }
    }

    fn drop_pressure_from(&mut self, farm: usize) {
        for k in 0..self.status.len() {
            if self.status[k] == Status::Susceptible {
                self.hazard[k] -= self.rates.beta(self.dist, farm, k);
            }
        }
    }

    fn cull_naturally(&mut self, farm: usize, time: f64) {
        self.status[farm] = Status::Removed;
        self.natural_cull_time[farm] = time;
        self.removal[farm] = NEVER;
        self.events.push(Event {
            time,
            farm,
            kind: EventKind::NaturalCull,
        });
        self.drop_pressure_from(farm);
    }

    fn cull_preemptively(&mut self, farm: usize, time: f64, center: usize) {
        if self.status[farm] == Status::Infectious {
            self.removal[farm] = NEVER;
            self.drop_pressure_from(farm);
        }
        self.status[farm] = Status::Removed;
        self.preemptive_cull_time[farm] = time;
        self.events.push(Event {
            time,
            farm,
            kind: EventKind::PreemptiveCull { center },
        });
    }

    /// Ring cull around `center` at `time`. A zero effective radius
    /// disables the ring entirely.
    fn ring_cull(&mut self, center: usize, time: f64) {
        let (effective_radius, cap) = match self.policy.mode {
            CullMode::None => return,
            CullMode::SimpleRing => (self.policy.radius, u64::MAX),
            CullMode::CappedRing => {
                let row = self.policy.active_row(self.cumulative_infections);
                let day = time.floor() as i64;
                let used = self.culled_per_day.get(&day).copied().unwrap_or(0);
                (
                    self.policy.radius * row.radius_fraction,
                    row.daily_cap.saturating_sub(used),
                )
            }
        };
        if effective_radius <= 0.0 || cap == 0 {
            return;
        }
        let mut candidates: Vec<(f64, usize)> = (0..self.status.len())
            .filter(|&k| k != center && self.status[k] != Status::Removed)
            .map(|k| (self.dist.get(center, k), k))
            .filter(|&(d, _)| d <= effective_radius)
            .collect();
        candidates.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let take = candidates.len().min(usize::try_from(cap).unwrap_or(usize::MAX));
        for &(_, k) in &candidates[..take] {
            self.cull_preemptively(k, time, center);
        }
        if self.policy.mode == CullMode::CappedRing && take > 0 {
            let day = time.floor() as i64;
            *self.culled_per_day.entry(day).or_insert(0) += take as u64;
        }
    }

    fn next_scheduled_removal(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.status.len() {
            if self.status[j] == Status::Infectious {
                let t = self.removal[j];
                if best.map_or(true, |(_, bt)| t < bt) {
                    best = Some((j, t));
                }
            }
        }
        best
    }

    fn total_hazard(&self) -> f64 {
        (0..self.status.len())
            .filter(|&k| self.status[k] == Status::Susceptible)
            .map(|k| self.hazard[k].max(0.0))
            .sum()
    }

    fn pick_target(&self, mut u: f64) -> Option<usize> {
        let mut fallback = None;
        for k in 0..self.status.len() {
            if self.status[k] != Status::Susceptible {
                continue;
            }
            let w = self.hazard[k].max(0.0);
            if w <= 0.0 {
                continue;
            }
            if u < w {
                return Some(k);
            }
            u -= w;
            fallback = Some(k);
        }
        fallback
    }

    fn pick_source(&self, target: usize, rng: &mut impl Rng) -> Option<usize> {
        let sources: Vec<usize> = (0..self.status.len())
            .filter(|&j| self.status[j] == Status::Infectious)
            .collect();
        let weights: Vec<f64> = sources
            .iter()
            .map(|&j| self.rates.beta(self.dist, j, target))
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return sources.last().copied();
        }
        let mut u = rng.gen::<f64>() * total;
        for (&j, &w) in sources.iter().zip(&weights) {
            if u < w {
                return Some(j);
            }
            u -= w;
        }
        sources.last().copied()
    }

    fn finish(self, omega: usize) -> OutbreakResult {
        let n = self.status.len();
        let mut never_culled = Vec::new();
        let mut natural = Vec::new();
        let mut preemptive_infected = Vec::new();
        let mut preemptive_uninfected = Vec::new();
        for j in 0..n {
            if self.natural_cull_time[j].is_finite() {
                natural.push(j);
            } else if self.preemptive_cull_time[j].is_finite() {
                if self.infection_time[j].is_finite() {
                    preemptive_infected.push(j);
                } else {
                    preemptive_uninfected.push(j);
                }
            } else {
                never_culled.push(j);
            }
        }
        OutbreakResult {
            omega,
            infection_time: self.infection_time,
            natural_cull_time: self.natural_cull_time,
            preemptive_cull_time: self.preemptive_cull_time,
            events: self.events,
            never_culled,
            natural,
            preemptive_infected,
            preemptive_uninfected,
        }
    }
}

/// Simulate one outbreak seeded by `omega` infected at time 0.
///
/// Any cull times already present on the dataset are ignored; only the farm
/// layout is used. Infectious periods are Gamma(shape, rate) draws.
pub fn simulate_outbreak(
    dataset: &Dataset,
    rates: &RateFunction,
    params: &InfectiousPeriodParams,
    omega: usize,
    policy: &CullingPolicy,
    rng: &mut impl Rng,
) -> Result<OutbreakResult> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Data("cannot simulate over an empty dataset".into()));
    }
    if omega >= n {
        return Err(Error::Data(format!(
            "index case {omega} outside 0..{n}"
        )));
    }
    policy.validate()?;
    let period_dist = Gamma::new(params.shape, 1.0 / params.rate)
        .map_err(|e| Error::Config(format!("invalid infectious-period parameters: {e}")))?;
    let dist = dataset.distance_index();
    let mut sim = Sim::new(&dist, rates, policy);

    let period: f64 = period_dist.sample(rng);
    sim.infect(omega, 0.0, None, period);
    let mut now = 0.0;

    loop {
        let Some((next_removal_farm, removal_time)) = sim.next_scheduled_removal() else {
            break;
        };
        let total = sim.total_hazard();
        let infection_time = if total > 0.0 {
            let wait: f64 = rng.sample(Exp1);
            now + wait / total
        } else {
            f64::INFINITY
        };
        if infection_time < removal_time {
            now = infection_time;
            let u = rng.gen::<f64>() * total;
            let target = sim
                .pick_target(u)
                .ok_or_else(|| Error::Numerical("positive hazard with no target".into()))?;
            let source = sim.pick_source(target, rng);
            let period: f64 = period_dist.sample(rng);
            sim.infect(target, now, source, period);
        } else {
            now = removal_time;
            sim.cull_naturally(next_removal_farm, now);
            sim.ring_cull(next_removal_farm, now);
        }
    }
    Ok(sim.finish(omega))
}

/// Per-bird compensation rates by flock type, currency units per bird.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensationTable {
    pub broiler: f64,
    pub duck: f64,
    pub turkey: f64,
    pub layer: f64,
}

impl Default for CompensationTable {
    fn default() -> Self {
        CompensationTable {
            broiler: 0.98,
            duck: 2.09,
            turkey: 10.63,
            layer: 2.05,
        }
    }
}

impl CompensationTable {
    pub fn rate(&self, flock_type: FlockType) -> f64 {
        match flock_type {
            FlockType::Broiler => self.broiler,
            FlockType::Duck => self.duck,
            FlockType::Turkey => self.turkey,
            FlockType::Layer => self.layer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("broiler", self.broiler),
            ("duck", self.duck),
            ("turkey", self.turkey),
            ("layer", self.layer),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "compensation rate for {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Total compensation paid for every culled farm (naturally or
/// pre-emptively). Errors listing the farms that lack flock data.
pub fn compensation_cost(
    result: &OutbreakResult,
    dataset: &Dataset,
    table: &CompensationTable,
) -> Result<f64> {
    table.validate()?;
    let mut missing = Vec::new();
    let mut total = 0.0;
    let culled = result
        .natural
        .iter()
        .chain(&result.preemptive_infected)
        .chain(&result.preemptive_uninfected);
    for &idx in culled {
        let farm = &dataset.farms()[idx];
        match (farm.flock_type, farm.flock_size) {
            (Some(flock_type), Some(size)) => {
                total += table.rate(flock_type) * size as f64;
            }
            _ => missing.push(farm.id),
        }
    }
    if missing.is_empty() {
        Ok(total)
    } else {
        missing.sort_unstable();
        Err(Error::Data(format!(
            "farms missing flock type or size for compensation: {missing:?}"
        )))
    }
}

/// Latent truth accompanying an exported observed dataset, on the exported
/// (re-anchored) time axis. Farms are keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub omega_id: u64,
    /// (farm id, infection time) for every infected farm.
    pub infections: Vec<(u64, f64)>,
    /// Amount subtracted from simulation times during re-anchoring.
    pub time_shift: f64,
    pub natural_ids: Vec<u64>,
    pub preemptive_infected_ids: Vec<u64>,
    pub preemptive_uninfected_ids: Vec<u64>,
    pub never_culled_ids: Vec<u64>,
}

impl GroundTruth {
    /// Sum of all true infection times; the scoring baseline.
    pub fn infection_time_sum(&self) -> f64 {
        self.infections.iter().map(|&(_, t)| t).sum()
    }
}

/// Convert a simulated outbreak into an observed dataset: cull times only,
/// re-anchored so the earliest natural cull is time 0, plus the matching
/// ground-truth sidecar on the same axis.
pub fn export_observed(
    result: &OutbreakResult,
    dataset: &Dataset,
) -> Result<(Dataset, GroundTruth)> {
    let shift = result
        .natural_cull_time
        .iter()
        .copied()
        .filter(|t| t.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(Error::Data(
            "outbreak has no natural culls; cannot anchor an observed dataset".into(),
        ));
    }
    let ids = |set: &[usize]| -> Vec<u64> { set.iter().map(|&j| dataset.farms()[j].id).collect() };
    let mut farms = Vec::with_capacity(dataset.len());
    for (j, farm) in dataset.farms().iter().enumerate() {
        let natural = result.natural_cull_time[j];
        let preemptive = result.preemptive_cull_time[j];
        let cull_time = if natural.is_finite() {
            natural - shift
        } else if preemptive.is_finite() {
            preemptive - shift
        } else {
            NEVER
        };
        farms.push(FarmRecord {
            id: farm.id,
            x: farm.x,
            y: farm.y,
            cull_time,
            preemptive: preemptive.is_finite(),
            flock_type: farm.flock_type,
            flock_size: farm.flock_size,
        });
    }
    let observed = Dataset::new(farms, TimeOrigin::Offset(shift))?;
    let mut infections: Vec<(u64, f64)> = result
        .infection_time
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_finite())
        .map(|(j, &t)| (dataset.farms()[j].id, t - shift))
        .collect();
    infections.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let truth = GroundTruth {
        omega_id: dataset.farms()[result.omega].id,
        infections,
        time_shift: shift,
        natural_ids: ids(&result.natural),
        preemptive_infected_ids: ids(&result.preemptive_infected),
        preemptive_uninfected_ids: ids(&result.preemptive_uninfected),
        never_culled_ids: ids(&result.never_culled),
    };
    Ok((observed, truth))
}

/// Uniform random farm layout on a `side` x `side` km square, ids 1..=count.
/// With `flock_sizes = Some((lo, hi))`, each farm gets a uniform flock type
/// and a uniform size in `[lo, hi]`; otherwise flock data is absent.
pub fn random_layout(
    count: usize,
    side: f64,
    flock_sizes: Option<(u64, u64)>,
    rng: &mut impl Rng,
) -> Result<Vec<FarmRecord>> {
    if count == 0 {
        return Err(Error::Config("layout needs at least one farm".into()));
    }
    if !side.is_finite() || side <= 0.0 {
        return Err(Error::Config(format!(
            "layout side must be positive, got {side}"
        )));
    }
    if let Some((lo, hi)) = flock_sizes {
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "flock size range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
    }
    const TYPES: [FlockType; 4] = [
        FlockType::Broiler,
        FlockType::Duck,
        FlockType::Turkey,
        FlockType::Layer,
    ];
    let mut farms = Vec::with_capacity(count);
    for i in 0..count {
        let x = rng.gen::<f64>() * side;
        let y = rng.gen::<f64>() * side;
        let (flock_type, flock_size) = match flock_sizes {
            Some((lo, hi)) => (
                Some(TYPES[rng.gen_range(0..TYPES.len())]),
                Some(rng.gen_range(lo..=hi)),
            ),
            None => (None, None),
        };
        farms.push(FarmRecord {
            id: (i + 1) as u64,
            x,
            y,
            cull_time: NEVER,
            preemptive: false,
            flock_type,
            flock_size,
        });
    }
    Ok(farms)
}
