//! Trace summarization and posterior-predictive strategy evaluation.
//!
//! All quantiles use the type-1 (lower-value) convention: the q-th quantile
//! of n sorted values is the element at index ceil(q * n) - 1. This makes
//! every summary an exact order statistic, so independent sort-based
//! oracles match bit for bit.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, DistanceIndex};
use crate::error::{Error, Result};
use crate::gp::{JitterPolicy, KernelParams, Projector};
use crate::likelihood::InfectiousPeriodParams;
use crate::rates::{RateFunction, TabulatedRates};
use crate::sim::{compensation_cost, simulate_outbreak, CompensationTable, CullingPolicy};
use crate::trace::ChainTrace;

/// Type-1 quantile of an ascending-sorted slice.
pub fn type1_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let n = sorted.len();
    let idx = (p * n as f64).ceil() as usize;
    sorted[idx.saturating_sub(1).min(n - 1)]
}

/// Type-1 quantiles of an unsorted slice at the given levels.
pub fn quantiles_of(values: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Posterior("no samples to summarize".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Posterior("samples contain NaN".into()));
    }
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Posterior(format!(
                "quantile level {p} outside [0, 1]"
            )));
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(probs.iter().map(|&p| type1_quantile(&sorted, p)).collect())
}

/// Median and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileTriple {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

fn triple(values: &[f64]) -> Result<QuantileTriple> {
    let qs = quantiles_of(values, &[0.025, 0.5, 0.975])?;
    Ok(QuantileTriple {
        lower: qs[0],
        median: qs[1],
        upper: qs[2],
    })
}

/// Pointwise posterior summary of the infection-rate function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    pub distances: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Builds projectors on demand, re-using them across sweeps that share a
/// length scale (a fixed-scale trace needs exactly one).
struct ProjectorCache<'a> {
    targets: &'a [f64],
    knots: &'a [f64],
    policy: JitterPolicy,
    built: HashMap<u64, Arc<Projector>>,
}

impl<'a> ProjectorCache<'a> {
    fn new(targets: &'a [f64], knots: &'a [f64]) -> Self {
        ProjectorCache {
            targets,
            knots,
            policy: JitterPolicy::default(),
            built: HashMap::new(),
        }
    }

    fn get(&mut self, length_scale: f64) -> Result<Arc<Projector>> {
        let key = length_scale.to_bits();
        if let Some(p) = self.built.get(&key) {
            return Ok(p.clone());
        }
        let params = KernelParams::new(1.0, length_scale)?;
        let projector = Arc::new(Projector::new(
            self.targets,
            self.knots,
            &params,
            &self.policy,
        )?);
        self.built.insert(key, projector.clone());
        Ok(projector)
    }
}

/// Pointwise quantiles of exp{g(d)} over the retained sweeps.
pub fn summarize_curve(trace: &ChainTrace, distances: &[f64]) -> Result<CurveSummary> {
    if trace.records.is_empty() {
        return Err(Error::Posterior("trace holds no retained sweeps".into()));
    }
    if distances.is_empty() {
        return Err(Error::Posterior("no query distances given".into()));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Posterior(
            "query distances must be finite and nonnegative".into(),
        ));
    }
    let mut cache = ProjectorCache::new(distances, &trace.header.knots);
    let mut per_point: Vec<Vec<f64>> = vec![Vec::with_capacity(trace.records.len()); distances.len()];
    let mut buffer = DVector::zeros(distances.len());
    for record in &trace.records {
        let projector = cache.get(record.length_scale)?;
        let g_bar = DVector::from_column_slice(&record.g_bar);
        projector.project_into(&g_bar, &mut buffer)?;
        for (point, value) in per_point.iter_mut().zip(buffer.iter()) {
            point.push(value.exp());
        }
    }
    let mut lower = Vec::with_capacity(distances.len());
    let mut median = Vec::with_capacity(distances.len());
    let mut upper = Vec::with_capacity(distances.len());
    for point in &per_point {
        let t = triple(point)?;
        lower.push(t.lower);
        median.push(t.median);
        upper.push(t.upper);
    }
    Ok(CurveSummary {
        distances: distances.to_vec(),
        lower,
        median,
        upper,
    })
}

/// For each pre-emptively culled farm, the fraction of retained sweeps in
/// which it carries an infection time. Keyed by farm id.
pub fn infection_probabilities(trace: &ChainTrace, dataset: &Dataset) -> Result<Vec<(u64, f64)>> {
    if trace.records.is_empty() {
        return Err(Error::Posterior("trace holds no retained sweeps".into()));
    }
    if trace.header.n_farms != dataset.len() {
        return Err(Error::Posterior(format!(
            "trace covers {} farms, dataset has {}",
            trace.header.n_farms,
            dataset.len()
        )));
    }
    let preemptive: Vec<usize> = dataset
        .farms()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.cull_time.is_finite() && f.preemptive)
        .map(|(j, _)| j)
        .collect();
    let mut counts = vec![0u64; preemptive.len()];
    for record in &trace.records {
        for (slot, &j) in preemptive.iter().enumerate() {
            if record.c_members.binary_search(&j).is_ok() {
                counts[slot] += 1;
            }
        }
    }
    let total = trace.records.len() as f64;
    Ok(preemptive
        .iter()
        .zip(&counts)
        .map(|(&j, &c)| (dataset.farms()[j].id, c as f64 / total))
        .collect())
}

/// Relative percentage error in the summed infection times: positive when
/// the posterior places infections later (smaller sum) than the truth.
pub fn i_tilde(ground_truth_sum: f64, trace: &ChainTrace) -> Result<f64> {
    if trace.records.is_empty() {
        return Err(Error::Posterior("trace holds no retained sweeps".into()));
    }
    if !ground_truth_sum.is_finite() || ground_truth_sum == 0.0 {
        return Err(Error::Posterior(format!(
            "ground-truth infection-time sum must be finite and nonzero, got {ground_truth_sum}"
        )));
    }
    let sums: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.infection_time_sum())
        .collect();
    let estimate = quantiles_of(&sums, &[0.5])?[0];
    Ok((ground_truth_sum - estimate) / ground_truth_sum * 100.0)
}

/// Quantiles of the mean infectious period shape/gamma over the trace.
pub fn mean_infectious_period(trace: &ChainTrace) -> Result<QuantileTriple> {
    if trace.records.is_empty() {
        return Err(Error::Posterior("trace holds no retained sweeps".into()));
    }
    let shape = trace.header.shape;
    let means: Vec<f64> = trace.records.iter().map(|r| shape / r.gamma).collect();
    triple(&means)
}

/// Predictive distribution of outbreak burden under one culling policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyPrediction {
    pub policy: CullingPolicy,
    pub infected: QuantileTriple,
    pub culled: QuantileTriple,
    pub compensation: QuantileTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveSummary {
    pub rows: Vec<PolicyPrediction>,
    /// Retained posterior draws used.
    pub draws: usize,
    /// Outbreak replicates per draw and policy.
    pub replicates: u32,
}

/// Upper limit on held cross-covariance entries; larger projections stream
/// in chunks instead.
const HELD_PROJECTION_ENTRIES: usize = 8_000_000;

fn pair_distances(dist: &DistanceIndex) -> Vec<f64> {
    let n = dist.len();
    let mut flat = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..n {
        for k in (j + 1)..n {
            flat.push(dist.get(j, k));
        }
    }
    flat
}

/// Project the grid field onto every pairwise distance and exponentiate,
/// returning a full symmetric rate table (diagonal set to a positive
/// placeholder; it is never queried).
fn dense_rate_table(
    n: usize,
    dist_flat: &[f64],
    knots: &[f64],
    g_bar: &[f64],
    length_scale: f64,
    shared: Option<&(u64, Arc<Projector>)>,
) -> Result<TabulatedRates> {
    let policy = JitterPolicy::default();
    let g = DVector::from_column_slice(g_bar);
    let mut projected = vec![0.0; dist_flat.len()];
    match shared {
        Some((bits, projector)) if *bits == length_scale.to_bits() => {
            let out = projector.project(&g)?;
            projected.copy_from_slice(out.as_slice());
        }
        _ => {
            let params = KernelParams::new(1.0, length_scale)?;
            let chunk = (HELD_PROJECTION_ENTRIES / knots.len().max(1)).max(1);
            let mut start = 0;
            while start < dist_flat.len() {
                let end = (start + chunk).min(dist_flat.len());
                let projector = Projector::new(&dist_flat[start..end], knots, &params, &policy)?;
                let out = projector.project(&g)?;
                projected[start..end].copy_from_slice(out.as_slice());
                start = end;
            }
        }
    }
    let mut beta = vec![1.0; n * n];
    let mut idx = 0;
    for j in 0..n {
        for k in (j + 1)..n {
            let rate = projected[idx].exp();
            beta[j * n + k] = rate;
            beta[k * n + j] = rate;
            idx += 1;
        }
    }
    TabulatedRates::new(n, beta)
}

/// Evaluate culling policies under the posterior predictive distribution.
///
/// Each retained sweep contributes its (rate field, removal rate) pair; the
/// index case is pinned to the first-culled farm. Replicates get their own
/// RNG streams indexed by (draw, policy, replicate), so results do not
/// depend on thread scheduling.
pub fn posterior_predictive(
    trace: &ChainTrace,
    dataset: &Dataset,
    policies: &[CullingPolicy],
    compensation: &CompensationTable,
    replicates: u32,
    seed: u64,
) -> Result<PredictiveSummary> {
    if trace.records.is_empty() {
        return Err(Error::Posterior("trace holds no retained sweeps".into()));
    }
    if trace.header.n_farms != dataset.len() {
        return Err(Error::Posterior(format!(
            "trace covers {} farms, dataset has {}",
            trace.header.n_farms,
            dataset.len()
        )));
    }
    if policies.is_empty() {
        return Err(Error::Posterior("no culling policies given".into()));
    }
    for policy in policies {
        policy.validate()?;
    }
    if replicates == 0 {
        return Err(Error::Posterior("replicates must be at least 1".into()));
    }
    compensation.validate()?;
    let missing: Vec<u64> = dataset
        .farms()
        .iter()
        .filter(|f| f.flock_type.is_none() || f.flock_size.is_none())
        .map(|f| f.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Posterior(format!(
            "compensation needs flock type and size; missing for farms {missing:?}"
        )));
    }
    let omega = dataset
        .farms()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.cull_time.is_finite())
        .min_by(|(ja, fa), (jb, fb)| {
            (fa.cull_time, *ja).partial_cmp(&(fb.cull_time, *jb)).unwrap()
        })
        .map(|(j, _)| j)
        .ok_or_else(|| Error::Posterior("dataset has no culled farm to seed from".into()))?;

    let dist = dataset.distance_index();
    let dist_flat = pair_distances(&dist);
    let knots = &trace.header.knots;
    let shape = trace.header.shape;

    // A fixed-length-scale run shares one projector across all draws when
    // it fits in memory.
    let shared: Option<(u64, Arc<Projector>)> = match trace.header.fixed_length_scale {
        Some(l) if dist_flat.len().saturating_mul(knots.len()) <= HELD_PROJECTION_ENTRIES => {
            let params = KernelParams::new(1.0, l)?;
            let projector = Projector::new(&dist_flat, knots, &params, &JitterPolicy::default())?;
            Some((l.to_bits(), Arc::new(projector)))
        }
        _ => None,
    };

    let n_policies = policies.len() as u64;
    let reps = replicates as u64;
    let outcomes: Result<Vec<Vec<(u64, u64, f64)>>> = trace
        .records
        .par_iter()
        .enumerate()
        .map(|(draw_idx, record)| {
            let rates = RateFunction::Tabulated(dense_rate_table(
                dataset.len(),
                &dist_flat,
                knots,
                &record.g_bar,
                record.length_scale,
                shared.as_ref(),
            )?);
            let params = InfectiousPeriodParams::new(shape, record.gamma)?;
            let mut local = Vec::with_capacity(policies.len() * replicates as usize);
            for (policy_idx, policy) in policies.iter().enumerate() {
                for rep in 0..reps {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(
                        (draw_idx as u64 * n_policies + policy_idx as u64) * reps + rep,
                    );
                    let result =
                        simulate_outbreak(dataset, &rates, &params, omega, policy, &mut rng)?;
                    let cost = compensation_cost(&result, dataset, compensation)?;
                    local.push((
                        result.infected_count() as u64,
                        result.culled_count() as u64,
                        cost,
                    ));
                }
            }
            Ok(local)
        })
        .collect();
    let outcomes = outcomes?;

    let pool_size = trace.records.len() * replicates as usize;
    let mut rows = Vec::with_capacity(policies.len());
    for (policy_idx, policy) in policies.iter().enumerate() {
        let mut infected = Vec::with_capacity(pool_size);
        let mut culled = Vec::with_capacity(pool_size);
        let mut cost = Vec::with_capacity(pool_size);
        for per_draw in &outcomes {
            let start = policy_idx * replicates as usize;
            for &(i, c, e) in &per_draw[start..start + replicates as usize] {
                infected.push(i as f64);
                culled.push(c as f64);
                cost.push(e);
            }
        }
        rows.push(PolicyPrediction {
            policy: policy.clone(),
            infected: triple(&infected)?,
            culled: triple(&culled)?,
            compensation: triple(&cost)?,
        });
    }
    Ok(PredictiveSummary {
        rows,
        draws: trace.records.len(),
        replicates,
    })
}

/// Integrated autocorrelation time by Geyer's initial positive sequence:
/// 1 + 2 sum of consecutive-pair autocorrelation sums while positive.
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 1.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return f64::INFINITY;
    }
    let acf = |lag: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..n - lag {
            s += (xs[t] - mean) * (xs[t + lag] - mean);
        }
        s / n as f64 / var
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FarmRecord, FlockType, TimeOrigin, NEVER};
    use crate::trace::{TraceHeader, TraceRecord, TRACE_SCHEMA_VERSION};

    fn header(n_farms: usize, knots: Vec<f64>) -> TraceHeader {
        TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            n_farms,
            knots,
            alpha: 1.0,
            shape: 4.0,
            prior_rate: 0.01,
            seed: 1,
            chain: 0,
            fixed_length_scale: Some(2.0),
        }
    }

    fn record(sweep: u64, g_bar: Vec<f64>, gamma: f64) -> TraceRecord {
        TraceRecord {
            sweep,
            g_bar,
            length_scale: 2.0,
            gamma,
            omega: 0,
            i_omega: -1.0,
            log_likelihood: -10.0,
            infections: vec![(0, -1.0)],
            c_members: vec![],
        }
    }

    #[test]
    fn type1_quantiles_are_order_statistics() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(type1_quantile(&sorted, 0.0), 1.0);
        assert_eq!(type1_quantile(&sorted, 0.2), 1.0);
        assert_eq!(type1_quantile(&sorted, 0.2000001), 2.0);
        assert_eq!(type1_quantile(&sorted, 0.5), 3.0);
        assert_eq!(type1_quantile(&sorted, 1.0), 5.0);
        // Even count: the median is the lower middle value.
        let even = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(type1_quantile(&even, 0.5), 2.0);
    }

    #[test]
    fn constant_curve_summarizes_to_a_point() {
        let knots = vec![0.0, 1.0, 2.0];
        let mut trace = ChainTrace {
            header: header(1, knots.clone()),
            records: Vec::new(),
        };
        for s in 0..10 {
            trace.records.push(record(s, vec![0.7, 0.7, 0.7], 1.0));
        }
        let curve = summarize_curve(&trace, &[0.0, 1.0, 2.0]).unwrap();
        for i in 0..3 {
            // Exact-knot projection returns the knot value itself.
            assert!((curve.median[i] - 0.7f64.exp()).abs() < 1e-12);
            assert_eq!(curve.lower[i], curve.median[i]);
            assert_eq!(curve.upper[i], curve.median[i]);
        }
        assert!(summarize_curve(
            &ChainTrace {
                header: header(1, knots),
                records: vec![]
            },
            &[0.0]
        )
        .is_err());
    }

    #[test]
    fn curve_quantiles_match_a_sort_oracle() {
        let knots = vec![0.0, 1.0];
        let mut trace = ChainTrace {
            header: header(1, knots.clone()),
            records: Vec::new(),
        };
        let values: Vec<f64> = (0..40).map(|i| (i as f64) * 0.05 - 1.0).collect();
        for (s, &v) in values.iter().enumerate() {
            trace.records.push(record(s as u64, vec![v, -v], 1.0));
        }
        let curve = summarize_curve(&trace, &[0.0, 1.0]).unwrap();
        let mut rates: Vec<f64> = values.iter().map(|v| v.exp()).collect();
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(curve.lower[0], type1_quantile(&rates, 0.025));
        assert_eq!(curve.median[0], type1_quantile(&rates, 0.5));
        assert_eq!(curve.upper[0], type1_quantile(&rates, 0.975));
        assert!(curve
            .median
            .iter()
            .zip(&curve.lower)
            .zip(&curve.upper)
            .all(|((m, l), u)| l <= m && m <= u));
    }

    #[test]
    fn infection_probability_counts_membership() {
        let farms = vec![
            FarmRecord {
                id: 10,
                x: 0.0,
                y: 0.0,
                cull_time: 0.0,
                preemptive: false,
                flock_type: None,
                flock_size: None,
            },
            FarmRecord {
                id: 20,
                x: 1.0,
                y: 0.0,
                cull_time: 2.0,
                preemptive: true,
                flock_type: None,
                flock_size: None,
            },
            FarmRecord {
                id: 30,
                x: 2.0,
                y: 0.0,
                cull_time: NEVER,
                preemptive: false,
                flock_type: None,
                flock_size: None,
            },
        ];
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let mut trace = ChainTrace {
            header: header(3, vec![0.0, 1.0]),
            records: Vec::new(),
        };
        for s in 0..10u64 {
            let mut r = record(s, vec![0.0, 0.0], 1.0);
            if s < 3 {
                r.c_members = vec![1];
            }
            trace.records.push(r);
        }
        let probs = infection_probabilities(&trace, &dataset).unwrap();
        assert_eq!(probs, vec![(20, 0.3)]);
    }

    #[test]
    fn i_tilde_matches_hand_arithmetic() {
        let mut trace = ChainTrace {
            header: header(1, vec![0.0, 1.0]),
            records: Vec::new(),
        };
        // Single record with infection sum 90.
        let mut r = record(0, vec![0.0, 0.0], 1.0);
        r.infections = vec![(0, 40.0), (1, 50.0)];
        trace.records.push(r);
        let score = i_tilde(100.0, &trace).unwrap();
        assert!((score - 10.0).abs() < 1e-12);
        assert!(i_tilde(0.0, &trace).is_err());
    }

    #[test]
    fn mean_infectious_period_uses_shape_over_gamma() {
        let mut trace = ChainTrace {
            header: header(1, vec![0.0, 1.0]),
            records: Vec::new(),
        };
        for s in 0..5 {
            trace.records.push(record(s, vec![0.0, 0.0], 0.8));
        }
        let t = mean_infectious_period(&trace).unwrap();
        assert_eq!(t.median, 5.0);
        assert_eq!(t.lower, 5.0);
        assert_eq!(t.upper, 5.0);
    }

    #[test]
    fn iact_is_one_for_white_noise_and_large_for_constant_blocks() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let white: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let tau = integrated_autocorrelation_time(&white);
        assert!(tau < 1.3, "white noise IACT {tau}");
        // Alternating +/-1 blocks of length 50: the triangle ACF crosses
        // zero at lag 25, so Geyer truncation yields IACT near 25.
        let blocks: Vec<f64> = (0..20_000)
            .map(|i| if (i / 50) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let tau_b = integrated_autocorrelation_time(&blocks);
        assert!((20.0..30.0).contains(&tau_b), "blocked series IACT {tau_b}");
    }

    fn predictive_fixture() -> (ChainTrace, Dataset) {
        let mk = |id: u64, x: f64, cull: f64, pre: bool| FarmRecord {
            id,
            x,
            y: 0.0,
            cull_time: cull,
            preemptive: pre,
            flock_type: Some(FlockType::Broiler),
            flock_size: Some(1000),
        };
        let farms = vec![
            mk(1, 0.0, 0.0, false),
            mk(2, 0.8, 3.0, false),
            mk(3, 1.6, NEVER, false),
            mk(4, 2.4, NEVER, false),
        ];
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let knots = vec![0.0, 1.0, 2.0, 3.0];
        let mut trace = ChainTrace {
            header: header(4, knots),
            records: Vec::new(),
        };
        for s in 0..6u64 {
            let mut r = record(s, vec![-0.3, -0.6, -1.2, -2.0], 0.9);
            r.infections = vec![(0, -1.0), (1, 1.0)];
            trace.records.push(r);
        }
        (trace, dataset)
    }

    #[test]
    fn radius_zero_replicates_cull_exactly_the_infected() {
        let (trace, dataset) = predictive_fixture();
        let policies = vec![CullingPolicy::none(), CullingPolicy::simple_ring(1.0).unwrap()];
        let table = CompensationTable::default();
        let summary =
            posterior_predictive(&trace, &dataset, &policies, &table, 3, 99).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert_eq!(summary.draws, 6);
        let none = &summary.rows[0];
        assert_eq!(none.infected.median, none.culled.median);
        assert_eq!(none.infected.lower, none.culled.lower);
        assert_eq!(none.infected.upper, none.culled.upper);
        for row in &summary.rows {
            assert!(row.infected.lower <= row.infected.median);
            assert!(row.infected.median <= row.infected.upper);
            assert!(row.culled.median >= row.infected.median);
            assert!(row.compensation.lower > 0.0);
        }
        // Same seed, same answer.
        let again = posterior_predictive(&trace, &dataset, &policies, &table, 3, 99).unwrap();
        assert_eq!(summary, again);
    }

    #[test]
    fn predictive_requires_flock_data() {
        let (trace, dataset) = predictive_fixture();
        let mut farms = dataset.farms().to_vec();
        farms[2].flock_size = None;
        let broken = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let err = posterior_predictive(
            &trace,
            &broken,
            &[CullingPolicy::none()],
            &CompensationTable::default(),
            1,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains('3'), "{err}");
    }
}
