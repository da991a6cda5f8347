//! Randomized structural properties of the public API.

use epikernel::data::{
    build_pseudo_grid, Dataset, DistanceIndex, FarmRecord, GridSpec, TimeOrigin, NEVER,
};
use epikernel::gp::{build_covariance, sample_prior, JitterPolicy, KernelParams, Projector};
use epikernel::likelihood::InfectiousPeriodParams;
use epikernel::posterior::{quantiles_of, type1_quantile};
use epikernel::rates::RateFunction;
use epikernel::sim::{random_layout, simulate_outbreak, CullingPolicy};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn farm(id: u64, x: f64, y: f64) -> FarmRecord {
    FarmRecord {
        id,
        x,
        y,
        cull_time: NEVER,
        preemptive: false,
        flock_type: None,
        flock_size: None,
    }
}

proptest! {
    // Distance metric axioms on the precomputed index.
    #[test]
    fn distance_index_is_a_metric(
        coords in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..12)
    ) {
        let dist = DistanceIndex::new(coords.clone());
        let n = coords.len();
        for j in 0..n {
            for k in 0..n {
                let d = dist.get(j, k);
                prop_assert!(d >= 0.0);
                prop_assert_eq!(d, dist.get(k, j));
                if j == k {
                    prop_assert_eq!(d, 0.0);
                }
                for m in 0..n {
                    prop_assert!(dist.get(j, m) <= d + dist.get(k, m) + 1e-9);
                }
            }
        }
    }

    // Grid construction invariants: sorted, distinct, spans [0, max].
    #[test]
    fn pseudo_grid_is_sorted_and_spans_the_range(
        count in 2usize..400,
        max in 0.5f64..60.0
    ) {
        let grid = build_pseudo_grid(&GridSpec::EqualSpacing { count, max }).unwrap();
        prop_assert_eq!(grid.len(), count);
        prop_assert_eq!(grid[0], 0.0);
        prop_assert!((grid[count - 1] - max).abs() < 1e-12);
        for w in grid.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
    }

    // The squared-exponential covariance stays within [0, alpha^2] and the
    // sampled field is finite.
    #[test]
    fn kernel_bounds_and_finite_samples(
        n in 2usize..30,
        alpha in 0.1f64..12.0,
        l in 0.1f64..10.0,
        seed in 0u64..1000
    ) {
        let knots: Vec<f64> = (0..n).map(|i| i as f64 * 0.37).collect();
        let params = KernelParams::new(alpha, l).unwrap();
        let cov = build_covariance(&knots, &params, &JitterPolicy::default()).unwrap();
        let m = cov.matrix();
        for j in 0..n {
            for k in 0..n {
                let v = m[(j, k)];
                prop_assert!(v >= 0.0);
                // Diagonal carries jitter; off-diagonal is the pure kernel.
                if j != k {
                    prop_assert!(v <= alpha * alpha);
                }
                prop_assert!((v - m[(k, j)]).abs() == 0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample_prior(&cov, &mut rng);
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }

    // Projection at knot locations returns the knot values exactly.
    #[test]
    fn projection_is_exact_on_knots(
        n in 4usize..40,
        l in 0.3f64..8.0,
        seed in 0u64..1000
    ) {
        let knots: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let params = KernelParams::new(2.0, l).unwrap();
        let cov = build_covariance(&knots, &params, &JitterPolicy::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample_prior(&cov, &mut rng);
        let projector = Projector::new(&knots, &knots, &params, &JitterPolicy::default()).unwrap();
        let projected = projector.project(&g).unwrap();
        for i in 0..n {
            prop_assert_eq!(projected[i], g[i]);
        }
    }

    // Type-1 quantiles equal a directly indexed order statistic.
    #[test]
    fn quantiles_match_sorted_indexing(
        values in prop::collection::vec(-1e6f64..1e6, 1..200),
        p in 0.0f64..1.0
    ) {
        let got = quantiles_of(&values, &[p]).unwrap()[0];
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((p * sorted.len() as f64).ceil() as usize)
            .saturating_sub(1)
            .min(sorted.len() - 1);
        prop_assert_eq!(got, sorted[idx]);
        prop_assert_eq!(got, type1_quantile(&sorted, p));
    }

    // Simulated outbreaks partition the farms and respect cull ordering.
    #[test]
    fn outbreak_partitions_farms(
        seed in 0u64..300,
        scale in 0.05f64..1.5,
        radius in 0.0f64..1.5
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let farms = random_layout(20, 5.0, None, &mut rng).unwrap();
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let rates = RateFunction::ExpDecay { scale, decay: 1.5 };
        let params = InfectiousPeriodParams::new(4.0, 0.8).unwrap();
        let policy = if radius > 0.0 {
            CullingPolicy::simple_ring(radius).unwrap()
        } else {
            CullingPolicy::none()
        };
        let result = simulate_outbreak(&dataset, &rates, &params, 0, &policy, &mut rng).unwrap();
        let mut seen = vec![0u8; dataset.len()];
        for &j in &result.never_culled {
            seen[j] += 1;
        }
        for &j in &result.natural {
            seen[j] += 1;
        }
        for &j in &result.preemptive_infected {
            seen[j] += 1;
        }
        for &j in &result.preemptive_uninfected {
            seen[j] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1), "not a partition");
        prop_assert_eq!(
            result.infected_count(),
            result.natural.len() + result.preemptive_infected.len() + 1usize.saturating_sub(
                result.natural.contains(&result.omega) as usize
                    + result.preemptive_infected.contains(&result.omega) as usize
            )
        );
        prop_assert!(result.culled_count() >= result.infected_count()
            || result.never_culled.contains(&result.omega));
        // Infection precedes removal for every infected, eventually-culled farm.
        for (j, t) in result.infection_time.iter().enumerate() {
            if t.is_finite() {
                let nat = result.natural_cull_time[j];
                let pre = result.preemptive_cull_time[j];
                let removal = nat.min(pre);
                if removal.is_finite() {
                    prop_assert!(*t < removal);
                }
            }
        }
    }

    // Dataset classification matches the raw cull columns.
    #[test]
    fn classification_partitions_observed_farms(
        pattern in prop::collection::vec(0u8..3, 1..30)
    ) {
        let farms: Vec<FarmRecord> = pattern
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut f = farm(i as u64 + 1, i as f64, 0.0);
                match p {
                    0 => {}
                    1 => f.cull_time = i as f64,
                    _ => {
                        f.cull_time = i as f64;
                        f.preemptive = true;
                    }
                }
                f
            })
            .collect();
        let dataset = Dataset::new(farms, TimeOrigin::Offset(0.0)).unwrap();
        let classes = epikernel::data::classify(&dataset);
        let total = classes.never_culled.len()
            + classes.naturally_culled.len()
            + classes.preemptively_culled.len();
        prop_assert_eq!(total, dataset.len());
        for (i, &p) in pattern.iter().enumerate() {
            let expected: &[usize] = match p {
                0 => &classes.never_culled,
                1 => &classes.naturally_culled,
                _ => &classes.preemptively_culled,
            };
            prop_assert!(expected.contains(&i));
        }
    }
}

#[test]
fn projector_handles_targets_beyond_the_grid() {
    let knots: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let params = KernelParams::new(3.0, 1.5).unwrap();
    let projector =
        Projector::new(&[0.5, 7.5, 20.0], &knots, &params, &JitterPolicy::default()).unwrap();
    let g = DVector::from_vec(vec![1.0; 8]);
    let out = projector.project(&g).unwrap();
    assert!(out.iter().all(|v| v.is_finite()));
    // Far beyond the grid the projection decays toward zero.
    assert!(out[2].abs() < 1e-6);
}
