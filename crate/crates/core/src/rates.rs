//! Distance-dependent infection-rate functions: the GP-projected
//! nonparametric rate, parametric baseline kernels, an exponential-decay
//! rate used as simulation ground truth, and a tabulated per-pair rate for
//! tests and oracles.

use std::sync::Arc;

use nalgebra::DVector;

use crate::data::DistanceIndex;
use crate::error::{Error, Result};
use crate::gp::{JitterPolicy, KernelParams, Projector};

/// Parametric baseline rate kernels, numbered 1-5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParametricKernel {
    /// 1: constant b0.
    Constant { b0: f64 },
    /// 2: b0 (1 + d)^-1.
    InverseLinear { b0: f64 },
    /// 3: b0 (1 + d^2)^-1.
    InverseSquare { b0: f64 },
    /// 4: b0 (1 + d^b1)^-1.
    InversePower { b0: f64, b1: f64 },
    /// 5: b0 (1 + (d/b2)^b1)^-1.
    ScaledInversePower { b0: f64, b1: f64, b2: f64 },
}

impl ParametricKernel {
    /// Build kernel `kernel_id` from its coefficient list.
    pub fn from_id(kernel_id: u8, coefficients: &[f64]) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if coefficients.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "kernel {kernel_id} takes {n} coefficient(s), got {}",
                    coefficients.len()
                )))
            }
        };
        let kernel = match kernel_id {
            1 => {
                need(1)?;
                ParametricKernel::Constant {
                    b0: coefficients[0],
                }
            }
            2 => {
                need(1)?;
                ParametricKernel::InverseLinear {
                    b0: coefficients[0],
                }
            }
            3 => {
                need(1)?;
                ParametricKernel::InverseSquare {
                    b0: coefficients[0],
                }
            }
            4 => {
                need(2)?;
                ParametricKernel::InversePower {
                    b0: coefficients[0],
                    b1: coefficients[1],
                }
            }
            5 => {
                need(3)?;
                ParametricKernel::ScaledInversePower {
                    b0: coefficients[0],
                    b1: coefficients[1],
                    b2: coefficients[2],
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown parametric kernel id {other}"
                )))
            }
        };
        kernel.validate()?;
        Ok(kernel)
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "kernel coefficient {name} must be positive, got {v}"
                )))
            }
        };
        match *self {
            ParametricKernel::Constant { b0 }
            | ParametricKernel::InverseLinear { b0 }
            | ParametricKernel::InverseSquare { b0 } => positive("b0", b0),
            ParametricKernel::InversePower { b0, b1 } => {
                positive("b0", b0)?;
                positive("b1", b1)
            }
            ParametricKernel::ScaledInversePower { b0, b1, b2 } => {
                positive("b0", b0)?;
                positive("b1", b1)?;
                positive("b2", b2)
            }
        }
    }

    /// Rate at distance `d` km.
    #[inline]
    pub fn rate(&self, d: f64) -> f64 {
        match *self {
            ParametricKernel::Constant { b0 } => b0,
            ParametricKernel::InverseLinear { b0 } => b0 / (1.0 + d),
            ParametricKernel::InverseSquare { b0 } => b0 / (1.0 + d * d),
            ParametricKernel::InversePower { b0, b1 } => b0 / (1.0 + d.powf(b1)),
            ParametricKernel::ScaledInversePower { b0, b1, b2 } => {
                b0 / (1.0 + (d / b2).powf(b1))
            }
        }
    }
}

/// Evaluate parametric kernel `kernel_id` with `coefficients` at distance `d`.
pub fn parametric_rate(kernel_id: u8, coefficients: &[f64], d: f64) -> Result<f64> {
    Ok(ParametricKernel::from_id(kernel_id, coefficients)?.rate(d))
}

/// Symmetric per-pair rate table for small test instances.
#[derive(Debug, Clone)]
pub struct TabulatedRates {
    n: usize,
    beta: Vec<f64>,
}

impl TabulatedRates {
    pub fn new(n: usize, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != n * n {
            return Err(Error::Config(format!(
                "tabulated rates need {} entries for {n} farms, got {}",
                n * n,
                beta.len()
            )));
        }
        for j in 0..n {
            for k in 0..n {
                let v = beta[j * n + k];
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!(
                        "tabulated rate ({j}, {k}) must be positive, got {v}"
                    )));
                }
                if v != beta[k * n + j] {
                    return Err(Error::Config(format!(
                        "tabulated rates must be symmetric; ({j}, {k}) differs"
                    )));
                }
            }
        }
        Ok(TabulatedRates { n, beta })
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.beta[j * self.n + k]
    }

    pub fn set_symmetric(&mut self, j: usize, k: usize, value: f64) {
        self.beta[j * self.n + k] = value;
        self.beta[k * self.n + j] = value;
    }
}

/// Pair-indexed projection scaffold for GP rates: which farms can ever act
/// as infectors, the unique pairwise distances they generate against every
/// farm, and the projector from the pseudo grid onto those distances.
///
/// Immutable once built; shared across sweeps and rebuilt only when the
/// length scale changes.
pub struct PairTable {
    n: usize,
    row_of: Vec<u32>,
    row_farms: Vec<usize>,
    slot: Vec<u32>,
    unique_distances: Vec<f64>,
    knots: Vec<f64>,
    projector: Projector,
}

const NO_ROW: u32 = u32::MAX;

impl std::fmt::Debug for PairTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairTable")
            .field("farms", &self.n)
            .field("rows", &self.row_farms.len())
            .field("unique_distances", &self.unique_distances.len())
            .finish()
    }
}

impl PairTable {
    /// `active` lists the farms that can ever be infectious (naturally or
    /// pre-emptively culled farms); rates are resolvable for any pair with
    /// at least one active member.
    pub fn new(
        dist: &DistanceIndex,
        active: &[usize],
        knots: &[f64],
        length_scale: f64,
        policy: &JitterPolicy,
    ) -> Result<Self> {
        let n = dist.len();
        let mut row_of = vec![NO_ROW; n];
        let mut row_farms = Vec::with_capacity(active.len());
        for &farm in active {
            if farm >= n {
                return Err(Error::Data(format!("active farm {farm} outside 0..{n}")));
            }
            if row_of[farm] == NO_ROW {
                row_of[farm] = row_farms.len() as u32;
                row_farms.push(farm);
            }
        }

        let mut distances = vec![0.0f64; row_farms.len() * n];
        for (row, &farm) in row_farms.iter().enumerate() {
            for k in 0..n {
                distances[row * n + k] = dist.get(farm, k);
            }
        }
        // Exact-equality dedup: symmetric pairs produce bit-identical values.
        let mut order: Vec<u32> = (0..distances.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| {
            distances[a as usize]
                .partial_cmp(&distances[b as usize])
                .unwrap()
        });
        let mut slot = vec![0u32; distances.len()];
        let mut unique_distances = Vec::new();
        for &idx in &order {
            let d = distances[idx as usize];
            if unique_distances.last() != Some(&d) {
                unique_distances.push(d);
            }
            slot[idx as usize] = (unique_distances.len() - 1) as u32;
        }

        let params = KernelParams::new(1.0, length_scale)?;
        let projector = Projector::new(&unique_distances, knots, &params, policy)?;
        Ok(PairTable {
            n,
            row_of,
            row_farms,
            slot,
            unique_distances,
            knots: knots.to_vec(),
            projector,
        })
    }

    /// Project a grid field through a fresh projector at a different length
    /// scale, without touching this table. Returns the projector (so an
    /// accepted proposal can reuse it) and the projected log-rates.
    pub fn project_with_length_scale(
        &self,
        g_bar: &DVector<f64>,
        length_scale: f64,
        policy: &JitterPolicy,
    ) -> Result<(Projector, Vec<f64>)> {
        let params = KernelParams::new(1.0, length_scale)?;
        let projector = Projector::new(&self.unique_distances, &self.knots, &params, policy)?;
        let g = projector.project(g_bar)?;
        Ok((projector, g.iter().copied().collect()))
    }

    /// Same pair indexing with a replacement projector (a new length scale).
    pub fn with_projector(&self, projector: Projector) -> PairTable {
        PairTable {
            n: self.n,
            row_of: self.row_of.clone(),
            row_farms: self.row_farms.clone(),
            slot: self.slot.clone(),
            unique_distances: self.unique_distances.clone(),
            knots: self.knots.clone(),
            projector,
        }
    }

    pub fn n_farms(&self) -> usize {
        self.n
    }

    pub fn n_unique(&self) -> usize {
        self.unique_distances.len()
    }

    pub fn unique_distances(&self) -> &[f64] {
        &self.unique_distances
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// exp of the projected field on the unique-distance slots.
    pub fn project_rates(&self, g_bar: &DVector<f64>) -> Result<Vec<f64>> {
        let mut g = DVector::zeros(self.n_unique());
        self.projector.project_into(g_bar, &mut g)?;
        Ok(g.iter().map(|v| v.exp()).collect())
    }

    #[inline]
    fn slot_for(&self, j: usize, k: usize) -> u32 {
        let row = self.row_of[j];
        if row != NO_ROW {
            self.slot[row as usize * self.n + k]
        } else {
            let row = self.row_of[k];
            debug_assert!(row != NO_ROW, "pair ({j}, {k}) has no active member");
            self.slot[row as usize * self.n + j]
        }
    }
}

/// GP rate function: a grid field and its exp-projected values on the pair
/// table's unique distances.
#[derive(Clone)]
pub struct GpRates {
    table: Arc<PairTable>,
    g_bar: DVector<f64>,
    beta_unique: Vec<f64>,
}

impl std::fmt::Debug for GpRates {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpRates")
            .field("knots", &self.g_bar.len())
            .field("table", &self.table)
            .finish()
    }
}

impl GpRates {
    pub fn new(table: Arc<PairTable>, g_bar: DVector<f64>) -> Result<Self> {
        let beta_unique = table.project_rates(&g_bar)?;
        Ok(GpRates {
            table,
            g_bar,
            beta_unique,
        })
    }

    /// Assemble from an already-projected field. `log_rates` must be the
    /// projection of `g_bar` through `table`'s projector.
    pub fn from_projected(table: Arc<PairTable>, g_bar: DVector<f64>, log_rates: &[f64]) -> Self {
        GpRates {
            table,
            g_bar,
            beta_unique: log_rates.iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn table(&self) -> &Arc<PairTable> {
        &self.table
    }

    pub fn g_bar(&self) -> &DVector<f64> {
        &self.g_bar
    }

    /// Replace the grid field, reprojecting rates.
    pub fn set_field(&mut self, g_bar: DVector<f64>) -> Result<()> {
        self.beta_unique = self.table.project_rates(&g_bar)?;
        self.g_bar = g_bar;
        Ok(())
    }

    #[inline]
    pub fn beta_pair(&self, j: usize, k: usize) -> f64 {
        self.beta_unique[self.table.slot_for(j, k) as usize]
    }
}

/// A pairwise infection-rate function beta(d_jk).
#[derive(Debug, Clone)]
pub enum RateFunction {
    /// Nonparametric: exp of a GP log-rate projected per pair distance.
    Gp(GpRates),
    /// Fixed-form parametric baseline for comparison fits.
    Parametric(ParametricKernel),
    /// scale * exp(-decay * d); the simulation-study ground truth.
    ExpDecay { scale: f64, decay: f64 },
    /// Explicit per-pair table (tests and oracles).
    Tabulated(TabulatedRates),
}

impl RateFunction {
    /// Rate between farms `j` and `k`.
    #[inline]
    pub fn beta(&self, dist: &DistanceIndex, j: usize, k: usize) -> f64 {
        match self {
            RateFunction::Gp(gp) => gp.beta_pair(j, k),
            RateFunction::Parametric(kernel) => kernel.rate(dist.get(j, k)),
            RateFunction::ExpDecay { scale, decay } => {
                scale * (-decay * dist.get(j, k)).exp()
            }
            RateFunction::Tabulated(table) => table.get(j, k),
        }
    }

    /// Rate at a bare distance; GP rates cannot answer this (their field is
    /// defined on the pair table), so this is for analytic variants only.
    pub fn rate_at_distance(&self, d: f64) -> Result<f64> {
        match self {
            RateFunction::Gp(_) => Err(Error::Config(
                "GP rates are defined per pair, not per bare distance".into(),
            )),
            RateFunction::Parametric(kernel) => Ok(kernel.rate(d)),
            RateFunction::ExpDecay { scale, decay } => Ok(scale * (-decay * d).exp()),
            RateFunction::Tabulated(_) => Err(Error::Config(
                "tabulated rates are defined per pair, not per distance".into(),
            )),
        }
    }
}
