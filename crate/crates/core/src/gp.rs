//! Squared-exponential Gaussian-process machinery over the distance domain:
//! covariance construction with jitter-stabilized Cholesky factorization,
//! prior sampling, log-density, pseudo-input projection, and the
//! underrelaxed block proposal together with its cancellation identity.

use nalgebra::{DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude and length scale of the squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Overall standard-deviation scale of the log-rate field.
    pub alpha: f64,
    /// Length scale in km.
    pub length_scale: f64,
}

impl KernelParams {
    pub fn new(alpha: f64, length_scale: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(Error::Config(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        Ok(KernelParams {
            alpha,
            length_scale,
        })
    }
}

/// k(d_i, d_j) = alpha^2 exp{-(d_i - d_j)^2 / l^2}.
#[inline]
pub fn sq_exp_kernel(d_i: f64, d_j: f64, params: &KernelParams) -> f64 {
    let diff = d_i - d_j;
    params.alpha * params.alpha
        * (-(diff * diff) / (params.length_scale * params.length_scale)).exp()
}

/// Diagonal-inflation schedule used to force positive definiteness.
///
/// Inflation is relative to alpha^2 and escalates geometrically; the level
/// that succeeded is recorded on the resulting matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial_rel: f64,
    pub growth: f64,
    pub max_rel: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial_rel: 1e-10,
            growth: 10.0,
            max_rel: 1e-4,
        }
    }
}

/// Dense covariance over a distance vector with its cached lower factor.
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
    factor: nalgebra::linalg::Cholesky<f64, Dyn>,
    lower: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl std::fmt::Debug for CovarianceMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CovarianceMatrix")
            .field("n", &self.n())
            .field("jitter", &self.jitter)
            .field("log_det", &self.log_det)
            .finish()
    }
}

impl CovarianceMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Diagonal inflation actually applied.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The jittered matrix that was factored.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower_factor(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Solve (Sigma + jitter I) x = b using the cached factor.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// Zero-mean multivariate normal draw with this covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.lower * z
    }

    /// Multivariate normal log-density at `x` under mean zero.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.n() {
            return Err(Error::Numerical(format!(
                "log_density length mismatch: {} values vs {} knots",
                x.len(),
                self.n()
            )));
        }
        let quad = x.dot(&self.factor.solve(x));
        Ok(-0.5 * (self.n() as f64 * LN_TWO_PI + self.log_det + quad))
    }
}

const LN_TWO_PI: f64 = 1.8378770664093453;

/// Build the covariance of `distances` under `params`, escalating jitter
/// until the factorization succeeds.
pub fn build_covariance(
    distances: &[f64],
    params: &KernelParams,
    policy: &JitterPolicy,
) -> Result<CovarianceMatrix> {
    build_covariance_with(distances, params.alpha, params.length_scale, policy)
}

fn build_covariance_with(
    distances: &[f64],
    alpha: f64,
    length_scale: f64,
    policy: &JitterPolicy,
) -> Result<CovarianceMatrix> {
    if distances.is_empty() {
        return Err(Error::Config("covariance over empty distance vector".into()));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("covariance distances must be finite".into()));
    }
    let params = KernelParams::new(alpha, length_scale)?;
    let n = distances.len();
    let base = DMatrix::from_fn(n, n, |i, j| sq_exp_kernel(distances[i], distances[j], &params));

    let scale = alpha * alpha;
    let mut rel = policy.initial_rel;
    let mut attempts = Vec::new();
    loop {
        let jitter = rel * scale;
        let mut matrix = base.clone();
        for i in 0..n {
            matrix[(i, i)] += jitter;
        }
        attempts.push(jitter);
        if let Some(factor) = nalgebra::linalg::Cholesky::new(matrix.clone()) {
            let lower = factor.l();
            let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return Ok(CovarianceMatrix {
                matrix,
                factor,
                lower,
                log_det,
                jitter,
            });
        }
        if rel >= policy.max_rel {
            return Err(Error::Numerical(format!(
                "covariance factorization failed; attempted jitters {attempts:?}"
            )));
        }
        rel *= policy.growth;
    }
}

/// Draw from the zero-mean GP prior on the knots of `cov`.
pub fn sample_prior<R: Rng + ?Sized>(cov: &CovarianceMatrix, rng: &mut R) -> DVector<f64> {
    cov.sample(rng)
}

/// Log-rate field: values on the pseudo grid plus their projection onto the
/// full distance vector. Rates are exp of the projected values.
#[derive(Debug, Clone)]
pub struct GpField {
    pub g_bar: DVector<f64>,
    pub g: DVector<f64>,
}

impl GpField {
    /// beta = exp{g}; strictly positive elementwise.
    pub fn rates(&self) -> DVector<f64> {
        self.g.map(f64::exp)
    }
}

/// Pseudo-input projection from grid knots onto arbitrary target distances.
///
/// Holds the unit-amplitude cross-covariance and the factored knot
/// covariance; the kernel amplitude cancels from the projection, so the
/// projector depends on the length scale only. Target distances that lie
/// exactly on a knot map to that knot's value directly: the jittered solve
/// would blur those rows on near-singular grids.
pub struct Projector {
    k_cross: DMatrix<f64>,
    knot_cov: CovarianceMatrix,
    exact: Vec<Option<usize>>,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector")
            .field("targets", &self.k_cross.nrows())
            .field("knots", &self.k_cross.ncols())
            .finish()
    }
}

impl Projector {
    pub fn new(
        targets: &[f64],
        knots: &[f64],
        params: &KernelParams,
        policy: &JitterPolicy,
    ) -> Result<Self> {
        KernelParams::new(params.alpha, params.length_scale)?;
        if targets.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("projection targets must be finite".into()));
        }
        let unit = KernelParams {
            alpha: 1.0,
            length_scale: params.length_scale,
        };
        let knot_cov = build_covariance_with(knots, 1.0, params.length_scale, policy)?;
        let k_cross = DMatrix::from_fn(targets.len(), knots.len(), |i, j| {
            sq_exp_kernel(targets[i], knots[j], &unit)
        });
        let exact = targets
            .iter()
            .map(|&t| knots.iter().position(|&k| k == t))
            .collect();
        Ok(Projector {
            k_cross,
            knot_cov,
            exact,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.k_cross.nrows()
    }

    pub fn n_knots(&self) -> usize {
        self.k_cross.ncols()
    }

    pub fn knot_jitter(&self) -> f64 {
        self.knot_cov.jitter()
    }

    /// Project grid values onto the targets.
    pub fn project(&self, g_bar: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_targets());
        self.project_into(g_bar, &mut out)?;
        Ok(out)
    }

    /// Project into a caller-owned buffer, avoiding the large allocation.
    pub fn project_into(&self, g_bar: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        if g_bar.len() != self.n_knots() {
            return Err(Error::Numerical(format!(
                "projection length mismatch: {} values vs {} knots",
                g_bar.len(),
                self.n_knots()
            )));
        }
        if out.len() != self.n_targets() {
            return Err(Error::Numerical(format!(
                "projection output length mismatch: {} vs {} targets",
                out.len(),
                self.n_targets()
            )));
        }
        let weights = self.knot_cov.solve(g_bar);
        out.gemv(1.0, &self.k_cross, &weights, 0.0);
        for (row, knot) in self.exact.iter().enumerate() {
            if let Some(k) = knot {
                out[row] = g_bar[*k];
            }
        }
        Ok(())
    }

    /// Materialize the dense projector matrix (targets x knots).
    pub fn matrix(&self) -> DMatrix<f64> {
        let solved = self.knot_cov.factor.solve(&self.k_cross.transpose());
        let mut p = solved.transpose();
        for (row, knot) in self.exact.iter().enumerate() {
            if let Some(k) = knot {
                for j in 0..p.ncols() {
                    p[(row, j)] = if j == *k { 1.0 } else { 0.0 };
                }
            }
        }
        p
    }
}

/// Build the dense projector matrix directly.
pub fn build_projector(
    targets: &[f64],
    knots: &[f64],
    params: &KernelParams,
    policy: &JitterPolicy,
) -> Result<DMatrix<f64>> {
    Ok(Projector::new(targets, knots, params, policy)?.matrix())
}

/// Underrelaxed block proposal: sqrt(1 - delta^2) g + delta nu with nu a
/// fresh prior draw. delta = 1 degenerates to an independent prior draw.
pub fn underrelaxed_propose<R: Rng + ?Sized>(
    g_bar: &DVector<f64>,
    delta: f64,
    cov: &CovarianceMatrix,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!(
            "underrelaxation delta must lie in (0, 1], got {delta}"
        )));
    }
    if g_bar.len() != cov.n() {
        return Err(Error::Numerical(format!(
            "proposal length mismatch: {} values vs {} knots",
            g_bar.len(),
            cov.n()
        )));
    }
    let nu = cov.sample(rng);
    Ok(g_bar * (1.0 - delta * delta).sqrt() + nu * delta)
}

/// Both sides of the proposal-ratio cancellation: the log proposal-density
/// ratio q(g|g')/q(g'|g) on the left and the inverse prior-density ratio on
/// the right. Their equality is what lets the block update accept on the
/// likelihood ratio alone.
pub fn proposal_log_ratio_identity(
    g: &DVector<f64>,
    g_prime: &DVector<f64>,
    delta: f64,
    cov: &CovarianceMatrix,
) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "identity requires delta in (0, 1), got {delta}"
        )));
    }
    if g.len() != g_prime.len() || g.len() != cov.n() {
        return Err(Error::Numerical(format!(
            "identity length mismatch: {} vs {} values on {} knots",
            g.len(),
            g_prime.len(),
            cov.n()
        )));
    }
    let shrink = (1.0 - delta * delta).sqrt();
    let n = cov.n() as f64;
    // log N(x; m, delta^2 Sigma) up to the shared normalizer.
    let proposal_quad = |x: &DVector<f64>, m: DVector<f64>| -> f64 {
        let r = x - m;
        r.dot(&cov.solve(&r)) / (delta * delta)
    };
    let log_q = |x: &DVector<f64>, from: &DVector<f64>| -> f64 {
        -0.5 * (n * LN_TWO_PI
            + n * (delta * delta).ln()
            + cov.log_det
            + proposal_quad(x, from * shrink))
    };
    let lhs = log_q(g, g_prime) - log_q(g_prime, g);
    let rhs = cov.log_density(g)? - cov.log_density(g_prime)?;
    Ok((lhs, rhs))
}
