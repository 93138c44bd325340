//! One-pass recursive output heads for the ensemble sub-learners.
//!
//! Every style keeps the same constant-size state: the weights `theta`
//! (`d x m`), the running inverse Gram `eta_dag` that has seen the labelled
//! batches, and the complete learning rate `eta` that additionally carries
//! the forward term of the next, still unlabelled batch. A step consumes
//! only the current batch `(D_t, Y_t)` and the next design matrix `D_{t+1}`.
//!
//! The update for all styles is
//!
//! ```text
//! eta_{t+1}   = (eta_dag_t^{-1} + k_next D_{t+1}^T D_{t+1})^{-1}
//! theta_{t+1} = theta_t - eta_{t+1} [ (k_next D_{t+1}^T D_{t+1}
//!                                      + (1 - k_now) D_t^T D_t) theta_t - D_t^T Y_t ]
//! ```
//!
//! with `k_now = k_next = 0` for ridge, a constant `k` for the forward style,
//! and trace-based adaptive coefficients for the Bayesian forward style.

pub mod baselines;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{woodbury_update, PsdMatrix};

/// Adaptive coefficients are clamped into this range.
pub const K_CLAMP: (f64, f64) = (1e-6, 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleKind {
    Ridge,
    Kf,
    KfBayes,
}

impl std::fmt::Display for StyleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StyleKind::Ridge => "ridge",
            StyleKind::Kf => "kf",
            StyleKind::KfBayes => "kf_bayes",
        })
    }
}

/// How the first batch enters the running inverse Gram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// The first batch's Gram is never accumulated (cold start with no prior).
    PaperStrict,
    /// The first batch is accumulated like every other, so the learning rate
    /// equals the closed-form inverse of the full regularized Gram.
    #[default]
    Theorem,
}

/// How the Bayesian forward style picks `(k_now, k_next)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    /// `kappa * (Tr[(D eta D^T + sigma I)^{-1}] / b)^{-1}`.
    #[default]
    TraceInverse,
    /// `kappa / [(D eta D^T + sigma I)^{-1}]_{ii}` for a random row `i`.
    RandomPick,
    /// `kappa * Tr[D eta D^T] / b`, no inverse.
    Trace,
    /// Fixed coefficients, not clamped. Reduces the adaptive style to the
    /// constant-k one and is mostly useful in tests.
    Fixed { current: f64, next: f64 },
}

/// Which learning-rate matrix the adaptive coefficients are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    /// The running inverse Gram right after absorbing the current batch.
    #[default]
    PseudoIncomplete,
    /// The complete learning rate left by the previous step.
    PreviousComplete,
}

fn default_k() -> f64 {
    1.0
}
fn default_kappa() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegStyle {
    pub kind: StyleKind,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub k_rule: KRule,
    #[serde(default)]
    pub k_source: KSource,
}

impl RegStyle {
    pub fn ridge() -> Self {
        RegStyle {
            kind: StyleKind::Ridge,
            k: 0.0,
            kappa: default_kappa(),
            sigma: default_sigma(),
            init_mode: InitMode::default(),
            k_rule: KRule::default(),
            k_source: KSource::default(),
        }
    }

    pub fn kf(k: f64) -> Self {
        RegStyle {
            kind: StyleKind::Kf,
            k,
            ..Self::ridge()
        }
    }

    pub fn kf_bayes(kappa: f64, sigma: f64) -> Self {
        RegStyle {
            kind: StyleKind::KfBayes,
            k: default_k(),
            kappa,
            sigma,
            ..Self::ridge()
        }
    }

    pub fn with_init_mode(mut self, mode: InitMode) -> Self {
        self.init_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            StyleKind::Ridge => Ok(()),
            StyleKind::Kf if !(self.k >= 0.0 && self.k.is_finite()) => Err(Error::contract(
                format!("kf style needs k >= 0, got {}", self.k),
            )),
            StyleKind::Kf => Ok(()),
            StyleKind::KfBayes => {
                if !(self.kappa > 0.0 && self.kappa.is_finite()) {
                    return Err(Error::contract(format!(
                        "kf_bayes needs kappa > 0, got {}",
                        self.kappa
                    )));
                }
                if !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return Err(Error::contract(format!(
                        "kf_bayes needs sigma > 0, got {}",
                        self.sigma
                    )));
                }
                if let KRule::Fixed { current, next } = self.k_rule {
                    if !(current.is_finite() && next >= 0.0 && next.is_finite()) {
                        return Err(Error::contract("fixed k values must be finite, next >= 0"));
                    }
                }
                Ok(())
            }
        }
    }
}

/// `(k_{l,t}, k_{l,t+1})` used by one adaptive step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPair {
    pub current: f64,
    pub next: f64,
}

/// Per-layer record of the adaptive coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveKTrace {
    /// `layers[l]` holds `(batch index, pair)` in stream order.
    pub layers: Vec<Vec<(usize, KPair)>>,
}

impl AdaptiveKTrace {
    pub fn new(layers: usize) -> Self {
        AdaptiveKTrace {
            layers: vec![Vec::new(); layers],
        }
    }

    pub fn record(&mut self, layer: usize, batch: usize, pair: KPair) {
        self.layers[layer].push((batch, pair));
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    /// True when every recorded coefficient is finite and strictly positive.
    pub fn all_positive_finite(&self) -> bool {
        self.layers.iter().flatten().all(|(_, p)| {
            p.current.is_finite() && p.current > 0.0 && p.next.is_finite() && p.next > 0.0
        })
    }
}

/// `Tr[(D eta D^T + sigma I_b)^{-1}]`.
///
/// For `b <= d` the `b x b` system is inverted directly. For taller batches
/// the trace is taken on the `d x d` similar matrix
/// `sigma I + R^T D^T D R` (with `eta = R R^T`), plus `(b - d) / sigma` for
/// the null space of `D eta D^T`.
pub fn projected_trace_inverse(d: ArrayView2<f64>, eta: &PsdMatrix, sigma: f64) -> Result<f64> {
    if d.ncols() != eta.dim() {
        return Err(Error::contract(format!(
            "batch has {} columns, learning rate is {}x{}",
            d.ncols(),
            eta.dim(),
            eta.dim()
        )));
    }
    if d.nrows() <= d.ncols() {
        trace_inverse_rowspace(d, eta, sigma)
    } else {
        trace_inverse_colspace(d, eta, sigma)
    }
}

pub(crate) fn trace_inverse_rowspace(d: ArrayView2<f64>, eta: &PsdMatrix, sigma: f64) -> Result<f64> {
    let mut proj = d.dot(eta.as_array()).dot(&d.t());
    for i in 0..proj.nrows() {
        proj[[i, i]] += sigma;
    }
    linalg::trace_of_inverse(proj.view())
}

pub(crate) fn trace_inverse_colspace(d: ArrayView2<f64>, eta: &PsdMatrix, sigma: f64) -> Result<f64> {
    let (b, dim) = d.dim();
    if !(sigma > 0.0) {
        return Err(Error::numerical(
            "projection is singular: more rows than columns and sigma = 0",
        ));
    }
    let r = linalg::cholesky(eta.view())
        .ok_or_else(|| Error::numerical("learning rate lost positive definiteness"))?;
    let dr = d.dot(&r);
    let mut inner = dr.t().dot(&dr);
    for i in 0..dim {
        inner[[i, i]] += sigma;
    }
    Ok((b - dim) as f64 / sigma + linalg::trace_of_inverse(inner.view())?)
}

/// Adaptive forward coefficient `kappa * (Tr[(D eta D^T + sigma I)^{-1}] / b)^{-1}`.
/// Not clamped.
pub fn compute_adaptive_k(d: ArrayView2<f64>, eta: &PsdMatrix, kappa: f64, sigma: f64) -> Result<f64> {
    let b = d.nrows();
    if b == 0 {
        return Err(Error::contract("adaptive k needs at least one row"));
    }
    let tr = projected_trace_inverse(d, eta, sigma)?;
    let k = kappa * b as f64 / tr;
    if !tr.is_finite() || !k.is_finite() || !(k > 0.0) {
        return Err(Error::numerical(format!(
            "adaptive k is not a finite positive value (trace {tr})"
        )));
    }
    Ok(k)
}

fn compute_trace_k(d: ArrayView2<f64>, eta: &PsdMatrix, kappa: f64) -> Result<f64> {
    let b = d.nrows() as f64;
    let d_eta = d.dot(eta.as_array());
    let tr = (&d_eta * &d).sum();
    let k = kappa * tr / b;
    if !k.is_finite() || !(k > 0.0) {
        return Err(Error::numerical(format!("trace k is not positive (trace {tr})")));
    }
    Ok(k)
}

fn compute_random_pick_k(
    d: ArrayView2<f64>,
    eta: &PsdMatrix,
    kappa: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let b = d.nrows();
    let mut proj = d.dot(eta.as_array()).dot(&d.t());
    for i in 0..b {
        proj[[i, i]] += sigma;
    }
    let i = rng.random_range(0..b);
    let mut e = Array2::<f64>::zeros((b, 1));
    e[[i, 0]] = 1.0;
    let col = linalg::solve_symmetric(proj.view(), e.view())?;
    let k = kappa / col[[i, 0]];
    if !k.is_finite() || !(k > 0.0) {
        return Err(Error::numerical("random-pick k is not positive"));
    }
    Ok(k)
}

/// Recursive output head of one layer.
#[derive(Debug, Clone)]
pub struct SubLearner {
    theta: Array2<f64>,
    eta_dag: PsdMatrix,
    eta: PsdMatrix,
    steps: usize,
    lambda: f64,
    style: RegStyle,
    rng: ChaCha8Rng,
}

impl SubLearner {
    /// Fresh head with `theta = 0` and `eta_dag = eta = I / lambda`.
    /// `seed` only feeds the random-pick coefficient rule.
    pub fn new(dim: usize, classes: usize, lambda: f64, style: RegStyle, seed: u64) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::contract("learner dimensions must be >= 1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::contract(format!("lambda must be positive, got {lambda}")));
        }
        style.validate()?;
        let eta0 = PsdMatrix::scaled_identity(dim, 1.0 / lambda);
        Ok(SubLearner {
            theta: Array2::zeros((dim, classes)),
            eta_dag: eta0.clone(),
            eta: eta0,
            steps: 0,
            lambda,
            style,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    /// Complete learning rate `eta_{t+1}` from the last step.
    pub fn eta(&self) -> &PsdMatrix {
        &self.eta
    }

    /// Running inverse Gram without the forward term.
    pub fn eta_dag(&self) -> &PsdMatrix {
        &self.eta_dag
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn style(&self) -> &RegStyle {
        &self.style
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn classes(&self) -> usize {
        self.theta.ncols()
    }

    /// Count of `f64` values held, independent of how many steps were taken.
    pub fn state_len(&self) -> usize {
        self.theta.len() + self.eta_dag.as_array().len() + self.eta.as_array().len()
    }

    /// Raw scores `D theta`.
    pub fn logits(&self, d: ArrayView2<f64>) -> Result<Array2<f64>> {
        if d.ncols() != self.dim() {
            return Err(Error::contract(format!(
                "design matrix has {} columns, learner expects {}",
                d.ncols(),
                self.dim()
            )));
        }
        Ok(d.dot(&self.theta))
    }

    /// Steps according to the configured style. `d_next = None` marks the end
    /// of the stream: no forward term is added, while the current batch's
    /// forward term from the previous step is still cancelled.
    pub fn step(
        &mut self,
        d_t: ArrayView2<f64>,
        y_t: ArrayView2<f64>,
        d_next: Option<ArrayView2<f64>>,
    ) -> Result<Option<KPair>> {
        let empty = Array2::<f64>::zeros((0, self.dim()));
        let last = d_next.is_none();
        let d_next = d_next.unwrap_or(empty.view());
        match self.style.kind {
            StyleKind::Ridge => self.step_ridge(d_t, y_t).map(|_| None),
            StyleKind::Kf => self.step_kf(d_t, y_t, d_next).map(|_| None),
            StyleKind::KfBayes => self
                .step_kf_bayes(d_t, y_t, d_next)
                .map(|pair| if last { None } else { Some(pair) }),
        }
    }

    pub fn step_ridge(&mut self, d_t: ArrayView2<f64>, y_t: ArrayView2<f64>) -> Result<()> {
        self.expect_kind(StyleKind::Ridge)?;
        self.check_batch(d_t, y_t)?;
        let eta_dag = self.absorb(d_t)?;
        let empty = Array2::<f64>::zeros((0, self.dim()));
        self.commit(d_t, y_t, empty.view(), eta_dag, 0.0, 0.0)
    }

    pub fn step_kf(
        &mut self,
        d_t: ArrayView2<f64>,
        y_t: ArrayView2<f64>,
        d_next: ArrayView2<f64>,
    ) -> Result<()> {
        self.expect_kind(StyleKind::Kf)?;
        self.check_batch(d_t, y_t)?;
        self.check_next(d_next)?;
        let eta_dag = self.absorb(d_t)?;
        let k = self.style.k;
        let k_next = if d_next.nrows() == 0 { 0.0 } else { k };
        self.commit(d_t, y_t, d_next, eta_dag, k, k_next)
    }

    /// Adaptive forward step. An empty `d_next` (stream end) uses
    /// `k_next = 0` and the returned pair carries `next = 0`.
    pub fn step_kf_bayes(
        &mut self,
        d_t: ArrayView2<f64>,
        y_t: ArrayView2<f64>,
        d_next: ArrayView2<f64>,
    ) -> Result<KPair> {
        self.expect_kind(StyleKind::KfBayes)?;
        self.check_batch(d_t, y_t)?;
        self.check_next(d_next)?;
        let eta_dag = self.absorb(d_t)?;
        let pair = if let KRule::Fixed { current, next } = self.style.k_rule {
            KPair {
                current,
                next: if d_next.nrows() == 0 { 0.0 } else { next },
            }
        } else {
            let source = match self.style.k_source {
                KSource::PseudoIncomplete => eta_dag.clone(),
                KSource::PreviousComplete => self.eta.clone(),
            };
            let current = self.coefficient(d_t, &source)?;
            let next = if d_next.nrows() == 0 {
                0.0
            } else {
                self.coefficient(d_next, &source)?
            };
            KPair { current, next }
        };
        self.commit(d_t, y_t, d_next, eta_dag, pair.current, pair.next)?;
        Ok(pair)
    }

    fn coefficient(&mut self, d: ArrayView2<f64>, eta: &PsdMatrix) -> Result<f64> {
        let (kappa, sigma) = (self.style.kappa, self.style.sigma);
        let raw = match self.style.k_rule {
            KRule::TraceInverse => compute_adaptive_k(d, eta, kappa, sigma)?,
            KRule::Trace => compute_trace_k(d, eta, kappa)?,
            KRule::RandomPick => compute_random_pick_k(d, eta, kappa, sigma, &mut self.rng)?,
            KRule::Fixed { .. } => unreachable!("fixed coefficients are resolved by the caller"),
        };
        Ok(raw.clamp(K_CLAMP.0, K_CLAMP.1))
    }

    fn expect_kind(&self, kind: StyleKind) -> Result<()> {
        if self.style.kind == kind {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "learner is configured as {}, step called for {kind}",
                self.style.kind
            )))
        }
    }

    fn check_batch(&self, d_t: ArrayView2<f64>, y_t: ArrayView2<f64>) -> Result<()> {
        if d_t.ncols() != self.dim() {
            return Err(Error::contract(format!(
                "batch has {} feature columns, learner expects {}",
                d_t.ncols(),
                self.dim()
            )));
        }
        if y_t.ncols() != self.classes() || y_t.nrows() != d_t.nrows() {
            return Err(Error::contract(format!(
                "targets are {:?}, expected ({}, {})",
                y_t.dim(),
                d_t.nrows(),
                self.classes()
            )));
        }
        Ok(())
    }

    fn check_next(&self, d_next: ArrayView2<f64>) -> Result<()> {
        if d_next.ncols() != self.dim() {
            return Err(Error::contract(format!(
                "next batch has {} feature columns, learner expects {}",
                d_next.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Running inverse Gram after the current batch. In `paper_strict` mode the
    /// first batch is skipped.
    fn absorb(&self, d_t: ArrayView2<f64>) -> Result<PsdMatrix> {
        if self.steps == 0 && self.style.init_mode == InitMode::PaperStrict {
            Ok(self.eta_dag.clone())
        } else {
            woodbury_update(&self.eta_dag, d_t, 1.0)
        }
    }

    fn commit(
        &mut self,
        d_t: ArrayView2<f64>,
        y_t: ArrayView2<f64>,
        d_next: ArrayView2<f64>,
        eta_dag: PsdMatrix,
        k_now: f64,
        k_next: f64,
    ) -> Result<()> {
        let eta = woodbury_update(&eta_dag, d_next, k_next)?;
        let theta = &self.theta;
        let mut grad = d_t.t().dot(&d_t.dot(theta)) * (1.0 - k_now);
        if d_next.nrows() > 0 {
            let forward = d_next.t().dot(&d_next.dot(theta)) * k_next;
            grad = forward + &grad;
        }
        grad -= &d_t.t().dot(&y_t);
        let theta_next = theta - &eta.as_array().dot(&grad);
        if theta_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("weight update produced non-finite values"));
        }
        self.theta = theta_next;
        self.eta_dag = eta_dag;
        self.eta = eta;
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
