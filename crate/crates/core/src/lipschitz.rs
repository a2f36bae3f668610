//! Sampled Lipschitz analysis on compact phase-space boxes and the radial
//! decomposition `H = R(ϱ)·H(z̄) + δH` into a global 1-Lipschitz part and a matter
//! remainder.
//!
//! Distances are Euclidean, optionally with separate weights on the `u` and `p`
//! halves of `z = (u, p)`. Every artifact records the metric, the box and the scale
//! profile, since different choices give different (equally valid) decompositions.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CycleSchedule, Snapshot};
use crate::geometry::{dot, DriftField};
use crate::rng;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LipschitzError {
    #[error("box bounds invalid at component {0}: lower must be < upper and finite")]
    EmptyBox(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("every sampled pair had zero separation")]
    AllPairsDegenerate,
    #[error("scale profile invalid: {0}")]
    Profile(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoxMetric {
    Euclidean,
    /// `d² = u_scale²|Δu|² + p_scale²|Δp|²`; the first half of `z` is `u`.
    Weighted { u_scale: f64, p_scale: f64 },
}

/// Axis-aligned box `K′ ⊂ ℝ^d` with its metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    metric: BoxMetric,
}

impl CompactBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, metric: BoxMetric) -> Result<Self, LipschitzError> {
        if lower.len() != upper.len() {
            return Err(LipschitzError::Dimension { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(LipschitzError::Parameter("box must have dimension >= 1".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(LipschitzError::EmptyBox(i));
            }
        }
        if let BoxMetric::Weighted { u_scale, p_scale } = metric {
            if !(u_scale > 0.0 && p_scale > 0.0 && u_scale.is_finite() && p_scale.is_finite()) {
                return Err(LipschitzError::Parameter("metric weights must be positive".into()));
            }
        }
        Ok(Self { lower, upper, metric })
    }

    /// `[lo, hi]^d` with the Euclidean metric.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self, LipschitzError> {
        Self::new(vec![lo; d], vec![hi; d], BoxMetric::Euclidean)
    }

    /// Smallest box containing `points`, each half-width enlarged by `dilation`
    /// (0.1 = 10%). Degenerate directions get half-width `1e-6`.
    pub fn enclosing(points: &[Vec<f64>], dilation: f64, metric: BoxMetric) -> Result<Self, LipschitzError> {
        let first = points.first().ok_or_else(|| LipschitzError::Parameter("no points".into()))?;
        let d = first.len();
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            if p.len() != d {
                return Err(LipschitzError::Dimension { expected: d, got: p.len() });
            }
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..d {
            let c = 0.5 * (lo[i] + hi[i]);
            let half = (0.5 * (hi[i] - lo[i]) * (1.0 + dilation)).max(1e-6);
            lo[i] = c - half;
            hi[i] = c + half;
        }
        Self::new(lo, hi, metric)
    }

    /// Same centre, half-widths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, LipschitzError> {
        let (lo, hi) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let c = 0.5 * (l + u);
                let h = 0.5 * (u - l) * factor;
                (c - h, c + h)
            })
            .unzip();
        Self::new(lo, hi, self.metric)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn metric(&self) -> BoxMetric {
        self.metric
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        match self.metric {
            BoxMetric::Euclidean => 1.0,
            BoxMetric::Weighted { u_scale, p_scale } => {
                if i < self.dim() / 2 {
                    u_scale
                } else {
                    p_scale
                }
            }
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| (self.weight(i) * (x - y)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn diameter(&self) -> f64 {
        self.distance(&self.lower, &self.upper)
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| *l <= *x && *x <= *u)
    }

    fn sample_into<R: Rng>(&self, r: &mut R, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = r.random_range(self.lower[i]..=self.upper[i]);
        }
    }

    /// Steepest-ascent unit step (in this metric) along gradient `g`, scaled to
    /// length `r`, and the dual norm `|g|_*`.
    fn steepest(&self, g: &[f64], r: f64, out: &mut [f64]) -> f64 {
        let dual = g
            .iter()
            .enumerate()
            .map(|(i, gi)| (gi / self.weight(i)).powi(2))
            .sum::<f64>()
            .sqrt();
        if dual > 0.0 {
            for (i, o) in out.iter_mut().enumerate() {
                let w = self.weight(i);
                *o = r * g[i] / (w * w) / dual;
            }
        } else {
            out.fill(0.0);
        }
        dual
    }

    /// Central-difference gradient with per-axis step `1e-6·(width_i)`.
    fn gradient(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync), z: &[f64], probe: &mut [f64], g: &mut [f64]) {
        probe.copy_from_slice(z);
        for i in 0..z.len() {
            let h = 1e-6 * (self.upper[i] - self.lower[i]);
            probe[i] = z[i] + h;
            let fp = f(probe);
            probe[i] = z[i] - h;
            let fm = f(probe);
            probe[i] = z[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
    }
}

/// `(z̄, ϱ)`: the nearest point of the box and the distance to it. Clamping is the
/// minimizer for any diagonal metric.
pub fn project_to_box(z: &[f64], domain: &CompactBox) -> (Vec<f64>, f64) {
    let zbar: Vec<f64> = z
        .iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(x, (l, u))| x.clamp(*l, *u))
        .collect();
    let rho = domain.distance(z, &zbar);
    (zbar, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    PairSampling,
    GradientNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub constant_hat: f64,
    pub method: EstimateMethod,
    pub pairs_or_points: usize,
    pub confidence_note: String,
}

/// Fraction of the box diameter used for short-separation pairs.
pub const SHORT_SEPARATION: f64 = 1e-4;

/// Sampled Lipschitz constant of `f` on `domain`.
///
/// `PairSampling` alternates uniformly random pairs with short-separation pairs
/// `(z, z + δ)`, `|δ| = 1e-4·diam`, where `δ` points along the numerical steepest-ascent
/// direction at `z`. Every ratio is a true difference quotient, so the estimate is a
/// lower bound on the Lipschitz constant. `GradientNorm` reports the largest sampled
/// dual norm of the central-difference gradient, an upper surrogate valid for smooth `f`.
pub fn estimate_lipschitz(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    domain: &CompactBox,
    n_pairs: usize,
    seed: u64,
    method: EstimateMethod,
) -> Result<LipschitzEstimate, LipschitzError> {
    if n_pairs == 0 {
        return Err(LipschitzError::Parameter("n_pairs must be >= 1".into()));
    }
    let d = domain.dim();
    let chunks = n_pairs.div_ceil(rng::CHUNK);
    let tag = match method {
        EstimateMethod::PairSampling => "lipschitz-pairs",
        EstimateMethod::GradientNorm => "lipschitz-gradient",
    };
    let r_short = SHORT_SEPARATION * domain.diameter();
    let per_chunk: Vec<(f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, tag, c as u64);
            let count = rng::CHUNK.min(n_pairs - c * rng::CHUNK);
            let mut z1 = vec![0.0; d];
            let mut z2 = vec![0.0; d];
            let mut g = vec![0.0; d];
            let mut probe = vec![0.0; d];
            let mut step = vec![0.0; d];
            let mut best = 0.0_f64;
            let mut valid = 0usize;
            for k in 0..count {
                domain.sample_into(&mut r, &mut z1);
                match method {
                    EstimateMethod::GradientNorm => {
                        domain.gradient(f, &z1, &mut probe, &mut g);
                        let dual = domain.steepest(&g, 1.0, &mut step);
                        if dual.is_finite() {
                            best = best.max(dual);
                            valid += 1;
                        }
                    }
                    EstimateMethod::PairSampling => {
                        if (c * rng::CHUNK + k).is_multiple_of(2) {
                            domain.sample_into(&mut r, &mut z2);
                        } else {
                            domain.gradient(f, &z1, &mut probe, &mut g);
                            domain.steepest(&g, r_short, &mut step);
                            if step.iter().all(|s| *s == 0.0) {
                                // flat here: fall back to a random direction
                                for s in step.iter_mut() {
                                    *s = r.random_range(-1.0..1.0);
                                }
                                let len = domain.distance(&step, &vec![0.0; d]);
                                if len > 0.0 {
                                    step.iter_mut().for_each(|s| *s *= r_short / len);
                                }
                            }
                            for i in 0..d {
                                z2[i] = z1[i] + step[i];
                            }
                            if !domain.contains(&z2) {
                                for i in 0..d {
                                    z2[i] = z1[i] - step[i];
                                }
                            }
                            for i in 0..d {
                                z2[i] = z2[i].clamp(domain.lower[i], domain.upper[i]);
                            }
                        }
                        let dist = domain.distance(&z1, &z2);
                        if dist > 0.0 {
                            let ratio = (f(&z1) - f(&z2)).abs() / dist;
                            if ratio.is_finite() {
                                best = best.max(ratio);
                                valid += 1;
                            }
                        }
                    }
                }
            }
            (best, valid)
        })
        .collect();
    let valid: usize = per_chunk.iter().map(|c| c.1).sum();
    if valid == 0 {
        return Err(LipschitzError::AllPairsDegenerate);
    }
    let constant_hat = per_chunk.iter().map(|c| c.0).fold(0.0, f64::max);
    let confidence_note = match method {
        EstimateMethod::PairSampling => format!(
            "lower bound from {valid} difference quotients ({} short-separation, |delta| = {SHORT_SEPARATION:e} diam)",
            valid / 2
        ),
        EstimateMethod::GradientNorm => format!(
            "max finite-difference gradient dual norm over {valid} points; an upper surrogate only for smooth f"
        ),
    };
    Ok(LipschitzEstimate { constant_hat, method, pairs_or_points: valid, confidence_note })
}

/// Half-width factors of the shells around `K′` sampled by [`estimate_lipschitz_nested`].
pub const SHELL_FACTORS: [f64; 3] = [1.0, 1.25, 2.0];

/// Pair-sampling estimate on `outer` that also samples the shells `K′·s` for
/// `s` in [`SHELL_FACTORS`] below the outer scale. Uniform pairs in a large box in high
/// dimension almost never come near `K′`, where a radially damped function is steepest;
/// every shell estimate is a lower bound, so their maximum is too. Each box gets
/// `n_pairs` pairs from its own sub-seed.
pub fn estimate_lipschitz_nested(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    inner: &CompactBox,
    outer: &CompactBox,
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate, LipschitzError> {
    if inner.dim() != outer.dim() {
        return Err(LipschitzError::Dimension { expected: inner.dim(), got: outer.dim() });
    }
    let outer_scale = (0..inner.dim())
        .map(|i| (outer.upper[i] - outer.lower[i]) / (inner.upper[i] - inner.lower[i]))
        .fold(f64::INFINITY, f64::min);
    let mut boxes = Vec::new();
    for s in SHELL_FACTORS {
        if s < outer_scale {
            boxes.push(inner.scaled(s)?);
        }
    }
    boxes.push(outer.clone());
    let mut best: Option<LipschitzEstimate> = None;
    let mut total = 0;
    for (k, b) in boxes.iter().enumerate() {
        let e = estimate_lipschitz(f, b, n_pairs, rng::derive_seed(seed, "lipschitz-shell", k as u64), EstimateMethod::PairSampling)?;
        total += e.pairs_or_points;
        if best.as_ref().is_none_or(|b| e.constant_hat > b.constant_hat) {
            best = Some(e);
        }
    }
    let mut best = best.expect("at least the outer box");
    best.pairs_or_points = total;
    best.confidence_note = format!("max over {} nested boxes; {}", boxes.len(), best.confidence_note);
    Ok(best)
}

/// `g = f / M` with `M = max{1, L̂}`. Rescaling `H` rescales the time parameter only,
/// so neither the equations of motion nor the Randers condition change.
#[derive(Clone)]
pub struct Normalized {
    inner: ScalarFn,
    scale: f64,
}

impl fmt::Debug for Normalized {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Normalized").field("scale", &self.scale).finish()
    }
}

impl Normalized {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        (self.inner)(z) / self.scale
    }

    pub fn as_fn(&self) -> ScalarFn {
        let inner = Arc::clone(&self.inner);
        let scale = self.scale;
        Arc::new(move |z| inner(z) / scale)
    }
}

pub fn normalize_to_one_lipschitz(f: ScalarFn, estimate: &LipschitzEstimate) -> Normalized {
    Normalized { inner: f, scale: estimate.constant_hat.max(1.0) }
}

/// Positive, nonincreasing `R(ϱ)` with `R(0) = 1`.
#[derive(Clone)]
pub enum ScaleProfile {
    /// `R(ϱ) = 1 / (1 + ϱ/ϱ₀)`.
    Rational { rho0: f64 },
    Custom { name: String, r: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for ScaleProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleProfile::Rational { rho0 } => write!(f, "Rational {{ rho0: {rho0} }}"),
            ScaleProfile::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ScaleProfile {
    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            ScaleProfile::Rational { rho0 } => 1.0 / (1.0 + rho / rho0),
            ScaleProfile::Custom { r, .. } => r(rho),
        }
    }

    pub fn family(&self) -> &str {
        match self {
            ScaleProfile::Rational { .. } => "rational",
            ScaleProfile::Custom { name, .. } => name,
        }
    }

    pub fn rho0(&self) -> Option<f64> {
        match self {
            ScaleProfile::Rational { rho0 } => Some(*rho0),
            ScaleProfile::Custom { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), LipschitzError> {
        if let ScaleProfile::Rational { rho0 } = self {
            if !(*rho0 > 0.0 && rho0.is_finite()) {
                return Err(LipschitzError::Profile(format!("rho0 = {rho0} must be positive")));
            }
        }
        let r0 = self.eval(0.0);
        if r0 != 1.0 {
            return Err(LipschitzError::Profile(format!("R(0) = {r0}, expected 1")));
        }
        let mut prev = r0;
        for k in 1..=200 {
            let rho = 1e-3 * 1.1_f64.powi(k);
            let v = self.eval(rho);
            if !(v > 0.0) {
                return Err(LipschitzError::Profile(format!("R({rho}) = {v} is not positive")));
            }
            if v > prev {
                return Err(LipschitzError::Profile(format!("R increases at rho = {rho}")));
            }
            prev = v;
        }
        Ok(())
    }
}

/// `H(z) = R(ϱ(z))·H(z̄(z)) + δH(z)`.
#[derive(Clone)]
pub struct HamiltonianDecomposition {
    hamiltonian: ScalarFn,
    domain: CompactBox,
    profile: ScaleProfile,
}

impl fmt::Debug for HamiltonianDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianDecomposition")
            .field("domain", &self.domain)
            .field("profile", &self.profile)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parts {
    pub hamiltonian: f64,
    pub lipschitz_part: f64,
    pub matter_part: f64,
}

/// The normalized form `H/R = H(z̄) + δH/R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedView {
    pub h_over_r: f64,
    pub h_projected: f64,
    pub matter_over_r: f64,
}

pub fn radial_decomposition(
    hamiltonian: ScalarFn,
    domain: CompactBox,
    profile: ScaleProfile,
) -> Result<HamiltonianDecomposition, LipschitzError> {
    profile.validate()?;
    Ok(HamiltonianDecomposition { hamiltonian, domain, profile })
}

impl HamiltonianDecomposition {
    pub fn domain(&self) -> &CompactBox {
        &self.domain
    }

    pub fn profile(&self) -> &ScaleProfile {
        &self.profile
    }

    pub fn hamiltonian(&self, z: &[f64]) -> f64 {
        (self.hamiltonian)(z)
    }

    pub fn lipschitz_part(&self, z: &[f64]) -> f64 {
        let (zbar, rho) = project_to_box(z, &self.domain);
        self.profile.eval(rho) * (self.hamiltonian)(&zbar)
    }

    pub fn matter_part(&self, z: &[f64]) -> f64 {
        self.parts(z).matter_part
    }

    pub fn parts(&self, z: &[f64]) -> Parts {
        let h = (self.hamiltonian)(z);
        let lip = self.lipschitz_part(z);
        Parts { hamiltonian: h, lipschitz_part: lip, matter_part: h - lip }
    }

    pub fn normalized_view(&self, z: &[f64]) -> NormalizedView {
        let (zbar, rho) = project_to_box(z, &self.domain);
        let r = self.profile.eval(rho);
        let h = (self.hamiltonian)(z);
        let hp = (self.hamiltonian)(&zbar);
        NormalizedView { h_over_r: h / r, h_projected: hp, matter_over_r: (h - r * hp) / r }
    }

    pub fn lipschitz_fn(&self) -> ScalarFn {
        let me = self.clone();
        Arc::new(move |z| me.lipschitz_part(z))
    }

    pub fn with_profile(&self, profile: ScaleProfile) -> Result<Self, LipschitzError> {
        radial_decomposition(Arc::clone(&self.hamiltonian), self.domain.clone(), profile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoTuning {
    pub rho0: f64,
    pub estimate: f64,
    /// Whether the sampled constant reached the target; failure is reported, not hidden.
    pub reached: bool,
    pub evaluations: usize,
}

/// Log-scale bisection for the smallest `ϱ₀` whose sampled global Lipschitz constant
/// of the 1-Lipschitz part is `≤ target`. All trials share one seed, hence one sample set.
pub fn tune_rho0(
    hamiltonian: ScalarFn,
    domain: &CompactBox,
    global: &CompactBox,
    n_pairs: usize,
    seed: u64,
    target: f64,
) -> Result<RhoTuning, LipschitzError> {
    let diam = domain.diameter();
    let estimate_at = |rho0: f64| -> Result<f64, LipschitzError> {
        let dec = radial_decomposition(Arc::clone(&hamiltonian), domain.clone(), ScaleProfile::Rational { rho0 })?;
        let f = dec.lipschitz_fn();
        Ok(estimate_lipschitz_nested(f.as_ref(), domain, global, n_pairs, seed)?.constant_hat)
    };
    let mut lo = 1e-3 * diam;
    let mut hi = 1e3 * diam;
    let mut evaluations = 2;
    let e_hi = estimate_at(hi)?;
    if e_hi > target {
        return Ok(RhoTuning { rho0: hi, estimate: e_hi, reached: false, evaluations });
    }
    let e_lo = estimate_at(lo)?;
    if e_lo <= target {
        return Ok(RhoTuning { rho0: lo, estimate: e_lo, reached: true, evaluations });
    }
    let mut best = (hi, e_hi);
    for _ in 0..40 {
        if hi / lo < 1.0 + 1e-3 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let e = estimate_at(mid)?;
        evaluations += 1;
        if e <= target {
            hi = mid;
            best = (mid, e);
        } else {
            lo = mid;
        }
    }
    Ok(RhoTuning { rho0: best.0, estimate: best.1, reached: true, evaluations })
}

/// `z = (u, p) ↦ Σ β^k(u) p_k`.
pub fn cycle_hamiltonian_fn(field: Arc<dyn DriftField>) -> ScalarFn {
    Arc::new(move |z: &[f64]| {
        let d = field.dim();
        let (u, p) = z.split_at(d);
        let mut b = vec![0.0; d];
        field.eval(u, &mut b);
        dot(&b, p)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotSplit {
    pub t: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub lipschitz_part: f64,
    pub matter_part: f64,
    /// `(1-κ)^{1/2}` at the snapshot.
    pub scale: f64,
    pub lipschitz_part_unscaled: f64,
    pub matter_part_unscaled: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub snapshots: Vec<SnapshotSplit>,
    pub all_within_bound: bool,
    /// Snapshots where the unscaled matter part is positive.
    pub matter_positive: usize,
    /// Of those, snapshots where the unscaled 1-Lipschitz part is `≤ 0`.
    pub lipschitz_nonpositive_given_matter_positive: usize,
}

/// Checks `|H_Lipschitz + H_matter| = |H| ≤ 1e-9·(1+|p|)` at equilibrium snapshots.
///
/// The decomposition is of the cycle Hamiltonian `Σβp` (possibly normalized by `1/M`);
/// at time `t` both parts carry the factor `(1-κ(t))^{1/2}`, so the unscaled parts are
/// reported alongside and are generally nonzero individually.
pub fn check_constraint_split(
    decomposition: &HamiltonianDecomposition,
    snapshots: &[Snapshot],
    schedule: &CycleSchedule,
) -> Result<ConstraintReport, LipschitzError> {
    let mut out = Vec::with_capacity(snapshots.len());
    let (mut pos, mut neg) = (0, 0);
    for snap in snapshots {
        let z = snap.state.point.to_phase_vector();
        if z.len() != decomposition.domain.dim() {
            return Err(LipschitzError::Dimension { expected: decomposition.domain.dim(), got: z.len() });
        }
        let s = schedule
            .speed(snap.state.t)
            .map_err(|e| LipschitzError::Parameter(e.to_string()))?;
        let parts = decomposition.parts(&z);
        let h = s * parts.hamiltonian;
        let lip = s * parts.lipschitz_part;
        let matter = s * parts.matter_part;
        let within = (lip + matter).abs() <= 1e-9 * (1.0 + snap.state.point.p_norm());
        if parts.matter_part > 0.0 {
            pos += 1;
            if parts.lipschitz_part <= 0.0 {
                neg += 1;
            }
        }
        out.push(SnapshotSplit {
            t: snap.state.t,
            h,
            lipschitz_part: lip,
            matter_part: matter,
            scale: s,
            lipschitz_part_unscaled: parts.lipschitz_part,
            matter_part_unscaled: parts.matter_part,
            within_bound: within,
        });
    }
    Ok(ConstraintReport {
        all_within_bound: out.iter().all(|s| s.within_bound),
        snapshots: out,
        matter_positive: pos,
        lipschitz_nonpositive_given_matter_positive: neg,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub family: String,
    pub rho0: Option<f64>,
}

/// Serialized form of a decomposition run.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    #[serde(rename = "box")]
    pub domain: CompactBox,
    pub metric: BoxMetric,
    pub profile: ProfileSummary,
    pub lipschitz_estimate_global: f64,
    pub identity_max_abs_residual: f64,
    pub snapshots: Vec<SnapshotSplit>,
}

/// `max |H − (lipschitz_part + matter_part)|` over `n` points drawn from `sample_box`.
pub fn identity_residual(
    decomposition: &HamiltonianDecomposition,
    sample_box: &CompactBox,
    n: usize,
    seed: u64,
) -> f64 {
    let d = sample_box.dim();
    let chunks = n.div_ceil(rng::CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, "decomposition-identity", c as u64);
            let mut z = vec![0.0; d];
            let mut worst = 0.0_f64;
            for _ in 0..rng::CHUNK.min(n - c * rng::CHUNK) {
                sample_box.sample_into(&mut r, &mut z);
                let p = decomposition.parts(&z);
                worst = worst.max((p.hamiltonian - (p.lipschitz_part + p.matter_part)).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// `max |matter_part|` over `n` points drawn inside the decomposition's box.
pub fn max_matter_inside(decomposition: &HamiltonianDecomposition, n: usize, seed: u64) -> f64 {
    let domain = decomposition.domain();
    let d = domain.dim();
    let mut r = rng::stream(seed, "decomposition-inside", 0);
    let mut z = vec![0.0; d];
    let mut worst = 0.0_f64;
    for _ in 0..n {
        domain.sample_into(&mut r, &mut z);
        worst = worst.max(decomposition.matter_part(&z).abs());
    }
    worst
}
