//! Phase-space types, drift fields and the Hamilton–Randers structure.
//!
//! Configuration space is a single flat chart `ℝ^{8N}`: molecule `k` owns the block
//! `u[8k..8k+8] = (x⁰, x¹, x², x³, y⁰, y¹, y², y³)`. The cotangent fibre is another
//! copy of `ℝ^{8N}` holding the conjugate momenta `p`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Degrees of freedom per sub-quantum molecule.
pub const MOLECULE_DIM: usize = 8;
/// Spacetime position components per molecule.
pub const POSITION_DIM: usize = 4;

pub const DEFAULT_CONE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("number of molecules must be positive")]
    NoMolecules,
    #[error("non-finite value at component {index} ({context})")]
    NonFinite { index: usize, context: String },
    #[error("drift field returned non-finite output at sample {sample}, component {component}")]
    FieldEvaluation { sample: usize, component: usize },
    #[error("co-vector outside the time-like cone: alpha^2 = {alpha_sq:e} <= {tolerance:e}")]
    ConeViolation { alpha_sq: f64, tolerance: f64 },
    #[error("finite-difference stencil leaves the time-like cone at entry ({i}, {j}): alpha^2 = {alpha_sq:e}")]
    Stencil { i: usize, j: usize, alpha_sq: f64 },
    #[error("metric is not symmetric (max asymmetry {0:e})")]
    AsymmetricMetric(f64),
    #[error("Euclidean-signature metric is not positive definite")]
    IndefiniteMetric,
    #[error("Randers condition violated: certified bound {0} is not in (0, 1)")]
    RandersBound(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// A point `(u, p)` of `T*TM` for `N` molecules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    u: Vec<f64>,
    p: Vec<f64>,
    n_molecules: usize,
}

impl PhasePoint {
    pub fn new(u: Vec<f64>, p: Vec<f64>, n_molecules: usize) -> Result<Self, GeometryError> {
        if n_molecules == 0 {
            return Err(GeometryError::NoMolecules);
        }
        let dim = MOLECULE_DIM * n_molecules;
        for v in [&u, &p] {
            if v.len() != dim {
                return Err(GeometryError::Dimension { expected: dim, got: v.len() });
            }
        }
        check_finite(&u, "u")?;
        check_finite(&p, "p")?;
        Ok(Self { u, p, n_molecules })
    }

    pub fn zeros(n_molecules: usize) -> Self {
        let dim = MOLECULE_DIM * n_molecules.max(1);
        Self { u: vec![0.0; dim], p: vec![0.0; dim], n_molecules: n_molecules.max(1) }
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn n_molecules(&self) -> usize {
        self.n_molecules
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Spacetime position `x^μ` of molecule `k`.
    pub fn position(&self, k: usize) -> [f64; POSITION_DIM] {
        let b = k * MOLECULE_DIM;
        [self.u[b], self.u[b + 1], self.u[b + 2], self.u[b + 3]]
    }

    /// `(u, p)` concatenated, the coordinates used by the Lipschitz analysis.
    pub fn to_phase_vector(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.dim());
        z.extend_from_slice(&self.u);
        z.extend_from_slice(&self.p);
        z
    }

    pub fn p_norm(&self) -> f64 {
        norm(&self.p)
    }

    pub(crate) fn from_parts_unchecked(u: Vec<f64>, p: Vec<f64>, n_molecules: usize) -> Self {
        Self { u, p, n_molecules }
    }
}

pub(crate) fn check_finite(v: &[f64], context: &str) -> Result<(), GeometryError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(GeometryError::NonFinite { index, context: context.to_string() }),
        None => Ok(()),
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A smooth drift vector field `β: ℝ^d → ℝ^d`.
pub trait DriftField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, u: &[f64], out: &mut [f64]);

    /// Certified bound on `sup_u max_i |β^i(u)|`, when the family has one.
    fn sup_bound(&self) -> Option<f64>;

    /// `out_i = Σ_k ∂β^k/∂u^i · p_k`, i.e. `J(u)ᵀ p`.
    ///
    /// The default uses central differences of `β(u)·p` with step `1e-6·(1+|u_i|)`.
    fn cotangent(&self, u: &[f64], p: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut probe = u.to_vec();
        let mut buf = vec![0.0; d];
        for i in 0..d {
            let h = 1e-6 * (1.0 + u[i].abs());
            probe[i] = u[i] + h;
            self.eval(&probe, &mut buf);
            let plus = dot(&buf, p);
            probe[i] = u[i] - h;
            self.eval(&probe, &mut buf);
            let minus = dot(&buf, p);
            probe[i] = u[i];
            out[i] = (plus - minus) / (2.0 * h);
        }
    }

    /// Whether [`DriftField::cotangent`] is analytic rather than finite-difference.
    fn analytic_jacobian(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}

impl fmt::Debug for dyn DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DriftField({})", self.describe())
    }
}

#[derive(Debug, Clone)]
pub struct ZeroField {
    dim: usize,
}

impl ZeroField {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl DriftField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn sup_bound(&self) -> Option<f64> {
        Some(0.0)
    }

    fn cotangent(&self, _u: &[f64], _p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn analytic_jacobian(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("zero(dim={})", self.dim)
    }
}

/// `β(u) = c`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    value: Vec<f64>,
}

impl ConstantField {
    pub fn new(value: Vec<f64>) -> Self {
        Self { value }
    }

    pub fn uniform(dim: usize, c: f64) -> Self {
        Self { value: vec![c; dim] }
    }
}

impl DriftField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }

    fn sup_bound(&self) -> Option<f64> {
        Some(self.value.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
    }

    fn cotangent(&self, _u: &[f64], _p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn analytic_jacobian(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("constant(dim={})", self.value.len())
    }
}

/// `β(u) = A u`. Unbounded, so it never certifies the Randers condition globally.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: DMatrix<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Result<Self, GeometryError> {
        if a.nrows() != a.ncols() {
            return Err(GeometryError::Dimension { expected: a.nrows(), got: a.ncols() });
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl DriftField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, u: &[f64], out: &mut [f64]) {
        let n = self.a.nrows();
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..n {
                s += self.a[(i, j)] * u[j];
            }
            *o = s;
        }
    }

    fn sup_bound(&self) -> Option<f64> {
        None
    }

    fn cotangent(&self, _u: &[f64], p: &[f64], out: &mut [f64]) {
        let n = self.a.nrows();
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..n {
                s += self.a[(k, i)] * p[k];
            }
            *o = s;
        }
    }

    fn analytic_jacobian(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("linear(dim={})", self.a.nrows())
    }
}

/// Bounded drift family acting molecule by molecule:
/// `β_block(u_block) = scale · tanh(W u_block + b)` with one shared 8×8 coupling `W`.
///
/// `|β^i| < |scale|` everywhere, which is the certified bound.
#[derive(Debug, Clone)]
pub struct TanhField {
    n_molecules: usize,
    scale: f64,
    coupling: [[f64; MOLECULE_DIM]; MOLECULE_DIM],
    bias: [f64; MOLECULE_DIM],
}

impl TanhField {
    /// `β_i(u) = scale · tanh(u_i)`.
    pub fn diagonal(n_molecules: usize, scale: f64) -> Self {
        let mut coupling = [[0.0; MOLECULE_DIM]; MOLECULE_DIM];
        for (i, row) in coupling.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { n_molecules, scale, coupling, bias: [0.0; MOLECULE_DIM] }
    }

    pub fn coupled(
        n_molecules: usize,
        scale: f64,
        coupling: [[f64; MOLECULE_DIM]; MOLECULE_DIM],
        bias: [f64; MOLECULE_DIM],
    ) -> Self {
        Self { n_molecules, scale, coupling, bias }
    }

    /// Identity plus a seeded random perturbation of size `strength` and a random bias of
    /// size `bias_strength`.
    pub fn random(n_molecules: usize, scale: f64, strength: f64, bias_strength: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, "tanh-field", 0);
        let mut coupling = [[0.0; MOLECULE_DIM]; MOLECULE_DIM];
        for (i, row) in coupling.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                let noise: f64 = r.random_range(-1.0..1.0);
                *w = if i == j { 1.0 } else { 0.0 } + strength * noise;
            }
        }
        let mut bias = [0.0; MOLECULE_DIM];
        for b in bias.iter_mut() {
            *b = bias_strength * r.random_range(-1.0..1.0);
        }
        Self { n_molecules, scale, coupling, bias }
    }

    pub fn n_molecules(&self) -> usize {
        self.n_molecules
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    fn pre_activation(&self, block: &[f64]) -> [f64; MOLECULE_DIM] {
        let mut z = self.bias;
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &self.coupling[i];
            for j in 0..MOLECULE_DIM {
                *zi += row[j] * block[j];
            }
        }
        z
    }
}

impl DriftField for TanhField {
    fn dim(&self) -> usize {
        MOLECULE_DIM * self.n_molecules
    }

    fn eval(&self, u: &[f64], out: &mut [f64]) {
        for (ub, ob) in u.chunks_exact(MOLECULE_DIM).zip(out.chunks_exact_mut(MOLECULE_DIM)) {
            let z = self.pre_activation(ub);
            for i in 0..MOLECULE_DIM {
                ob[i] = self.scale * z[i].tanh();
            }
        }
    }

    fn sup_bound(&self) -> Option<f64> {
        Some(self.scale.abs())
    }

    fn cotangent(&self, u: &[f64], p: &[f64], out: &mut [f64]) {
        let blocks = u
            .chunks_exact(MOLECULE_DIM)
            .zip(p.chunks_exact(MOLECULE_DIM))
            .zip(out.chunks_exact_mut(MOLECULE_DIM));
        for ((ub, pb), ob) in blocks {
            let z = self.pre_activation(ub);
            // w_k = scale·sech²(z_k)·p_k, then out = Wᵀ w
            let mut w = [0.0; MOLECULE_DIM];
            for k in 0..MOLECULE_DIM {
                let t = z[k].tanh();
                w[k] = self.scale * (1.0 - t * t) * pb[k];
            }
            for (i, o) in ob.iter_mut().enumerate() {
                let mut s = 0.0;
                for k in 0..MOLECULE_DIM {
                    s += self.coupling[k][i] * w[k];
                }
                *o = s;
            }
        }
    }

    fn analytic_jacobian(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("tanh(N={}, scale={})", self.n_molecules, self.scale)
    }
}

/// A drift field certified to satisfy the Randers condition, plus the metric `η`
/// defining `α(u, θ) = sqrt(η^{ij} θ_i θ_j)`.
#[derive(Clone)]
pub struct RandersField {
    field: Arc<dyn DriftField>,
    beta_bound: f64,
    eta: DMatrix<f64>,
    euclidean: bool,
}

impl fmt::Debug for RandersField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandersField")
            .field("field", &self.field.describe())
            .field("beta_bound", &self.beta_bound)
            .field("euclidean", &self.euclidean)
            .finish()
    }
}

impl RandersField {
    /// Euclidean `η = I` and the field's own certified bound.
    pub fn new(field: Arc<dyn DriftField>) -> Result<Self, GeometryError> {
        let d = field.dim();
        Self::with_metric(field, DMatrix::identity(d, d), true)
    }

    /// `euclidean` flags a positive-definite `η`; otherwise `η` may be indefinite and
    /// cone membership is checked before every `α` evaluation.
    pub fn with_metric(
        field: Arc<dyn DriftField>,
        eta: DMatrix<f64>,
        euclidean: bool,
    ) -> Result<Self, GeometryError> {
        let bound = field.sup_bound().ok_or_else(|| {
            GeometryError::Parameter(format!("{} has no certified sup bound", field.describe()))
        })?;
        Self::with_bound(field, eta, euclidean, bound)
    }

    /// Certify with an externally supplied bound (e.g. from [`validate_randers`]).
    pub fn with_bound(
        field: Arc<dyn DriftField>,
        eta: DMatrix<f64>,
        euclidean: bool,
        beta_bound: f64,
    ) -> Result<Self, GeometryError> {
        let d = field.dim();
        if eta.nrows() != d || eta.ncols() != d {
            return Err(GeometryError::Dimension { expected: d, got: eta.nrows() });
        }
        if !(0.0..1.0).contains(&beta_bound) {
            return Err(GeometryError::RandersBound(beta_bound));
        }
        let asym = (&eta - eta.transpose()).amax();
        if asym > 1e-12 * (1.0 + eta.amax()) {
            return Err(GeometryError::AsymmetricMetric(asym));
        }
        if euclidean && eta.clone().cholesky().is_none() {
            return Err(GeometryError::IndefiniteMetric);
        }
        Ok(Self { field, beta_bound, eta, euclidean })
    }

    pub fn field(&self) -> &dyn DriftField {
        self.field.as_ref()
    }

    pub fn field_arc(&self) -> Arc<dyn DriftField> {
        Arc::clone(&self.field)
    }

    pub fn beta_bound(&self) -> f64 {
        self.beta_bound
    }

    pub fn eta(&self) -> &DMatrix<f64> {
        &self.eta
    }

    pub fn is_euclidean(&self) -> bool {
        self.euclidean
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandersReport {
    pub samples: usize,
    pub max_abs_beta: f64,
    pub argmax_sample: usize,
    pub argmax_component: usize,
    pub argmax_point: Vec<f64>,
    pub pass: bool,
}

/// Samples `u` uniformly in `[-radius, radius]^d` and records `max_i |β^i(u)|`.
pub fn validate_randers(
    field: &dyn DriftField,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<RandersReport, GeometryError> {
    if samples == 0 {
        return Err(GeometryError::Parameter("samples must be >= 1".into()));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(GeometryError::Parameter(format!("sampling radius {radius} invalid")));
    }
    let d = field.dim();
    let mut r = rng::stream(seed, "randers-validate", 0);
    let mut u = vec![0.0; d];
    let mut out = vec![0.0; d];
    let mut report = RandersReport {
        samples,
        max_abs_beta: 0.0,
        argmax_sample: 0,
        argmax_component: 0,
        argmax_point: vec![0.0; d],
        pass: false,
    };
    for s in 0..samples {
        for x in u.iter_mut() {
            *x = if radius > 0.0 { r.random_range(-radius..=radius) } else { 0.0 };
        }
        field.eval(&u, &mut out);
        for (i, b) in out.iter().enumerate() {
            if !b.is_finite() {
                return Err(GeometryError::FieldEvaluation { sample: s, component: i });
            }
            if b.abs() > report.max_abs_beta {
                report.max_abs_beta = b.abs();
                report.argmax_sample = s;
                report.argmax_component = i;
                report.argmax_point.copy_from_slice(&u);
            }
        }
    }
    report.pass = report.max_abs_beta < 1.0;
    Ok(report)
}

/// Generalized Hamilton space with `F(u, θ) = α(u, θ) + β(u, θ)` on the time-like cone.
#[derive(Debug, Clone)]
pub struct HamiltonRandersStructure {
    field: RandersField,
    cone_tolerance: f64,
}

impl HamiltonRandersStructure {
    pub fn new(field: RandersField) -> Self {
        Self { field, cone_tolerance: DEFAULT_CONE_TOLERANCE }
    }

    pub fn with_cone_tolerance(field: RandersField, cone_tolerance: f64) -> Result<Self, GeometryError> {
        if !(cone_tolerance > 0.0 && cone_tolerance.is_finite()) {
            return Err(GeometryError::Parameter(format!("cone tolerance {cone_tolerance} must be positive")));
        }
        Ok(Self { field, cone_tolerance })
    }

    pub fn field(&self) -> &RandersField {
        &self.field
    }

    pub fn cone_tolerance(&self) -> f64 {
        self.cone_tolerance
    }

    /// `η^{ij} θ_i θ_j`.
    pub fn alpha_sq(&self, theta: &[f64]) -> f64 {
        let eta = self.field.eta();
        let d = theta.len();
        let mut s = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += eta[(i, j)] * theta[j];
            }
            s += theta[i] * row;
        }
        s
    }

    pub fn in_cone(&self, theta: &[f64]) -> bool {
        self.alpha_sq(theta) > self.cone_tolerance
    }

    fn check_dims(&self, u: &[f64], theta: &[f64]) -> Result<(), GeometryError> {
        let d = self.field.dim();
        for v in [u, theta] {
            if v.len() != d {
                return Err(GeometryError::Dimension { expected: d, got: v.len() });
            }
        }
        Ok(())
    }

    /// `β(u, θ) = Σ β^i(u) θ_i`.
    pub fn beta_pairing(&self, u: &[f64], theta: &[f64]) -> f64 {
        let mut b = vec![0.0; self.field.dim()];
        self.field.field().eval(u, &mut b);
        dot(&b, theta)
    }

    pub fn randers_function(&self, u: &[f64], theta: &[f64]) -> Result<f64, GeometryError> {
        self.check_dims(u, theta)?;
        let a2 = self.alpha_sq(theta);
        if !(a2 > self.cone_tolerance) {
            return Err(GeometryError::ConeViolation { alpha_sq: a2, tolerance: self.cone_tolerance });
        }
        Ok(a2.sqrt() + self.beta_pairing(u, theta))
    }

    /// Default central-difference step `1e-4·(1 + |θ|)`.
    pub fn default_step(theta: &[f64]) -> f64 {
        1e-4 * (1.0 + norm(theta))
    }

    /// `g^{ij}(u, θ) = ½ ∂²F²/∂θ_i∂θ_j` by central second differences, symmetrized.
    pub fn fundamental_tensor(
        &self,
        u: &[f64],
        theta: &[f64],
        h: f64,
    ) -> Result<DMatrix<f64>, GeometryError> {
        self.check_dims(u, theta)?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(GeometryError::Parameter(format!("step {h} must be positive")));
        }
        let a2 = self.alpha_sq(theta);
        if !(a2 > self.cone_tolerance) {
            return Err(GeometryError::ConeViolation { alpha_sq: a2, tolerance: self.cone_tolerance });
        }
        let d = theta.len();
        let mut b = vec![0.0; d];
        self.field.field().eval(u, &mut b);
        let mut probe = theta.to_vec();
        // F² at a stencil point; β(u) is fixed because u does not move.
        let f_sq = |probe: &[f64], i: usize, j: usize| -> Result<f64, GeometryError> {
            let a2 = self.alpha_sq(probe);
            if !(a2 > self.cone_tolerance) {
                return Err(GeometryError::Stencil { i, j, alpha_sq: a2 });
            }
            let f = a2.sqrt() + dot(&b, probe);
            Ok(f * f)
        };
        let centre = f_sq(theta, 0, 0)?;
        let mut g = DMatrix::zeros(d, d);
        for i in 0..d {
            probe[i] = theta[i] + h;
            let fp = f_sq(&probe, i, i)?;
            probe[i] = theta[i] - h;
            let fm = f_sq(&probe, i, i)?;
            probe[i] = theta[i];
            g[(i, i)] = 0.5 * (fp - 2.0 * centre + fm) / (h * h);
            for j in (i + 1)..d {
                let mut corner = |si: f64, sj: f64| -> Result<f64, GeometryError> {
                    probe[i] = theta[i] + si * h;
                    probe[j] = theta[j] + sj * h;
                    let v = f_sq(&probe, i, j);
                    probe[i] = theta[i];
                    probe[j] = theta[j];
                    v
                };
                let pp = corner(1.0, 1.0)?;
                let pm = corner(1.0, -1.0)?;
                let mp = corner(-1.0, 1.0)?;
                let mm = corner(-1.0, -1.0)?;
                let v = 0.5 * (pp - pm - mp + mm) / (4.0 * h * h);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        // The stencil is symmetric by construction; averaging guards round-off anyway.
        let g = (&g + g.transpose()) * 0.5;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclidean(field: Arc<dyn DriftField>) -> HamiltonRandersStructure {
        HamiltonRandersStructure::new(RandersField::new(field).unwrap())
    }

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        e
    }

    #[test]
    fn phase_point_rejects_bad_shapes() {
        assert_eq!(
            PhasePoint::new(vec![0.0; 8], vec![0.0; 7], 1),
            Err(GeometryError::Dimension { expected: 8, got: 7 })
        );
        assert_eq!(PhasePoint::new(vec![], vec![], 0), Err(GeometryError::NoMolecules));
        let mut u = vec![0.0; 8];
        u[3] = f64::NAN;
        assert!(matches!(
            PhasePoint::new(u, vec![0.0; 8], 1),
            Err(GeometryError::NonFinite { index: 3, .. })
        ));
    }

    #[test]
    fn zero_field_passes_validation() {
        let r = validate_randers(&ZeroField::new(16), 100, 5.0, 1).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_beta, 0.0);
    }

    #[test]
    fn tanh_validation_against_dense_grid() {
        // Oracle: dense grid of 0.9·tanh(x) over [-20, 20]; its maximum approaches 0.9.
        let grid_max = (0..=400_000)
            .map(|k| -20.0 + 1e-4 * k as f64)
            .map(|x| (0.9 * x.tanh()).abs())
            .fold(0.0, f64::max);
        assert!(grid_max <= 0.9 && grid_max > 0.899_999);

        let field = TanhField::diagonal(1, 0.9);
        let r = validate_randers(&field, 10_000, 10.0, 3).unwrap();
        assert!(r.pass);
        assert!(r.max_abs_beta < 0.9 && r.max_abs_beta <= grid_max);

        let loud = TanhField::diagonal(1, 1.5);
        let direct = 1.5 * 10.0_f64.tanh();
        assert!(direct > 1.0);
        let r = validate_randers(&loud, 1000, 10.0, 3).unwrap();
        assert!(!r.pass);
        assert!(r.max_abs_beta > 1.0);
        // The recorded maximizer reproduces the reported value.
        let mut out = vec![0.0; 8];
        loud.eval(&r.argmax_point, &mut out);
        assert_eq!(out[r.argmax_component].abs(), r.max_abs_beta);
    }

    struct Exploding;
    impl DriftField for Exploding {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, u: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
            out[1] = if u[0] > 0.0 { f64::INFINITY } else { 0.0 };
        }
        fn sup_bound(&self) -> Option<f64> {
            None
        }
        fn describe(&self) -> String {
            "exploding".into()
        }
    }

    #[test]
    fn validation_names_offending_sample() {
        let err = validate_randers(&Exploding, 100, 1.0, 0).unwrap_err();
        assert!(matches!(err, GeometryError::FieldEvaluation { component: 1, .. }));
    }

    #[test]
    fn randers_field_rejects_bad_inputs() {
        assert!(matches!(
            RandersField::new(Arc::new(TanhField::diagonal(1, 1.5))),
            Err(GeometryError::RandersBound(_))
        ));
        let mut eta = DMatrix::<f64>::identity(8, 8);
        eta[(0, 1)] = 0.5;
        assert!(matches!(
            RandersField::with_metric(Arc::new(ZeroField::new(8)), eta, true),
            Err(GeometryError::AsymmetricMetric(_))
        ));
        let mut eta = DMatrix::<f64>::identity(8, 8);
        eta[(0, 0)] = -1.0;
        assert_eq!(
            RandersField::with_metric(Arc::new(ZeroField::new(8)), eta.clone(), true).unwrap_err(),
            GeometryError::IndefiniteMetric
        );
        assert!(RandersField::with_metric(Arc::new(ZeroField::new(8)), eta, false).is_ok());
    }

    #[test]
    fn randers_function_examples() {
        let hrs = euclidean(Arc::new(ZeroField::new(8)));
        let u = vec![0.0; 8];
        assert!(matches!(
            hrs.randers_function(&u, &[0.0; 8]),
            Err(GeometryError::ConeViolation { .. })
        ));
        assert_eq!(hrs.randers_function(&u, &unit(8, 0)).unwrap(), 1.0);

        let mut c = vec![0.0; 8];
        c[0] = 0.5;
        let hrs = euclidean(Arc::new(ConstantField::new(c)));
        assert_eq!(hrs.randers_function(&u, &unit(8, 0)).unwrap(), 1.5);
    }

    #[test]
    fn indefinite_metric_requires_cone() {
        let mut eta = DMatrix::<f64>::identity(8, 8);
        eta[(1, 1)] = -1.0;
        let field = RandersField::with_metric(Arc::new(ZeroField::new(8)), eta, false).unwrap();
        let hrs = HamiltonRandersStructure::new(field);
        let u = vec![0.0; 8];
        assert!(hrs.randers_function(&u, &unit(8, 1)).is_err());
        assert_eq!(hrs.randers_function(&u, &unit(8, 0)).unwrap(), 1.0);
    }

    #[test]
    fn fundamental_tensor_of_quadratic_forms() {
        let u = vec![0.0; 8];
        let theta = vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.2, 0.9];
        let h = HamiltonRandersStructure::default_step(&theta);

        let hrs = euclidean(Arc::new(ZeroField::new(8)));
        let g = hrs.fundamental_tensor(&u, &theta, h).unwrap();
        assert!((g - DMatrix::<f64>::identity(8, 8)).amax() < 1e-6);

        let diag = [1.0, 2.0, 0.5, 3.0, 1.5, 0.25, 4.0, 1.0];
        let eta = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&diag));
        let field = RandersField::with_metric(Arc::new(ZeroField::new(8)), eta.clone(), true).unwrap();
        let g = HamiltonRandersStructure::new(field).fundamental_tensor(&u, &theta, h).unwrap();
        assert!((g - eta).amax() < 1e-5);
    }

    #[test]
    fn fundamental_tensor_with_drift_is_positive_definite() {
        let mut c = vec![0.0; 8];
        c[0] = 0.5;
        let hrs = euclidean(Arc::new(ConstantField::new(c)));
        let u = vec![0.0; 8];
        let theta = unit(8, 1);
        let g = hrs.fundamental_tensor(&u, &theta, HamiltonRandersStructure::default_step(&theta)).unwrap();
        let eig = g.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        assert!(min > 0.0, "min eigenvalue {min}");
        // F² = |θ|² + θ₀|θ| + θ₀²/4, so ½∂²F²/∂θ₀² = (2 + 0 + 1/2)/2 at θ₀ = 0.
        assert!((g[(0, 0)] - 1.25).abs() < 1e-5);
        assert!((&g - g.transpose()).amax() == 0.0);
    }

    #[test]
    fn tensor_stencil_error_near_cone_boundary() {
        let mut eta = DMatrix::<f64>::identity(2, 2);
        eta[(1, 1)] = -1.0;
        let field = RandersField::with_metric(Arc::new(ZeroField::new(2)), eta, false).unwrap();
        let hrs = HamiltonRandersStructure::new(field);
        // α² = 1.0001² − 1 > 0 but a step of 0.01 leaves the cone.
        let theta = [1.000_01, 1.0];
        assert!(hrs.in_cone(&theta));
        assert!(matches!(
            hrs.fundamental_tensor(&[0.0, 0.0], &theta, 0.01),
            Err(GeometryError::Stencil { .. })
        ));
    }

    #[test]
    fn tanh_cotangent_matches_finite_differences() {
        struct Fd(TanhField);
        impl DriftField for Fd {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn eval(&self, u: &[f64], out: &mut [f64]) {
                self.0.eval(u, out)
            }
            fn sup_bound(&self) -> Option<f64> {
                self.0.sup_bound()
            }
            fn describe(&self) -> String {
                "fd".into()
            }
        }
        let field = TanhField::random(2, 0.9, 0.3, 0.2, 11);
        let u: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let p: Vec<f64> = (0..16).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        field.cotangent(&u, &p, &mut a);
        Fd(field).cotangent(&u, &p, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}
