//! Center-of-mass observables and the weak-equivalence-principle experiment.
//!
//! Molecules are exchangeable: they couple only through a shared block-wise field and
//! their initial 8-vectors are i.i.d. draws from a Gaussian preparation measure. `τ` is
//! the equilibrium-snapshot index; snapshots sit at `t = (2τ+1)T`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concentration::{ConcentrationError, ConcentrationProfile, DecayFit};
use crate::dynamics::{advance_positions, steps_per_period, CycleSchedule, FlowConfig, FlowError};
use crate::geometry::{ConstantField, DriftField, PhasePoint, TanhField, ZeroField, MOLECULE_DIM, POSITION_DIM};
use crate::output::{fmt_f64, CsvWriter};
use crate::rng;
use crate::stats::{self, LinearFit};

pub type Vec4 = [f64; POSITION_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("no molecule carries tag {0:?}")]
    EmptySubset(Tag),
    #[error("ensemble needs N_A, N_B >= 1 (got N_A = {n_a}, N_B = {n_b})")]
    Split { n_a: usize, n_b: usize },
    #[error("preparation covariance is not symmetric positive semidefinite")]
    Covariance,
    #[error("free evolution violated: {0}")]
    NotFree(String),
    #[error("scale relation needs at least 3 values of N, got {0}")]
    InsufficientCoverage(usize),
    #[error("tail for N = {0} never drops below the threshold")]
    NoCrossing(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Concentration(#[from] ConcentrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    A,
    B,
    /// The union `A ⊔ B`.
    S,
}

impl Tag {
    fn selects(self, label: Tag) -> bool {
        self == Tag::S || self == label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the number of molecules carrying the tag.
    PerTag,
    /// Divide by the size of the whole ensemble.
    Total,
}

/// Gaussian preparation measure `μ_P` for one molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preparation {
    pub mean: [f64; MOLECULE_DIM],
    pub covariance: [[f64; MOLECULE_DIM]; MOLECULE_DIM],
    pub seed: u64,
}

impl Preparation {
    pub fn isotropic(mean: [f64; MOLECULE_DIM], sigma: f64, seed: u64) -> Self {
        let mut covariance = [[0.0; MOLECULE_DIM]; MOLECULE_DIM];
        for (i, row) in covariance.iter_mut().enumerate() {
            row[i] = sigma * sigma;
        }
        Self { mean, covariance, seed }
    }

    /// Square root `L` with `L Lᵀ = Σ`, from the symmetric eigendecomposition so that
    /// singular (PSD) covariances are accepted.
    pub fn sqrt_covariance(&self) -> Result<[[f64; MOLECULE_DIM]; MOLECULE_DIM], ObservableError> {
        let c = DMatrix::from_fn(MOLECULE_DIM, MOLECULE_DIM, |i, j| self.covariance[i][j]);
        if c.iter().any(|x| !x.is_finite()) || (&c - c.transpose()).amax() > 1e-12 * (1.0 + c.amax()) {
            return Err(ObservableError::Covariance);
        }
        let eig = SymmetricEigen::new(c.clone());
        let tol = 1e-12 * (1.0 + c.amax());
        if eig.eigenvalues.iter().any(|l| *l < -tol) {
            return Err(ObservableError::Covariance);
        }
        let mut l = [[0.0; MOLECULE_DIM]; MOLECULE_DIM];
        for (i, row) in l.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
            }
        }
        Ok(l)
    }

    /// Position-block standard deviations.
    pub fn position_sigma(&self) -> Vec4 {
        std::array::from_fn(|mu| self.covariance[mu][mu].max(0.0).sqrt())
    }
}

fn draw_molecules(
    r: &mut ChaCha8Rng,
    mean: &[f64; MOLECULE_DIM],
    l: &[[f64; MOLECULE_DIM]; MOLECULE_DIM],
    n: usize,
) -> Vec<f64> {
    let mut u = vec![0.0; MOLECULE_DIM * n];
    let mut z = [0.0; MOLECULE_DIM];
    for block in u.chunks_exact_mut(MOLECULE_DIM) {
        for zi in z.iter_mut() {
            *zi = r.sample(StandardNormal);
        }
        for i in 0..MOLECULE_DIM {
            block[i] = mean[i] + (0..MOLECULE_DIM).map(|j| l[i][j] * z[j]).sum::<f64>();
        }
    }
    u
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventKind {
    Added,
    Removed,
    Reweighted { from: f64, to: f64 },
}

/// A bookkeeping event that breaks free evolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleEvent {
    pub index: usize,
    pub step: u64,
    pub molecule: usize,
    pub kind: EventKind,
}

/// A system `𝒮 = A ⊔ B` of molecules drawn from one preparation.
#[derive(Debug, Clone)]
pub struct Ensemble {
    labels: Vec<Tag>,
    weights: Vec<f64>,
    state: PhasePoint,
    preparation: Preparation,
    events: Vec<EnsembleEvent>,
}

impl Ensemble {
    /// First `n_a` molecules are tagged `A`, the rest `B`; states are i.i.d. from the
    /// preparation using the sub-stream `stream` of its seed. Momenta start at zero.
    pub fn prepare(preparation: &Preparation, n_a: usize, n_b: usize, stream: u64) -> Result<Self, ObservableError> {
        if n_a == 0 || n_b == 0 {
            return Err(ObservableError::Split { n_a, n_b });
        }
        let l = preparation.sqrt_covariance()?;
        let n = n_a + n_b;
        let mut r = rng::stream(preparation.seed, "ensemble", stream);
        let u = draw_molecules(&mut r, &preparation.mean, &l, n);
        let state = PhasePoint::new(u, vec![0.0; MOLECULE_DIM * n], n)
            .map_err(|e| ObservableError::Parameter(e.to_string()))?;
        Self::from_state(state, n_a, preparation.clone())
    }

    /// Wraps an explicit state; the first `n_a` molecules are `A`.
    pub fn from_state(state: PhasePoint, n_a: usize, preparation: Preparation) -> Result<Self, ObservableError> {
        let n = state.n_molecules();
        if n_a == 0 || n_a >= n {
            return Err(ObservableError::Split { n_a, n_b: n.saturating_sub(n_a) });
        }
        let labels = (0..n).map(|k| if k < n_a { Tag::A } else { Tag::B }).collect();
        Ok(Self { labels, weights: vec![1.0 / n as f64; n], state, preparation, events: Vec::new() })
    }

    pub fn n_molecules(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.labels.iter().filter(|l| tag.selects(**l)).count()
    }

    pub fn labels(&self) -> &[Tag] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn state(&self) -> &PhasePoint {
        &self.state
    }

    pub fn preparation(&self) -> &Preparation {
        &self.preparation
    }

    pub fn events(&self) -> &[EnsembleEvent] {
        &self.events
    }

    /// Replaces the positions, e.g. after evolving them; momenta are kept.
    pub fn set_positions(&mut self, u: Vec<f64>) -> Result<(), ObservableError> {
        let n = self.n_molecules();
        self.state = PhasePoint::new(u, self.state.p().to_vec(), n)
            .map_err(|e| ObservableError::Parameter(e.to_string()))?;
        Ok(())
    }

    fn log(&mut self, step: u64, molecule: usize, kind: EventKind) {
        let index = self.events.len();
        self.events.push(EnsembleEvent { index, step, molecule, kind });
    }

    /// Appends a molecule with tag `A` or `B` (an exchange with the environment).
    pub fn add_molecule(&mut self, step: u64, block: [f64; MOLECULE_DIM], tag: Tag) -> Result<(), ObservableError> {
        if tag == Tag::S {
            return Err(ObservableError::Parameter("new molecule needs tag A or B".into()));
        }
        let n = self.n_molecules() + 1;
        let mut u = self.state.u().to_vec();
        u.extend_from_slice(&block);
        let mut p = self.state.p().to_vec();
        p.extend_from_slice(&[0.0; MOLECULE_DIM]);
        self.state = PhasePoint::new(u, p, n).map_err(|e| ObservableError::Parameter(e.to_string()))?;
        self.labels.push(tag);
        self.weights.push(1.0 / n as f64);
        self.log(step, n - 1, EventKind::Added);
        Ok(())
    }

    pub fn remove_molecule(&mut self, step: u64, molecule: usize) -> Result<(), ObservableError> {
        let n = self.n_molecules();
        if molecule >= n || n < 3 {
            return Err(ObservableError::Parameter(format!("cannot remove molecule {molecule} of {n}")));
        }
        let range = molecule * MOLECULE_DIM..(molecule + 1) * MOLECULE_DIM;
        let mut u = self.state.u().to_vec();
        u.drain(range.clone());
        let mut p = self.state.p().to_vec();
        p.drain(range);
        self.state = PhasePoint::new(u, p, n - 1).map_err(|e| ObservableError::Parameter(e.to_string()))?;
        self.labels.remove(molecule);
        self.weights.remove(molecule);
        self.log(step, molecule, EventKind::Removed);
        Ok(())
    }

    pub fn reweight(&mut self, step: u64, molecule: usize, weight: f64) -> Result<(), ObservableError> {
        if molecule >= self.n_molecules() || !(weight >= 0.0) {
            return Err(ObservableError::Parameter(format!("bad reweighting of molecule {molecule}")));
        }
        let from = self.weights[molecule];
        self.weights[molecule] = weight;
        self.log(step, molecule, EventKind::Reweighted { from, to: weight });
        Ok(())
    }
}

/// Average of the position blocks `x^μ` over molecules carrying `tag`.
pub fn center_of_mass(
    ensemble: &Ensemble,
    snapshot: &PhasePoint,
    tag: Tag,
    normalization: Normalization,
) -> Result<Vec4, ObservableError> {
    if snapshot.n_molecules() != ensemble.n_molecules() {
        return Err(ObservableError::Parameter(format!(
            "snapshot has {} molecules, ensemble {}",
            snapshot.n_molecules(),
            ensemble.n_molecules()
        )));
    }
    let selected = ensemble.count(tag);
    if selected == 0 {
        return Err(ObservableError::EmptySubset(tag));
    }
    let u = snapshot.u();
    let mut x = [0.0; POSITION_DIM];
    for (k, label) in ensemble.labels.iter().enumerate() {
        if tag.selects(*label) {
            for (mu, xm) in x.iter_mut().enumerate() {
                *xm += u[k * MOLECULE_DIM + mu];
            }
        }
    }
    let denom = match normalization {
        Normalization::PerTag => selected,
        Normalization::Total => ensemble.n_molecules(),
    } as f64;
    Ok(x.map(|v| v / denom))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEvolutionReport {
    pub free: bool,
    pub first_event: Option<EnsembleEvent>,
    /// Largest `|w_k − 1/N₀|` over the current weights.
    pub weight_drift: f64,
}

/// True iff no molecule was added, removed or re-weighted.
pub fn check_free_evolution(ensemble: &Ensemble) -> FreeEvolutionReport {
    let n = ensemble.n_molecules() as f64;
    let weight_drift = ensemble.weights.iter().map(|w| (w - 1.0 / n).abs()).fold(0.0, f64::max);
    FreeEvolutionReport {
        free: ensemble.events.is_empty(),
        first_event: ensemble.events.first().cloned(),
        weight_drift,
    }
}

/// Block-wise drift families used by the observables experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    Constant { value: [f64; MOLECULE_DIM] },
    Tanh { scale: f64, strength: f64, bias_strength: f64, seed: u64 },
}

impl FieldSpec {
    pub fn build(&self, n_molecules: usize) -> Arc<dyn DriftField> {
        let dim = MOLECULE_DIM * n_molecules;
        match self {
            FieldSpec::Zero => Arc::new(ZeroField::new(dim)),
            FieldSpec::Constant { value } => {
                Arc::new(ConstantField::new(value.iter().copied().cycle().take(dim).collect()))
            }
            FieldSpec::Tanh { scale, strength, bias_strength, seed } => {
                Arc::new(TanhField::random(n_molecules, *scale, *strength, *bias_strength, *seed))
            }
        }
    }

    /// Componentwise sup bound on `|β^i|`.
    pub fn beta_bound(&self) -> f64 {
        match self {
            FieldSpec::Zero => 0.0,
            FieldSpec::Constant { value } => value.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
            FieldSpec::Tanh { scale, .. } => scale.abs(),
        }
    }
}

/// Dynamics settings shared by the guide and the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub field: FieldSpec,
    pub period: f64,
    pub dt: f64,
    pub n_cycles: usize,
}

impl EvolutionSpec {
    fn config(&self) -> Result<(FlowConfig, usize), ObservableError> {
        let schedule = CycleSchedule::sine(self.period)?;
        let per_period = steps_per_period(self.period, self.dt)?;
        Ok((FlowConfig::new(schedule), 2 * per_period))
    }

    /// Internal time elapsed over one fundamental cycle, `∫|cos(πt/2T)| dt = 4T/π`.
    pub fn internal_time_per_cycle(&self) -> f64 {
        4.0 * self.period / std::f64::consts::PI
    }
}

/// Evolves the positions `u` of `n` molecules from `t = T` and returns the snapshot
/// positions at `τ = 0..=n_cycles`, as `n_cycles + 1` copies of the averaged
/// selector output.
fn evolve_snapshots<F>(spec: &EvolutionSpec, n: usize, u: &mut [f64], mut observe: F) -> Result<(), ObservableError>
where
    F: FnMut(usize, &[f64]),
{
    let (config, steps_per_cycle) = spec.config()?;
    let field = spec.field.build(n);
    let t0 = spec.period;
    observe(0, u);
    for cycle in 0..spec.n_cycles {
        let start = t0 + 2.0 * spec.period * cycle as f64;
        advance_positions(field.as_ref(), &config, u, start, spec.dt, steps_per_cycle)?;
        observe(cycle + 1, u);
    }
    Ok(())
}

fn position_sum(u: &[f64], range: std::ops::Range<usize>) -> Vec4 {
    let mut x = [0.0; POSITION_DIM];
    for k in range {
        for (mu, xm) in x.iter_mut().enumerate() {
            *xm += u[k * MOLECULE_DIM + mu];
        }
    }
    x
}

/// Guide `M^μ(τ)` with its per-τ standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanGuide {
    pub n_reference: usize,
    pub m: Vec<Vec4>,
    pub stderr: Vec<Vec4>,
}

/// `M^μ(τ)`, the `μ_P`-expectation of one molecule's position at each snapshot, from a
/// reference ensemble of `n_reference` molecules (seed sub-stream `stream`). The
/// reference ensemble is evolved in independent chunks.
pub fn mean_guide(
    preparation: &Preparation,
    spec: &EvolutionSpec,
    n_reference: usize,
    stream: u64,
) -> Result<MeanGuide, ObservableError> {
    if n_reference < 2 {
        return Err(ObservableError::Parameter("reference ensemble needs >= 2 molecules".into()));
    }
    let l = preparation.sqrt_covariance()?;
    let n_tau = spec.n_cycles + 1;
    let tag = format!("guide/{stream}");
    let chunks = n_reference.div_ceil(rng::CHUNK);
    // per chunk: sums and sums of squares per τ and μ
    type Moments = (Vec<Vec4>, Vec<Vec4>);
    let parts: Vec<Result<Moments, ObservableError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = rng::CHUNK.min(n_reference - c * rng::CHUNK);
            let mut r = rng::stream(preparation.seed, &tag, c as u64);
            let mut u = draw_molecules(&mut r, &preparation.mean, &l, n);
            let mut s1 = vec![[0.0; POSITION_DIM]; n_tau];
            let mut s2 = vec![[0.0; POSITION_DIM]; n_tau];
            evolve_snapshots(spec, n, &mut u, |tau, u| {
                for block in u.chunks_exact(MOLECULE_DIM) {
                    for mu in 0..POSITION_DIM {
                        s1[tau][mu] += block[mu];
                        s2[tau][mu] += block[mu] * block[mu];
                    }
                }
            })?;
            Ok((s1, s2))
        })
        .collect();
    let mut s1 = vec![[0.0; POSITION_DIM]; n_tau];
    let mut s2 = vec![[0.0; POSITION_DIM]; n_tau];
    for part in parts {
        let (a, b) = part?;
        for tau in 0..n_tau {
            for mu in 0..POSITION_DIM {
                s1[tau][mu] += a[tau][mu];
                s2[tau][mu] += b[tau][mu];
            }
        }
    }
    let n = n_reference as f64;
    let m: Vec<Vec4> = s1.iter().map(|s| s.map(|v| v / n)).collect();
    let stderr = s2
        .iter()
        .zip(&m)
        .map(|(q, mean)| std::array::from_fn(|mu| ((q[mu] / n - mean[mu] * mean[mu]).max(0.0) * n / (n - 1.0) / n).sqrt()))
        .collect();
    Ok(MeanGuide { n_reference, m, stderr })
}

/// `X^μ(τ)` of one tagged system together with the guide.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableTrajectory {
    pub tau_grid: Vec<i64>,
    pub x: Vec<Vec4>,
    pub m_mean: Vec<Vec4>,
    pub system_tag: Tag,
    pub normalization: Normalization,
}

impl ObservableTrajectory {
    /// Linear interpolation between snapshots; a convenience, since the guide need not
    /// be continuous in `τ`.
    pub fn interpolate(&self, tau: f64) -> Option<Vec4> {
        let first = *self.tau_grid.first()? as f64;
        let last = *self.tau_grid.last()? as f64;
        if !(first..=last).contains(&tau) {
            return None;
        }
        let i = ((tau - first).floor() as usize).min(self.x.len().saturating_sub(2));
        if self.x.len() == 1 {
            return Some(self.x[0]);
        }
        let w = tau - (first + i as f64);
        Some(std::array::from_fn(|mu| self.x[i][mu] * (1.0 - w) + self.x[i + 1][mu] * w))
    }

    /// Largest `|X^μ(τ+1) − X^μ(τ)|`.
    pub fn max_step(&self) -> f64 {
        self.x
            .windows(2)
            .flat_map(|w| (0..POSITION_DIM).map(move |mu| (w[1][mu] - w[0][mu]).abs()))
            .fold(0.0, f64::max)
    }
}

/// Evolves an ensemble over `spec.n_cycles` cycles and returns the trajectories of
/// `A`, `B` and `S` (per-tag normalization) against `guide`.
pub fn observe_ensemble(
    ensemble: &mut Ensemble,
    spec: &EvolutionSpec,
    guide: &MeanGuide,
) -> Result<[ObservableTrajectory; 3], ObservableError> {
    if guide.m.len() != spec.n_cycles + 1 {
        return Err(ObservableError::Parameter("guide and spec disagree on n_cycles".into()));
    }
    let n = ensemble.n_molecules();
    let mut u = ensemble.state().u().to_vec();
    let mut snaps = Vec::with_capacity(spec.n_cycles + 1);
    evolve_snapshots(spec, n, &mut u, |_, u| snaps.push(u.to_vec()))?;
    let mut out = Vec::with_capacity(3);
    for tag in [Tag::A, Tag::B, Tag::S] {
        let mut x = Vec::with_capacity(snaps.len());
        for s in &snaps {
            let point = PhasePoint::new(s.clone(), ensemble.state().p().to_vec(), n)
                .map_err(|e| ObservableError::Parameter(e.to_string()))?;
            x.push(center_of_mass(ensemble, &point, tag, Normalization::PerTag)?);
        }
        out.push(ObservableTrajectory {
            tau_grid: (0..snaps.len() as i64).collect(),
            x,
            m_mean: guide.m.clone(),
            system_tag: tag,
            normalization: Normalization::PerTag,
        });
    }
    ensemble.set_positions(u)?;
    let c = out.pop().unwrap();
    let b = out.pop().unwrap();
    let a = out.pop().unwrap();
    Ok([a, b, c])
}

pub fn max_abs_diff(a: &Vec4, b: &Vec4) -> f64 {
    (0..POSITION_DIM).map(|mu| (a[mu] - b[mu]).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WepConfig {
    pub n_list: Vec<usize>,
    pub n_trials: usize,
    pub evolution: EvolutionSpec,
    pub preparation: Preparation,
    pub rho_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_reference")]
    pub n_reference: usize,
}

fn default_reference() -> usize {
    100_000
}

/// One `(N, trial)` record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WepTrial {
    pub n: usize,
    pub trial: usize,
    pub x_a: Vec<Vec4>,
    pub x_b: Vec<Vec4>,
    pub x_s: Vec<Vec4>,
    pub d_ab: Vec<f64>,
    pub d_am: Vec<f64>,
    pub d_bm: Vec<f64>,
    pub d_sm: Vec<f64>,
    pub max_observable_step: f64,
}

impl WepTrial {
    pub fn sup_d_ab(&self) -> f64 {
        self.d_ab.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_d_sm(&self) -> f64 {
        self.d_sm.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WepPerN {
    pub n: usize,
    /// RMS over `μ` of the across-trial standard deviation of `X^μ(S, τ=0)`.
    pub sigma_x: f64,
    pub median_sup_d_ab: f64,
    pub median_sup_d_sm: f64,
    /// Tails of `D_SM/σ_X`, pooled over trials and `τ`.
    pub profile: ConcentrationProfile,
    pub fit: Option<DecayFit>,
    pub max_observable_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityTable {
    pub n: Vec<usize>,
    pub median_sup_d_ab: Vec<f64>,
    pub inversions: usize,
    pub nonincreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WepReport {
    pub config: WepConfig,
    pub guide: MeanGuide,
    pub trials: Vec<WepTrial>,
    pub per_n: Vec<WepPerN>,
    pub monotonicity: MonotonicityTable,
    pub free_evolution: bool,
    pub beta_bound: f64,
    /// Snapshot spacing in internal time, `4T/π`.
    pub internal_time_per_cycle: f64,
}

impl WepReport {
    /// `N, trial, tau, X_A_mu0..3, X_B_mu0..3, X_S_mu0..3, M_mu0..3, D_AB, D_SM`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut header = vec!["N".to_string(), "trial".into(), "tau".into()];
        for sys in ["X_A", "X_B", "X_S", "M"] {
            header.extend((0..POSITION_DIM).map(|mu| format!("{sys}_mu{mu}")));
        }
        header.extend(["D_AB".to_string(), "D_SM".into()]);
        let mut w = CsvWriter::new(out, &header)?;
        for t in &self.trials {
            for tau in 0..t.d_ab.len() {
                let mut row = vec![t.n.to_string(), t.trial.to_string(), tau.to_string()];
                for v in [&t.x_a[tau], &t.x_b[tau], &t.x_s[tau], &self.guide.m[tau]] {
                    row.extend(v.iter().map(|x| fmt_f64(*x)));
                }
                row.push(fmt_f64(t.d_ab[tau]));
                row.push(fmt_f64(t.d_sm[tau]));
                w.row(&row)?;
            }
        }
        w.finish()
    }

    /// Raw-unit tails of `sup_τ D_SM` per `N` on one common grid, the input of
    /// [`scale_relation_check`].
    pub fn tail_curves(&self, points: usize) -> Vec<TailCurve> {
        let top = self.trials.iter().map(|t| t.sup_d_sm()).fold(0.0, f64::max) * 1.2;
        let grid: Vec<f64> = (1..=points).map(|k| top * k as f64 / points as f64).collect();
        self.per_n
            .iter()
            .map(|p| {
                let sups: Vec<f64> = self.trials.iter().filter(|t| t.n == p.n).map(|t| t.sup_d_sm()).collect();
                let tail = grid
                    .iter()
                    .map(|rho| sups.iter().filter(|v| *v > rho).count() as f64 / sups.len() as f64)
                    .collect();
                TailCurve { n: p.n, rho_grid: grid.clone(), tail_prob: tail, n_samples: sups.len() }
            })
            .collect()
    }
}

/// Median over trials of `sup_τ D_AB` per `N`, with inversions counted over adjacent
/// pairs in `n_list` order.
pub fn monotonicity_table(n: &[usize], medians: &[f64]) -> MonotonicityTable {
    let inversions = medians.windows(2).filter(|w| w[1] > w[0]).count();
    MonotonicityTable { n: n.to_vec(), median_sup_d_ab: medians.to_vec(), inversions, nonincreasing: inversions == 0 }
}

fn run_trial(
    config: &WepConfig,
    guide: &MeanGuide,
    l: &[[f64; MOLECULE_DIM]; MOLECULE_DIM],
    n: usize,
    trial: usize,
) -> Result<WepTrial, ObservableError> {
    let n_a = n / 2;
    let n_b = n - n_a;
    let mut r = rng::stream(config.seed, &format!("wep/{n}"), trial as u64);
    let mut u = draw_molecules(&mut r, &config.preparation.mean, l, n);
    let n_tau = config.evolution.n_cycles + 1;
    let mut x_a = Vec::with_capacity(n_tau);
    let mut x_b = Vec::with_capacity(n_tau);
    let mut x_s = Vec::with_capacity(n_tau);
    evolve_snapshots(&config.evolution, n, &mut u, |_, u| {
        let a = position_sum(u, 0..n_a);
        let b = position_sum(u, n_a..n);
        x_a.push(a.map(|v| v / n_a as f64));
        x_b.push(b.map(|v| v / n_b as f64));
        x_s.push(std::array::from_fn(|mu| (a[mu] + b[mu]) / n as f64));
    })?;
    let dist = |x: &[Vec4]| -> Vec<f64> { x.iter().zip(&guide.m).map(|(v, m)| max_abs_diff(v, m)).collect() };
    let d_ab = x_a.iter().zip(&x_b).map(|(a, b)| max_abs_diff(a, b)).collect();
    let step = |x: &[Vec4]| {
        x.windows(2).map(|w| max_abs_diff(&w[1], &w[0])).fold(0.0, f64::max)
    };
    let max_observable_step = step(&x_a).max(step(&x_b)).max(step(&x_s));
    Ok(WepTrial {
        n,
        trial,
        d_am: dist(&x_a),
        d_bm: dist(&x_b),
        d_sm: dist(&x_s),
        d_ab,
        x_a,
        x_b,
        x_s,
        max_observable_step,
    })
}

/// Runs every `(N, trial)` of the experiment. Trials are independent and seeded from
/// `(seed, N, trial)`; results are ordered by `(N, trial)`.
pub fn wep_experiment(config: &WepConfig) -> Result<WepReport, ObservableError> {
    if config.n_list.is_empty() || config.n_list.iter().any(|n| *n < 2) {
        return Err(ObservableError::Parameter("n_list needs entries >= 2".into()));
    }
    if config.n_trials < 2 {
        return Err(ObservableError::Parameter("n_trials must be >= 2".into()));
    }
    let l = config.preparation.sqrt_covariance()?;
    let guide = mean_guide(&config.preparation, &config.evolution, config.n_reference, 0)?;
    let jobs: Vec<(usize, usize)> = config
        .n_list
        .iter()
        .flat_map(|n| (0..config.n_trials).map(move |t| (*n, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|(n, t)| run_trial(config, &guide, &l, *n, *t))
        .collect::<Result<Vec<_>, _>>()?;

    let mut per_n = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let rows: Vec<&WepTrial> = trials.iter().filter(|t| t.n == n).collect();
        let var: f64 = (0..POSITION_DIM)
            .map(|mu| {
                let v: Vec<f64> = rows.iter().map(|t| t.x_s[0][mu]).collect();
                stats::std_dev(&v).powi(2)
            })
            .sum::<f64>()
            / POSITION_DIM as f64;
        let sigma_x = var.sqrt();
        let scaled: Vec<f64> = if sigma_x > 0.0 {
            rows.iter().flat_map(|t| t.d_sm.iter().map(|d| d / sigma_x)).collect()
        } else {
            rows.iter().flat_map(|t| t.d_sm.iter().map(|_| 0.0)).collect()
        };
        let profile = ConcentrationProfile::from_values(&scaled, 0.0, &config.rho_grid, 1.0, 1.0, None)?;
        let ab: Vec<f64> = rows.iter().map(|t| t.sup_d_ab()).collect();
        let sm: Vec<f64> = rows.iter().map(|t| t.sup_d_sm()).collect();
        per_n.push(WepPerN {
            n,
            sigma_x,
            median_sup_d_ab: stats::median(&ab),
            median_sup_d_sm: stats::median(&sm),
            fit: profile.fit,
            profile,
            max_observable_step: rows.iter().map(|t| t.max_observable_step).fold(0.0, f64::max),
        });
    }
    let medians: Vec<f64> = per_n.iter().map(|p| p.median_sup_d_ab).collect();
    let monotonicity = monotonicity_table(&config.n_list, &medians);
    Ok(WepReport {
        config: config.clone(),
        guide,
        trials,
        per_n,
        monotonicity,
        // trials never exchange molecules
        free_evolution: true,
        beta_bound: config.evolution.field.beta_bound(),
        internal_time_per_cycle: config.evolution.internal_time_per_cycle(),
    })
}

/// Empirical tail `P(D > ρ)` of a deviation at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub n: usize,
    pub rho_grid: Vec<f64>,
    pub tail_prob: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayRegime {
    /// `ρ* ∼ N^{-1/2}`: tails `exp(−c N ρ²)`.
    Clt,
    /// `ρ* ∼ N^{-1}`: tails `exp(−c N² ρ²)`.
    NSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub n: usize,
    pub rho_star: f64,
    pub rho_star_sqrt_n: f64,
    pub rho_star_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRelationReport {
    pub threshold: f64,
    pub rows: Vec<ScaleRow>,
    /// Slope of `ln ρ*` against `ln N`.
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub regime: DecayRegime,
    pub consistent_with_n_squared: bool,
}

/// First `ρ` where the tail falls below `threshold`, interpolating `ln tail` linearly
/// between grid points (linearly in the tail itself when it hits zero). The curve is
/// taken to start at `(0, 1)`.
pub fn crossing(curve: &TailCurve, threshold: f64) -> Option<f64> {
    let mut prev: (f64, f64) = (0.0, 1.0);
    for (rho, tail) in curve.rho_grid.iter().zip(&curve.tail_prob) {
        if *tail < threshold {
            let (r0, t0) = prev;
            let w = if *tail > 0.0 && t0 > 0.0 {
                (t0.ln() - threshold.ln()) / (t0.ln() - tail.ln())
            } else {
                (t0 - threshold) / (t0 - tail)
            };
            return Some(r0 + w * (rho - r0));
        }
        prev = (*rho, *tail);
    }
    None
}

/// Locates `ρ*(N)` where each tail first drops below `threshold` and fits
/// `ln ρ* = c + e ln N`. An exponent near `−1/2` is the CLT regime, near `−1` the
/// `exp(−C₂N²)` regime.
pub fn scale_relation_check(curves: &[TailCurve], threshold: f64) -> Result<ScaleRelationReport, ObservableError> {
    let mut ns: Vec<usize> = curves.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(ObservableError::InsufficientCoverage(ns.len()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ObservableError::Parameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut rows = Vec::with_capacity(curves.len());
    for c in curves {
        let rho_star = crossing(c, threshold).ok_or(ObservableError::NoCrossing(c.n))?;
        let n = c.n as f64;
        rows.push(ScaleRow { n: c.n, rho_star, rho_star_sqrt_n: rho_star * n.sqrt(), rho_star_n: rho_star * n });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.rho_star.ln()).collect();
    let LinearFit { slope, slope_stderr, .. } = stats::linear_fit(&x, &y)
        .ok_or_else(|| ObservableError::Parameter("degenerate N coverage".into()))?;
    let regime = if (slope + 0.5).abs() <= (slope + 1.0).abs() { DecayRegime::Clt } else { DecayRegime::NSquared };
    Ok(ScaleRelationReport {
        threshold,
        rows,
        exponent: slope,
        exponent_stderr: slope_stderr,
        regime,
        consistent_with_n_squared: regime == DecayRegime::NSquared,
    })
}
