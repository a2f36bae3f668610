//! The cyclic `U_t` flow.
//!
//! The Hamiltonian is `H_t(u, p) = (1 - κ(t))^{1/2} Σ_k β^k(u) p_k`. Hamilton's equations
//! of `H_t` are
//!
//! ```text
//! du/dt = s(t) β(u)
//! dp/dt = -s(t) J_β(u)ᵀ p          s(t) = (1 - κ(t))^{1/2}
//! ```
//!
//! With `raw_ode = true` the factor `s` is dropped and the system `u̇ = β(u)`,
//! `ṗ = -J_βᵀ p` is integrated verbatim. The internal time `t̃` is advanced with
//! `dt̃ = s(t) dt`, the clock on which the raw system holds exactly.
//!
//! Equilibrium instants are the odd multiples `(2n+1)T`, where `κ = 1` and `H_t = 0`.

use std::fmt;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{dot, DriftField, PhasePoint};
use crate::output::{fmt_f64, CsvWriter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("state became non-finite at step {step} (t = {t})")]
    BlowUp { step: u64, t: f64 },
    #[error("kappa({t}) = {kappa} lies outside [0, 1]")]
    Schedule { t: f64, kappa: f64 },
    #[error("reparameterization is singular at t_tilde = {t_tilde}: 1 - kappa = {one_minus_kappa:e}")]
    SingularReparameterization { t_tilde: f64, one_minus_kappa: f64 },
    #[error("field dimension {field} does not match state dimension {state}")]
    Dimension { field: usize, state: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Time tolerance for recognizing `t = nT`.
pub const EQUILIBRIUM_TIME_TOL: f64 = 1e-9;
/// Below this `1 - κ̃` the reparameterization `t = t̃ / (1 - κ̃)` is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum KappaProfile {
    /// `κ(t) = sin²(πt / 2T)`.
    SineSquared,
    /// Frozen schedule.
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for KappaProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaProfile::SineSquared => write!(f, "SineSquared"),
            KappaProfile::Constant(k) => write!(f, "Constant({k})"),
            KappaProfile::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// The conformal factor `κ(t, τ)` together with the period `T`.
#[derive(Debug, Clone)]
pub struct CycleSchedule {
    period: f64,
    profile: KappaProfile,
}

impl CycleSchedule {
    pub fn new(period: f64, profile: KappaProfile) -> Result<Self, FlowError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(FlowError::Parameter(format!("period {period} must be positive")));
        }
        Ok(Self { period, profile })
    }

    pub fn sine(period: f64) -> Result<Self, FlowError> {
        Self::new(period, KappaProfile::SineSquared)
    }

    pub fn frozen(period: f64, kappa: f64) -> Result<Self, FlowError> {
        Self::new(period, KappaProfile::Constant(kappa))
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn profile(&self) -> &KappaProfile {
        &self.profile
    }

    /// `t/T` reduced to `[0, 2)`; `κ` has period `2T`.
    fn phase(&self, t: f64) -> f64 {
        (t / self.period).rem_euclid(2.0)
    }

    pub fn kappa(&self, t: f64) -> f64 {
        match &self.profile {
            KappaProfile::SineSquared => {
                let s = (0.5 * PI * self.phase(t)).sin();
                s * s
            }
            KappaProfile::Constant(k) => *k,
            KappaProfile::Custom(f) => f(t),
        }
    }

    /// `1 - κ(t)`, evaluated without cancellation for the sine profile.
    pub fn one_minus_kappa(&self, t: f64) -> f64 {
        match &self.profile {
            KappaProfile::SineSquared => {
                let c = (0.5 * PI * self.phase(t)).cos();
                c * c
            }
            _ => 1.0 - self.kappa(t),
        }
    }

    /// `s(t) = (1 - κ(t))^{1/2}`, or an error when `κ ∉ [0, 1]`.
    pub fn speed(&self, t: f64) -> Result<f64, FlowError> {
        match &self.profile {
            KappaProfile::SineSquared => Ok((0.5 * PI * self.phase(t)).cos().abs()),
            _ => {
                let kappa = self.kappa(t);
                if !(0.0..=1.0).contains(&kappa) {
                    return Err(FlowError::Schedule { t, kappa });
                }
                Ok((1.0 - kappa).sqrt())
            }
        }
    }

    /// Emergent cycle time: `τ = n` at the equilibrium instant `t = (2n+1)T`.
    pub fn tau(&self, t: f64) -> f64 {
        (t - self.period) / (2.0 * self.period)
    }

    /// Index `n` of the fundamental cycle `[2nT, 2(n+1)T)` containing `t`.
    pub fn cycle_index(&self, t: f64) -> i64 {
        (t / (2.0 * self.period) + 1e-12).floor() as i64
    }

    /// `t` lies within [`EQUILIBRIUM_TIME_TOL`] of an odd multiple of `T`.
    pub fn is_equilibrium(&self, t: f64) -> bool {
        let x = t / self.period;
        let n = x.round();
        (x - n).abs() * self.period <= EQUILIBRIUM_TIME_TOL && (n as i64).rem_euclid(2) == 1
    }

    /// `t` lies within [`EQUILIBRIUM_TIME_TOL`] of any multiple `nT`.
    pub fn is_multiple_of_period(&self, t: f64) -> bool {
        let x = t / self.period;
        (x - x.round()).abs() * self.period <= EQUILIBRIUM_TIME_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub schedule: CycleSchedule,
    pub integrator: Integrator,
    /// Integrate `u̇ = β(u)`, `ṗ = -J_βᵀ p` without the `(1-κ)^{1/2}` factor.
    pub raw_ode: bool,
}

impl FlowConfig {
    pub fn new(schedule: CycleSchedule) -> Self {
        Self { schedule, integrator: Integrator::Rk4, raw_ode: false }
    }

    pub fn raw(schedule: CycleSchedule) -> Self {
        Self { schedule, integrator: Integrator::Rk4, raw_ode: true }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    fn speed(&self, t: f64) -> Result<f64, FlowError> {
        if self.raw_ode {
            Ok(1.0)
        } else {
            self.schedule.speed(t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    pub point: PhasePoint,
    /// External time, the argument of `κ`.
    pub t: f64,
    /// Internal time, `dt̃ = (1-κ)^{1/2} dt`.
    pub t_tilde: f64,
    pub tau: f64,
    pub step: u64,
}

impl FlowState {
    pub fn new(point: PhasePoint, t: f64, schedule: &CycleSchedule) -> Self {
        Self { point, t, t_tilde: t, tau: schedule.tau(t), step: 0 }
    }
}

fn check_dim(field: &dyn DriftField, point: &PhasePoint) -> Result<(), FlowError> {
    if field.dim() != point.dim() {
        return Err(FlowError::Dimension { field: field.dim(), state: point.dim() });
    }
    Ok(())
}

/// `H_t = (1-κ(t))^{1/2} Σ_k β^k(u) p_k`.
pub fn hamiltonian(
    field: &dyn DriftField,
    schedule: &CycleSchedule,
    state: &FlowState,
) -> Result<f64, FlowError> {
    check_dim(field, &state.point)?;
    let s = schedule.speed(state.t)?;
    Ok(s * cycle_sum(field, &state.point))
}

/// `Σ_k β^k(u) p_k`.
pub fn cycle_sum(field: &dyn DriftField, point: &PhasePoint) -> f64 {
    let mut b = vec![0.0; field.dim()];
    field.eval(point.u(), &mut b);
    dot(&b, point.p())
}

/// Piecewise Hamiltonian of the reparameterized clock: `Σ β^i p_i` away from the
/// instants `t = nT` and exactly zero on them.
pub fn effective_cycle_hamiltonian(
    field: &dyn DriftField,
    schedule: &CycleSchedule,
    state: &FlowState,
) -> Result<f64, FlowError> {
    check_dim(field, &state.point)?;
    if schedule.is_multiple_of_period(state.t) {
        return Ok(0.0);
    }
    Ok(cycle_sum(field, &state.point))
}

/// `t = t̃ / (1 - κ̃(t̃))`.
pub fn reparameterize_time(t_tilde: f64, schedule: &CycleSchedule) -> Result<f64, FlowError> {
    let omk = schedule.one_minus_kappa(t_tilde);
    if !(omk > SINGULAR_TOL) {
        return Err(FlowError::SingularReparameterization { t_tilde, one_minus_kappa: omk });
    }
    Ok(t_tilde / omk)
}

/// Scratch space for one RK4/Euler step of the full `(u, p, t̃)` system.
struct Stages {
    k_u: [Vec<f64>; 4],
    k_p: [Vec<f64>; 4],
    u_tmp: Vec<f64>,
    p_tmp: Vec<f64>,
}

impl Stages {
    fn new(d: usize) -> Self {
        let z = || vec![0.0; d];
        Self { k_u: [z(), z(), z(), z()], k_p: [z(), z(), z(), z()], u_tmp: z(), p_tmp: z() }
    }
}

fn rhs(field: &dyn DriftField, s: f64, u: &[f64], p: &[f64], du: &mut [f64], dp: &mut [f64]) {
    field.eval(u, du);
    field.cotangent(u, p, dp);
    for x in du.iter_mut() {
        *x *= s;
    }
    for x in dp.iter_mut() {
        *x *= -s;
    }
}

/// Advance `(u, p, t, t̃)` by one step of the configured integrator.
pub fn step_flow(
    field: &dyn DriftField,
    config: &FlowConfig,
    state: &FlowState,
    dt: f64,
) -> Result<FlowState, FlowError> {
    check_dim(field, &state.point)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::Parameter(format!("dt = {dt} must be positive")));
    }
    let mut stages = Stages::new(field.dim());
    step_with(field, config, state, dt, state.t + dt, &mut stages)
}

fn step_with(
    field: &dyn DriftField,
    config: &FlowConfig,
    state: &FlowState,
    dt: f64,
    t_next: f64,
    st: &mut Stages,
) -> Result<FlowState, FlowError> {
    let u0 = state.point.u();
    let p0 = state.point.p();
    let t0 = state.t;
    let d = u0.len();
    let mut u = u0.to_vec();
    let mut p = p0.to_vec();
    let t_tilde;
    match config.integrator {
        Integrator::Euler => {
            let s = config.speed(t0)?;
            let (ku, kp) = (&mut st.k_u[0], &mut st.k_p[0]);
            rhs(field, s, u0, p0, ku, kp);
            for i in 0..d {
                u[i] += dt * ku[i];
                p[i] += dt * kp[i];
            }
            t_tilde = state.t_tilde + dt * s;
        }
        Integrator::Rk4 => {
            let s1 = config.speed(t0)?;
            let s2 = config.speed(t0 + 0.5 * dt)?;
            let s4 = config.speed(t0 + dt)?;
            let speeds = [s1, s2, s2, s4];
            let offsets = [0.0, 0.5, 0.5, 1.0];
            for stage in 0..4 {
                if stage == 0 {
                    st.u_tmp.copy_from_slice(u0);
                    st.p_tmp.copy_from_slice(p0);
                } else {
                    let h = offsets[stage] * dt;
                    let (prev_u, prev_p) = (&st.k_u[stage - 1], &st.k_p[stage - 1]);
                    for i in 0..d {
                        st.u_tmp[i] = u0[i] + h * prev_u[i];
                        st.p_tmp[i] = p0[i] + h * prev_p[i];
                    }
                }
                let (ku, kp) = (&mut st.k_u[stage], &mut st.k_p[stage]);
                rhs(field, speeds[stage], &st.u_tmp, &st.p_tmp, ku, kp);
            }
            let w = dt / 6.0;
            for i in 0..d {
                u[i] += w * (st.k_u[0][i] + 2.0 * st.k_u[1][i] + 2.0 * st.k_u[2][i] + st.k_u[3][i]);
                p[i] += w * (st.k_p[0][i] + 2.0 * st.k_p[1][i] + 2.0 * st.k_p[2][i] + st.k_p[3][i]);
            }
            t_tilde = state.t_tilde + w * (s1 + 4.0 * s2 + s4);
        }
    }
    let step = state.step + 1;
    if u.iter().chain(p.iter()).any(|x| !x.is_finite()) {
        return Err(FlowError::BlowUp { step, t: t_next });
    }
    Ok(FlowState {
        point: PhasePoint::from_parts_unchecked(u, p, state.point.n_molecules()),
        t: t_next,
        t_tilde,
        tau: config.schedule.tau(t_next),
        step,
    })
}

/// Positions-only RK4/Euler integration, used when momenta are not needed.
///
/// Advances `u` in place over `n_steps` steps starting at external time `t0`.
pub fn advance_positions(
    field: &dyn DriftField,
    config: &FlowConfig,
    u: &mut [f64],
    t0: f64,
    dt: f64,
    n_steps: usize,
) -> Result<(), FlowError> {
    if field.dim() != u.len() {
        return Err(FlowError::Dimension { field: field.dim(), state: u.len() });
    }
    let d = u.len();
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut tmp = vec![0.0; d];
    for step in 0..n_steps {
        let t = t0 + step as f64 * dt;
        match config.integrator {
            Integrator::Euler => {
                let s = config.speed(t)?;
                field.eval(u, &mut k[0]);
                for i in 0..d {
                    u[i] += dt * s * k[0][i];
                }
            }
            Integrator::Rk4 => {
                let s = [config.speed(t)?, config.speed(t + 0.5 * dt)?, config.speed(t + dt)?];
                field.eval(u, &mut k[0]);
                for i in 0..d {
                    tmp[i] = u[i] + 0.5 * dt * s[0] * k[0][i];
                }
                field.eval(&tmp, &mut k[1]);
                for i in 0..d {
                    tmp[i] = u[i] + 0.5 * dt * s[1] * k[1][i];
                }
                field.eval(&tmp, &mut k[2]);
                for i in 0..d {
                    tmp[i] = u[i] + dt * s[1] * k[2][i];
                }
                field.eval(&tmp, &mut k[3]);
                let w = dt / 6.0;
                for i in 0..d {
                    u[i] += w
                        * (s[0] * k[0][i] + 2.0 * s[1] * (k[1][i] + k[2][i]) + s[2] * k[3][i]);
                }
            }
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::BlowUp { step: step as u64 + 1, t: t + dt });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub state: FlowState,
    pub hamiltonian: f64,
    /// `τ` index `n` of the instant `(2n+1)T`.
    pub tau_index: i64,
}

impl Snapshot {
    /// `|H| ≤ 1e-9·(1 + |p|)`.
    pub fn vanishes(&self) -> bool {
        self.hamiltonian.abs() <= 1e-9 * (1.0 + self.state.point.p_norm())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<FlowState>,
    pub snapshots: Vec<Snapshot>,
}

/// Number of `dt` steps in one period `T`, or an error if `dt` does not divide `T`.
pub fn steps_per_period(period: f64, dt: f64) -> Result<usize, FlowError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::Parameter(format!("dt = {dt} must be positive")));
    }
    let m = (period / dt).round();
    if m < 1.0 || (m * dt - period).abs() > 1e-12 * period {
        return Err(FlowError::Parameter(format!("dt = {dt} does not divide T = {period}")));
    }
    Ok(m as usize)
}

/// Integrate `n_cycles` fundamental cycles (each `2T` long) from `initial`.
///
/// States are stored every `record_every` steps (and always at equilibrium instants);
/// snapshots are taken at every odd multiple of `T` after the start.
pub fn run_cycles(
    field: &dyn DriftField,
    config: &FlowConfig,
    initial: &FlowState,
    n_cycles: usize,
    dt: f64,
    record_every: usize,
) -> Result<Trajectory, FlowError> {
    check_dim(field, &initial.point)?;
    if n_cycles == 0 {
        return Err(FlowError::Parameter("n_cycles must be >= 1".into()));
    }
    let period = config.schedule.period();
    let per_period = steps_per_period(period, dt)?;
    let start_steps = initial.t / dt;
    if (start_steps - start_steps.round()).abs() > 1e-9 {
        return Err(FlowError::Parameter(format!(
            "initial time {} is not on the dt = {dt} grid",
            initial.t
        )));
    }
    let k0 = start_steps.round() as i64;
    let total = 2 * per_period * n_cycles;
    let record_every = record_every.max(1);

    let mut stages = Stages::new(field.dim());
    let mut state = initial.clone();
    let mut states = vec![state.clone()];
    let mut snapshots = Vec::with_capacity(n_cycles);
    for k in 1..=total {
        let grid = k0 + k as i64;
        let t_next = grid as f64 * dt;
        state = step_with(field, config, &state, dt, t_next, &mut stages)?;
        let equilibrium = grid.rem_euclid(per_period as i64) == 0
            && (grid / per_period as i64).rem_euclid(2) == 1;
        if equilibrium {
            let h = hamiltonian(field, &config.schedule, &state)?;
            let tau_index = ((grid / per_period as i64) - 1) / 2;
            snapshots.push(Snapshot { state: state.clone(), hamiltonian: h, tau_index });
        }
        if equilibrium || k % record_every == 0 || k == total {
            states.push(state.clone());
        }
    }
    Ok(Trajectory { dt, states, snapshots })
}

/// `t, tau, cycle, u_0..u_{d-1}, p_0..p_{d-1}, H`.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    field: &dyn DriftField,
    schedule: &CycleSchedule,
    states: &[FlowState],
) -> std::io::Result<()> {
    let d = states.first().map(|s| s.point.dim()).unwrap_or(0);
    let mut header = vec!["t".to_string(), "tau".into(), "cycle".into()];
    header.extend((0..d).map(|i| format!("u_{i}")));
    header.extend((0..d).map(|i| format!("p_{i}")));
    header.push("H".into());
    let mut w = CsvWriter::new(out, &header)?;
    for s in states {
        let h = hamiltonian(field, schedule, s).unwrap_or(f64::NAN);
        let mut row = vec![fmt_f64(s.t), fmt_f64(s.tau), schedule.cycle_index(s.t).to_string()];
        row.extend(s.point.u().iter().map(|x| fmt_f64(*x)));
        row.extend(s.point.p().iter().map(|x| fmt_f64(*x)));
        row.push(fmt_f64(h));
        w.row(&row)?;
    }
    w.finish()
}
