//! The nine acceptance criteria at their stated scales and tolerances. One line per
//! criterion; the process fails if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use randers_core::concentration::isoperimetric_bound;
use randers_core::dynamics::{hamiltonian, run_cycles, step_flow, CycleSchedule, FlowConfig, FlowState};
use randers_core::geometry::{DriftField, LinearField, PhasePoint, TanhField};
use randers_core::gravity::{
    alpha_closed_form, alpha_oracle, standard_cases, DensityConvention, GravityScaleCase, PhysicalConstants,
    CaseSpec,
};
use randers_core::lipschitz::{estimate_lipschitz, normalize_to_one_lipschitz, CompactBox, EstimateMethod};
use randers_core::observables::{wep_experiment, EvolutionSpec, FieldSpec, Preparation, WepConfig};
use randers_core::rng::stream;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian_vec(seed: u64, tag: &str, d: usize, sigma: f64) -> Vec<f64> {
    let mut r = stream(seed, tag, 0);
    (0..d).map(|_| sigma * r.sample::<f64, _>(StandardNormal)).collect()
}

fn run_workspace(experiment: &str) -> (Value, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let m = common::run_config(&common::workspace_configs().join(format!("{experiment}.toml")), dir.path());
    (m.metrics, dir)
}

fn sphere_concentration(sphere: &Value) -> Outcome {
    let dims = sphere["dimensions"].as_array().unwrap();
    let bounds = dims.iter().all(|d| d["bound_holds"] == true);
    let r2 = sphere["slope_vs_n_minus_1"]["r_squared"].as_f64().unwrap_or(0.0);
    outcome(bounds && r2 > 0.99, format!("sphere bound holds at N = 16, 64, 256: {bounds}; slope vs N-1 R^2 = {r2:.7}"))
}

fn isoperimetric(sphere: &Value, dir: &std::path::Path) -> Outcome {
    let text = std::fs::read_to_string(dir.join("isoperimetric.csv")).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let n256: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "256").collect();
    let pass_rows = n256.len() == 3 && n256.iter().all(|r| r[5] == "true");
    let at_zero = isoperimetric_bound(256, 0.0);
    let exact = 1.0 - (PI / 8.0).sqrt();
    let zero_ok = (at_zero - exact).abs() <= 1e-12;
    let iso_all = sphere["dimensions"].as_array().unwrap().iter().all(|d| d["isoperimetric_pass"] == true);
    outcome(
        pass_rows && zero_ok && iso_all,
        format!("N = 256, eps 0.1/0.2/0.3 all pass: {pass_rows}; bound at eps = 0 is {at_zero:.13}"),
    )
}

fn random_stable(d: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian_vec(seed, "stable-matrix", d * d, 0.3 / (d as f64).sqrt());
    DMatrix::from_row_slice(d, d, &g) - DMatrix::identity(d, d)
}

/// Scaling and squaring with a Taylor series.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let d = a.nrows();
    let mut out = DMatrix::identity(d, d);
    let mut term = DMatrix::identity(d, d);
    for k in 1..=24 {
        term = &term * &b / k as f64;
        out += &term;
    }
    for _ in 0..s {
        out = &out * &out;
    }
    out
}

fn flow_correctness() -> Outcome {
    let d = 64;
    let a = random_stable(d, 31);
    let field = LinearField::new(a.clone()).unwrap();
    let p0 = gaussian_vec(32, "p0", d, 1.0);
    let u0 = gaussian_vec(33, "u0", d, 1.0);
    let config = FlowConfig::raw(CycleSchedule::sine(1.0).unwrap());
    let mut state = FlowState::new(PhasePoint::new(u0.clone(), p0.clone(), 8).unwrap(), 0.0, &config.schedule);
    let dt = 1e-4;
    for _ in 0..10_000 {
        state = step_flow(&field, &config, &state, dt).unwrap();
    }
    let oracle_p = expm(&(-a.transpose())) * DVector::from_vec(p0);
    let oracle_u = expm(&a) * DVector::from_vec(u0);
    let rel_p = (DVector::from_column_slice(state.point.p()) - &oracle_p).norm() / oracle_p.norm();
    let rel_u = (DVector::from_column_slice(state.point.u()) - &oracle_u).norm() / oracle_u.norm();

    // frozen κ: H is a constant of motion of an autonomous flow
    let tanh: Arc<dyn DriftField> = Arc::new(TanhField::random(8, 0.9, 0.3, 0.5, 3));
    let frozen = FlowConfig::new(CycleSchedule::frozen(1.0, 0.36).unwrap());
    let start = PhasePoint::new(gaussian_vec(34, "u", d, 1.0), gaussian_vec(35, "p", d, 1.0), 8).unwrap();
    let p_norm = start.p_norm();
    let mut s = FlowState::new(start, 0.0, &frozen.schedule);
    let h0 = hamiltonian(tanh.as_ref(), &frozen.schedule, &s).unwrap();
    let mut drift = 0.0_f64;
    for _ in 0..10_000 {
        s = step_flow(tanh.as_ref(), &frozen, &s, 1e-3).unwrap();
        drift = drift.max((hamiltonian(tanh.as_ref(), &frozen.schedule, &s).unwrap() - h0).abs());
    }
    let drift_ok = drift <= 1e-6 * (1.0 + p_norm);

    let cycling = FlowConfig::new(CycleSchedule::sine(1.0).unwrap());
    let init = FlowState::new(
        PhasePoint::new(gaussian_vec(36, "u", d, 1.0), gaussian_vec(37, "p", d, 1.0), 8).unwrap(),
        0.0,
        &cycling.schedule,
    );
    let traj = run_cycles(tanh.as_ref(), &cycling, &init, 4, 1e-3, 100).unwrap();
    let worst_snapshot = traj
        .snapshots
        .iter()
        .map(|s| s.hamiltonian.abs() / (1.0 + s.state.point.p_norm()))
        .fold(0.0, f64::max);
    let snap_ok = traj.snapshots.len() == 4 && worst_snapshot <= 1e-9;
    outcome(
        rel_p <= 1e-8 && rel_u <= 1e-8 && drift_ok && snap_ok,
        format!(
            "rel err p {rel_p:.2e}, u {rel_u:.2e}; frozen drift {drift:.2e} (tol {:.2e}); max snapshot |H|/(1+|p|) {worst_snapshot:.2e}",
            1e-6 * (1.0 + p_norm)
        ),
    )
}

fn propagation(wep: &Value) -> Outcome {
    let tanh: Arc<dyn DriftField> = Arc::new(TanhField::random(8, 0.9, 0.3, 0.5, 3));
    let config = FlowConfig::new(CycleSchedule::sine(1.0).unwrap());
    let init = FlowState::new(
        PhasePoint::new(gaussian_vec(41, "u", 64, 2.0), gaussian_vec(42, "p", 64, 1.0), 8).unwrap(),
        0.0,
        &config.schedule,
    );
    let traj = run_cycles(tanh.as_ref(), &config, &init, 4, 1e-3, 1).unwrap();
    let mut worst = 0.0_f64;
    for w in traj.states.windows(2) {
        let dt = w[1].t - w[0].t;
        for (a, b) in w[0].point.u().iter().zip(w[1].point.u()) {
            worst = worst.max((b - a).abs() / (0.9 * dt));
        }
    }
    let period = 1.0;
    let step = wep["per_N"].as_array().unwrap().iter().map(|r| r["max_observable_step"].as_f64().unwrap()).fold(0.0, f64::max);
    let obs_ratio = step / (0.9 * period);
    outcome(
        worst <= 1.0 + 1e-6 && obs_ratio <= 1.0 + 1e-6,
        format!("max |du|/(0.9 dt) = {worst:.9}; max |dX| per tau step / (0.9 T) = {obs_ratio:.6}"),
    )
}

fn calibration() -> Outcome {
    let d = 32;
    let a = gaussian_vec(51, "functional", d, 1.0);
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let unit = CompactBox::cube(d, 0.0, 1.0).unwrap();
    let av = a.clone();
    let f = Arc::new(move |z: &[f64]| av.iter().zip(z).map(|(x, y)| x * y).sum::<f64>());
    let est = estimate_lipschitz(f.as_ref(), &unit, 10_000, 52, EstimateMethod::PairSampling).unwrap();
    let rel = (est.constant_hat - norm).abs() / norm;
    let g = normalize_to_one_lipschitz(f, &est);
    let gf = g.as_fn();
    let again = estimate_lipschitz(gf.as_ref(), &unit, 10_000, 53, EstimateMethod::PairSampling).unwrap().constant_hat;
    outcome(
        rel <= 0.02 && again <= 1.02,
        format!("|a| = {norm:.6}, estimate {:.6} (rel {rel:.1e}); normalized re-estimate {again:.6}", est.constant_hat),
    )
}

fn decomposition(m: &Value) -> Outcome {
    let residual = m["identity_max_abs_residual"].as_f64().unwrap();
    let inside = m["max_matter_inside"].as_f64().unwrap();
    let global = m["global_estimate"].as_f64().unwrap();
    outcome(
        residual <= 1e-12 && inside == 0.0 && global <= 1.05,
        format!("identity residual {residual:.1e}; max |matter| on K' {inside:e}; tuned global estimate {global:.4}"),
    )
}

fn wep_concentration(wep: &Value, seconds: f64) -> Outcome {
    let inversions = wep["monotonicity"]["inversions"].as_u64().unwrap();
    let medians = wep["monotonicity"]["median_sup_d_ab"].clone();
    let c2: Vec<f64> = wep["per_N"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["fit"]["C2_hat"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let c2_ok = c2.iter().all(|c| *c > 0.0);

    // β ≡ 0 control: D_AB is a difference of independent sample means
    let control = WepConfig {
        n_list: vec![250, 1000, 4000],
        n_trials: 200,
        evolution: EvolutionSpec { field: FieldSpec::Zero, period: 1.0, dt: 0.25, n_cycles: 8 },
        preparation: Preparation::isotropic([0.0; 8], 1.0, 61),
        rho_grid: randers_cli::config::default_multipliers(),
        seed: 62,
        n_reference: 100_000,
    };
    let report = wep_experiment(&control).unwrap();
    let m: Vec<f64> = report.per_n.iter().map(|p| p.median_sup_d_ab).collect();
    let ratios: Vec<f64> = m.windows(2).map(|w| w[0] / w[1]).collect();
    let scaling_ok = ratios.iter().all(|r| (r / 2.0 - 1.0).abs() <= 0.25);
    outcome(
        inversions <= 1 && c2_ok && scaling_ok && seconds < 600.0,
        format!(
            "medians {medians}, inversions {inversions}; C2_hat {c2:?}; zero-field x4 ratios {ratios:.3?} (expect 2); {seconds:.0} s"
        ),
    )
}

fn newtonian_alpha() -> Outcome {
    let k = PhysicalConstants::codata2018();
    let lambda: f64 = 0.5;
    let mut spread = 0.0_f64;
    for (conv, expected) in [(DensityConvention::R1, lambda.powi(-4)), (DensityConvention::R2, 1.0 / lambda)] {
        for e in -3..=3 {
            let spec = CaseSpec { name: "sweep".into(), m: 1.0, big_m: 1.0, r2: 10f64.powi(e), lambda };
            let r = GravityScaleCase::evaluate(&spec, conv, &k).unwrap().ratio().unwrap();
            spread = spread.max((r / expected - 1.0).abs());
        }
    }
    let mut small = Vec::new();
    let mut planck = f64::NAN;
    for c in standard_cases(&k) {
        let a = alpha_oracle(c.m, c.big_m, c.lambda * c.r2, c.r2, &k).unwrap();
        if c.name == "planck" {
            planck = a;
        } else {
            small.push((c.name, a));
        }
    }
    let small_ok = small.len() == 4 && small.iter().all(|(_, a)| *a < 1e-30);
    let two = alpha_closed_form(k.m_p, k.m_p, k.l_p, k.l_p, DensityConvention::R1, &k).unwrap();
    let two_ok = (two - 2.0).abs() <= 4.0 * f64::EPSILON;
    outcome(
        spread <= 1e-10 && small_ok && (0.1..=10.0).contains(&planck) && two_ok,
        format!(
            "ratio spread over r in 1e-3..1e3 {spread:.1e}; largest small-scale alpha {:.2e}; Planck alpha {planck}; closed form at Planck point {two}",
            small.iter().map(|s| s.1).fold(0.0, f64::max)
        ),
    )
}

fn determinism() -> Outcome {
    let mut bad = Vec::new();
    for e in common::EXPERIMENTS {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        common::run_golden(e, a.path());
        common::run_golden(e, b.path());
        let first = common::csv_files(a.path());
        for f in common::diff_files(&first, &common::csv_files(b.path())) {
            bad.push(format!("{e}/{f} (rerun)"));
        }
        for f in common::check_golden(e, a.path()) {
            bad.push(format!("{e}/{f} (golden)"));
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "6 experiments rerun byte-identical and match golden files".into() } else { format!("differences: {bad:?}") })
}

fn main() {
    let started = Instant::now();
    let (sphere, sphere_dir) = run_workspace("sphere");
    let sphere_seconds = started.elapsed().as_secs_f64();
    let wep_start = Instant::now();
    let (wep, _wep_dir) = run_workspace("wep");
    let wep_seconds = wep_start.elapsed().as_secs_f64();
    let (lipschitz, _lip_dir) = run_workspace("lipschitz");

    let mut c1 = sphere_concentration(&sphere);
    c1.detail.push_str(&format!("; {sphere_seconds:.1} s"));
    c1.pass &= sphere_seconds < 60.0;
    let results = [
        ("1 sphere concentration", c1),
        ("2 isoperimetric neighborhood", isoperimetric(&sphere, sphere_dir.path())),
        ("3 flow correctness", flow_correctness()),
        ("4 Randers propagation", propagation(&wep)),
        ("5 Lipschitz calibration", calibration()),
        ("6 radial decomposition", decomposition(&lipschitz)),
        ("7 WEP concentration", wep_concentration(&wep, wep_seconds)),
        ("8 Newtonian alpha", newtonian_alpha()),
        ("9 determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} passed in {:.0} s", results.len() - failed, results.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
