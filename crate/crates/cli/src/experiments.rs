//! One runner per experiment. Each writes its files through [`OutDir`] and returns
//! summary metrics for the manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use randers_core::concentration::{
    concentration_profile, fit_decay_constant, sphere_isoperimetric_check, ConcentrationProfile, MMSpaceSampler,
};
use randers_core::dynamics::{run_cycles, write_trajectory_csv, CycleSchedule, FlowConfig, FlowState};
use randers_core::geometry::{PhasePoint, MOLECULE_DIM};
use randers_core::gravity::{scale_sweep, standard_cases, write_sweep_csv, PhysicalConstants};
use randers_core::lipschitz::{
    check_constraint_split, cycle_hamiltonian_fn, estimate_lipschitz, estimate_lipschitz_nested, identity_residual, max_matter_inside,
    normalize_to_one_lipschitz, radial_decomposition, tune_rho0, CompactBox, DecompositionReport,
    EstimateMethod, ProfileSummary, ScaleProfile,
};
use randers_core::observables::{scale_relation_check, wep_experiment, EvolutionSpec, Preparation, WepConfig};
use randers_core::output::{fmt_f64, write_atomic, CsvWriter};
use randers_core::rng::{derive_seed, stream};
use randers_core::stats;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ConcentrationParams, FlowParams, GravityParams, LipschitzParams, SphereParams, WepParams};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Output directory; every file is rendered in memory, hashed, then written atomically.
pub struct OutDir {
    pub dir: PathBuf,
    pub files: Vec<FileRecord>,
    pub seeds: BTreeMap<String, u64>,
}

impl OutDir {
    pub fn new(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
        Ok(Self { dir, files: Vec::new(), seeds: BTreeMap::new() })
    }

    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::Io(path.clone(), e))?;
        write_atomic(&path, |w| w.write_all(&buf)).map_err(|e| CliError::Io(path.clone(), e))?;
        self.files.push(FileRecord { name: name.to_string(), sha256: hex::encode(Sha256::digest(&buf)), bytes: buf.len() });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })
    }

    /// Derived seed, recorded for the manifest.
    pub fn seed(&mut self, root: u64, tag: &str) -> u64 {
        let s = derive_seed(root, tag, 0);
        self.seeds.insert(tag.to_string(), s);
        s
    }
}

fn gaussian_point(n: usize, sigma: f64, seed: u64) -> PhasePoint {
    let mut r = stream(seed, "initial-point", 0);
    let d = MOLECULE_DIM * n;
    let mut draw = || -> Vec<f64> { (0..d).map(|_| sigma * r.sample::<f64, _>(StandardNormal)).collect() };
    let u = draw();
    let p = draw();
    PhasePoint::new(u, p, n).expect("finite draws")
}

fn flow_config(period: f64, raw: bool) -> Result<FlowConfig, CliError> {
    let schedule = CycleSchedule::sine(period).map_err(randers_core::Error::from)?;
    Ok(if raw { FlowConfig::raw(schedule) } else { FlowConfig::new(schedule) })
}

pub fn flow(p: &FlowParams, root: u64, out: &mut OutDir) -> Result<Value, CliError> {
    let n = p.n_molecules as usize;
    let field = p.field.build(n);
    let config = flow_config(p.period, p.raw_ode)?.with_integrator(p.integrator);
    let initial = gaussian_point(n, p.initial_sigma, out.seed(root, "flow/initial"));
    let state = FlowState::new(initial, 0.0, &config.schedule);
    let traj = run_cycles(field.as_ref(), &config, &state, p.n_cycles as usize, p.dt, p.record_every as usize)
        .map_err(randers_core::Error::from)?;

    out.write("trajectory.csv", |w| write_trajectory_csv(w, field.as_ref(), &config.schedule, &traj.states))?;
    out.write("snapshots.csv", |w| {
        let mut csv = CsvWriter::new(w, &["tau", "t", "t_tilde", "H", "vanishes"])?;
        for s in &traj.snapshots {
            csv.row(&[
                s.tau_index.to_string(),
                fmt_f64(s.state.t),
                fmt_f64(s.state.t_tilde),
                fmt_f64(s.hamiltonian),
                s.vanishes().to_string(),
            ])?;
        }
        csv.finish()
    })?;

    let max_speed = traj
        .states
        .windows(2)
        .flat_map(|w| {
            let dt = w[1].t - w[0].t;
            w[0].point.u().iter().zip(w[1].point.u()).map(move |(a, b)| (b - a).abs() / dt)
        })
        .fold(0.0, f64::max);
    Ok(json!({
        "states": traj.states.len(),
        "snapshots": traj.snapshots.len(),
        "max_abs_snapshot_H": traj.snapshots.iter().map(|s| s.hamiltonian.abs()).fold(0.0, f64::max),
        "all_snapshots_vanish": traj.snapshots.iter().all(|s| s.vanishes()),
        "max_component_speed": max_speed,
        "beta_bound": p.field.beta_bound(),
    }))
}

pub fn lipschitz(p: &LipschitzParams, root: u64, out: &mut OutDir) -> Result<Value, CliError> {
    let core = |e: randers_core::lipschitz::LipschitzError| CliError::from(randers_core::Error::from(e));
    let n = p.n_molecules as usize;
    let field = p.field.build(n);
    let config = flow_config(p.period, false)?;
    let initial = gaussian_point(n, p.initial_sigma, out.seed(root, "lipschitz/initial"));
    let state = FlowState::new(initial, 0.0, &config.schedule);
    let traj = run_cycles(field.as_ref(), &config, &state, p.n_cycles as usize, p.dt, usize::MAX)
        .map_err(randers_core::Error::from)?;
    let points: Vec<Vec<f64>> = traj.snapshots.iter().map(|s| s.state.point.to_phase_vector()).collect();
    let kprime = CompactBox::enclosing(&points, p.dilation, p.metric).map_err(core)?;
    let global = kprime.scaled(p.global_scale).map_err(core)?;
    let pairs = p.n_pairs as usize;

    let h = cycle_hamiltonian_fn(field.clone());
    let local = estimate_lipschitz(h.as_ref(), &kprime, pairs, out.seed(root, "lipschitz/local"), EstimateMethod::PairSampling)
        .map_err(core)?;
    let normalized = normalize_to_one_lipschitz(h, &local);
    let hn = normalized.as_fn();
    let tuning = tune_rho0(hn.clone(), &kprime, &global, pairs, out.seed(root, "lipschitz/tune"), p.target).map_err(core)?;
    let dec = radial_decomposition(hn, kprime.clone(), ScaleProfile::Rational { rho0: tuning.rho0 }).map_err(core)?;
    let lf = dec.lipschitz_fn();
    let global_est =
        estimate_lipschitz_nested(lf.as_ref(), &kprime, &global, pairs, out.seed(root, "lipschitz/global")).map_err(core)?;
    let residual = identity_residual(&dec, &global, p.identity_samples as usize, out.seed(root, "lipschitz/identity"));
    let matter_inside = max_matter_inside(&dec, 10_000, out.seed(root, "lipschitz/inside"));
    let constraint = check_constraint_split(&dec, &traj.snapshots, &config.schedule).map_err(core)?;

    let report = DecompositionReport {
        domain: kprime.clone(),
        metric: p.metric,
        profile: ProfileSummary { family: dec.profile().family().to_string(), rho0: dec.profile().rho0() },
        lipschitz_estimate_global: global_est.constant_hat,
        identity_max_abs_residual: residual,
        snapshots: constraint.snapshots.clone(),
    };
    out.write_json("decomposition.json", &report)?;
    out.write("constraint_split.csv", |w| {
        let mut csv = CsvWriter::new(
            w,
            &["t", "H", "lipschitz_part", "matter_part", "scale", "lipschitz_part_unscaled", "matter_part_unscaled", "within_bound"],
        )?;
        for s in &constraint.snapshots {
            csv.row(&[
                fmt_f64(s.t),
                fmt_f64(s.h),
                fmt_f64(s.lipschitz_part),
                fmt_f64(s.matter_part),
                fmt_f64(s.scale),
                fmt_f64(s.lipschitz_part_unscaled),
                fmt_f64(s.matter_part_unscaled),
                s.within_bound.to_string(),
            ])?;
        }
        csv.finish()
    })?;
    Ok(json!({
        "local_estimate": local.constant_hat,
        "normalization_scale": normalized.scale(),
        "rho0": tuning.rho0,
        "tuning_reached": tuning.reached,
        "global_estimate": global_est.constant_hat,
        "identity_max_abs_residual": residual,
        "max_matter_inside": matter_inside,
        "all_within_bound": constraint.all_within_bound,
        "matter_positive": constraint.matter_positive,
        "lipschitz_nonpositive_given_matter_positive": constraint.lipschitz_nonpositive_given_matter_positive,
    }))
}

pub fn concentration(p: &ConcentrationParams, root: u64, out: &mut OutDir) -> Result<Value, CliError> {
    let seed = out.seed(root, "concentration/sampler");
    let sampler = MMSpaceSampler::new(p.sampler.clone(), seed).map_err(randers_core::Error::from)?;
    let obs = p.observable.clone();
    let f = move |x: &[f64]| obs.eval(x);
    let profile = concentration_profile(&f, &sampler, &p.rho_grid, p.n_samples as usize, p.sigma_f, p.rho_p)
        .map_err(randers_core::Error::from)?;
    out.write("profile.csv", |w| profile.write_csv(w))?;
    let summary = profile.fit_summary(seed);
    out.write_json("fit.json", &summary)?;
    if profile.fit.is_none() {
        // the files stay for inspection; the run itself failed
        fit_decay_constant(&profile).map_err(randers_core::Error::from)?;
    }
    Ok(serde_json::to_value(&summary).expect("serializable"))
}

fn sphere_bound_holds(profile: &ConcentrationProfile) -> bool {
    (0..profile.rho_grid.len()).all(|i| {
        profile.n_exceed[i] < 10
            || profile.tail_prob[i] <= profile.sphere_bound(profile.rho_grid[i]).unwrap_or(f64::INFINITY) + 3.0 * profile.standard_error(i)
    })
}

pub fn sphere(p: &SphereParams, root: u64, out: &mut OutDir) -> Result<Value, CliError> {
    let mut rows = Vec::new();
    let mut iso_rows = Vec::new();
    for &dim in &p.dimensions {
        let n = dim as usize;
        let seed = out.seed(root, &format!("sphere/{n}"));
        let sampler = MMSpaceSampler::sphere(n, seed).map_err(randers_core::Error::from)?;
        let rho_p = 1.0 / ((n - 1) as f64).sqrt();
        let grid: Vec<f64> = p.rho_multipliers.iter().map(|k| k * rho_p).collect();
        let x1 = |x: &[f64]| x[0];
        let profile = concentration_profile(&x1, &sampler, &grid, p.n_samples as usize, rho_p, rho_p)
            .map_err(randers_core::Error::from)?;
        out.write(&format!("sphere_N{n}.csv"), |w| profile.write_csv(w))?;
        let iso = sphere_isoperimetric_check(n, &p.epsilon_grid, p.n_samples as usize, derive_seed(seed, "isoperimetric", 0))
            .map_err(randers_core::Error::from)?;
        for r in &iso.rows {
            iso_rows.push((n, r.clone()));
        }
        rows.push(json!({
            "N": n,
            "median_hat": profile.median_hat,
            "C1_hat": profile.fit.map(|f| f.c1_hat),
            "C2_hat": profile.fit.map(|f| f.c2_hat),
            "raw_decay_slope": profile.raw_decay_slope(),
            "bound_holds": sphere_bound_holds(&profile),
            "isoperimetric_pass": iso.all_pass(),
        }));
    }
    out.write("isoperimetric.csv", |w| {
        let mut csv = CsvWriter::new(w, &["N", "epsilon", "bound", "empirical", "stderr", "pass"])?;
        for (n, r) in &iso_rows {
            csv.row(&[n.to_string(), fmt_f64(r.epsilon), fmt_f64(r.bound), fmt_f64(r.empirical), fmt_f64(r.stderr), r.pass.to_string()])?;
        }
        csv.finish()
    })?;
    // raw decay slope against ρ²/2 should grow like N − 1
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some(((r["N"].as_u64()? - 1) as f64, r["raw_decay_slope"].as_f64()?)))
        .unzip();
    let regression = stats::linear_fit(&x, &y);
    let summary = json!({ "dimensions": rows, "slope_vs_n_minus_1": regression });
    out.write_json("sphere_summary.json", &summary)?;
    Ok(summary)
}

pub fn wep(p: &WepParams, root: u64, out: &mut OutDir) -> Result<Value, CliError> {
    let config = WepConfig {
        n_list: p.n_list.iter().map(|n| *n as usize).collect(),
        n_trials: p.n_trials as usize,
        evolution: EvolutionSpec { field: p.field.clone(), period: p.period, dt: p.dt, n_cycles: p.n_cycles as usize },
        preparation: Preparation::isotropic(p.preparation_mean, p.preparation_sigma, out.seed(root, "wep/preparation")),
        rho_grid: p.rho_grid.clone(),
        seed: out.seed(root, "wep/trials"),
        n_reference: p.n_reference as usize,
    };
    let report = wep_experiment(&config).map_err(randers_core::Error::from)?;
    out.write("wep.csv", |w| report.write_csv(w))?;
    let curves = report.tail_curves(p.tail_points as usize);
    let scale = scale_relation_check(&curves, (10.0 / config.n_trials as f64).min(0.5));
    let per_n: Vec<Value> = report
        .per_n
        .iter()
        .map(|r| {
            json!({
                "N": r.n,
                "sigma_X": r.sigma_x,
                "median_sup_D_AB": r.median_sup_d_ab,
                "median_sup_D_SM": r.median_sup_d_sm,
                "fit": r.fit,
                "max_observable_step": r.max_observable_step,
            })
        })
        .collect();
    let summary = json!({
        "per_N": per_n,
        "monotonicity": report.monotonicity,
        "scale_relation": match &scale {
            Ok(s) => serde_json::to_value(s).expect("serializable"),
            Err(e) => json!({ "unavailable": e.to_string() }),
        },
        "free_evolution": report.free_evolution,
        "beta_bound": report.beta_bound,
        "internal_time_per_cycle": report.internal_time_per_cycle,
        "guide_interpolation": "linear in tau between snapshots",
    });
    out.write_json("wep_summary.json", &summary)?;
    Ok(summary)
}

pub fn gravity(p: &GravityParams, out: &mut OutDir) -> Result<Value, CliError> {
    let k = PhysicalConstants::codata2018();
    let cases = p.cases.clone().unwrap_or_else(|| standard_cases(&k));
    let rows = scale_sweep(&cases, &k).map_err(randers_core::Error::from)?;
    out.write("sweep.csv", |w| write_sweep_csv(w, &rows))?;
    out.write_json("constants.json", &json!({ "source": "CODATA 2018", "constants": k }))?;
    Ok(json!({
        "rows": rows.len(),
        "max_alpha_oracle": rows.iter().map(|r| r.alpha_oracle).fold(0.0, f64::max),
        "derived_consistency": k.derived_consistency(),
    }))
}
