//! Newtonian force-difference Lipschitz ratio in Planck units.
//!
//! `α` relates the change of `F = G m M / r²` between two radii to the change of
//! radius: `|F(r₂) − F(r₁)|/F_P = α·|r₂ − r₁|/l_P`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::output::{fmt_f64, CsvWriter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GravityError {
    #[error("radius must be positive and finite (r1 = {r1}, r2 = {r2})")]
    Domain { r1: f64, r2: f64 },
    #[error("r1 = r2 is singular")]
    Singular,
    #[error("closed form requires m = M (got m = {m}, M = {big_m})")]
    UnequalMasses { m: f64, big_m: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// `G`, `c`, `ħ` and the Planck units derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    #[serde(rename = "G")]
    pub g: f64,
    pub c: f64,
    pub hbar: f64,
    pub l_p: f64,
    #[serde(rename = "F_P")]
    pub f_p: f64,
    pub m_p: f64,
    #[serde(rename = "E_P")]
    pub e_p: f64,
    #[serde(rename = "D_P")]
    pub d_p: f64,
}

impl PhysicalConstants {
    /// CODATA 2018 recommended values (SI).
    pub const G_CODATA_2018: f64 = 6.674_30e-11;
    pub const C: f64 = 299_792_458.0;
    pub const HBAR_CODATA_2018: f64 = 1.054_571_817e-34;

    pub fn from_base(g: f64, c: f64, hbar: f64) -> Result<Self, GravityError> {
        if [g, c, hbar].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(GravityError::Parameter("G, c, hbar must be positive".into()));
        }
        let l_p = (hbar * g / c.powi(3)).sqrt();
        let m_p = (hbar * c / g).sqrt();
        Ok(Self { g, c, hbar, l_p, f_p: c.powi(4) / g, m_p, e_p: m_p * c * c, d_p: m_p / l_p.powi(3) })
    }

    pub fn codata2018() -> Self {
        Self::from_base(Self::G_CODATA_2018, Self::C, Self::HBAR_CODATA_2018).expect("positive constants")
    }

    /// Largest relative gap between the stored derived units and a fresh recomputation.
    pub fn derived_consistency(&self) -> f64 {
        let fresh = Self::from_base(self.g, self.c, self.hbar).expect("positive constants");
        [
            (self.l_p, fresh.l_p),
            (self.f_p, fresh.f_p),
            (self.m_p, fresh.m_p),
            (self.e_p, fresh.e_p),
            (self.d_p, fresh.d_p),
        ]
        .iter()
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max)
    }
}

/// Which radius defines the density `D = m/r³`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityConvention {
    R1,
    R2,
}

impl DensityConvention {
    pub fn label(self) -> &'static str {
        match self {
            DensityConvention::R1 => "r1",
            DensityConvention::R2 => "r2",
        }
    }
}

fn check_radii(r1: f64, r2: f64) -> Result<(), GravityError> {
    if !(r1 > 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()) {
        return Err(GravityError::Domain { r1, r2 });
    }
    Ok(())
}

/// `((1+λ)/λ³)·(D/D_P)·(E/E_P)` with `λ = r₁/r₂`, `D = m/r³` and `E = mc²`.
pub fn alpha_closed_form(
    m: f64,
    big_m: f64,
    r1: f64,
    r2: f64,
    convention: DensityConvention,
    k: &PhysicalConstants,
) -> Result<f64, GravityError> {
    check_radii(r1, r2)?;
    if (m - big_m).abs() > 1e-12 * m.abs().max(big_m.abs()) {
        return Err(GravityError::UnequalMasses { m, big_m });
    }
    if !(m >= 0.0) {
        return Err(GravityError::Parameter(format!("mass {m} must be >= 0")));
    }
    let lambda = r1 / r2;
    let r = match convention {
        DensityConvention::R1 => r1,
        DensityConvention::R2 => r2,
    };
    let density = m / (r * r * r);
    let energy = m * k.c * k.c;
    Ok((1.0 + lambda) / lambda.powi(3) * (density / k.d_p) * (energy / k.e_p))
}

/// `(|F(r₂) − F(r₁)|/F_P) / (|r₂ − r₁|/l_P)` with `F = G m M / r²` evaluated directly.
pub fn alpha_oracle(m: f64, big_m: f64, r1: f64, r2: f64, k: &PhysicalConstants) -> Result<f64, GravityError> {
    check_radii(r1, r2)?;
    if r1 == r2 {
        return Err(GravityError::Singular);
    }
    if !(m >= 0.0 && big_m >= 0.0) {
        return Err(GravityError::Parameter("masses must be >= 0".into()));
    }
    let force = |r: f64| k.g * m * big_m / (r * r);
    Ok(((force(r2) - force(r1)).abs() / k.f_p) / ((r2 - r1).abs() / k.l_p))
}

/// `l_P G² m M (r₁+r₂) / (c⁴ r₁² r₂²)`, the oracle after cancelling `|r₂ − r₁|`.
pub fn alpha_oracle_reduced(m: f64, big_m: f64, r1: f64, r2: f64, k: &PhysicalConstants) -> f64 {
    k.l_p * k.g * k.g * m * big_m * (r1 + r2) / (k.c.powi(4) * r1 * r1 * r2 * r2)
}

/// Input row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: String,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub r2: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GravityScaleCase {
    pub name: String,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub r1: f64,
    pub r2: f64,
    pub lambda: f64,
    pub density_convention: DensityConvention,
    /// `None` when `m ≠ M`.
    pub alpha_formula: Option<f64>,
    pub alpha_oracle: f64,
}

impl GravityScaleCase {
    pub fn evaluate(spec: &CaseSpec, convention: DensityConvention, k: &PhysicalConstants) -> Result<Self, GravityError> {
        if !(spec.lambda > 0.0 && spec.lambda.is_finite()) {
            return Err(GravityError::Parameter(format!("lambda {} must be positive", spec.lambda)));
        }
        let r2 = spec.r2;
        let r1 = spec.lambda * r2;
        let alpha_oracle = alpha_oracle(spec.m, spec.big_m, r1, r2, k)?;
        let alpha_formula = match alpha_closed_form(spec.m, spec.big_m, r1, r2, convention, k) {
            Ok(a) => Some(a),
            Err(GravityError::UnequalMasses { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            name: spec.name.clone(),
            m: spec.m,
            big_m: spec.big_m,
            r1,
            r2,
            lambda: spec.lambda,
            density_convention: convention,
            alpha_formula,
            alpha_oracle,
        })
    }

    /// `alpha_formula / alpha_oracle`.
    pub fn ratio(&self) -> Option<f64> {
        self.alpha_formula.map(|f| f / self.alpha_oracle)
    }
}

/// Electron/atomic, proton/nuclear, 1 kg at 1 m, Earth, and the Planck point, all at
/// `λ = 1/2`.
pub fn standard_cases(k: &PhysicalConstants) -> Vec<CaseSpec> {
    let case = |name: &str, m: f64, r2: f64| CaseSpec { name: name.into(), m, big_m: m, r2, lambda: 0.5 };
    vec![
        case("atomic", 9.109_383_701_5e-31, 5.291_772_109_03e-11),
        case("proton", 1.672_621_923_69e-27, 1e-15),
        case("macroscopic", 1.0, 1.0),
        case("earth", 5.9722e24, 6.371e6),
        case("planck", k.m_p, 2.0 * k.l_p),
    ]
}

/// Each case evaluated under both density conventions, `r1` rows first.
pub fn scale_sweep(cases: &[CaseSpec], k: &PhysicalConstants) -> Result<Vec<GravityScaleCase>, GravityError> {
    let mut rows = Vec::with_capacity(2 * cases.len());
    for convention in [DensityConvention::R1, DensityConvention::R2] {
        for c in cases {
            rows.push(GravityScaleCase::evaluate(c, convention, k)?);
        }
    }
    Ok(rows)
}

/// `name, m_kg, M_kg, r1_m, r2_m, lambda, alpha_formula, alpha_oracle, ratio`; the
/// name carries the density convention as a `/r1` or `/r2` suffix.
pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[GravityScaleCase]) -> std::io::Result<()> {
    let mut w = CsvWriter::new(
        out,
        &["name", "m_kg", "M_kg", "r1_m", "r2_m", "lambda", "alpha_formula", "alpha_oracle", "ratio"],
    )?;
    for r in rows {
        w.row(&[
            format!("{}/{}", r.name, r.density_convention.label()),
            fmt_f64(r.m),
            fmt_f64(r.big_m),
            fmt_f64(r.r1),
            fmt_f64(r.r2),
            fmt_f64(r.lambda),
            r.alpha_formula.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.alpha_oracle),
            r.ratio().map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.finish()
}

/// A system of units as scale factors from SI: length, mass and time units expressed
/// in metres, kilograms and seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    pub length: f64,
    pub mass: f64,
    pub time: f64,
}

impl UnitSystem {
    pub const SI: Self = Self { length: 1.0, mass: 1.0, time: 1.0 };
    pub const CGS: Self = Self { length: 1e-2, mass: 1e-3, time: 1.0 };

    /// Planck units, where `G = c = ħ = 1`.
    pub fn planck(k: &PhysicalConstants) -> Self {
        Self { length: k.l_p, mass: k.m_p, time: k.l_p / k.c }
    }

    /// `G`, `c`, `ħ` re-expressed in this system.
    pub fn constants(&self, k: &PhysicalConstants) -> PhysicalConstants {
        let (l, m, t) = (self.length, self.mass, self.time);
        let g = k.g * m * t * t / (l * l * l);
        let c = k.c * t / l;
        let hbar = k.hbar * t / (m * l * l);
        PhysicalConstants::from_base(g, c, hbar).expect("positive constants")
    }

    /// `α` for an SI case recomputed entirely in this system.
    pub fn alpha_oracle(&self, m: f64, big_m: f64, r1: f64, r2: f64, k: &PhysicalConstants) -> Result<f64, GravityError> {
        let kk = self.constants(k);
        alpha_oracle(m / self.mass, big_m / self.mass, r1 / self.length, r2 / self.length, &kk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> PhysicalConstants {
        PhysicalConstants::codata2018()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn planck_units_match_reference_values() {
        let k = k();
        assert!(rel(k.l_p, 1.616_255e-35) < 1e-5);
        assert!(rel(k.m_p, 2.176_434e-8) < 1e-5);
        assert!(rel(k.e_p, 1.956_1e9) < 1e-4);
        assert!(k.derived_consistency() < 1e-12);
    }

    #[test]
    fn closed_form_is_two_at_the_planck_point() {
        let k = k();
        let a = alpha_closed_form(k.m_p, k.m_p, k.l_p, k.l_p, DensityConvention::R1, &k).unwrap();
        assert_eq!(a, 2.0);
    }

    #[test]
    fn closed_form_errors_and_limits() {
        let k = k();
        assert!(matches!(
            alpha_closed_form(1.0, 2.0, 1.0, 2.0, DensityConvention::R1, &k),
            Err(GravityError::UnequalMasses { .. })
        ));
        assert!(matches!(
            alpha_closed_form(1.0, 1.0, 0.0, 2.0, DensityConvention::R1, &k),
            Err(GravityError::Domain { .. })
        ));
        assert_eq!(alpha_closed_form(0.0, 0.0, 1.0, 2.0, DensityConvention::R1, &k).unwrap(), 0.0);
        let small = alpha_closed_form(1e-20, 1e-20, 1.0, 2.0, DensityConvention::R1, &k).unwrap();
        let big = alpha_closed_form(1e-10, 1e-10, 1.0, 2.0, DensityConvention::R1, &k).unwrap();
        assert!((big / small / 1e20 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proton_case_is_tiny_and_positive() {
        let k = k();
        let m = 1.672e-27;
        let a = alpha_closed_form(m, m, 1e-15, 1e-15, DensityConvention::R1, &k).unwrap();
        assert!(a > 0.0 && a < 1e-30);
        let o = alpha_oracle(m, m, 0.5e-15, 1e-15, &k).unwrap();
        assert!(o > 0.0 && o < 1e-30);
    }

    #[test]
    fn oracle_matches_reduction_and_edge_cases() {
        let k = k();
        for (m, r1) in [(1.0, 1.0), (1.672e-27, 1e-15), (5.97e24, 6.4e6), (k.m_p, k.l_p)] {
            let r2 = 2.0 * r1;
            let direct = alpha_oracle(m, m, r1, r2, &k).unwrap();
            assert!(rel(direct, alpha_oracle_reduced(m, m, r1, r2, &k)) < 1e-12);
        }
        assert_eq!(alpha_oracle(0.0, 5.0, 1.0, 2.0, &k).unwrap(), 0.0);
        assert_eq!(alpha_oracle(1.0, 1.0, 2.0, 2.0, &k), Err(GravityError::Singular));
        let planck = alpha_oracle(k.m_p, k.m_p, k.l_p, 2.0 * k.l_p, &k).unwrap();
        assert!(rel(planck, 0.75) < 1e-12);
    }

    #[test]
    fn sweep_rows_and_thresholds() {
        let k = k();
        let rows = scale_sweep(&standard_cases(&k), &k).unwrap();
        assert_eq!(rows.len(), 10);
        for r in &rows {
            if r.name == "planck" {
                assert!((0.1..=10.0).contains(&r.alpha_oracle));
            } else {
                assert!(r.alpha_oracle < 1e-30, "{} {}", r.name, r.alpha_oracle);
            }
            assert!((r.lambda - r.r1 / r.r2).abs() < 1e-12);
        }
        let zero: Vec<CaseSpec> = standard_cases(&k).into_iter().map(|c| CaseSpec { m: 0.0, big_m: 0.0, ..c }).collect();
        assert!(scale_sweep(&zero, &k).unwrap().iter().all(|r| r.alpha_oracle == 0.0 && r.alpha_formula == Some(0.0)));
    }

    #[test]
    fn ratio_depends_on_lambda_and_convention_only() {
        // formula/oracle = λ⁻⁴ (r1 convention) and λ⁻¹ (r2 convention) in closed form
        let k = k();
        for lambda in [0.25, 0.5, 2.0] {
            for (conv, power) in [(DensityConvention::R1, -4), (DensityConvention::R2, -1)] {
                let c = CaseSpec { name: "x".into(), m: 3.0, big_m: 3.0, r2: 7.0, lambda };
                let row = GravityScaleCase::evaluate(&c, conv, &k).unwrap();
                assert!(rel(row.ratio().unwrap(), lambda.powi(power)) < 1e-12);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let k = k();
        let rows = scale_sweep(&standard_cases(&k)[..1], &k).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "name,m_kg,M_kg,r1_m,r2_m,lambda,alpha_formula,alpha_oracle,ratio");
        assert!(lines[1].starts_with("atomic/r1,"));
        assert!(lines[2].starts_with("atomic/r2,"));
    }

    #[test]
    fn unit_system_invariance() {
        let k = k();
        let (m, r1, r2) = (1.672e-27, 0.5e-15, 1e-15);
        let si = alpha_oracle(m, m, r1, r2, &k).unwrap();
        for units in [UnitSystem::CGS, UnitSystem::planck(&k)] {
            assert!(rel(units.alpha_oracle(m, m, r1, r2, &k).unwrap(), si) < 1e-12);
        }
        let planck = UnitSystem::planck(&k).constants(&k);
        for v in [planck.g, planck.c, planck.hbar] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
