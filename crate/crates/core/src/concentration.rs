//! Concentration of measure on metric-measure spaces.
//!
//! Samplers draw from the unit sphere `S^N ⊂ ℝ^{N+1}`, isotropic Gaussians and
//! product-uniform boxes. Tail probabilities `P(|f − M_f| > ρ)` are counted on a
//! sample independent of the one used to estimate the Lévy median `M_f`, and decay
//! constants come from a log-linear fit `−ln tail ≈ −ln C₁ + C₂ ρ²/(2ρ_p²)`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::output::{fmt_f64, CsvWriter};
use crate::rng;
use crate::stats::{self, LinearFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConcentrationError {
    #[error("f is non-finite on sample {0}")]
    Evaluation(usize),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("rho grid must be nonempty, positive and strictly ascending")]
    Grid,
    #[error("sphere dimension must be >= 2, got {0}")]
    Dimension(usize),
    #[error("fit unavailable: {usable} grid points with >= {MIN_EXCEEDANCES} exceedances, need 3")]
    FitUnavailable { usable: usize },
    #[error("degenerate regression")]
    DegenerateFit,
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Grid points with fewer exceedances are excluded from fits.
pub const MIN_EXCEEDANCES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerKind {
    /// Uniform measure on `S^n ⊂ ℝ^{n+1}`.
    Sphere { n: usize },
    Gaussian { d: usize, sigma: f64 },
    ProductUniform { d: usize, lower: f64, upper: f64 },
}

/// Seeded sampler for `(T, μ_P, d)`. Same seed, same stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MMSpaceSampler {
    pub kind: SamplerKind,
    pub seed: u64,
}

impl MMSpaceSampler {
    pub fn new(kind: SamplerKind, seed: u64) -> Result<Self, ConcentrationError> {
        match &kind {
            SamplerKind::Sphere { n } if *n < 1 => return Err(ConcentrationError::Dimension(*n)),
            SamplerKind::Gaussian { d, sigma } if *d == 0 || !(*sigma > 0.0) => {
                return Err(ConcentrationError::Parameter("gaussian needs d >= 1 and sigma > 0".into()))
            }
            SamplerKind::ProductUniform { d, lower, upper } if *d == 0 || !(lower < upper) => {
                return Err(ConcentrationError::Parameter("product box needs d >= 1 and lower < upper".into()))
            }
            _ => {}
        }
        Ok(Self { kind, seed })
    }

    pub fn sphere(n: usize, seed: u64) -> Result<Self, ConcentrationError> {
        Self::new(SamplerKind::Sphere { n }, seed)
    }

    pub fn gaussian(d: usize, sigma: f64, seed: u64) -> Result<Self, ConcentrationError> {
        Self::new(SamplerKind::Gaussian { d, sigma }, seed)
    }

    /// Intrinsic dimension `N`.
    pub fn dimension(&self) -> usize {
        match self.kind {
            SamplerKind::Sphere { n } => n,
            SamplerKind::Gaussian { d, .. } | SamplerKind::ProductUniform { d, .. } => d,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            SamplerKind::Sphere { n } => n + 1,
            _ => self.dimension(),
        }
    }

    pub fn sample_into<R: Rng>(&self, r: &mut R, out: &mut [f64]) {
        match self.kind {
            SamplerKind::Sphere { .. } => loop {
                for x in out.iter_mut() {
                    *x = r.sample(StandardNormal);
                }
                let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-150 {
                    out.iter_mut().for_each(|x| *x /= norm);
                    break;
                }
            },
            SamplerKind::Gaussian { sigma, .. } => {
                for x in out.iter_mut() {
                    *x = sigma * r.sample::<f64, _>(StandardNormal);
                }
            }
            SamplerKind::ProductUniform { lower, upper, .. } => {
                for x in out.iter_mut() {
                    *x = r.random_range(lower..upper);
                }
            }
        }
    }

    /// `f` evaluated on `n` samples of the sub-stream `stream`. Chunks are seeded
    /// independently, so the result does not depend on the thread count.
    pub fn sample_values(
        &self,
        f: &(dyn Fn(&[f64]) -> f64 + Sync),
        n: usize,
        stream: u64,
    ) -> Result<Vec<f64>, ConcentrationError> {
        let dim = self.ambient_dim();
        let tag = format!("mm-sample/{stream}");
        let chunks = n.div_ceil(rng::CHUNK);
        let parts: Vec<Result<Vec<f64>, ConcentrationError>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut r = rng::stream(self.seed, &tag, c as u64);
                let count = rng::CHUNK.min(n - c * rng::CHUNK);
                let mut x = vec![0.0; dim];
                let mut vals = Vec::with_capacity(count);
                for k in 0..count {
                    self.sample_into(&mut r, &mut x);
                    let v = f(&x);
                    if !v.is_finite() {
                        return Err(ConcentrationError::Evaluation(c * rng::CHUNK + k));
                    }
                    vals.push(v);
                }
                Ok(vals)
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianEstimate {
    pub median: f64,
    pub frac_above: f64,
    pub frac_below: f64,
    pub n: usize,
}

impl MedianEstimate {
    /// Both fractions within `2/√n` of one half (ties count toward neither side).
    pub fn balanced(&self) -> bool {
        let tol = 2.0 / (self.n as f64).sqrt();
        let ties = 1.0 - self.frac_above - self.frac_below;
        (self.frac_above - 0.5).abs() <= tol + ties && (self.frac_below - 0.5).abs() <= tol + ties
    }
}

fn median_of(values: &[f64]) -> MedianEstimate {
    let m = stats::median(values);
    let n = values.len();
    let above = values.iter().filter(|v| **v > m).count() as f64 / n as f64;
    let below = values.iter().filter(|v| **v < m).count() as f64 / n as f64;
    MedianEstimate { median: m, frac_above: above, frac_below: below, n }
}

/// Empirical Lévy mean of `f` under the sampler's measure.
pub fn levy_median(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    sampler: &MMSpaceSampler,
    n: usize,
) -> Result<MedianEstimate, ConcentrationError> {
    if n < 100 {
        return Err(ConcentrationError::TooFewSamples { min: 100, got: n });
    }
    let values = sampler.sample_values(f, n, 0)?;
    Ok(median_of(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    #[serde(rename = "C1_hat")]
    pub c1_hat: f64,
    #[serde(rename = "C2_hat")]
    pub c2_hat: f64,
    pub stderr: f64,
    pub points: usize,
    pub r_squared: f64,
}

/// Empirical concentration function of one observable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationProfile {
    pub rho_grid: Vec<f64>,
    /// `P(|f − M_f| > ρ)` per grid point.
    pub tail_prob: Vec<f64>,
    pub n_exceed: Vec<usize>,
    pub median_hat: f64,
    pub n_samples: usize,
    pub sigma_f: f64,
    pub rho_p: f64,
    /// Intrinsic dimension for the sphere bound column, when meaningful.
    pub dimension: Option<usize>,
    pub fit: Option<DecayFit>,
}

fn check_grid(rho_grid: &[f64]) -> Result<(), ConcentrationError> {
    if rho_grid.is_empty()
        || rho_grid.iter().any(|r| !(*r > 0.0 && r.is_finite()))
        || rho_grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(ConcentrationError::Grid);
    }
    Ok(())
}

impl ConcentrationProfile {
    /// Tail counts of `|v − center|` over the grid; the fit is attempted and left
    /// `None` when fewer than three grid points have enough exceedances.
    pub fn from_values(
        values: &[f64],
        center: f64,
        rho_grid: &[f64],
        sigma_f: f64,
        rho_p: f64,
        dimension: Option<usize>,
    ) -> Result<Self, ConcentrationError> {
        check_grid(rho_grid)?;
        if values.is_empty() {
            return Err(ConcentrationError::TooFewSamples { min: 1, got: 0 });
        }
        if !(sigma_f > 0.0 && rho_p > 0.0) {
            return Err(ConcentrationError::Parameter("sigma_f and rho_p must be positive".into()));
        }
        let mut dev: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
        dev.sort_by(|a, b| a.total_cmp(b));
        let n = dev.len();
        let n_exceed: Vec<usize> = rho_grid
            .iter()
            .map(|rho| n - dev.partition_point(|d| d <= rho))
            .collect();
        let tail_prob = n_exceed.iter().map(|k| *k as f64 / n as f64).collect();
        let mut profile = Self {
            rho_grid: rho_grid.to_vec(),
            tail_prob,
            n_exceed,
            median_hat: center,
            n_samples: n,
            sigma_f,
            rho_p,
            dimension,
            fit: None,
        };
        profile.fit = fit_decay_constant(&profile).ok();
        Ok(profile)
    }

    pub fn standard_error(&self, i: usize) -> f64 {
        stats::binomial_se(self.tail_prob[i], self.n_samples)
    }

    /// `2·exp(−(N−1)ρ²/2)`.
    pub fn sphere_bound(&self, rho: f64) -> Option<f64> {
        self.dimension.map(|n| 2.0 * (-(n as f64 - 1.0) * rho * rho / 2.0).exp())
    }

    /// `½·exp(−ρ²/(2σ_f²))`, the Gaussian form with its printed constant ½.
    pub fn gaussian_bound(&self, rho: f64) -> f64 {
        0.5 * (-rho * rho / (2.0 * self.sigma_f * self.sigma_f)).exp()
    }

    /// Decay slope against `ρ²/2` in raw units, `C₂/ρ_p²`.
    pub fn raw_decay_slope(&self) -> Option<f64> {
        self.fit.map(|f| f.c2_hat / (self.rho_p * self.rho_p))
    }

    /// `rho, tail_prob, bound_sphere, bound_gaussian, n_exceed`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = CsvWriter::new(out, &["rho", "tail_prob", "bound_sphere", "bound_gaussian", "n_exceed"])?;
        for (i, rho) in self.rho_grid.iter().enumerate() {
            w.row(&[
                fmt_f64(*rho),
                fmt_f64(self.tail_prob[i]),
                self.sphere_bound(*rho).map(fmt_f64).unwrap_or_default(),
                fmt_f64(self.gaussian_bound(*rho)),
                self.n_exceed[i].to_string(),
            ])?;
        }
        w.finish()
    }

    pub fn fit_summary(&self, seed: u64) -> FitSummary {
        FitSummary {
            median_hat: self.median_hat,
            c1_hat: self.fit.map(|f| f.c1_hat),
            c2_hat: self.fit.map(|f| f.c2_hat),
            stderr: self.fit.map(|f| f.stderr),
            n_samples: self.n_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub median_hat: f64,
    #[serde(rename = "C1_hat")]
    pub c1_hat: Option<f64>,
    #[serde(rename = "C2_hat")]
    pub c2_hat: Option<f64>,
    pub stderr: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Median on sample stream 0, tails counted on an independent stream 1 of `n` samples.
pub fn concentration_profile(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    sampler: &MMSpaceSampler,
    rho_grid: &[f64],
    n: usize,
    sigma_f: f64,
    rho_p: f64,
) -> Result<ConcentrationProfile, ConcentrationError> {
    check_grid(rho_grid)?;
    if n < 100 {
        return Err(ConcentrationError::TooFewSamples { min: 100, got: n });
    }
    let median = sampler.sample_values(f, n, 0)?;
    let median = stats::median(&median);
    let values = sampler.sample_values(f, n, 1)?;
    let dimension = matches!(sampler.kind, SamplerKind::Sphere { .. }).then(|| sampler.dimension());
    ConcentrationProfile::from_values(&values, median, rho_grid, sigma_f, rho_p, dimension)
}

/// Least squares of `−ln tail` on `ρ²/(2ρ_p²)` over grid points with at least
/// [`MIN_EXCEEDANCES`] exceedances.
pub fn fit_decay_constant(profile: &ConcentrationProfile) -> Result<DecayFit, ConcentrationError> {
    let (x, y): (Vec<f64>, Vec<f64>) = profile
        .rho_grid
        .iter()
        .zip(&profile.tail_prob)
        .zip(&profile.n_exceed)
        .filter(|((_, t), k)| **k >= MIN_EXCEEDANCES && **t > 0.0)
        .map(|((rho, t), _)| (rho * rho / (2.0 * profile.rho_p * profile.rho_p), -t.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(ConcentrationError::FitUnavailable { usable: x.len() });
    }
    let LinearFit { slope, intercept, slope_stderr, r_squared, n } =
        stats::linear_fit(&x, &y).ok_or(ConcentrationError::DegenerateFit)?;
    if !slope.is_finite() {
        return Err(ConcentrationError::DegenerateFit);
    }
    Ok(DecayFit { c1_hat: (-intercept).exp(), c2_hat: slope, stderr: slope_stderr, points: n, r_squared })
}

/// `1 − √(π/8)·exp(−ε²(N−1)/2)`.
pub fn isoperimetric_bound(n: usize, epsilon: f64) -> f64 {
    1.0 - (PI / 8.0).sqrt() * (-epsilon * epsilon * (n as f64 - 1.0) / 2.0).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoperimetricRow {
    pub epsilon: f64,
    pub bound: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoperimetricReport {
    pub n: usize,
    pub samples: usize,
    pub median: f64,
    /// `μ(A)` on the counting sample; at least one half up to sampling error.
    pub measure_of_a: f64,
    pub rows: Vec<IsoperimetricRow>,
}

impl IsoperimetricReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Geodesic distance on the unit sphere from a point with first coordinate `x1` to the
/// cap `{x : x₁ ≤ m}`: the latitude gap `max(0, asin x₁ − asin m)`.
pub fn distance_to_cap(x1: f64, m: f64) -> f64 {
    (x1.clamp(-1.0, 1.0).asin() - m.clamp(-1.0, 1.0).asin()).max(0.0)
}

/// `min_a arccos⟨x, a⟩` over a stored sample; an upper bound on the distance to any
/// set containing the sample.
pub fn distance_to_sample(x: &[f64], sample: &[Vec<f64>]) -> f64 {
    sample
        .iter()
        .map(|a| x.iter().zip(a).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0).acos())
        .fold(f64::INFINITY, f64::min)
}

/// Checks `μ(A_ε) ≥ 1 − √(π/8)·exp(−ε²(N−1)/2)` on `S^N` for `A = {x₁ ≤ M}`, with `M`
/// the median of `x₁` from an independent sample (so `μ(A) ≥ 1/2`).
pub fn sphere_isoperimetric_check(
    n: usize,
    epsilon_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<IsoperimetricReport, ConcentrationError> {
    if n < 2 {
        return Err(ConcentrationError::Dimension(n));
    }
    if samples < 100 {
        return Err(ConcentrationError::TooFewSamples { min: 100, got: samples });
    }
    let sampler = MMSpaceSampler::sphere(n, seed)?;
    let x1 = |x: &[f64]| x[0];
    let median = stats::median(&sampler.sample_values(&x1, samples, 0)?);
    let mut dist: Vec<f64> = sampler
        .sample_values(&x1, samples, 1)?
        .into_iter()
        .map(|v| distance_to_cap(v, median))
        .collect();
    dist.sort_by(|a, b| a.total_cmp(b));
    let measure_of_a = dist.partition_point(|d| *d <= 0.0) as f64 / samples as f64;
    let rows = epsilon_grid
        .iter()
        .map(|&epsilon| {
            let inside = dist.partition_point(|d| *d <= epsilon);
            let empirical = inside as f64 / samples as f64;
            let stderr = stats::binomial_se(empirical, samples);
            let bound = isoperimetric_bound(n, epsilon);
            IsoperimetricRow { epsilon, bound, empirical, stderr, pass: empirical >= bound - 3.0 * stderr }
        })
        .collect();
    Ok(IsoperimetricReport { n, samples, median, measure_of_a, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chi3_cdf(r: f64) -> f64 {
        // P(|X| ≤ r) for X ~ N(0, I₃)
        statrs::function::erf::erf(r / 2.0_f64.sqrt()) - (2.0 / PI).sqrt() * r * (-r * r / 2.0).exp()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sphere_samples_are_unit_and_centred() {
        let s = MMSpaceSampler::sphere(31, 3).unwrap();
        let n = 20_000;
        let norms = s.sample_values(&|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt(), n, 0).unwrap();
        assert!(norms.iter().all(|v| (v - 1.0).abs() < 1e-12));
        for i in [0, 7, 31] {
            let vals = s.sample_values(&move |x: &[f64]| x[i], n, 0).unwrap();
            assert!(stats::mean(&vals).abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = MMSpaceSampler::gaussian(5, 1.0, 9).unwrap();
        let f = |x: &[f64]| x[0] + x[4];
        assert_eq!(s.sample_values(&f, 9000, 0).unwrap(), s.sample_values(&f, 9000, 0).unwrap());
        assert_ne!(s.sample_values(&f, 10, 0).unwrap(), s.sample_values(&f, 10, 1).unwrap());
    }

    #[test]
    fn median_examples() {
        let n = 40_000;
        let g = MMSpaceSampler::gaussian(4, 1.0, 1).unwrap();
        let m = levy_median(&|x: &[f64]| x[0], &g, n).unwrap();
        assert!(m.median.abs() < 4.0 / (n as f64).sqrt());
        assert!(m.balanced());
        assert_eq!(levy_median(&|_: &[f64]| 2.5, &g, 500).unwrap().median, 2.5);
        assert!(matches!(levy_median(&|x: &[f64]| x[0], &g, 99), Err(ConcentrationError::TooFewSamples { .. })));
    }

    #[test]
    fn maxwell_median_matches_chi3_oracle() {
        let oracle = bisect(|r| chi3_cdf(r) - 0.5, 0.0, 5.0);
        assert!((oracle - 1.5382).abs() < 1e-4);
        let n = 100_000;
        let g = MMSpaceSampler::gaussian(3, 1.0, 17).unwrap();
        let m = levy_median(&|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt(), &g, n).unwrap();
        // chi(3) density at the median
        let pdf = (2.0 / PI).sqrt() * oracle * oracle * (-oracle * oracle / 2.0).exp();
        let se = 1.0 / (2.0 * pdf * (n as f64).sqrt());
        assert!((m.median - oracle).abs() < 3.0 * se, "{} vs {oracle}", m.median);
    }

    #[test]
    fn median_error_paths() {
        let g = MMSpaceSampler::gaussian(2, 1.0, 1).unwrap();
        let err = levy_median(&|x: &[f64]| if x[0] > 2.0 { f64::NAN } else { x[0] }, &g, 5000).unwrap_err();
        assert!(matches!(err, ConcentrationError::Evaluation(_)));
    }

    #[test]
    fn constant_function_has_empty_tail() {
        let g = MMSpaceSampler::gaussian(2, 1.0, 1).unwrap();
        let p = concentration_profile(&|_: &[f64]| 1.0, &g, &[0.1, 0.5, 1.0], 1000, 1.0, 1.0).unwrap();
        assert!(p.tail_prob.iter().all(|t| *t == 0.0));
        assert!(p.fit.is_none());
        assert!(matches!(fit_decay_constant(&p), Err(ConcentrationError::FitUnavailable { usable: 0 })));
    }

    #[test]
    fn gaussian_coordinate_tail_matches_exact() {
        let n = 100_000;
        let g = MMSpaceSampler::gaussian(3, 1.0, 23).unwrap();
        let grid: Vec<f64> = (1..=12).map(|k| 0.25 * k as f64).collect();
        let p = concentration_profile(&|x: &[f64]| x[0], &g, &grid, n, 1.0, 1.0).unwrap();
        for (i, rho) in grid.iter().enumerate() {
            let exact = 2.0 * (1.0 - stats::normal_cdf(*rho));
            let se = stats::binomial_se(exact, n);
            // the median is itself estimated; allow its shift of order 1/√n
            let slack = 2.0 * (-rho * rho / 2.0).exp() / (2.0 * PI).sqrt() * 4.0 / (n as f64).sqrt();
            assert!((p.tail_prob[i] - exact).abs() <= 3.0 * se + slack, "rho {rho}: {} vs {exact}", p.tail_prob[i]);
        }
    }

    #[test]
    fn exact_synthetic_decay_is_recovered() {
        let grid: Vec<f64> = (1..=10).map(|k| 0.3 * k as f64).collect();
        let n = 1_000_000_000usize;
        let c1 = 0.8;
        let tail: Vec<f64> = grid.iter().map(|r| c1 * (-r * r / 2.0).exp()).collect();
        let profile = ConcentrationProfile {
            n_exceed: tail.iter().map(|t| (t * n as f64) as usize).collect(),
            rho_grid: grid,
            tail_prob: tail,
            median_hat: 0.0,
            n_samples: n,
            sigma_f: 1.0,
            rho_p: 1.0,
            dimension: None,
            fit: None,
        };
        let fit = fit_decay_constant(&profile).unwrap();
        assert!((fit.c2_hat - 1.0).abs() < 1e-6);
        assert!((fit.c1_hat - c1).abs() < 1e-6);
    }

    #[test]
    fn isoperimetric_bound_values() {
        // 1 − √(π/8) = 0.3733429313...
        assert!((isoperimetric_bound(256, 0.0) - 0.373_342_931_342_25).abs() < 1e-12);
        let at_one = isoperimetric_bound(256, 1.0);
        assert!((at_one - (1.0 - (PI / 8.0).sqrt() * (-127.5_f64).exp())).abs() < 1e-10);
        assert!((isoperimetric_bound(256, 0.2) - 0.996_179_430_668_9).abs() < 1e-12);
        assert!(matches!(sphere_isoperimetric_check(1, &[0.1], 1000, 0), Err(ConcentrationError::Dimension(1))));
    }

    #[test]
    fn isoperimetric_near_one_is_full_measure() {
        let rep = sphere_isoperimetric_check(256, &[0.999], 20_000, 5).unwrap();
        assert_eq!(rep.rows[0].empirical, 1.0);
        assert!(rep.all_pass());
        assert!(rep.measure_of_a >= 0.5 - 3.0 * stats::binomial_se(0.5, 20_000));
    }

    #[test]
    fn cap_distance_agrees_with_dense_sample_in_low_dimension() {
        // On S² a dense sample of the cap {x₁ ≤ 0} approximates the set; the closed form
        // must never exceed the sample distance and must match it closely.
        let s = MMSpaceSampler::sphere(2, 8).unwrap();
        let mut r = rng::stream(8, "cap", 0);
        let mut cap = Vec::new();
        let mut x = vec![0.0; 3];
        while cap.len() < 20_000 {
            s.sample_into(&mut r, &mut x);
            if x[0] <= 0.0 {
                cap.push(x.clone());
            }
        }
        for _ in 0..50 {
            s.sample_into(&mut r, &mut x);
            let exact = distance_to_cap(x[0], 0.0);
            let approx = distance_to_sample(&x, &cap);
            assert!(exact <= approx + 1e-12);
            assert!(approx - exact < 0.05, "{exact} vs {approx}");
        }
    }
}
