//! Neo-Hookean energies ∫ |Du|² + H(det Du) region by region, and the
//! ε-convergence tables of the recovery family.
//!
//! Energies are integrated on the native charts of each region; the azimuthal
//! factor 2π is part of the chart weight. In cylindrical form the Dirichlet
//! density of an axisymmetric map reads
//!
//! |Du|² = |∂_r u_ρ|² + u_ρ²|∂_r u_φ|² + |∂₃u_ρ|² + u_ρ²|∂₃u_φ|² + u_ρ² sin²u_φ / r²,
//!
//! so that on c_ε the energy splits as 2π(I + II + III) with
//!
//! * I = ∫∫ r|∂_r u_ρ|² + r|u_ρ ∂_r u_φ|² dr dx₃ → ½,
//! * II = ∫∫ |u_ρ sin u_φ|² / r dr dx₃ → ½,
//! * III = ∫∫ r|∂₃u_ρ|² dr dx₃ → 0.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{GradeEdge, RegionId};
use crate::limit_map::LimitMap;
use crate::maps::AxisymmetricMap;
use crate::quadrature::{integrate_1d, integrate_2d, integrate_charts, QuadResult, QuadSpec};
use crate::recovery_map::{RecoveryMap, RecoveryParams};

type Evaluator = dyn Fn(f64) -> f64 + Send + Sync;

/// A convex volumetric penalty H : (0, ∞) → [0, ∞).
#[derive(Clone)]
pub struct HFunction {
    pub name: String,
    /// Parameters of the family (for reports).
    pub parameters: Vec<f64>,
    eval: Arc<Evaluator>,
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HFunction").field("name", &self.name).field("parameters", &self.parameters).finish()
    }
}

impl Default for HFunction {
    /// H(t) = t^{5/4} + t^{−1/4}.
    fn default() -> HFunction {
        HFunction::power(1.25, 0.25)
    }
}

/// Outcome of the numerical screen of an [`HFunction`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HScreen {
    /// Most negative normalized second difference on the log grid.
    pub convexity_defect: f64,
    /// H(t)/t sampled at t = 10², 10⁴, 10⁶, 10⁸.
    pub growth_at_infinity: Vec<f64>,
    /// H(s) sampled at s = 10⁻², 10⁻⁴, 10⁻⁶, 10⁻⁸.
    pub growth_at_zero: Vec<f64>,
    /// Increment ratios of ∫₁^T H(s)s^{−5/2} ds over T = 10^{4k}.
    pub tail_ratios: Vec<f64>,
    /// Increment ratios of ∫_δ¹ H(s³) ds over δ = 10^{−4k}.
    pub cube_ratios: Vec<f64>,
    /// Increment ratios of ∫_δ¹ H(s²) ds over δ = 10^{−4k}.
    pub square_ratios: Vec<f64>,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Largest increment ratio accepted as numerical convergence of a tail integral.
const RATIO_LIMIT: f64 = 0.9;

impl HFunction {
    /// H(t) = t^p + t^{−q}.
    pub fn power(p: f64, q: f64) -> HFunction {
        HFunction {
            name: format!("power:{p},{q}"),
            parameters: vec![p, q],
            eval: Arc::new(move |t: f64| t.powf(p) + t.powf(-q)),
        }
    }

    /// A user-supplied evaluator (screened by [`HFunction::validated`] before use).
    pub fn custom<F>(name: &str, f: F) -> HFunction
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        HFunction { name: name.to_string(), parameters: vec![], eval: Arc::new(f) }
    }

    /// Parses `default` or `power:p,q`; the result is screened.
    pub fn parse(spec: &str) -> Result<HFunction> {
        let spec = spec.trim();
        let h = if spec == "default" {
            HFunction::default()
        } else if let Some(rest) = spec.strip_prefix("power:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(Error::Config(format!("h-function '{spec}': expected power:p,q")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("h-function '{spec}': bad number '{s}'")));
            HFunction::power(num(parts[0])?, num(parts[1])?)
        } else {
            return Err(Error::Config(format!("unknown h-function '{spec}' (use default or power:p,q)")));
        };
        h.validated()
    }

    /// H(t) for t > 0 (+∞ for t ≤ 0).
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            f64::INFINITY
        } else {
            (self.eval)(t)
        }
    }

    /// Returns `self` if the numerical screen passes, a config error otherwise.
    pub fn validated(self) -> Result<HFunction> {
        let screen = self.screen();
        if screen.passed {
            Ok(self)
        } else {
            Err(Error::HypothesisViolated(format!("{}: {}", self.name, screen.failures.join("; "))))
        }
    }

    /// Numerical screen: convexity, growth at 0 and ∞, and the three integrability conditions.
    pub fn screen(&self) -> HScreen {
        let mut failures = Vec::new();
        // Convexity on a log grid t ∈ [10⁻⁶, 10⁶]: second divided differences, normalized.
        let grid: Vec<f64> = (0..=240).map(|k| 10f64.powf(-6.0 + 12.0 * k as f64 / 240.0)).collect();
        let mut defect: f64 = 0.0;
        for w in grid.windows(3) {
            let (t0, t1, t2) = (w[0], w[1], w[2]);
            let (h0, h1, h2) = (self.eval(t0), self.eval(t1), self.eval(t2));
            let second = ((h2 - h1) / (t2 - t1) - (h1 - h0) / (t1 - t0)) / (t2 - t0);
            let scale = 1.0 + h0.abs().max(h1.abs()).max(h2.abs()) / (t1 * t1);
            defect = defect.min(second / scale);
        }
        if defect < -1e-9 || !defect.is_finite() {
            failures.push(format!("not convex (normalized second difference {defect:e})"));
        }
        let growth_at_infinity: Vec<f64> = [1e2, 1e4, 1e6, 1e8].iter().map(|t| self.eval(*t) / t).collect();
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]) && v[v.len() - 1] > 10.0 * v[0].abs().max(1e-300);
        if !increasing(&growth_at_infinity) {
            failures.push("H(t)/t does not grow without bound".into());
        }
        let growth_at_zero: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8].iter().map(|s| self.eval(*s)).collect();
        if !increasing(&growth_at_zero) {
            failures.push("H(s) does not blow up as s → 0".into());
        }
        // Integrability checks via increments over geometric windows, integrated in log variables.
        let spec = QuadSpec { atol: 1e-12, rtol: 1e-10, ..QuadSpec::default() };
        let log_integral = |g: &(dyn Fn(f64) -> f64 + Sync), lo: f64, hi: f64| -> f64 {
            integrate_1d(|u| { let s = u.exp(); g(s) * s }, lo.ln(), hi.ln(), &[], &[], &spec)
                .map(|r| r.value)
                .unwrap_or(f64::NAN)
        };
        let ratios = |g: &(dyn Fn(f64) -> f64 + Sync), edges: &[f64]| -> Vec<f64> {
            let incs: Vec<f64> = edges.windows(2).map(|w| log_integral(g, w[0].min(w[1]), w[0].max(w[1])).abs()).collect();
            incs.windows(2).map(|w| w[1] / w[0]).collect()
        };
        let tail_ratios = ratios(&|s| self.eval(s) * s.powf(-2.5), &[1.0, 1e4, 1e8, 1e12, 1e16]);
        let cube_ratios = ratios(&|s| self.eval(s * s * s), &[1.0, 1e-4, 1e-8, 1e-12, 1e-16]);
        let square_ratios = ratios(&|s| self.eval(s * s), &[1.0, 1e-4, 1e-8, 1e-12, 1e-16]);
        for (name, r) in [("∫ H(s)s^{-5/2} at ∞", &tail_ratios), ("∫ H(s³) at 0", &cube_ratios), ("∫ H(s²) at 0", &square_ratios)] {
            if r.iter().any(|x| !(x.is_finite() && *x <= RATIO_LIMIT)) {
                failures.push(format!("{name} does not converge (increment ratios {r:?})"));
            }
        }
        HScreen {
            convexity_defect: defect,
            growth_at_infinity,
            growth_at_zero,
            tail_ratios,
            cube_ratios,
            square_ratios,
            passed: failures.is_empty(),
            failures,
        }
    }
}

/// ∫_region |Du|² dx.
pub fn dirichlet_energy(map: &dyn AxisymmetricMap, region: RegionId, spec: &QuadSpec) -> Result<QuadResult> {
    integrate_charts(&map.charts(region)?, |s| s.jet.dirichlet(), spec)
}

/// ∫_region H(det Du) dx.
pub fn h_energy(map: &dyn AxisymmetricMap, region: RegionId, h: &HFunction, spec: &QuadSpec) -> Result<QuadResult> {
    integrate_charts(&map.charts(region)?, |s| h.eval(s.jet.det()), spec)
}

/// ∫ over the charts of `chart_map`'s region of the energies of `map` (same domain, same nodes).
fn energies_on_charts(
    chart_map: &dyn AxisymmetricMap,
    map: &dyn AxisymmetricMap,
    region: RegionId,
    h: &HFunction,
    spec: &QuadSpec,
) -> Result<(QuadResult, QuadResult)> {
    let charts = chart_map.charts(region)?;
    let jet = |r: f64, x3: f64| map.profile(r, x3);
    let d = integrate_charts(&charts, |s| jet(s.r, s.x3).map(|j| j.dirichlet()).unwrap_or(f64::NAN), spec)?;
    let e = integrate_charts(&charts, |s| jet(s.r, s.x3).map(|j| h.eval(j.det())).unwrap_or(f64::NAN), spec)?;
    Ok((d, e))
}

/// The three integrals I, II, III of the c_ε energy split (without the factor 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CParts {
    pub part_i: QuadResult,
    pub part_ii: QuadResult,
    pub part_iii: QuadResult,
}

impl CParts {
    /// I + II + III.
    pub fn total(&self) -> f64 {
        self.part_i.value + self.part_ii.value + self.part_iii.value
    }
}

/// I, II, III of the c_ε energy, integrated over x₃ ∈ (0, 1), r ∈ (0, ε).
pub fn c_region_parts(params: &RecoveryParams, spec: &QuadSpec) -> Result<CParts> {
    let map = RecoveryMap::new(*params);
    let eps = params.eps;
    let inner = move |_x3: f64| crate::geometry::InnerRange {
        lo: 0.0,
        hi: eps,
        breaks: vec![],
        grading: vec![GradeEdge { at: 0.0, min_cell: 1e-4 * eps * eps }],
    };
    let part = |which: u8| {
        integrate_2d(
            |x3, r| {
                let (u, du_dr, du_dz) = map.c_profile(r, x3);
                match which {
                    0 => r * du_dr * du_dr + r * (u * params.fp(r)).powi(2),
                    1 => {
                        let s = params.f(r).sin();
                        if r > 0.0 {
                            (u * s).powi(2) / r
                        } else {
                            0.0
                        }
                    }
                    _ => r * du_dz * du_dz,
                }
            },
            (0.0, 1.0),
            &[],
            &[],
            inner,
            spec,
        )
    };
    Ok(CParts { part_i: part(0)?, part_ii: part(1)?, part_iii: part(2)? })
}

/// Per-region energies of one map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub eps: Option<f64>,
    pub gamma: Option<f64>,
    pub dirichlet: BTreeMap<RegionId, QuadResult>,
    pub h_energy: BTreeMap<RegionId, QuadResult>,
    pub total_dirichlet: QuadResult,
    pub total_h: QuadResult,
    /// Total number of quadrature cells used.
    pub cells_used: usize,
}

/// Energies of `map` over the given regions (all its regions if `regions` is empty).
pub fn energy_report(map: &dyn AxisymmetricMap, regions: &[RegionId], h: &HFunction, spec: &QuadSpec) -> Result<EnergyReport> {
    let list = if regions.is_empty() { map.regions() } else { regions.to_vec() };
    let mut dirichlet = BTreeMap::new();
    let mut h_map = BTreeMap::new();
    for r in list {
        dirichlet.insert(r, dirichlet_energy(map, r, spec)?);
        h_map.insert(r, h_energy(map, r, h, spec)?);
    }
    let total_dirichlet = QuadResult::sum(dirichlet.values());
    let total_h = QuadResult::sum(h_map.values());
    let cells_used = dirichlet.values().chain(h_map.values()).map(|q| q.cells_used).sum();
    Ok(EnergyReport { eps: None, gamma: None, dirichlet, h_energy: h_map, total_dirichlet, total_h, cells_used })
}

/// One row of the energy-gap table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRow {
    pub eps: f64,
    pub gamma: f64,
    pub region: RegionId,
    pub dirichlet: f64,
    pub dirichlet_err: f64,
    pub h_energy: f64,
    pub h_err: f64,
    /// Expected Dirichlet energy: 2π on c_ε, 0 on a′_ε and e′_ε, and the
    /// limit map's energy on the same chart elsewhere.
    pub expected: f64,
    /// dirichlet − expected.
    pub deviation: f64,
    /// Expected H-energy: 0 on c_ε, a′_ε, e′_ε; the limit map's H-energy on the same chart elsewhere.
    pub h_expected: f64,
    /// h_energy − h_expected.
    pub h_deviation: f64,
}

/// Region-by-region energies of u_ε against their expected limits, for each ε.
///
/// Rows are computed independently (in parallel through the quadrature's executor).
pub fn energy_gap_table(
    eps_list: &[f64],
    gamma: f64,
    limit: &LimitMap,
    regions: &[RegionId],
    h: &HFunction,
    spec: &QuadSpec,
) -> Result<Vec<EnergyRow>> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("eps list must be strictly decreasing".into()));
    }
    let list = if regions.is_empty() { RegionId::RECOVERY.to_vec() } else { regions.to_vec() };
    let mut rows = Vec::new();
    for &eps in eps_list {
        let map = RecoveryMap { params: RecoveryParams::new(eps, gamma)?, limit: *limit };
        for &region in &list {
            if !region.is_recovery() {
                return Err(Error::Config(format!("{region} is not a recovery region")));
            }
            let d = dirichlet_energy(&map, region, spec)?;
            let e = h_energy(&map, region, h, spec)?;
            let (expected, h_expected) = match region {
                RegionId::CEps => (2.0 * std::f64::consts::PI, 0.0),
                RegionId::APrimeEps | RegionId::EPrimeEps => (0.0, 0.0),
                _ => {
                    let (ld, le) = energies_on_charts(&map, limit, region, h, spec)?;
                    (ld.value, le.value)
                }
            };
            rows.push(EnergyRow {
                eps,
                gamma,
                region,
                dirichlet: d.value,
                dirichlet_err: d.error_estimate,
                h_energy: e.value,
                h_err: e.error_estimate,
                expected,
                deviation: d.value - expected,
                h_expected,
                h_deviation: e.value - h_expected,
            });
        }
    }
    Ok(rows)
}

/// ε-scale of the vanishing-region estimate: ε|ln ε|².
pub fn vanishing_scale(eps: f64) -> f64 {
    eps * eps.ln().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dirichlet_density, fd_jacobian_adaptive};
    use crate::maps::IdentityMap;
    use crate::quadrature::integrate_region;
    use std::f64::consts::PI;

    #[test]
    fn default_h_passes_the_screen() {
        let s = HFunction::default().screen();
        assert!(s.passed, "{:?}", s.failures);
        // Asymptotic increment ratios over four decades: s^{5/4−5/2} → 10^{−1},
        // (s³)^{−1/4} → 10^{−4(1−3/4)}, (s²)^{−1/4} → 10^{−4(1−1/2)}.
        let last = |v: &[f64]| v[v.len() - 1];
        assert!((last(&s.tail_ratios) - 0.1).abs() < 1e-6);
        assert!((last(&s.cube_ratios) - 0.1).abs() < 1e-6);
        assert!((last(&s.square_ratios) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn invalid_h_is_rejected() {
        // Tail ∫ s^{3/2 − 5/2} diverges logarithmically.
        assert!(HFunction::power(1.5, 0.25).validated().is_err());
        // ∫ H(s³) with s^{−3·0.4} diverges at 0.
        assert!(HFunction::power(1.25, 0.4).validated().is_err());
        // Linear growth only.
        assert!(HFunction::custom("linear", |t| t + 1.0 / t.sqrt()).validated().is_err());
        // Concave.
        assert!(HFunction::custom("concave", |t| t.powf(1.25) + t.powf(-0.25) - 10.0 * t.sqrt()).validated().is_err());
        assert!(HFunction::parse("power:1.2,0.2").is_ok());
        assert!(HFunction::parse("power:1.2").is_err());
        assert!(HFunction::parse("cubic").is_err());
    }

    #[test]
    fn identity_dirichlet_is_three_times_volume() {
        let spec = QuadSpec::default();
        for region in RegionId::LIMIT {
            let d = dirichlet_energy(&IdentityMap, region, &spec).unwrap();
            let v = crate::geometry::region_volume(region, 0.0);
            assert!((d.value - 3.0 * v).abs() < 1e-8 * v, "{region}");
        }
    }

    #[test]
    fn c_region_h_energy_is_h1_times_volume() {
        let eps = 0.05;
        let map = RecoveryMap::from_eps(eps, 1.0 / 3.0).unwrap();
        let h = HFunction::default();
        let e = h_energy(&map, RegionId::CEps, &h, &QuadSpec::default()).unwrap();
        let exact = h.eval(1.0) * PI * eps * eps;
        assert!((e.value - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn limit_region_a_matches_fd_jets() {
        let limit = LimitMap::default();
        let spec = QuadSpec { atol: 1e-6, rtol: 1e-6, max_cells: 400, ..QuadSpec::default() };
        let chart = &limit.charts(RegionId::A).unwrap()[0];
        let analytic = integrate_region(chart, |s| s.jet.dirichlet(), &spec).unwrap();
        let fd = integrate_region(
            chart,
            |s| {
                let p = s.jet.point(0.3);
                let h = 1e-6 * s.r.max(1e-3).min(1.0 - s.r.hypot(s.x3)).max(1e-7);
                match fd_jacobian_adaptive(|q| limit.value_tagged(q), &p, h, true) {
                    Ok(m) => dirichlet_density(&m),
                    Err(_) => s.jet.dirichlet(),
                }
            },
            &spec,
        );
        let fd = match fd {
            Ok(r) => r.value,
            Err(Error::BudgetExceeded { value, .. }) => value,
            Err(e) => panic!("{e}"),
        };
        assert!(analytic.value.is_finite());
        assert!((analytic.value - fd).abs() < 1e-4 * analytic.value, "{} vs {fd}", analytic.value);
    }

    #[test]
    fn report_totals_are_sums() {
        let map = RecoveryMap::from_eps(0.1, 1.0 / 3.0).unwrap();
        let spec = QuadSpec { atol: 1e-8, rtol: 1e-6, ..QuadSpec::default() };
        let rep = energy_report(&map, &[RegionId::CEps, RegionId::APrimeEps], &HFunction::default(), &spec).unwrap();
        let sum: f64 = rep.dirichlet.values().map(|q| q.value).sum();
        assert!((rep.total_dirichlet.value - sum).abs() < 1e-10);
    }

    #[test]
    fn c_parts_shrink_toward_half_half_zero() {
        let spec = QuadSpec { atol: 1e-10, rtol: 1e-8, ..QuadSpec::default() };
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let p = RecoveryParams::new(eps, 1.0 / 3.0).unwrap();
            let parts = c_region_parts(&p, &spec).unwrap();
            let map = RecoveryMap::new(p);
            let d = dirichlet_energy(&map, RegionId::CEps, &spec).unwrap();
            // Dirichlet = 2π(I + II + III) + 2π∫∫ r u_ρ²|∂₃u_φ|² and ∂₃u_φ = 0 on c_ε.
            assert!((d.value - 2.0 * PI * parts.total()).abs() < 1e-6 * d.value, "{eps}: {} vs {}", d.value, parts.total());
            let gap = (parts.total() - 1.0).abs();
            assert!(gap < prev, "eps {eps}: {parts:?}");
            prev = gap;
            if eps == 1e-3 {
                assert!(parts.part_iii.value <= eps.powf(4.0 * (1.0 - 1.0 / 3.0)) + 1e-6);
            }
        }
    }
}
