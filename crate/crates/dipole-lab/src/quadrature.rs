//! Deterministic adaptive Gauss–Legendre quadrature with geometric grading.
//!
//! * [`integrate_1d`] — adaptive bisection on a graded initial partition. The
//!   per-cell error indicator is |G(cell) − G(left) − G(right)|, which bounds
//!   the error of the coarse rule and therefore overestimates the error of the
//!   returned (fine) value.
//! * [`integrate_2d`] — iterated integral; the inner range, breakpoints and
//!   grading may depend on the outer coordinate.
//! * [`integrate_region`] — integral of a density over a [`RegionChart`]
//!   including the 2π azimuthal factor.
//! * [`integrate_sphere`], [`revolve_arc_area`] — surface quadrature.
//!
//! Cells are refined in batches; each batch is evaluated through [`Exec`] and
//! all sums use [`pairwise_sum`] in cell order, so results are bit-identical
//! between parallel and sequential execution.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::geometry::{CartesianPoint, ChartSample, GradeEdge, InnerRange, RegionChart};
use crate::kernels::Jet;

/// Gauss–Legendre nodes and weights on [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// n-point rule computed by Newton iteration on the Legendre polynomial Pₙ.
    pub fn new(n: usize) -> GaussRule {
        assert!(n >= 1, "Gauss rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Applies the rule on [lo, hi].
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Legendre polynomial Pₙ(x) and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadSpec {
    pub atol: f64,
    pub rtol: f64,
    /// Maximum number of cells of one adaptive 1D integral.
    pub max_cells: usize,
    /// Gauss–Legendre nodes per cell.
    pub order: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { atol: 1e-10, rtol: 1e-8, max_cells: 4000, order: 10, exec: Exec::Parallel }
    }
}

impl QuadSpec {
    /// Same spec with tolerances replaced.
    pub fn with_tol(&self, atol: f64, rtol: f64) -> QuadSpec {
        QuadSpec { atol, rtol, ..self.clone() }
    }

    /// Same spec with the given execution policy.
    pub fn with_exec(&self, exec: Exec) -> QuadSpec {
        QuadSpec { exec, ..self.clone() }
    }

    /// Rejects tolerances ≤ 0 and orders below 5.
    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.rtol > 0.0) {
            return Err(Error::Config("quadrature tolerances must be positive".into()));
        }
        if self.order < 5 {
            return Err(Error::Config("quadrature order must be at least 5".into()));
        }
        Ok(())
    }
}

/// Value, conservative error estimate and number of cells used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub cells_used: usize,
}

impl QuadResult {
    /// Sum of independent results (errors add).
    pub fn sum<'a, I: IntoIterator<Item = &'a QuadResult>>(parts: I) -> QuadResult {
        let parts: Vec<&QuadResult> = parts.into_iter().collect();
        let values: Vec<f64> = parts.iter().map(|p| p.value).collect();
        let errors: Vec<f64> = parts.iter().map(|p| p.error_estimate).collect();
        QuadResult {
            value: pairwise_sum(&values),
            error_estimate: pairwise_sum(&errors),
            cells_used: parts.iter().map(|p| p.cells_used).sum(),
        }
    }
}

/// Graded initial partition of [a, b]: breakpoints plus dyadic points toward each edge.
pub fn initial_partition(a: f64, b: f64, breaks: &[f64], grading: &[GradeEdge]) -> Vec<f64> {
    let inside = |x: f64| x > a && x < b;
    let mut pts: Vec<f64> = vec![a, b];
    pts.extend(breaks.iter().copied().filter(|x| inside(*x)));
    pts.extend(grading.iter().map(|g| g.at).filter(|x| inside(*x)));
    sort_dedup(&mut pts, (b - a) * 1e-14);
    let mut graded = pts.clone();
    for edge in grading {
        if edge.at < a || edge.at > b || edge.min_cell <= 0.0 {
            continue;
        }
        // Locate the neighbours of the edge in the base partition.
        let idx = pts.iter().position(|x| (x - edge.at).abs() <= (b - a) * 1e-14);
        let Some(idx) = idx else { continue };
        for nb in [idx.checked_sub(1), Some(idx + 1)].into_iter().flatten() {
            if nb >= pts.len() {
                continue;
            }
            let span = pts[nb] - edge.at;
            let mut k = 1;
            while span.abs() / 2f64.powi(k) >= edge.min_cell && k < 200 {
                graded.push(edge.at + span / 2f64.powi(k));
                k += 1;
            }
        }
    }
    sort_dedup(&mut graded, 0.0);
    graded
}

fn sort_dedup(v: &mut Vec<f64>, tol: f64) {
    v.sort_by(|x, y| x.partial_cmp(y).expect("finite partition points"));
    v.dedup_by(|x, y| (*x - *y).abs() <= tol);
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    lo: f64,
    hi: f64,
    coarse: f64,
    left: f64,
    right: f64,
    /// Integrated auxiliary error density (inner-integral errors of a 2D rule).
    aux: f64,
}

impl Cell {
    fn fine(&self) -> f64 {
        self.left + self.right
    }
    fn err(&self) -> f64 {
        (self.fine() - self.coarse).abs() + self.aux
    }
}

/// Core adaptive routine over a function returning (value, auxiliary error density).
fn adaptive<F>(f: &F, a: f64, b: f64, breaks: &[f64], grading: &[GradeEdge], spec: &QuadSpec) -> Result<QuadResult>
where
    F: Fn(f64) -> (f64, f64) + Sync + Send,
{
    if a == b {
        return Ok(QuadResult { value: 0.0, error_estimate: 0.0, cells_used: 0 });
    }
    if b < a {
        let r = adaptive(f, b, a, breaks, grading, spec)?;
        return Ok(QuadResult { value: -r.value, ..r });
    }
    let rule = GaussRule::new(spec.order);
    let eval_half = |lo: f64, hi: f64| -> (f64, f64) {
        let mut val = 0.0;
        let mut aux = 0.0;
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let (v, e) = f(mid + half * x);
            val += w * v;
            aux += w * e.abs();
        }
        (val * half, aux * half)
    };
    let make_cell = |lo: f64, hi: f64, coarse: Option<f64>| -> Cell {
        let mid = 0.5 * (lo + hi);
        let coarse = coarse.unwrap_or_else(|| eval_half(lo, hi).0);
        let (left, ea) = eval_half(lo, mid);
        let (right, eb) = eval_half(mid, hi);
        Cell { lo, hi, coarse, left, right, aux: ea + eb }
    };
    let pts = initial_partition(a, b, breaks, grading);
    let spans: Vec<(f64, f64)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let mut cells: Vec<Cell> = spec.exec.map(&spans, |&(lo, hi)| make_cell(lo, hi, None));
    loop {
        let fines: Vec<f64> = cells.iter().map(Cell::fine).collect();
        let errs: Vec<f64> = cells.iter().map(Cell::err).collect();
        let total = pairwise_sum(&fines);
        let err_total = pairwise_sum(&errs);
        if !(total.is_finite() && err_total.is_finite()) {
            let bad = cells.iter().find(|c| !(c.fine().is_finite() && c.err().is_finite()));
            let at = bad.map(|c| format!("cell [{:.6e}, {:.6e}]", c.lo, c.hi)).unwrap_or_default();
            return Err(Error::NonFinite(format!("integrand not finite in {at}")));
        }
        let tol = spec.atol.max(spec.rtol * total.abs());
        if err_total <= tol {
            return Ok(QuadResult { value: total, error_estimate: err_total, cells_used: cells.len() });
        }
        if cells.len() >= spec.max_cells {
            return Err(Error::BudgetExceeded { value: total, error: err_total });
        }
        // Refine the largest contributors until half of the error is covered.
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by(|&i, &j| errs[j].partial_cmp(&errs[i]).expect("finite errors").then(i.cmp(&j)));
        let room = spec.max_cells - cells.len();
        let mut chosen = Vec::new();
        let mut covered = 0.0;
        for &i in &order {
            if covered >= 0.5 * err_total || chosen.len() >= room {
                break;
            }
            if cells[i].hi - cells[i].lo <= (b - a) * 1e-15 {
                continue;
            }
            covered += errs[i];
            chosen.push(i);
        }
        if chosen.is_empty() {
            return Err(Error::BudgetExceeded { value: total, error: err_total });
        }
        chosen.sort_unstable();
        let children: Vec<[Cell; 2]> = spec.exec.map(&chosen, |&i| {
            let c = cells[i];
            let mid = 0.5 * (c.lo + c.hi);
            [make_cell(c.lo, mid, Some(c.left)), make_cell(mid, c.hi, Some(c.right))]
        });
        let mut next = Vec::with_capacity(cells.len() + chosen.len());
        let mut k = 0;
        for (i, c) in cells.iter().enumerate() {
            if k < chosen.len() && chosen[k] == i {
                next.extend_from_slice(&children[k]);
                k += 1;
            } else {
                next.push(*c);
            }
        }
        cells = next;
    }
}

/// Adaptive integral of `f` over [a, b] with optional interior breakpoints and grading edges.
pub fn integrate_1d<F>(f: F, a: f64, b: f64, breaks: &[f64], grading: &[GradeEdge], spec: &QuadSpec) -> Result<QuadResult>
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    adaptive(&|x| (f(x), 0.0), a, b, breaks, grading, spec)
}

/// Iterated integral ∫_{outer} ∫_{inner(x)} f(x, y) dy dx.
///
/// The outer loop is adaptive and parallel; each inner integral is adaptive and
/// sequential with an absolute tolerance scaled to the outer interval. Inner
/// error estimates are integrated into the reported error.
pub fn integrate_2d<F, G>(
    f: F,
    outer: (f64, f64),
    outer_breaks: &[f64],
    outer_grading: &[GradeEdge],
    inner: G,
    spec: &QuadSpec,
) -> Result<QuadResult>
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
    G: Fn(f64) -> InnerRange + Sync + Send,
{
    let width = (outer.1 - outer.0).abs().max(f64::MIN_POSITIVE);
    let inner_spec = QuadSpec { atol: 0.1 * spec.atol / width, rtol: 0.1 * spec.rtol, exec: Exec::Sequential, ..spec.clone() };
    let row = |x: f64| -> (f64, f64) {
        let range = inner(x);
        match adaptive(&|y| (f(x, y), 0.0), range.lo, range.hi, &range.breaks, &range.grading, &inner_spec) {
            Ok(r) => (r.value, r.error_estimate),
            Err(Error::BudgetExceeded { value, error }) => (value, error),
            Err(_) => (f64::NAN, f64::NAN),
        }
    };
    adaptive(&row, outer.0, outer.1, outer_breaks, outer_grading, spec)
}

fn sample_or_nan<D>(chart: &RegionChart, a: f64, b: f64, density: &D) -> f64
where
    D: Fn(&ChartSample) -> f64,
{
    match chart.sample(a, b) {
        Ok(s) => density(&s) * s.weight,
        Err(_) => f64::NAN,
    }
}

/// ∫ density dx over one chart; the density receives the chart sample (position, weight, jet).
pub fn integrate_region<D>(chart: &RegionChart, density: D, spec: &QuadSpec) -> Result<QuadResult>
where
    D: Fn(&ChartSample) -> f64 + Sync + Send,
{
    let inner = chart.inner.clone();
    integrate_2d(
        |a, b| sample_or_nan(chart, a, b, &density),
        chart.outer,
        &chart.outer_breaks,
        &chart.outer_grading,
        move |a| inner(a),
        spec,
    )
    .map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{} ({}): {m}", chart.region, chart.name)),
        other => other,
    })
}

/// ∫ density dx for a density that depends on θ; θ is integrated with an
/// `n_theta`-point trapezoid rule (exact for trigonometric polynomials of degree < n_theta).
pub fn integrate_region_jets<D>(chart: &RegionChart, density: D, n_theta: usize, spec: &QuadSpec) -> Result<QuadResult>
where
    D: Fn(&Jet) -> f64 + Sync + Send,
{
    let n = n_theta.max(1);
    integrate_region(
        chart,
        |s| {
            let mut acc = 0.0;
            for k in 0..n {
                let theta = 2.0 * PI * k as f64 / n as f64;
                acc += density(&s.jet.to_jet(theta));
            }
            acc / n as f64
        },
        spec,
    )
}

/// Sums [`integrate_region`] over several charts.
pub fn integrate_charts<D>(charts: &[RegionChart], density: D, spec: &QuadSpec) -> Result<QuadResult>
where
    D: Fn(&ChartSample) -> f64 + Sync + Send,
{
    let mut parts = Vec::with_capacity(charts.len());
    for c in charts {
        parts.push(integrate_region(c, &density, spec)?);
    }
    Ok(QuadResult::sum(&parts))
}

/// ∫_{∂B(center, radius)} density(x, ν) dH², Gauss in (φ, θ), graded toward the poles.
pub fn integrate_sphere<D>(center: &CartesianPoint, radius: f64, density: D, spec: &QuadSpec) -> Result<QuadResult>
where
    D: Fn(&CartesianPoint, &Vector3<f64>) -> f64 + Sync + Send,
{
    if radius <= 0.0 {
        return Err(Error::OutOfDomain("sphere radius must be positive".into()));
    }
    let poles = [GradeEdge { at: 0.0, min_cell: 1e-4 }, GradeEdge { at: PI, min_cell: 1e-4 }];
    let inner = |_phi: f64| InnerRange { lo: 0.0, hi: 2.0 * PI, breaks: vec![PI / 2.0, PI, 1.5 * PI], grading: vec![] };
    integrate_2d(
        |phi, theta| {
            let (sp, cp) = phi.sin_cos();
            let (st, ct) = theta.sin_cos();
            let normal = Vector3::new(sp * ct, sp * st, cp);
            let x = center + normal * radius;
            density(&x, &normal) * radius * radius * sp
        },
        (0.0, PI),
        &[PI / 2.0],
        &poles,
        inner,
        spec,
    )
}

/// Area of the surface obtained by revolving a meridian polyline (s, z) about the axis:
/// 2π Σ ℓᵢ (sᵢ + sᵢ₊₁)/2 (exact for polylines).
pub fn revolve_arc_area(polyline: &[[f64; 2]]) -> f64 {
    let terms: Vec<f64> = polyline
        .windows(2)
        .map(|w| {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            len * 0.5 * (w[0][0] + w[1][0])
        })
        .collect();
    2.0 * PI * pairwise_sum(&terms)
}
