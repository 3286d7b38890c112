//! Degree, Δ fields, distributional determinant and surface pairings, and the
//! singular mass of the inverse — for the limit map and the recovery maps.
//!
//! For an axisymmetric map and a ball B centred on the axis, the degree
//! deg(u, B, y) is the winding number of the *profile curve*: the image of the
//! meridian half-circle of ∂B on the (s, z) half-plane, closed by its mirror
//! image across the axis. The loop runs down the right half (north → south) and
//! back up its reflection, so deg = −(counter-clockwise winding number).
//!
//! Δ_{u,B}(y) = deg(u, B, y) − χ_{imG(u,B)}(y), where imG(u,B) = u(B) is the
//! set of image points with a preimage in B. For the limit map, which opens a
//! bubble Γ = ∂B((0,0,½), ½) from the pole P and refills it from the origin O,
//! Δ_{P,r} = +1 and Δ_{O,r} = −1 inside the bubble and 0 elsewhere, and
//!
//! * Det Du = det Du · L³ + π/6 (δ_P − δ_O) (distributional determinant),
//! * E_u(f) = ∫_Γ [f(P, y) − f(O, y)] · ν dH² (surface pairing),
//! * ‖D^s u₃⁻¹‖ = |P − O| · H²(Γ) = π (singular mass of the inverse).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{CartesianPoint, RegionId};
use crate::kernels::cofactor;
use crate::limit_map::LimitMap;
use crate::maps::AxisymmetricMap;
use crate::quadrature::{integrate_region_jets, integrate_sphere, QuadResult, QuadSpec};
use crate::sampling::{ball_meridian_sample, halton, shell_meridian_sample};

/// The bubble: centre height and radius of Γ = ∂B((0,0,½), ½).
pub const BUBBLE_CENTER: f64 = 0.5;
pub const BUBBLE_RADIUS: f64 = 0.5;

/// Whether the image point (s, z) lies strictly inside the bubble.
pub fn in_bubble(s: f64, z: f64) -> bool {
    s * s + (z - BUBBLE_CENTER).powi(2) < BUBBLE_RADIUS * BUBBLE_RADIUS
}

/// A ball B((0,0,c), R) centred on the symmetry axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ball {
    pub center_x3: f64,
    pub radius: f64,
}

impl Ball {
    pub fn new(center_x3: f64, radius: f64) -> Result<Ball> {
        if !(radius > 0.0) || center_x3.abs() + radius > 3.0 {
            return Err(Error::OutOfDomain(format!("ball ({center_x3}, {radius}) is not inside B(0,3)")));
        }
        Ok(Ball { center_x3, radius })
    }

    /// B(P, r).
    pub fn at_pole(radius: f64) -> Ball {
        Ball { center_x3: 1.0, radius }
    }

    /// B(O, r).
    pub fn at_origin(radius: f64) -> Ball {
        Ball { center_x3: 0.0, radius }
    }

    /// Signed distance of a meridian point from ∂B (negative inside).
    pub fn signed_distance(&self, r: f64, x3: f64) -> f64 {
        r.hypot(x3 - self.center_x3) - self.radius
    }

    pub fn contains(&self, r: f64, x3: f64) -> bool {
        self.signed_distance(r, x3) < 0.0
    }

    pub fn center(&self) -> CartesianPoint {
        Vector3::new(0.0, 0.0, self.center_x3)
    }

    /// Parses `c,R`, `P,R` or `O,R`.
    pub fn parse(spec: &str) -> Result<Ball> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!("ball '{spec}': expected center,radius")));
        }
        let center = match parts[0] {
            "P" | "p" => 1.0,
            "O" | "o" => 0.0,
            other => other.parse().map_err(|_| Error::Config(format!("ball '{spec}': bad center '{other}'")))?,
        };
        let radius = parts[1].parse().map_err(|_| Error::Config(format!("ball '{spec}': bad radius '{}'", parts[1])))?;
        Ball::new(center, radius).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Closed image loop of a meridian half-circle, mirrored across the axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileCurve {
    pub ball: Ball,
    /// Closed polyline (last point equals the first).
    pub points: Vec<[f64; 2]>,
    /// Largest distance between consecutive points.
    pub max_gap: f64,
    /// Probes closer than this to the loop are rejected.
    pub clearance: f64,
}

/// Default target spacing of profile-curve points.
pub const CURVE_RESOLUTION: f64 = 2e-3;

impl ProfileCurve {
    /// Samples u on the meridian of ∂B, refining until consecutive image points are
    /// closer than `resolution` (or the parameter step underflows).
    pub fn new(map: &dyn AxisymmetricMap, ball: &Ball, resolution: f64) -> Result<ProfileCurve> {
        let eval = |phi: f64| -> Result<[f64; 2]> {
            let mut t = phi;
            for k in 0..4 {
                let (r, x3) = (ball.radius * t.sin().abs(), ball.center_x3 + ball.radius * t.cos());
                match map.profile(r, x3) {
                    Ok(j) => return Ok([if r == 0.0 { 0.0 } else { j.v[0] }, j.v[1]]),
                    Err(e) if k == 3 => return Err(e),
                    Err(_) => t = phi + if phi < 1.0 { 1e-12 } else { -1e-12 } * (k + 1) as f64,
                }
            }
            unreachable!()
        };
        let n0 = 1024;
        let exec = Exec::default();
        let mut params: Vec<f64> = (0..=n0).map(|k| PI * k as f64 / n0 as f64).collect();
        let mut values: Vec<[f64; 2]> = exec.map(&params, |p| eval(*p)).into_iter().collect::<Result<_>>()?;
        for _ in 0..30 {
            let mut inserts = Vec::new();
            for k in 0..params.len() - 1 {
                let d = dist(values[k], values[k + 1]);
                if d > resolution && params[k + 1] - params[k] > 1e-13 {
                    inserts.push((k, 0.5 * (params[k] + params[k + 1])));
                }
            }
            if inserts.is_empty() {
                break;
            }
            let new_vals: Vec<[f64; 2]> = exec.map(&inserts, |(_, p)| eval(*p)).into_iter().collect::<Result<_>>()?;
            let mut p2 = Vec::with_capacity(params.len() + inserts.len());
            let mut v2 = Vec::with_capacity(params.len() + inserts.len());
            let mut it = inserts.iter().zip(new_vals).peekable();
            for k in 0..params.len() {
                p2.push(params[k]);
                v2.push(values[k]);
                if let Some(((idx, p), v)) = it.peek() {
                    if *idx == k {
                        p2.push(*p);
                        v2.push(*v);
                        it.next();
                    }
                }
            }
            params = p2;
            values = v2;
        }
        // Right half north → south, then the mirror image south → north.
        let mut points = values.clone();
        points.extend(values.iter().rev().skip(1).map(|v| [-v[0], v[1]]));
        let max_gap = points.windows(2).map(|w| dist(w[0], w[1])).fold(0.0, f64::max);
        Ok(ProfileCurve { ball: *ball, points, max_gap, clearance: (2.0 * max_gap).max(resolution) })
    }

    /// Counter-clockwise winding number about y (no clearance check).
    pub fn winding_raw(&self, y: [f64; 2]) -> i32 {
        let mut w = 0;
        for seg in self.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let side = (b[0] - a[0]) * (y[1] - a[1]) - (y[0] - a[0]) * (b[1] - a[1]);
            if a[1] <= y[1] {
                if b[1] > y[1] && side > 0.0 {
                    w += 1;
                }
            } else if b[1] <= y[1] && side < 0.0 {
                w -= 1;
            }
        }
        w
    }

    /// Distance from y to the loop.
    pub fn distance(&self, y: [f64; 2]) -> f64 {
        self.points.windows(2).map(|s| segment_distance(y, s[0], s[1])).fold(f64::INFINITY, f64::min)
    }

    /// deg(u, B, y) for y = (s, z); fails if y is within the clearance of the loop.
    pub fn degree(&self, y: [f64; 2]) -> Result<i32> {
        let d = self.distance(y);
        if d < self.clearance {
            return Err(Error::ProbeTooClose(d));
        }
        Ok(-self.winding_raw(y))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(y: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { (((y[0] - a[0]) * ab[0] + (y[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(y, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// deg(u, B, y) via the profile winding number.
pub fn winding_degree(map: &dyn AxisymmetricMap, ball: &Ball, y: [f64; 2]) -> Result<i32> {
    ProfileCurve::new(map, ball, CURVE_RESOLUTION)?.degree(y)
}

/// ∫_{∂B} (g∘u) · (cof Du ν) dH², the boundary form of ∫ deg(u,B,y) div g(y) dy.
pub fn degree_flux<G>(map: &dyn AxisymmetricMap, ball: &Ball, g: G, spec: &QuadSpec) -> Result<QuadResult>
where
    G: Fn(&CartesianPoint) -> Vector3<f64> + Sync + Send,
{
    integrate_sphere(
        &ball.center(),
        ball.radius,
        |x, nu| match map.eval(x) {
            Ok(jet) => g(&jet.value).dot(&(cofactor(&jet.grad) * nu)),
            Err(_) => f64::NAN,
        },
        spec,
    )
}

/// Rectangular probe grid on the image half-plane (cell centres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub s: (f64, f64),
    pub z: (f64, f64),
    pub h: f64,
}

impl Grid {
    /// A grid covering the bubble and its surroundings.
    pub fn around_bubble(h: f64) -> Grid {
        Grid { s: (0.0, 1.6), z: (-0.8, 1.8), h }
    }

    pub fn shape(&self) -> (usize, usize) {
        (((self.s.1 - self.s.0) / self.h).round() as usize, ((self.z.1 - self.z.0) / self.h).round() as usize)
    }

    /// Node (i, j) (nodes include both ends).
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.s.0 + i as f64 * self.h, self.z.0 + j as f64 * self.h]
    }
}

/// ∫ deg(u,B,y) div g(y) dy by the midpoint rule on the grid (axisymmetric g).
pub fn winding_volume_integral<D>(curve: &ProfileCurve, div_g: D, grid: &Grid) -> f64
where
    D: Fn(f64, f64) -> f64 + Sync + Send,
{
    let (ns, nz) = grid.shape();
    let rows = Exec::default().map_range(nz, |j| {
        let z = grid.z.0 + (j as f64 + 0.5) * grid.h;
        let mut acc = 0.0;
        for i in 0..ns {
            let s = grid.s.0 + (i as f64 + 0.5) * grid.h;
            let deg = -curve.winding_raw([s, z]);
            if deg != 0 {
                acc += deg as f64 * div_g(s, z) * 2.0 * PI * s * grid.h * grid.h;
            }
        }
        acc
    });
    crate::exec::pairwise_sum(&rows)
}

/// Signed-preimage degree oracle for the limit map: Σ sign det Du over preimages in B
/// plus the cavity contribution of the singular points inside B (−1 inside the bubble
/// for O, +1 for P). `None` if a preimage is too close to ∂B to decide.
pub fn signed_preimage_degree(limit: &LimitMap, ball: &Ball, y: [f64; 2]) -> Option<i32> {
    let mut deg = 0;
    for p in limit.preimages(y[0], y[1]) {
        let d = ball.signed_distance(p.r, p.x3);
        if d.abs() < 1e-9 {
            return None;
        }
        if d < 0.0 {
            let det = limit.profile(p.r, p.x3).ok()?.det();
            deg += if det > 0.0 { 1 } else { -1 };
        }
    }
    if in_bubble(y[0], y[1]) {
        if ball.contains(0.0, 0.0) {
            deg -= 1;
        }
        if ball.contains(0.0, 1.0) {
            deg += 1;
        }
    }
    Some(deg)
}

/// χ_{imG(u,B)}(y) for the limit map, by exact inversion; `Err(MembershipAmbiguous)`
/// if a preimage lies within `threshold` of ∂B.
pub fn limit_image_membership(limit: &LimitMap, ball: &Ball, y: [f64; 2], threshold: f64) -> Result<bool> {
    let mut inside = false;
    for p in limit.preimages(y[0], y[1]) {
        let d = ball.signed_distance(p.r, p.x3);
        if d.abs() < threshold {
            return Err(Error::MembershipAmbiguous(format!("preimage of {y:?} at distance {d:e} from the sphere")));
        }
        inside |= d < 0.0;
    }
    Ok(inside)
}

/// Δ_{u,B}(y) for the limit map, or `None` if y is too close to the degree loop or membership is ambiguous.
pub fn limit_delta(limit: &LimitMap, curve: &ProfileCurve, y: [f64; 2]) -> Option<i32> {
    let deg = curve.degree(y).ok()?;
    let member = limit_image_membership(limit, &curve.ball, y, 1e-9).ok()?;
    Some(deg - member as i32)
}

/// Δ values on the grid nodes; discarded probes are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaField {
    pub ball: Ball,
    pub grid: Grid,
    pub ns: usize,
    pub nz: usize,
    /// Row-major over z then s: values[j * (ns + 1) + i] at node (i, j).
    pub values: Vec<Option<i32>>,
}

impl DeltaField {
    pub fn get(&self, i: usize, j: usize) -> Option<i32> {
        self.values[j * (self.ns + 1) + i]
    }

    /// Number of discarded probes.
    pub fn discarded(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// (s, z, Δ) rows for export.
    pub fn rows(&self) -> Vec<(f64, f64, Option<i32>)> {
        let mut out = Vec::with_capacity(self.values.len());
        for j in 0..=self.nz {
            for i in 0..=self.ns {
                let y = self.grid.node(i, j);
                out.push((y[0], y[1], self.get(i, j)));
            }
        }
        out
    }
}

/// Δ_{u,B} of the limit map on the nodes of `grid`.
pub fn delta_field(limit: &LimitMap, ball: &Ball, grid: &Grid) -> Result<DeltaField> {
    if grid.h > 1e-2 {
        return Err(Error::Config(format!("grid resolution {} exceeds 1e-2", grid.h)));
    }
    let curve = ProfileCurve::new(limit, ball, CURVE_RESOLUTION)?;
    let (ns, nz) = grid.shape();
    let values = Exec::default()
        .map_range((ns + 1) * (nz + 1), |k| limit_delta(limit, &curve, grid.node(k % (ns + 1), k / (ns + 1))));
    Ok(DeltaField { ball: *ball, grid: *grid, ns, nz, values })
}

/// Boundary of {Δ = level} by marching squares with crossings refined by bisection,
/// returned as independent segments.
pub fn level_set_segments<F>(field: &DeltaField, level: i32, delta_at: F) -> Vec<[[f64; 2]; 2]>
where
    F: Fn([f64; 2]) -> Option<i32> + Sync + Send,
{
    let inside = |v: Option<i32>| v == Some(level);
    let crossing = |a: [f64; 2], b: [f64; 2], ia: bool| -> [f64; 2] {
        let (mut lo, mut hi) = (a, b);
        for _ in 0..30 {
            let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
            match delta_at(mid) {
                Some(v) => {
                    if (v == level) == ia {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                None => break,
            }
        }
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
    };
    let cells = Exec::default().map_range(field.ns * field.nz, |k| {
        let (i, j) = (k % field.ns, k / field.ns);
        let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
        let pts: Vec<[f64; 2]> = corners.iter().map(|(a, b)| field.grid.node(*a, *b)).collect();
        let flags: Vec<bool> = corners.iter().map(|(a, b)| inside(field.get(*a, *b))).collect();
        let mut cuts = Vec::new();
        for e in 0..4 {
            let (p, q) = (e, (e + 1) % 4);
            if flags[p] != flags[q] {
                cuts.push(crossing(pts[p], pts[q], flags[p]));
            }
        }
        let mut segs = Vec::new();
        match cuts.len() {
            2 => segs.push([cuts[0], cuts[1]]),
            4 => {
                segs.push([cuts[0], cuts[1]]);
                segs.push([cuts[2], cuts[3]]);
            }
            _ => {}
        }
        segs
    });
    cells.into_iter().flatten().collect()
}

/// Area of the surface of revolution swept by meridian segments.
pub fn revolve_segments_area(segs: &[[[f64; 2]; 2]]) -> f64 {
    let parts: Vec<f64> = segs.iter().map(|s| crate::quadrature::revolve_arc_area(&[s[0], s[1]])).collect();
    crate::exec::pairwise_sum(&parts)
}

/// Singular mass of u₃⁻¹ from the Δ_{P,r} level sets, extrapolated to r → 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularMass {
    /// (r, |P − O| · revolve area of ∂{Δ_{P,r} = 1}).
    pub per_radius: Vec<(f64, f64)>,
    /// Linear extrapolation of the per-radius values to r = 0.
    pub extrapolated: f64,
    pub discarded_probes: usize,
}

/// ‖D^s u₃⁻¹‖ for the limit map over the radii (e.g. 0.4, 0.2, 0.1).
pub fn singular_mass(limit: &LimitMap, radii: &[f64], grid: &Grid) -> Result<SingularMass> {
    let separation = 1.0; // |P − O|
    let mut per_radius = Vec::new();
    let mut discarded = 0;
    for &r in radii {
        let ball = Ball::at_pole(r);
        let field = delta_field(limit, &ball, grid)?;
        discarded += field.discarded();
        let curve = ProfileCurve::new(limit, &ball, CURVE_RESOLUTION)?;
        let segs = level_set_segments(&field, 1, |y| limit_delta(limit, &curve, y));
        per_radius.push((r, separation * revolve_segments_area(&segs)));
    }
    let extrapolated = linear_extrapolation(&per_radius);
    Ok(SingularMass { per_radius, extrapolated, discarded_probes: discarded })
}

/// Intercept at x = 0 of the least-squares line through the points.
pub fn linear_extrapolation(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return pts.first().map(|p| p.1).unwrap_or(f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    my - sxy / sxx * mx
}

/// Result of the INV test on one ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvReport {
    pub ball: Ball,
    pub interior_samples: usize,
    pub exterior_samples: usize,
    /// Interior samples mapped outside imT(u, B) = {deg ≠ 0}.
    pub interior_violations: usize,
    /// Exterior samples mapped into imT(u, B).
    pub exterior_violations: usize,
    /// Samples discarded because u(x) was too close to the degree loop or at a singular point.
    pub skipped: usize,
}

impl InvReport {
    pub fn violations(&self) -> usize {
        self.interior_violations + self.exterior_violations
    }

    pub fn violation_fraction(&self) -> f64 {
        self.violations() as f64 / (self.interior_samples + self.exterior_samples).max(1) as f64
    }
}

/// INV check with `n` quasi-random samples (half inside B, half in the shell R < |x − c| < 2R).
pub fn inv_check(map: &dyn AxisymmetricMap, ball: &Ball, n: usize) -> Result<InvReport> {
    let curve = ProfileCurve::new(map, ball, CURVE_RESOLUTION)?;
    let outer = (2.0 * ball.radius).min(3.0 - ball.center_x3.abs());
    let results = Exec::default().map_range(n, |k| {
        let u = halton::<2>(k as u64);
        let interior = k % 2 == 0;
        let (r, x3) = if interior {
            ball_meridian_sample(u, ball.center_x3, ball.radius)
        } else {
            shell_meridian_sample(u, ball.center_x3, ball.radius, outer)
        };
        if ball.signed_distance(r, x3).abs() < 1e-12 {
            return None;
        }
        let jet = map.profile(r, x3).ok()?;
        let deg = curve.degree([jet.v[0], jet.v[1]]).ok()?;
        Some((interior, deg != 0))
    });
    let mut rep = InvReport {
        ball: *ball,
        interior_samples: 0,
        exterior_samples: 0,
        interior_violations: 0,
        exterior_violations: 0,
        skipped: 0,
    };
    for res in results {
        match res {
            None => rep.skipped += 1,
            Some((true, in_im)) => {
                rep.interior_samples += 1;
                rep.interior_violations += !in_im as usize;
            }
            Some((false, in_im)) => {
                rep.exterior_samples += 1;
                rep.exterior_violations += in_im as usize;
            }
        }
    }
    Ok(rep)
}

type ScalarFn = dyn Fn(&CartesianPoint) -> (f64, Vector3<f64>) + Send + Sync;

/// A C¹ test function with compact support in B(0,3): value and gradient.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    f: Arc<ScalarFn>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

/// C¹ cutoff: 1 on [0, r₁], (1 − t²)² with t = (ρ − r₁)/(r₂ − r₁) on [r₁, r₂], 0 beyond; value and derivative.
pub fn cutoff(rho: f64, r1: f64, r2: f64) -> (f64, f64) {
    if rho <= r1 {
        (1.0, 0.0)
    } else if rho >= r2 {
        (0.0, 0.0)
    } else {
        let w = r2 - r1;
        let t = (rho - r1) / w;
        let q = 1.0 - t * t;
        (q * q, -4.0 * t * q / w)
    }
}

impl TestFunction {
    pub fn new<F>(name: &str, f: F) -> TestFunction
    where
        F: Fn(&CartesianPoint) -> (f64, Vector3<f64>) + Send + Sync + 'static,
    {
        TestFunction { name: name.to_string(), f: Arc::new(f) }
    }

    /// (φ(x), ∇φ(x)).
    pub fn eval(&self, x: &CartesianPoint) -> (f64, Vector3<f64>) {
        (self.f)(x)
    }

    /// p(x) · cutoff(|x − (0,0,c)|; r₁, r₂) for a polynomial-like factor p with gradient.
    pub fn localized<P>(name: &str, center_x3: f64, r1: f64, r2: f64, p: P) -> TestFunction
    where
        P: Fn(&CartesianPoint) -> (f64, Vector3<f64>) + Send + Sync + 'static,
    {
        TestFunction::new(name, move |x| {
            let d = x - Vector3::new(0.0, 0.0, center_x3);
            let rho = d.norm();
            let (c, dc) = cutoff(rho, r1, r2);
            let (pv, pg) = p(x);
            let radial = if rho > 0.0 { d / rho } else { Vector3::zeros() };
            (pv * c, pg * c + radial * (pv * dc))
        })
    }

    /// ‖φ‖_{C¹} = sup|φ| + sup|∇φ| estimated on a 201 × 401 meridian grid of B(0,3).
    pub fn c1_norm(&self) -> f64 {
        let mut sup_v: f64 = 0.0;
        let mut sup_g: f64 = 0.0;
        for i in 0..=200 {
            for j in 0..=400 {
                let x = Vector3::new(3.0 * i as f64 / 200.0, 0.0, -3.0 + 6.0 * j as f64 / 400.0);
                if x.norm() > 3.0 {
                    continue;
                }
                let (v, g) = self.eval(&x);
                sup_v = sup_v.max(v.abs());
                sup_g = sup_g.max(g.norm());
            }
        }
        sup_v + sup_g
    }
}

/// The five axisymmetric test functions used for the determinant pairing.
pub fn standard_test_functions() -> Vec<TestFunction> {
    let e3 = Vector3::new(0.0, 0.0, 1.0);
    vec![
        TestFunction::localized("plateau", 0.5, 1.2, 2.2, |_| (1.0, Vector3::zeros())),
        TestFunction::localized("height", 0.5, 0.9, 2.0, move |x| (x[2], e3)),
        TestFunction::localized("height_squared", 0.5, 1.0, 2.3, move |x| (x[2] * x[2], e3 * (2.0 * x[2]))),
        TestFunction::localized("off_center_bump", 1.0, 0.0, 0.8, |_| (1.0, Vector3::zeros())),
        TestFunction::localized("radial_quadratic", 0.0, 0.4, 1.6, |x| (1.0 + x[0] * x[0] + x[1] * x[1], Vector3::new(2.0 * x[0], 2.0 * x[1], 0.0))),
    ]
}

/// A pairing value against its oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingResult {
    pub test_fn: String,
    pub value: f64,
    pub oracle: f64,
    pub deviation: f64,
    /// Normalization used for the tolerance (‖φ‖_{C¹} or ‖f‖_∞).
    pub norm: f64,
    pub quad_error: f64,
}

/// ∫ over all regions of the map of a jet density (θ-trapezoid with `n_theta` nodes).
fn integrate_map<D>(map: &dyn AxisymmetricMap, density: D, n_theta: usize, spec: &QuadSpec) -> Result<QuadResult>
where
    D: Fn(&crate::kernels::Jet) -> f64 + Sync + Send,
{
    let mut parts = Vec::new();
    for region in map.regions() {
        for chart in map.charts(region)? {
            parts.push(integrate_region_jets(&chart, &density, n_theta, spec)?);
        }
    }
    Ok(QuadResult::sum(&parts))
}

/// The dipole atoms of the limit map's distributional determinant: π/6 at P, −π/6 at O.
pub fn dipole_atoms() -> Vec<(CartesianPoint, f64)> {
    vec![(Vector3::new(0.0, 0.0, 1.0), PI / 6.0), (Vector3::zeros(), -PI / 6.0)]
}

/// Det Du(φ) = −⅓ ∫ u · (cof Du) ∇φ dx against the oracle ∫ φ det Du dx + Σ atoms.
/// Test functions are assumed axisymmetric (one θ node); pass `n_theta` > 1 otherwise.
pub fn det_pairing(
    map: &dyn AxisymmetricMap,
    phi: &TestFunction,
    atoms: &[(CartesianPoint, f64)],
    n_theta: usize,
    spec: &QuadSpec,
) -> Result<PairingResult> {
    let value = integrate_map(
        map,
        |j| {
            let (_, g) = phi.eval(&j.point);
            -j.value.dot(&(cofactor(&j.grad) * g)) / 3.0
        },
        n_theta,
        spec,
    )?;
    let regular = integrate_map(map, |j| phi.eval(&j.point).0 * crate::kernels::determinant(&j.grad), n_theta, spec)?;
    let oracle = regular.value + atoms.iter().map(|(p, w)| w * phi.eval(p).0).sum::<f64>();
    Ok(PairingResult {
        test_fn: phi.name.clone(),
        value: value.value,
        oracle,
        deviation: value.value - oracle,
        norm: phi.c1_norm(),
        quad_error: value.error_estimate + regular.error_estimate,
    })
}

type VectorFieldFn = dyn Fn(&CartesianPoint, &CartesianPoint) -> SurfaceFieldJet + Send + Sync;

/// f(x, y) with ∂_x f (rows: components of f), div_y f.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFieldJet {
    pub value: Vector3<f64>,
    pub dx: nalgebra::Matrix3<f64>,
    pub div_y: f64,
}

/// A field f ∈ C¹_c(Ω × ℝ³; ℝ³) for the surface pairing, with its sup norm.
#[derive(Clone)]
pub struct SurfaceField {
    pub name: String,
    pub sup_norm: f64,
    f: Arc<VectorFieldFn>,
}

impl std::fmt::Debug for SurfaceField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurfaceField").field("name", &self.name).field("sup_norm", &self.sup_norm).finish()
    }
}

impl SurfaceField {
    /// f(x, y) = a(x) N_k(y − c e₃) with N_k(w) = 2k w / (1 + k²|w|²) (|N_k| ≤ 1, and N_k = ν on
    /// the sphere |w| = 1/k); a is a scalar test function with sup|a| = `sup_a`.
    pub fn product(name: &str, a: TestFunction, sup_a: f64, center: f64, k: f64) -> SurfaceField {
        SurfaceField {
            name: name.to_string(),
            sup_norm: sup_a,
            f: Arc::new(move |x, y| {
                let (av, ag) = a.eval(x);
                let w = y - Vector3::new(0.0, 0.0, center);
                let t2 = w.norm_squared();
                let den = 1.0 + k * k * t2;
                let n = w * (2.0 * k / den);
                let div = 2.0 * k * (3.0 / den - 2.0 * k * k * t2 / (den * den));
                SurfaceFieldJet { value: n * av, dx: n * ag.transpose(), div_y: av * div }
            }),
        }
    }

    pub fn eval(&self, x: &CartesianPoint, y: &CartesianPoint) -> SurfaceFieldJet {
        (self.f)(x, y)
    }
}

/// E_u(f) = ∫ [D_x f(x, u) : cof Du + div_y f(x, u) det Du] dx.
pub fn surface_energy(map: &dyn AxisymmetricMap, field: &SurfaceField, n_theta: usize, spec: &QuadSpec) -> Result<QuadResult> {
    integrate_map(
        map,
        |j| {
            let fj = field.eval(&j.point, &j.value);
            fj.dx.component_mul(&cofactor(&j.grad)).sum() + fj.div_y * crate::kernels::determinant(&j.grad)
        },
        n_theta,
        spec,
    )
}

/// ∫_Γ [f(P, y) − f(O, y)] · ν dH² over the bubble, ν the outward normal.
pub fn bubble_oracle(field: &SurfaceField, spec: &QuadSpec) -> Result<f64> {
    let p = Vector3::new(0.0, 0.0, 1.0);
    let o = Vector3::zeros();
    Ok(integrate_sphere(
        &Vector3::new(0.0, 0.0, BUBBLE_CENTER),
        BUBBLE_RADIUS,
        |y, nu| (field.eval(&p, y).value - field.eval(&o, y).value).dot(nu),
        spec,
    )?
    .value)
}

/// Orientation of the bubble normal relative to E_u, fixed by one calibration field: ±1.
pub fn calibrate_orientation(limit: &LimitMap, field: &SurfaceField, spec: &QuadSpec) -> Result<f64> {
    let e = surface_energy(limit, field, 1, spec)?.value;
    let o = bubble_oracle(field, spec)?;
    if o == 0.0 || e == 0.0 {
        return Err(Error::NoConvergence("calibration field has zero pairing".into()));
    }
    Ok((e * o).signum())
}

/// E_u(f) against `orientation` × bubble oracle (use oracle 0 for maps without cavities).
pub fn surface_pairing(
    map: &dyn AxisymmetricMap,
    field: &SurfaceField,
    oracle: f64,
    spec: &QuadSpec,
) -> Result<PairingResult> {
    let e = surface_energy(map, field, 1, spec)?;
    Ok(PairingResult {
        test_fn: field.name.clone(),
        value: e.value,
        oracle,
        deviation: e.value - oracle,
        norm: field.sup_norm,
        quad_error: e.error_estimate,
    })
}

/// The odd profile a(x) = sin(π(x₃ − ½)) · cutoff(|x − c e₃|; r₁, r₂): a(P) = 1, a(O) = −1, |a| ≤ 1.
pub fn dipole_weight(center: f64, r1: f64, r2: f64, freq: f64) -> TestFunction {
    TestFunction::localized(&format!("sin{freq}"), center, r1, r2, move |x| {
        let arg = freq * PI * (x[2] - 0.5);
        (arg.sin(), Vector3::new(0.0, 0.0, freq * PI * arg.cos()))
    })
}

/// A dictionary of 20 product fields for the E(u) lower bound.
pub fn surface_dictionary() -> Vec<SurfaceField> {
    let mut out = Vec::new();
    for (i, (r1, r2)) in [(0.7, 1.8), (0.8, 2.2), (1.0, 2.4), (0.6, 1.4)].iter().enumerate() {
        for (j, k) in [2.0, 1.5, 2.5, 3.0, 1.0].iter().enumerate() {
            let a = dipole_weight(0.5, *r1, *r2, 1.0);
            out.push(SurfaceField::product(&format!("dict_{i}_{j}"), a, 1.0, BUBBLE_CENTER, *k));
        }
    }
    out
}

/// ∫_{∂B(c, r)} |Du|²/2 dH².
pub fn sphere_energy(map: &dyn AxisymmetricMap, center_x3: f64, radius: f64, spec: &QuadSpec) -> Result<QuadResult> {
    integrate_sphere(
        &Vector3::new(0.0, 0.0, center_x3),
        radius,
        |x, _| map.eval(x).map(|j| 0.5 * j.grad.norm_squared()).unwrap_or(f64::NAN),
        spec,
    )
}

/// Preimage oracle probes used by the degree checks: `None` when the probe is discarded.
pub fn degree_agreement(limit: &LimitMap, ball: &Ball, probes: &[[f64; 2]]) -> Result<(usize, usize)> {
    let curve = ProfileCurve::new(limit, ball, CURVE_RESOLUTION)?;
    let res = Exec::default().map(probes, |y| match (curve.degree(*y), signed_preimage_degree(limit, ball, *y)) {
        (Ok(d), Some(o)) => Some(d == o),
        _ => None,
    });
    let valid = res.iter().filter(|r| r.is_some()).count();
    let agree = res.iter().filter(|r| **r == Some(true)).count();
    Ok((agree, valid))
}

/// Regions of a map, re-exported for report assembly.
pub fn map_regions(map: &dyn AxisymmetricMap) -> Vec<RegionId> {
    map.regions()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::IdentityMap;
    use crate::recovery_map::RecoveryMap;

    fn probes(n: usize) -> Vec<[f64; 2]> {
        (0..n as u64).map(|k| halton::<2>(k + 11)).map(|u| [1.5 * u[0], -0.6 + 2.2 * u[1]]).collect()
    }

    #[test]
    fn identity_degree_is_one_inside_zero_outside() {
        let ball = Ball::new(0.2, 0.5).unwrap();
        let c = ProfileCurve::new(&IdentityMap, &ball, 1e-3).unwrap();
        assert_eq!(c.degree([0.1, 0.3]).unwrap(), 1);
        assert_eq!(c.degree([0.0, 0.2]).unwrap(), 1);
        assert_eq!(c.degree([0.8, 0.2]).unwrap(), 0);
        assert_eq!(c.degree([0.0, 1.2]).unwrap(), 0);
        assert!(matches!(c.degree([0.5, 0.2]), Err(Error::ProbeTooClose(_))));
    }

    #[test]
    fn identity_flux_is_volume() {
        let ball = Ball::new(0.0, 1.0).unwrap();
        let f = degree_flux(&IdentityMap, &ball, |y| y / 3.0, &QuadSpec::default()).unwrap();
        assert!((f.value - 4.0 * PI / 3.0).abs() < 1e-9);
        let inv = inv_check(&IdentityMap, &Ball::at_origin(0.3), 2000).unwrap();
        assert_eq!(inv.violations(), 0);
    }

    #[test]
    fn limit_degree_matches_preimage_oracle() {
        let limit = LimitMap::default();
        for ball in [Ball::at_pole(0.3), Ball::at_origin(0.3)] {
            let (agree, valid) = degree_agreement(&limit, &ball, &probes(300)).unwrap();
            assert!(valid >= 250 && agree == valid, "{ball:?}: {agree}/{valid}");
        }
        // Opposite signs inside the bubble.
        let y = [0.0, 0.5];
        assert_eq!(winding_degree(&limit, &Ball::at_pole(0.3), y).unwrap(), 1);
        assert_eq!(winding_degree(&limit, &Ball::at_origin(0.3), y).unwrap(), -1);
    }

    #[test]
    fn flux_matches_winding_volume_integral() {
        let limit = LimitMap::default();
        let ball = Ball::at_pole(0.3);
        let c0 = Vector3::new(0.0, 0.0, 0.6);
        let bump = move |y: &CartesianPoint| {
            let w = y - c0;
            let (b, _) = cutoff(w.norm(), 0.2, 0.9);
            w * b
        };
        let div = move |s: f64, z: f64| {
            let t = s.hypot(z - 0.6);
            let (b, db) = cutoff(t, 0.2, 0.9);
            3.0 * b + t * db
        };
        let spec = QuadSpec { atol: 1e-8, rtol: 1e-7, ..QuadSpec::default() };
        let flux = degree_flux(&limit, &ball, bump, &spec).unwrap();
        let curve = ProfileCurve::new(&limit, &ball, 1e-3).unwrap();
        let vol = winding_volume_integral(&curve, div, &Grid { s: (0.0, 1.6), z: (-0.4, 1.6), h: 2e-3 });
        assert!((flux.value - vol).abs() < 0.01 * vol.abs(), "{} vs {vol}", flux.value);
        // Recovery maps approach the limit flux.
        let rec = RecoveryMap::from_eps(0.05, 1.0 / 3.0).unwrap();
        let fr = degree_flux(&rec, &ball, bump, &spec).unwrap();
        assert!((fr.value - flux.value).abs() < 5.0 * rec.params.eps_gamma * flux.value.abs());
    }

    #[test]
    fn delta_fields_are_plus_and_minus_one_in_the_bubble() {
        let limit = LimitMap::default();
        let grid = Grid::around_bubble(1e-2);
        let fp = delta_field(&limit, &Ball::at_pole(0.1), &grid).unwrap();
        let fo = delta_field(&limit, &Ball::at_origin(0.1), &grid).unwrap();
        let (mut inside, mut ok_p, mut ok_o, mut total, mut zero_sum) = (0, 0, 0, 0, 0);
        for j in 0..=fp.nz {
            for i in 0..=fp.ns {
                let y = grid.node(i, j);
                let (Some(a), Some(b)) = (fp.get(i, j), fo.get(i, j)) else { continue };
                total += 1;
                zero_sum += (a + b == 0) as usize;
                // Nodes on Γ itself are ambiguous.
                if (y[0].hypot(y[1] - BUBBLE_CENTER) - BUBBLE_RADIUS).abs() < 1e-9 {
                    continue;
                }
                if in_bubble(y[0], y[1]) {
                    inside += 1;
                    ok_p += (a == 1) as usize;
                    ok_o += (b == -1) as usize;
                } else {
                    assert_eq!(a, 0, "Δ_P at {y:?}");
                }
            }
        }
        assert!(ok_p as f64 >= 0.95 * inside as f64 && ok_o as f64 >= 0.95 * inside as f64);
        assert!(zero_sum as f64 >= 0.95 * total as f64);
    }

    #[test]
    fn singular_mass_is_pi() {
        let m = singular_mass(&LimitMap::default(), &[0.4, 0.2, 0.1], &Grid::around_bubble(1e-2)).unwrap();
        assert!((m.extrapolated - PI).abs() < 0.02 * PI, "{m:?}");
    }

    #[test]
    fn inv_holds_for_recovery_and_fails_for_limit() {
        let rec = RecoveryMap::from_eps(0.05, 1.0 / 3.0).unwrap();
        let r = inv_check(&rec, &Ball::at_origin(0.3), 4000).unwrap();
        assert_eq!(r.violations(), 0, "{r:?}");
        let l = inv_check(&LimitMap::default(), &Ball::at_origin(0.3), 4000).unwrap();
        assert!(l.violation_fraction() > 0.0, "{l:?}");
    }

    #[test]
    fn det_pairing_sees_the_dipole_atoms() {
        let limit = LimitMap::default();
        let spec = QuadSpec { atol: 1e-7, rtol: 1e-7, ..QuadSpec::default() };
        for phi in standard_test_functions() {
            let r = det_pairing(&limit, &phi, &dipole_atoms(), 1, &spec).unwrap();
            assert!(r.deviation.abs() <= 1e-3 * r.norm, "{r:?}");
        }
    }

    #[test]
    fn surface_pairing_matches_bubble_oracle() {
        let limit = LimitMap::default();
        let spec = QuadSpec { atol: 1e-7, rtol: 1e-7, ..QuadSpec::default() };
        let dict = surface_dictionary();
        let sign = calibrate_orientation(&limit, &dict[0], &spec).unwrap();
        for f in dict.iter().take(3) {
            let oracle = sign * bubble_oracle(f, &spec).unwrap();
            let r = surface_pairing(&limit, f, oracle, &spec).unwrap();
            assert!(r.deviation.abs() <= 0.01 * r.oracle.abs(), "{r:?}");
        }
        let rec = RecoveryMap::from_eps(0.05, 1.0 / 3.0).unwrap();
        let r = surface_pairing(&rec, &dict[0], 0.0, &spec).unwrap();
        assert!(r.value.abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn ball_parsing() {
        assert_eq!(Ball::parse("P,0.3").unwrap(), Ball::at_pole(0.3));
        assert_eq!(Ball::parse("0,0.2").unwrap(), Ball::at_origin(0.2));
        assert!(Ball::parse("P").is_err());
        assert!(Ball::parse("2.9,0.5").is_err());
    }
}
