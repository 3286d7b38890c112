//! Coordinate systems, orthonormal frames and the region atlas of both maps.
//!
//! Reference points live in the closed ball B(0,3) ⊂ ℝ³. Every map in this crate
//! is axisymmetric about the x₃-axis, so evaluation happens on the θ = 0
//! half-plane (the *meridian* (r, x₃)) and is rotated afterwards. Points on the
//! axis get θ = 0 by convention.
//!
//! The two atlases are
//!
//! | limit map | recovery map | description |
//! |-----------|--------------|-------------|
//! | `a` | `a_prime_eps`, `a_eps` | lower half of the unit ball |
//! | `b` | `b_eps` | lower half-shell 1 ≤ \|x\| ≤ 3 |
//! | `d` | `c_eps`, `d_eps` | slab 0 ≤ x₃ ≤ 1 |
//! | `e` | `e_prime_eps`, `e_eps` | upper half of the unit ball about P = (0,0,1) |
//! | `f` | `f_eps` | the rest of B(0,3) above x₃ = 1 |
//!
//! Interfaces are null sets; a point on a shared interface is assigned to the
//! first region in the fixed precedence order (`a < b < d < e < f`, and
//! `a' < a < b < c < d < e' < e < f` for the recovery atlas).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::MeridianJet;

/// Cartesian point (x₁, x₂, x₃).
pub type CartesianPoint = Vector3<f64>;

/// The pole P = (0,0,1), second singular point of the dipole.
pub const POLE: [f64; 3] = [0.0, 0.0, 1.0];
/// Radius of the reference domain B(0,3).
pub const DOMAIN_RADIUS: f64 = 3.0;
/// Slack used when deciding membership of a closed region.
const SLACK: f64 = 1e-12;

/// Returns the pole P as a vector.
pub fn pole() -> CartesianPoint {
    Vector3::new(POLE[0], POLE[1], POLE[2])
}

/// Cylindrical coordinates (r, θ, x₃), θ ∈ [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylindricalPoint {
    pub r: f64,
    pub theta: f64,
    pub x3: f64,
}

/// Spherical coordinates about `center`: x = center + ρ (sinφ e_r(θ) + cosφ e₃).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
    pub center: CartesianPoint,
}

fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Cartesian → cylindrical; axis points get θ = 0.
pub fn cart_to_cyl(p: &CartesianPoint) -> CylindricalPoint {
    let r = p.x.hypot(p.y);
    let theta = if r == 0.0 { 0.0 } else { normalize_angle(p.y.atan2(p.x)) };
    CylindricalPoint { r, theta, x3: p.z }
}

/// Cylindrical → Cartesian.
pub fn cyl_to_cart(c: &CylindricalPoint) -> CartesianPoint {
    Vector3::new(c.r * c.theta.cos(), c.r * c.theta.sin(), c.x3)
}

/// Cartesian → spherical about `center`; φ is measured from +e₃.
pub fn cart_to_sph(p: &CartesianPoint, center: &CartesianPoint) -> SphericalPoint {
    let d = p - center;
    let cyl = cart_to_cyl(&d);
    let rho = d.norm();
    let phi = if rho == 0.0 { 0.0 } else { cyl.r.atan2(d.z) };
    SphericalPoint { rho, theta: cyl.theta, phi, center: *center }
}

/// Spherical → Cartesian.
pub fn sph_to_cart(s: &SphericalPoint) -> CartesianPoint {
    let (sp, cp) = s.phi.sin_cos();
    s.center + Vector3::new(s.rho * sp * s.theta.cos(), s.rho * sp * s.theta.sin(), s.rho * cp)
}

/// An orthonormal frame, stored as three unit vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame(pub [Vector3<f64>; 3]);

impl Frame {
    /// (e_r(θ), e_θ(θ), e₃).
    pub fn cylindrical(theta: f64) -> Frame {
        let (s, c) = theta.sin_cos();
        Frame([Vector3::new(c, s, 0.0), Vector3::new(-s, c, 0.0), Vector3::z()])
    }

    /// (e_ρ, e_φ, e_θ), right-handed: e_ρ ∧ e_φ = e_θ.
    pub fn spherical(theta: f64, phi: f64) -> Frame {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Frame([
            Vector3::new(sp * ct, sp * st, cp),
            Vector3::new(cp * ct, cp * st, -sp),
            Vector3::new(-st, ct, 0.0),
        ])
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.0[i].dot(&self.0[j]) - target).abs());
            }
        }
        worst
    }

    /// Triple product e₀ · (e₁ × e₂); +1 for a right-handed frame.
    pub fn orientation(&self) -> f64 {
        self.0[0].dot(&self.0[1].cross(&self.0[2]))
    }
}

/// Region tags of both atlases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum RegionId {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "e")]
    E,
    #[serde(rename = "f")]
    F,
    #[serde(rename = "a_prime_eps")]
    APrimeEps,
    #[serde(rename = "a_eps")]
    AEps,
    #[serde(rename = "b_eps")]
    BEps,
    #[serde(rename = "c_eps")]
    CEps,
    #[serde(rename = "d_eps")]
    DEps,
    #[serde(rename = "e_prime_eps")]
    EPrimeEps,
    #[serde(rename = "e_eps")]
    EEps,
    #[serde(rename = "f_eps")]
    FEps,
}

impl RegionId {
    /// Limit-map regions in precedence order.
    pub const LIMIT: [RegionId; 5] = [RegionId::A, RegionId::B, RegionId::D, RegionId::E, RegionId::F];
    /// Recovery-map regions in precedence order.
    pub const RECOVERY: [RegionId; 8] = [
        RegionId::APrimeEps,
        RegionId::AEps,
        RegionId::BEps,
        RegionId::CEps,
        RegionId::DEps,
        RegionId::EPrimeEps,
        RegionId::EEps,
        RegionId::FEps,
    ];

    /// Stable textual tag.
    pub fn tag(self) -> &'static str {
        match self {
            RegionId::A => "a",
            RegionId::B => "b",
            RegionId::D => "d",
            RegionId::E => "e",
            RegionId::F => "f",
            RegionId::APrimeEps => "a_prime_eps",
            RegionId::AEps => "a_eps",
            RegionId::BEps => "b_eps",
            RegionId::CEps => "c_eps",
            RegionId::DEps => "d_eps",
            RegionId::EPrimeEps => "e_prime_eps",
            RegionId::EEps => "e_eps",
            RegionId::FEps => "f_eps",
        }
    }

    /// Parses a tag; the short forms `a_prime`, `c`, … are accepted for recovery regions.
    pub fn parse(tag: &str) -> Option<RegionId> {
        let t = tag.trim();
        let all = RegionId::LIMIT.iter().chain(RegionId::RECOVERY.iter());
        for r in all {
            if r.tag() == t {
                return Some(*r);
            }
        }
        match t {
            "a_prime" => Some(RegionId::APrimeEps),
            "c" => Some(RegionId::CEps),
            "e_prime" => Some(RegionId::EPrimeEps),
            _ => None,
        }
    }

    /// Whether the tag belongs to the recovery atlas.
    pub fn is_recovery(self) -> bool {
        RegionId::RECOVERY.contains(&self)
    }

    /// The limit-map region a recovery region converges to (`c_eps` shrinks to the axis, so `None`).
    pub fn limit_counterpart(self) -> Option<RegionId> {
        match self {
            RegionId::AEps | RegionId::A => Some(RegionId::A),
            RegionId::BEps | RegionId::B => Some(RegionId::B),
            RegionId::DEps | RegionId::D => Some(RegionId::D),
            RegionId::EEps | RegionId::E => Some(RegionId::E),
            RegionId::FEps | RegionId::F => Some(RegionId::F),
            _ => None,
        }
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

fn check_domain(r: f64, x3: f64) -> Result<()> {
    if !(r.is_finite() && x3.is_finite()) {
        return Err(Error::OutOfDomain(format!("non-finite point (r={r}, x3={x3})")));
    }
    if r.hypot(x3) > DOMAIN_RADIUS + SLACK {
        return Err(Error::OutOfDomain(format!("|x| = {} > 3", r.hypot(x3))));
    }
    Ok(())
}

/// Classifies a meridian point (r, x₃) in the limit atlas.
pub fn classify_limit_meridian(r: f64, x3: f64) -> Result<RegionId> {
    check_domain(r, x3)?;
    let rho_o = r.hypot(x3);
    let rho_p = r.hypot(x3 - 1.0);
    Ok(if x3 <= SLACK && rho_o <= 1.0 + SLACK {
        RegionId::A
    } else if x3 <= SLACK {
        RegionId::B
    } else if x3 <= 1.0 + SLACK {
        RegionId::D
    } else if rho_p <= 1.0 + SLACK {
        RegionId::E
    } else {
        RegionId::F
    })
}

/// Classifies a point in the limit atlas (precedence a < b < d < e < f on interfaces).
pub fn classify_limit(p: &CartesianPoint) -> Result<RegionId> {
    let c = cart_to_cyl(p);
    classify_limit_meridian(c.r, c.x3)
}

/// Classifies a meridian point (r, x₃) in the recovery atlas at scale ε.
pub fn classify_recovery_meridian(r: f64, x3: f64, eps: f64) -> Result<RegionId> {
    check_domain(r, x3)?;
    let rho_o = r.hypot(x3);
    let rho_p = r.hypot(x3 - 1.0);
    Ok(if x3 <= SLACK {
        if rho_o <= eps + SLACK {
            RegionId::APrimeEps
        } else if rho_o <= 1.0 + SLACK {
            RegionId::AEps
        } else {
            RegionId::BEps
        }
    } else if x3 <= 1.0 + SLACK {
        if r <= eps + SLACK {
            RegionId::CEps
        } else {
            RegionId::DEps
        }
    } else if rho_p <= eps + SLACK {
        RegionId::EPrimeEps
    } else if rho_p <= 1.0 + SLACK {
        RegionId::EEps
    } else {
        RegionId::FEps
    })
}

/// Classifies a point in the recovery atlas at scale ε.
pub fn classify_recovery(p: &CartesianPoint, eps: f64) -> Result<RegionId> {
    let c = cart_to_cyl(p);
    classify_recovery_meridian(c.r, c.x3, eps)
}

/// Whether the meridian point lies in the open interior of the given region
/// (strict inequalities in every defining condition).
pub fn in_open_region(region: RegionId, r: f64, x3: f64, eps: f64) -> bool {
    let rho_o = r.hypot(x3);
    let rho_p = r.hypot(x3 - 1.0);
    let in_domain = rho_o < DOMAIN_RADIUS;
    in_domain
        && match region {
            RegionId::A => rho_o < 1.0 && x3 < 0.0,
            RegionId::B => rho_o > 1.0 && x3 < 0.0,
            RegionId::D => x3 > 0.0 && x3 < 1.0,
            RegionId::E => rho_p < 1.0 && x3 > 1.0,
            RegionId::F => rho_p > 1.0 && x3 > 1.0,
            RegionId::APrimeEps => rho_o < eps && x3 < 0.0,
            RegionId::AEps => rho_o > eps && rho_o < 1.0 && x3 < 0.0,
            RegionId::BEps => rho_o > 1.0 && x3 < 0.0,
            RegionId::CEps => r < eps && x3 > 0.0 && x3 < 1.0,
            RegionId::DEps => r > eps && x3 > 0.0 && x3 < 1.0,
            RegionId::EPrimeEps => rho_p < eps && x3 > 1.0,
            RegionId::EEps => rho_p > eps && rho_p < 1.0 && x3 > 1.0,
            RegionId::FEps => rho_p > 1.0 && x3 > 1.0,
        }
}

/// Closed-form volume of a region (used to validate chart weights).
pub fn region_volume(region: RegionId, eps: f64) -> f64 {
    let ball = |rad: f64| 4.0 / 3.0 * PI * rad.powi(3);
    // Volume of B(0,3) ∩ {0 ≤ x₃ ≤ 1}: ∫₀¹ π(9 − t²) dt.
    let slab = PI * (9.0 - 1.0 / 3.0);
    // Volume of B(0,3) ∩ {x₃ ≥ 1}: cap of height 2.
    let cap = PI * 4.0 * (9.0 - 2.0) / 3.0;
    match region {
        RegionId::A => ball(1.0) / 2.0,
        RegionId::B => (ball(3.0) - ball(1.0)) / 2.0,
        RegionId::D => slab,
        RegionId::E => ball(1.0) / 2.0,
        RegionId::F => cap - ball(1.0) / 2.0,
        RegionId::APrimeEps => ball(eps) / 2.0,
        RegionId::AEps => (ball(1.0) - ball(eps)) / 2.0,
        RegionId::BEps => (ball(3.0) - ball(1.0)) / 2.0,
        RegionId::CEps => PI * eps * eps,
        RegionId::DEps => slab - PI * eps * eps,
        RegionId::EPrimeEps => ball(eps) / 2.0,
        RegionId::EEps => (ball(1.0) - ball(eps)) / 2.0,
        RegionId::FEps => cap - ball(1.0) / 2.0,
    }
}

/// Grading request for one chart coordinate: refine dyadically toward `at`
/// until cells adjacent to it are smaller than `min_cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradeEdge {
    pub at: f64,
    pub min_cell: f64,
}

/// One sample of a chart: meridian position, volume weight and the map's jet there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartSample {
    /// Meridian position of the reference point.
    pub r: f64,
    pub x3: f64,
    /// Volume weight 2π r |∂(r,x₃)/∂(a,b)| (the azimuthal factor is included).
    pub weight: f64,
    /// Jet of the map at the sample (identity for purely geometric charts).
    pub jet: MeridianJet,
}

/// Inner-coordinate description of a chart slice at fixed outer coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerRange {
    pub lo: f64,
    pub hi: f64,
    /// Interior breakpoints (kinks of the integrand) — integration is split there.
    pub breaks: Vec<f64>,
    pub grading: Vec<GradeEdge>,
}

type ChartEval = dyn Fn(f64, f64) -> Result<ChartSample> + Send + Sync;
type InnerFn = dyn Fn(f64) -> InnerRange + Send + Sync;

/// A parametric piece of a region: outer coordinate `a ∈ [lo, hi]`, inner
/// coordinate `b ∈ inner(a)`, θ integrated analytically (axisymmetry).
#[derive(Clone)]
pub struct RegionChart {
    pub region: RegionId,
    pub name: &'static str,
    pub outer: (f64, f64),
    pub outer_breaks: Vec<f64>,
    pub outer_grading: Vec<GradeEdge>,
    pub inner: Arc<InnerFn>,
    pub eval: Arc<ChartEval>,
}

impl fmt::Debug for RegionChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegionChart")
            .field("region", &self.region)
            .field("name", &self.name)
            .field("outer", &self.outer)
            .finish()
    }
}

impl RegionChart {
    /// A chart with a fixed inner interval.
    #[allow(clippy::too_many_arguments)]
    pub fn rectangular(
        region: RegionId,
        name: &'static str,
        outer: (f64, f64),
        outer_grading: Vec<GradeEdge>,
        inner: (f64, f64),
        inner_grading: Vec<GradeEdge>,
        eval: Arc<ChartEval>,
    ) -> RegionChart {
        let range = InnerRange { lo: inner.0, hi: inner.1, breaks: vec![], grading: inner_grading };
        RegionChart {
            region,
            name,
            outer,
            outer_breaks: vec![],
            outer_grading,
            inner: Arc::new(move |_| range.clone()),
            eval,
        }
    }

    /// Evaluates the chart at (a, b).
    pub fn sample(&self, a: f64, b: f64) -> Result<ChartSample> {
        (self.eval)(a, b)
    }
}

/// Meridian position and its Jacobian ∂(r,x₃)/∂(ρ,φ) for spherical coordinates about (0, c).
pub fn spherical_chart(rho: f64, phi: f64, center_x3: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let (sp, cp) = phi.sin_cos();
    ([rho * sp, center_x3 + rho * cp], [[sp, rho * cp], [cp, -rho * sp]])
}
