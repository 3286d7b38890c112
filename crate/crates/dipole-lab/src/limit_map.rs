//! The harmonic-dipole limit map u on B(0,3).
//!
//! In spherical image coordinates (u_ρ, u_φ) about the origin (u_θ = θ):
//!
//! | region | reference coordinates | formula |
//! |--------|----------------------|---------|
//! | a | (ρ, φ) about O, φ ∈ [π/2, π] | u_φ = π − φ, u_ρ = (1 − ρ) cos u_φ |
//! | b | (ρ, φ) about O, 1 ≤ ρ ≤ 3 | u_ρ = ρ − 1, u_φ = (φ + π)/2 |
//! | e | (ρ, φ) about P, ρ ≤ 1 | u_ρ = (1 + ρ) cos φ, u_φ = φ |
//! | f | (ρ, φ) about P, ρ ≥ 1 | u_ρ = 2 cos φ + β(ρ − 1), u_φ = φ |
//! | d | slab 0 ≤ x₃ ≤ 1 | u = s sin φ(z) e_r − s cos φ(z) e₃, φ(z) = π/4 (1 + z/3) |
//!
//! In region d, (s, z) = g(r̂, x₃) with r̂ = r. The map g collapses the
//! polyline A′B′C′D′ (A′ = (1,0), B′ = (0,0), C′ = (0,1), D′ = (1,1)) to s = 0,
//! parametrized by z ∈ [0, 3]. On the strip r̂ ≥ 1 it is
//! s = r̂ − 1 + κ sin(πx₃), z = 3x₃. On the unit square it is a *fan*: every
//! ray from the fan centre F hits the polyline at parameter t and the edge
//! r̂ = 1 at height a = x₃ᴿ; along the ray the image is the chord from
//! (0, t) to (κ sin πa, 3a), traversed with blend parameter μ ∈ [0, 1].
//! Chords for different rays are nested, so g is a bi-Lipschitz bijection
//! onto the region {0 ≤ s ≤ κ sin(πz/3)}.
//!
//! The regions a and e open the bubble Γ = ∂B((0,0,½), ½): points near O are
//! sent to the inside of Γ, points near P to its outside.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    cart_to_cyl, classify_limit_meridian, spherical_chart, CartesianPoint, ChartSample, GradeEdge, InnerRange,
    RegionChart, RegionId,
};
use crate::kernels::{det2, inv2, mul2, polar_image, Mat2, MeridianJet};
use crate::maps::{limit_atlas_charts, spherical_region_chart, AxisymmetricMap};
use crate::roots::bisect;

/// Free choices of the limit map that the construction leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitMapConfig {
    /// Radial slope β of u_ρ in region f.
    pub beta: f64,
    /// Fan centre (r̂, x₃) of the region-d construction.
    pub fan_center: (f64, f64),
    /// Bulge amplitude κ of the image of the edge r̂ = 1.
    pub kappa: f64,
}

impl Default for LimitMapConfig {
    fn default() -> Self {
        LimitMapConfig { beta: 1.0, fan_center: (2.0, 0.5), kappa: 0.5 }
    }
}

impl LimitMapConfig {
    /// Checks β > 0, κ > 0, and that the fan centre lies right of the square at mid height.
    pub fn validate(&self) -> Result<()> {
        let (fr, fz) = self.fan_center;
        if !(self.beta > 0.0 && self.kappa > 0.0 && fr > 1.0 && fz > 0.0 && fz < 1.0) {
            return Err(Error::Config(format!("invalid limit-map configuration {self:?}")));
        }
        Ok(())
    }
}

/// φ(z) = π/4 (1 + z/3): the angle (from −e₃) of the image wedge of region d.
pub fn wedge_angle(z: f64) -> f64 {
    FRAC_PI_4 * (1.0 + z / 3.0)
}

/// dφ/dz.
pub const WEDGE_SLOPE: f64 = PI / 12.0;

/// The bi-Lipschitz map g: (r̂, x₃) ↦ (s, z) of region d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanMap {
    pub center: (f64, f64),
    pub kappa: f64,
}

/// Where the ray of parameter a hits the polyline A′B′C′D′.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FanHit {
    /// Ray parameter of the hit (p = F + λ(R − F)); λ ≥ 1.
    lambda: f64,
    dlambda: f64,
    /// Polyline position t ∈ [0, 3].
    t: f64,
    dt: f64,
}

/// Which piece of g a point belongs to (used for kinks and FD tags).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FanPiece {
    /// Ray hits A′B′ (lower edge).
    Lower,
    /// Ray hits B′C′ (axis edge).
    Middle,
    /// Ray hits C′D′ (upper edge).
    Upper,
    /// r̂ ≥ 1.
    Strip,
}

impl FanMap {
    /// From the limit-map configuration.
    pub fn new(cfg: &LimitMapConfig) -> FanMap {
        FanMap { center: cfg.fan_center, kappa: cfg.kappa }
    }

    /// Ray parameters a of the corners B′ and C′.
    pub fn corner_params(&self) -> (f64, f64) {
        let (fr, fz) = self.center;
        let lam = fr / (fr - 1.0);
        (fz - fz / lam, fz + (1.0 - fz) / lam)
    }

    /// Piece of the fan containing the ray a.
    pub fn piece_of(&self, a: f64) -> FanPiece {
        let (ab, ac) = self.corner_params();
        if a < ab {
            FanPiece::Lower
        } else if a <= ac {
            FanPiece::Middle
        } else {
            FanPiece::Upper
        }
    }

    fn hit(&self, a: f64) -> FanHit {
        let (fr, fz) = self.center;
        match self.piece_of(a) {
            FanPiece::Lower => {
                let lambda = fz / (fz - a);
                let dlambda = fz / (fz - a).powi(2);
                FanHit { lambda, dlambda, t: (lambda - 1.0) * (fr - 1.0), dt: dlambda * (fr - 1.0) }
            }
            FanPiece::Middle => {
                let lambda = fr / (fr - 1.0);
                FanHit { lambda, dlambda: 0.0, t: 1.0 + fz + lambda * (a - fz), dt: lambda }
            }
            _ => {
                let lambda = (1.0 - fz) / (a - fz);
                let dlambda = -(1.0 - fz) / (a - fz).powi(2);
                FanHit { lambda, dlambda, t: 2.0 + fr - lambda * (fr - 1.0), dt: -dlambda * (fr - 1.0) }
            }
        }
    }

    /// Position (r̂, x₃) of fan coordinates (a, μ) and ∂(r̂, x₃)/∂(a, μ).
    pub fn position(&self, a: f64, mu: f64) -> ([f64; 2], Mat2) {
        let (fr, fz) = self.center;
        let h = self.hit(a);
        let kp = h.lambda - mu * (h.lambda - 1.0);
        let dir = [1.0 - fr, a - fz];
        let p = [fr + kp * dir[0], fz + kp * dir[1]];
        let dkp_da = h.dlambda * (1.0 - mu);
        let dkp_dmu = -(h.lambda - 1.0);
        (p, [[dkp_da * dir[0], dkp_dmu * dir[0]], [dkp_da * dir[1] + kp, dkp_dmu * dir[1]]])
    }

    /// Image (s, z) of fan coordinates (a, μ) and ∂(s, z)/∂(a, μ).
    pub fn image(&self, a: f64, mu: f64) -> ([f64; 2], Mat2) {
        let h = self.hit(a);
        let (sa, ca) = (PI * a).sin_cos();
        let s = mu * self.kappa * sa;
        let z = (1.0 - mu) * h.t + 3.0 * mu * a;
        (
            [s, z],
            [[mu * self.kappa * PI * ca, self.kappa * sa], [(1.0 - mu) * h.dt + 3.0 * mu, 3.0 * a - h.t]],
        )
    }

    /// Fan coordinates (a, μ) of a point of the unit square.
    pub fn coords(&self, rhat: f64, x3: f64) -> (f64, f64) {
        let (fr, fz) = self.center;
        let kp = (fr - rhat) / (fr - 1.0);
        let a = (fz + (x3 - fz) / kp).clamp(0.0, 1.0);
        let h = self.hit(a);
        let mu = if h.lambda - 1.0 > 1e-300 { ((h.lambda - kp) / (h.lambda - 1.0)).clamp(0.0, 1.0) } else { 1.0 };
        (a, mu)
    }

    /// Piece containing (r̂, x₃).
    pub fn piece(&self, rhat: f64, x3: f64) -> FanPiece {
        if rhat >= 1.0 {
            FanPiece::Strip
        } else {
            self.piece_of(self.coords(rhat, x3).0)
        }
    }

    /// g(r̂, x₃) = (s, z) and the Jacobian ∂(s, z)/∂(r̂, x₃).
    pub fn g(&self, rhat: f64, x3: f64) -> Result<([f64; 2], Mat2)> {
        if !(rhat >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&x3)) {
            return Err(Error::OutOfDomain(format!("fan map at (r̂={rhat}, x3={x3})")));
        }
        if rhat >= 1.0 {
            let (sx, cx) = (PI * x3).sin_cos();
            return Ok(([rhat - 1.0 + self.kappa * sx, 3.0 * x3], [[1.0, self.kappa * PI * cx], [0.0, 3.0]]));
        }
        let (a, mu) = self.coords(rhat, x3);
        Ok(self.g_fan(a, mu))
    }

    /// g in fan coordinates: (s, z) and ∂(s, z)/∂(r̂, x₃).
    pub fn g_fan(&self, a: f64, mu: f64) -> ([f64; 2], Mat2) {
        let (_, dp) = self.position(a, mu);
        let (w, dw) = self.image(a, mu);
        (w, mul2(&dw, &inv2(&dp)))
    }

    /// Preimage of (s, z) under g; for s = 0 the polyline point of parameter z.
    pub fn g_inverse(&self, s: f64, z: f64) -> Option<(f64, f64)> {
        if !(s >= 0.0 && (0.0..=3.0).contains(&z)) {
            return None;
        }
        let bulge = self.kappa * (PI * z / 3.0).sin();
        if s >= bulge {
            return Some((1.0 + s - bulge, z / 3.0));
        }
        if s == 0.0 {
            return Some(match z {
                z if z <= 1.0 => (1.0 - z, 0.0),
                z if z <= 2.0 => (0.0, z - 1.0),
                z => (z - 2.0, 1.0),
            });
        }
        let a0 = (s / self.kappa).asin() / PI;
        let residual = |a: f64| {
            let mu = (s / (self.kappa * (PI * a).sin())).min(1.0);
            (1.0 - mu) * self.hit(a).t + 3.0 * mu * a - z
        };
        let a = bisect(residual, a0, 1.0 - a0, 1e-15, 200).ok()?;
        let mu = (s / (self.kappa * (PI * a).sin())).min(1.0);
        let (p, _) = self.position(a, mu);
        Some((p[0], p[1]))
    }
}

/// The limit map u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitMap {
    pub config: LimitMapConfig,
    pub fan: FanMap,
}

impl Default for LimitMap {
    fn default() -> Self {
        LimitMap::new(LimitMapConfig::default()).expect("default configuration is valid")
    }
}

/// Profile (u_ρ, u_φ) with partials w.r.t. (ρ, φ).
type SphProfile = (f64, f64, [f64; 2], [f64; 2]);

/// A preimage of an image point under the limit map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub r: f64,
    pub x3: f64,
    pub region: RegionId,
}

impl LimitMap {
    /// Builds the map after validating the configuration.
    pub fn new(config: LimitMapConfig) -> Result<LimitMap> {
        config.validate()?;
        Ok(LimitMap { config, fan: FanMap::new(&config) })
    }

    fn sph_profile(&self, region: RegionId, rho: f64, phi: f64) -> SphProfile {
        match region {
            RegionId::A => {
                let uphi = PI - phi;
                let c = uphi.cos();
                ((1.0 - rho) * c, uphi, [-c, (1.0 - rho) * uphi.sin()], [0.0, -1.0])
            }
            RegionId::B => (rho - 1.0, 0.5 * (phi + PI), [1.0, 0.0], [0.0, 0.5]),
            RegionId::E => ((1.0 + rho) * phi.cos(), phi, [phi.cos(), -(1.0 + rho) * phi.sin()], [0.0, 1.0]),
            _ => {
                let beta = self.config.beta;
                (2.0 * phi.cos() + beta * (rho - 1.0), phi, [beta, -2.0 * phi.sin()], [0.0, 1.0])
            }
        }
    }

    fn sph_jet(&self, region: RegionId, rho: f64, phi: f64, x: [f64; 2], dx: &Mat2) -> MeridianJet {
        let (ur, up, dr, dp) = self.sph_profile(region, rho, phi);
        let (v, dv) = polar_image(ur, up, dr, dp);
        MeridianJet::from_chart(x, dx, v, &dv, region)
    }

    /// Region-d jet from the value of g and its Jacobian.
    fn d_jet(&self, x: [f64; 2], w: [f64; 2], jg: &Mat2) -> MeridianJet {
        let (s, z) = (w[0], w[1]);
        let (sp, cp) = wedge_angle(z).sin_cos();
        let v = [s * sp, -s * cp];
        let dw: Mat2 = [[sp, s * cp * WEDGE_SLOPE], [-cp, s * sp * WEDGE_SLOPE]];
        MeridianJet::new(x, v, mul2(&dw, jg), RegionId::D)
    }

    /// Jet of region d at fan coordinates (a, μ).
    pub fn d_jet_fan(&self, a: f64, mu: f64) -> (MeridianJet, Mat2) {
        let (p, dp) = self.fan.position(a, mu);
        let (w, jg) = self.fan.g_fan(a, mu);
        (self.d_jet(p, w, &jg), dp)
    }

    /// Closed-form Jacobian determinant where the construction provides one.
    pub fn limit_det(&self, p: &CartesianPoint) -> Result<f64> {
        let c = cart_to_cyl(p);
        let region = classify_limit_meridian(c.r, c.x3)?;
        let (rho, phi) = match region {
            RegionId::A | RegionId::B => (c.r.hypot(c.x3), c.r.atan2(c.x3)),
            RegionId::E | RegionId::F => (c.r.hypot(c.x3 - 1.0), c.r.atan2(c.x3 - 1.0)),
            _ => (0.0, 0.0),
        };
        Ok(match region {
            RegionId::A => {
                let uphi = PI - phi;
                (1.0 - rho).powi(2) / (rho * rho) * uphi.cos().powi(3)
            }
            RegionId::B => (rho - 1.0).powi(2) / (4.0 * rho * rho * (phi / 2.0).sin()),
            RegionId::E => (1.0 + rho).powi(2) / (rho * rho) * phi.cos().powi(3),
            RegionId::F => {
                let ur = 2.0 * phi.cos() + self.config.beta * (rho - 1.0);
                self.config.beta * ur * ur / (rho * rho)
            }
            _ => {
                let (w, jg) = self.fan.g(c.r, c.x3)?;
                if c.r == 0.0 {
                    return Err(Error::AxisSingular);
                }
                WEDGE_SLOPE * w[0] * w[0] * wedge_angle(w[1]).sin() / c.r * det2(&jg)
            }
        })
    }

    /// All preimages of the image point (y_s, y_z), y_s ≥ 0, by exact region-wise inversion.
    /// Points on the bubble, on the axis image of the polyline (y = 0) and other null sets
    /// may be missed or duplicated.
    pub fn preimages(&self, ys: f64, yz: f64) -> Vec<Preimage> {
        let mut out = Vec::new();
        let ur = ys.hypot(yz);
        if ur == 0.0 {
            return out;
        }
        let uphi = ys.atan2(yz);
        let mut push = |r: f64, x3: f64, region: RegionId| {
            if r >= 0.0 && r.hypot(x3) <= 3.0 {
                out.push(Preimage { r, x3, region });
            }
        };
        if uphi <= FRAC_PI_2 {
            let c = uphi.cos();
            // Region a: u_ρ = (1 − ρ) cos u_φ, φ = π − u_φ.
            if c > 0.0 && ur <= c {
                let rho = 1.0 - ur / c;
                let phi = PI - uphi;
                push(rho * phi.sin(), rho * phi.cos(), RegionId::A);
            }
            // Region e: u_ρ = (1 + ρ) cos φ.
            if c > 0.0 && ur >= c && ur <= 2.0 * c {
                let rho = ur / c - 1.0;
                push(rho * uphi.sin(), 1.0 + rho * uphi.cos(), RegionId::E);
            }
            // Region f: u_ρ = 2 cos φ + β(ρ − 1).
            if ur >= 2.0 * c {
                let rho = 1.0 + (ur - 2.0 * c) / self.config.beta;
                push(rho * uphi.sin(), 1.0 + rho * uphi.cos(), RegionId::F);
            }
        } else if uphi >= 0.75 * PI {
            // Region b: ρ = u_ρ + 1, φ = 2u_φ − π.
            let rho = ur + 1.0;
            let phi = 2.0 * uphi - PI;
            push(rho * phi.sin(), rho * phi.cos(), RegionId::B);
        } else {
            // Region d: u_φ = π − φ(z).
            let z = 3.0 * (4.0 * (PI - uphi) / PI - 1.0);
            if let Some((r, x3)) = self.fan.g_inverse(ur, z.clamp(0.0, 3.0)) {
                push(r, x3, RegionId::D);
            }
        }
        out
    }
}

impl AxisymmetricMap for LimitMap {
    fn name(&self) -> String {
        "limit".into()
    }

    fn regions(&self) -> Vec<RegionId> {
        RegionId::LIMIT.to_vec()
    }

    fn classify(&self, r: f64, x3: f64) -> Result<RegionId> {
        classify_limit_meridian(r, x3)
    }

    fn profile(&self, r: f64, x3: f64) -> Result<MeridianJet> {
        let region = classify_limit_meridian(r, x3)?;
        let center = match region {
            RegionId::E | RegionId::F => 1.0,
            _ => 0.0,
        };
        if region == RegionId::D {
            let (w, jg) = self.fan.g(r, x3)?;
            return Ok(self.d_jet([r, x3], w, &jg));
        }
        let rho = r.hypot(x3 - center);
        if rho == 0.0 {
            return Err(Error::OutOfDomain("singular point of the limit map".into()));
        }
        let phi = r.atan2(x3 - center);
        let (x, dx) = spherical_chart(rho, phi, center);
        Ok(self.sph_jet(region, rho, phi, [r, x3], &dx).with_position(x))
    }

    fn charts(&self, region: RegionId) -> Result<Vec<RegionChart>> {
        let me = *self;
        match region {
            RegionId::D => Ok(limit_d_charts(me)),
            _ => {
                let mut charts = limit_atlas_charts(region, Arc::new(move |r, x3, _| me.profile(r, x3)))?;
                // Use the native spherical parametrization for the jets (no inversion).
                let (center, phi_range, rho_range): (f64, (f64, f64), Arc<crate::maps::RhoRange>) = match region {
                    RegionId::A => (0.0, (FRAC_PI_2, PI), Arc::new(|_| (0.0, 1.0))),
                    RegionId::B => (0.0, (FRAC_PI_2, PI), Arc::new(|_| (1.0, 3.0))),
                    RegionId::E => (1.0, (0.0, FRAC_PI_2), Arc::new(|_| (0.0, 1.0))),
                    _ => (1.0, (0.0, FRAC_PI_2), Arc::new(|phi| (1.0, crate::maps::rho_to_domain_boundary(phi, 1.0)))),
                };
                let grading = charts[0].outer_grading.clone();
                charts[0] = spherical_region_chart(
                    region,
                    region.tag(),
                    center,
                    phi_range,
                    grading,
                    rho_range,
                    vec![GradeEdge { at: 0.0, min_cell: 1e-6 }, GradeEdge { at: 1.0, min_cell: 1e-6 }],
                    move |rho, phi, x, dx| Ok(me.sph_jet(region, rho, phi, x, dx)),
                );
                Ok(charts)
            }
        }
    }
}

impl MeridianJet {
    /// Same jet with the reference position replaced (used to carry chart positions).
    pub fn with_position(mut self, x: [f64; 2]) -> MeridianJet {
        self.r = x[0];
        self.x3 = x[1];
        self
    }
}

/// Charts of region d: three fan wedges and the strip r̂ ≥ 1.
fn limit_d_charts(map: LimitMap) -> Vec<RegionChart> {
    let (ab, ac) = map.fan.corner_params();
    let mut charts = Vec::new();
    for (name, lo, hi) in [("d_fan_lower", 0.0, ab), ("d_fan_middle", ab, ac), ("d_fan_upper", ac, 1.0)] {
        charts.push(RegionChart::rectangular(
            RegionId::D,
            name,
            (lo, hi),
            vec![GradeEdge { at: 0.0, min_cell: 1e-6 }, GradeEdge { at: 1.0, min_cell: 1e-6 }],
            (0.0, 1.0),
            vec![],
            Arc::new(move |a, mu| {
                let (jet, dp) = map.d_jet_fan(a, mu);
                Ok(ChartSample { r: jet.r, x3: jet.x3, weight: 2.0 * PI * jet.r * det2(&dp).abs(), jet })
            }),
        ));
    }
    charts.push(RegionChart {
        region: RegionId::D,
        name: "d_strip",
        outer: (0.0, 1.0),
        outer_breaks: vec![],
        outer_grading: vec![],
        inner: Arc::new(|x3: f64| InnerRange { lo: 1.0, hi: (9.0 - x3 * x3).sqrt(), breaks: vec![], grading: vec![] }),
        eval: Arc::new(move |x3, r| {
            let (w, jg) = map.fan.g(r, x3)?;
            let jet = map.d_jet([r, x3], w, &jg);
            Ok(ChartSample { r, x3, weight: 2.0 * PI * r, jet })
        }),
    });
    charts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::region_volume;
    use crate::kernels::{determinant, fd_jacobian_adaptive};
    use crate::quadrature::{integrate_charts, QuadSpec};
    use crate::sampling::halton;
    use nalgebra::Vector3;

    fn map() -> LimitMap {
        LimitMap::default()
    }

    fn at(r: f64, x3: f64) -> MeridianJet {
        map().profile(r, x3).unwrap()
    }

    #[test]
    fn region_examples() {
        let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14;
        assert!(close(at(0.0, -0.5).v, [0.0, 0.5]));
        assert!(close(at(0.0, -2.0).v, [0.0, -1.0]));
        assert!(close(at(0.0, 1.5).v, [0.0, 1.5]));
        let m = map();
        let det = |x: f64, z: f64| m.limit_det(&Vector3::new(x, 0.0, z)).unwrap();
        assert!((det(0.0, -0.5) - 1.0).abs() < 1e-14);
        assert!((det(0.0, -2.0) - 1.0 / 16.0).abs() < 1e-14);
        assert!((det(0.0, 1.5) - 9.0).abs() < 1e-13);
    }

    #[test]
    fn fan_corners_and_strip() {
        let fan = map().fan;
        let g = |r: f64, z: f64| fan.g(r, z).unwrap().0;
        let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
        assert!(close(g(1.0 - 1e-15, 0.0), [0.0, 0.0]));
        assert!(close(g(0.0, 0.0), [0.0, 1.0]));
        assert!(close(g(0.0, 1.0), [0.0, 2.0]));
        assert!(close(g(1.0 - 1e-15, 1.0), [0.0, 3.0]));
        assert!(close(g(2.0, 0.0), [1.0, 0.0]));
        assert!(close(g(2.0, 0.5), [1.5, 1.5]));
        // Affinity along the polyline: B′C′ maps to s = 0, z = 1 + x₃.
        for k in 0..=10 {
            let x3 = k as f64 / 10.0;
            assert!(close(g(0.0, x3), [0.0, 1.0 + x3]));
            assert!(close(g(x3, 0.0), [0.0, 1.0 - x3]));
            assert!(close(g(x3, 1.0), [0.0, 2.0 + x3]));
        }
    }

    #[test]
    fn fan_jacobian_bounds_and_inverse() {
        let fan = map().fan;
        let n = 200;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let r = (i as f64 + 0.5) / n as f64;
                let z = (j as f64 + 0.5) / n as f64;
                let (w, jg) = fan.g(r, z).unwrap();
                let d = det2(&jg);
                lo = lo.min(d);
                hi = hi.max(d);
                let (r2, z2) = fan.g_inverse(w[0], w[1]).unwrap();
                assert!((r2 - r).abs() < 1e-9 && (z2 - z).abs() < 1e-9, "({r},{z}) -> ({r2},{z2})");
            }
        }
        assert!(lo >= 1.0 / 50.0 && hi <= 50.0, "det range [{lo}, {hi}]");
    }

    #[test]
    fn analytic_jets_match_finite_differences() {
        let m = map();
        let mut worst: f64 = 0.0;
        for k in 0..5000u64 {
            let u = halton::<3>(k);
            let p = Vector3::new(3.0 * u[0] - 1.5, 0.0, 5.0 * u[1] - 2.5);
            let p = Vector3::new(p.x * (std::f64::consts::TAU * u[2]).cos(), p.x * (std::f64::consts::TAU * u[2]).sin(), p.z);
            let c = cart_to_cyl(&p);
            if p.norm() > 2.95 || c.r < 1e-3 || p.norm() < 1e-2 || (p - Vector3::z()).norm() < 1e-2 {
                continue;
            }
            let analytic = m.eval(&p).unwrap().grad;
            let tag = |q: &CartesianPoint| -> Result<(CartesianPoint, (RegionId, FanPiece))> {
                let cq = cart_to_cyl(q);
                let jet = m.profile(cq.r, cq.x3)?;
                let piece = if jet.region == RegionId::D { m.fan.piece(cq.r, cq.x3) } else { FanPiece::Strip };
                Ok((jet.value(cq.theta), (jet.region, piece)))
            };
            let fd = fd_jacobian_adaptive(tag, &p, 1e-5, true).unwrap();
            let err = (analytic - fd).abs().max() / (1.0 + fd.norm());
            worst = worst.max(err);
            let d = determinant(&analytic);
            assert!(d > 0.0, "det {d} at {p:?}");
            if m.classify(c.r, c.x3).unwrap() != RegionId::D {
                assert!((m.limit_det(&p).unwrap() - d).abs() < 1e-8 * d.abs().max(1.0));
            }
        }
        assert!(worst < 1e-4, "worst FD mismatch {worst}");
    }

    #[test]
    fn interfaces_are_continuous() {
        let m = map();
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let t = (k as f64 + 0.5) / 1000.0;
            let pairs = [
                // a/b at ρ = 1, x₃ < 0.
                ((PI / 2.0 + t * PI / 2.0).sin(), (PI / 2.0 + t * PI / 2.0).cos()),
                // b/d at x₃ = 0, 1 < r < 3.
                (1.0 + 2.0 * t, 0.0),
                // a/d at x₃ = 0, r < 1.
                (t, 0.0),
                // d/e at x₃ = 1, r < 1.
                (t, 1.0),
                // d/f at x₃ = 1, 1 < r < √8.
                (1.0 + (8f64.sqrt() - 1.0) * t, 1.0),
                // e/f at |x − P| = 1.
                ((t * PI / 2.0).sin(), 1.0 + (t * PI / 2.0).cos()),
            ];
            for (r, z) in pairs {
                let below = m.profile(r * (1.0 - 1e-14) - 1e-14, z - 1e-14).unwrap().v;
                let above = m.profile(r * (1.0 + 1e-14) + 1e-14, z + 1e-14).unwrap().v;
                worst = worst.max((below[0] - above[0]).abs().max((below[1] - above[1]).abs()));
            }
        }
        assert!(worst < 1e-10, "worst jump {worst}");
    }

    #[test]
    fn bubble_is_reached_from_both_singular_points() {
        let m = map();
        for k in 0..50 {
            let t = (k as f64 + 0.5) / 50.0;
            for (center, phi) in [(0.0, PI / 2.0 + t * PI / 2.0), (1.0, t * PI / 2.0)] {
                let mut prev = f64::INFINITY;
                for delta in [1e-2, 1e-3, 1e-4] {
                    let jet = m.profile(delta * phi.sin(), center + delta * phi.cos()).unwrap();
                    let dist = (jet.v[0].hypot(jet.v[1] - 0.5) - 0.5).abs();
                    assert!(dist <= 1.01 * delta && dist < prev);
                    prev = dist;
                }
            }
        }
    }

    #[test]
    fn preimages_invert_the_map() {
        let m = map();
        for k in 0..3000u64 {
            let u = halton::<2>(k);
            let (r, z) = (2.9 * u[0] + 1e-3, 5.8 * u[1] - 2.9);
            if r.hypot(z) >= 2.99 {
                continue;
            }
            let Ok(jet) = m.profile(r, z) else { continue };
            let pre = m.preimages(jet.v[0], jet.v[1]);
            assert_eq!(pre.len(), 1, "({r},{z}) -> {:?}: {pre:?}", jet.v);
            assert!((pre[0].r - r).abs() < 1e-8 && (pre[0].x3 - z).abs() < 1e-8, "({r},{z}) vs {:?}", pre[0]);
        }
    }

    #[test]
    fn chart_volumes() {
        let spec = QuadSpec::default();
        for region in RegionId::LIMIT {
            let charts = map().charts(region).unwrap();
            let vol = integrate_charts(&charts, |_| 1.0, &spec).unwrap();
            let exact = region_volume(region, 0.0);
            assert!((vol.value - exact).abs() < 1e-8 * exact, "{region}: {} vs {exact}", vol.value);
        }
    }
}
