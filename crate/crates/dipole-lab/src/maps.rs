//! The common interface of axisymmetric maps and the identity map.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{
    cart_to_cyl, classify_limit_meridian, spherical_chart, CartesianPoint, ChartSample, GradeEdge, InnerRange,
    RegionChart, RegionId,
};
use crate::kernels::{Jet, MeridianJet};

/// An axisymmetric map of B(0,3), evaluated on the θ = 0 meridian and rotated.
pub trait AxisymmetricMap: Sync + Send {
    /// Human-readable name, used in reports.
    fn name(&self) -> String;

    /// Regions of the map's atlas, in precedence order.
    fn regions(&self) -> Vec<RegionId>;

    /// Region containing the meridian point (interfaces resolved by precedence).
    fn classify(&self, r: f64, x3: f64) -> Result<RegionId>;

    /// Jet of the map at the meridian point (r, x₃).
    fn profile(&self, r: f64, x3: f64) -> Result<MeridianJet>;

    /// Charts covering a region; each chart evaluates the map natively in its coordinates.
    fn charts(&self, region: RegionId) -> Result<Vec<RegionChart>>;

    /// Value and Cartesian gradient at a point.
    fn eval(&self, p: &CartesianPoint) -> Result<Jet> {
        let c = cart_to_cyl(p);
        Ok(self.profile(c.r, c.x3)?.to_jet(c.theta))
    }

    /// Value together with the region tag (the form consumed by finite differences).
    fn value_tagged(&self, p: &CartesianPoint) -> Result<(CartesianPoint, RegionId)> {
        let c = cart_to_cyl(p);
        let jet = self.profile(c.r, c.x3)?;
        Ok((jet.value(c.theta), jet.region))
    }
}

/// Inner φ-range/ρ-range description for spherical charts.
pub type RhoRange = dyn Fn(f64) -> (f64, f64) + Send + Sync;

/// Chart in spherical coordinates about (0, c): outer φ ∈ [φ₀, φ₁], inner ρ ∈ rho_range(φ).
/// The jet function receives (ρ, φ, position, ∂position/∂(ρ,φ)).
#[allow(clippy::too_many_arguments)]
pub fn spherical_region_chart<J>(
    region: RegionId,
    name: &'static str,
    center_x3: f64,
    phi_range: (f64, f64),
    phi_grading: Vec<GradeEdge>,
    rho_range: Arc<RhoRange>,
    rho_grading: Vec<GradeEdge>,
    jet: J,
) -> RegionChart
where
    J: Fn(f64, f64, [f64; 2], &[[f64; 2]; 2]) -> Result<MeridianJet> + Send + Sync + 'static,
{
    let inner = move |phi: f64| {
        let (lo, hi) = rho_range(phi);
        InnerRange { lo, hi, breaks: vec![], grading: rho_grading.clone() }
    };
    RegionChart {
        region,
        name,
        outer: phi_range,
        outer_breaks: vec![],
        outer_grading: phi_grading,
        inner: Arc::new(inner),
        eval: Arc::new(move |phi, rho| {
            let (x, dx) = spherical_chart(rho, phi, center_x3);
            let j = jet(rho, phi, x, &dx)?;
            Ok(ChartSample { r: x[0], x3: x[1], weight: 2.0 * PI * rho * rho * phi.sin(), jet: j })
        }),
    }
}

/// Largest ρ along direction φ from (0, c) that stays inside B(0,3).
pub fn rho_to_domain_boundary(phi: f64, center_x3: f64) -> f64 {
    // |c e₃ + ρ (sinφ, cosφ)|² = 9  ⇒  ρ² + 2cρ cosφ + c² − 9 = 0.
    let b = center_x3 * phi.cos();
    -b + (b * b - center_x3 * center_x3 + 9.0).sqrt()
}

/// Geometric charts of the limit atlas carrying a user-supplied jet.
pub fn limit_atlas_charts<J>(region: RegionId, jet: Arc<J>) -> Result<Vec<RegionChart>>
where
    J: Fn(f64, f64, RegionId) -> Result<MeridianJet> + Send + Sync + 'static,
{
    let axis = vec![GradeEdge { at: 0.0, min_cell: 1e-6 }, GradeEdge { at: PI, min_cell: 1e-6 }];
    let j = jet.clone();
    let sph = move |rho: f64, phi: f64, x: [f64; 2], _: &[[f64; 2]; 2]| {
        let _ = (rho, phi);
        j(x[0], x[1], region)
    };
    Ok(match region {
        RegionId::A => vec![spherical_region_chart(region, "a", 0.0, (FRAC_PI_2, PI), axis, Arc::new(|_| (0.0, 1.0)), vec![], sph)],
        RegionId::B => vec![spherical_region_chart(region, "b", 0.0, (FRAC_PI_2, PI), axis, Arc::new(|_| (1.0, 3.0)), vec![], sph)],
        RegionId::E => vec![spherical_region_chart(region, "e", 1.0, (0.0, FRAC_PI_2), axis, Arc::new(|_| (0.0, 1.0)), vec![], sph)],
        RegionId::F => vec![spherical_region_chart(
            region,
            "f",
            1.0,
            (0.0, FRAC_PI_2),
            axis,
            Arc::new(|phi| (1.0, rho_to_domain_boundary(phi, 1.0))),
            vec![],
            sph,
        )],
        RegionId::D => {
            let inner = |x3: f64| InnerRange {
                lo: 0.0,
                hi: (9.0 - x3 * x3).sqrt(),
                breaks: vec![1.0],
                grading: vec![GradeEdge { at: 0.0, min_cell: 1e-6 }],
            };
            vec![RegionChart {
                region,
                name: "d",
                outer: (0.0, 1.0),
                outer_breaks: vec![],
                outer_grading: vec![],
                inner: Arc::new(inner),
                eval: Arc::new(move |x3, r| Ok(ChartSample { r, x3, weight: 2.0 * PI * r, jet: jet(r, x3, region)? })),
            }]
        }
        other => return Err(Error::OutOfDomain(format!("{other} is not a limit-atlas region"))),
    })
}

/// The identity map x ↦ x on the limit atlas.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl AxisymmetricMap for IdentityMap {
    fn name(&self) -> String {
        "identity".into()
    }

    fn regions(&self) -> Vec<RegionId> {
        RegionId::LIMIT.to_vec()
    }

    fn classify(&self, r: f64, x3: f64) -> Result<RegionId> {
        classify_limit_meridian(r, x3)
    }

    fn profile(&self, r: f64, x3: f64) -> Result<MeridianJet> {
        Ok(MeridianJet::identity(r, x3, classify_limit_meridian(r, x3)?))
    }

    fn charts(&self, region: RegionId) -> Result<Vec<RegionChart>> {
        limit_atlas_charts(region, Arc::new(|r, x3, reg| Ok(MeridianJet::identity(r, x3, reg))))
    }
}
