//! Differential kernels for axisymmetric maps, matrix utilities and a
//! finite-difference oracle.
//!
//! An axisymmetric map u(r,θ,x₃) = v₁(r,x₃) e_r(θ) + v₂(r,x₃) e₃ is described by
//! its *profile* on the meridian half-plane. In the frame pair
//! (e_r, e_θ, e₃) × (e_r, e_θ, e₃) its differential is
//!
//! ```text
//!        ┌ ∂_r v₁    0      ∂₃ v₁ ┐
//! Du  =  │   0     v₁ / r     0   │ ,      det Du = (v₁ / r) · det Dv,
//!        └ ∂_r v₂    0      ∂₃ v₂ ┘
//! ```
//!
//! which is the representation carried by [`MeridianJet`]. Spherical profiles
//! (u_ρ, u_φ) are converted to it by [`polar_image`]. Every gradient that
//! leaves this module is a Cartesian 3×3 matrix.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CartesianPoint, Frame, RegionId};

/// 2×2 matrix as nested rows.
pub type Mat2 = [[f64; 2]; 2];

/// Determinant of a 2×2 matrix.
pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Product of two 2×2 matrices.
pub fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Inverse of a 2×2 matrix (no singularity check; callers use non-degenerate charts).
pub fn inv2(m: &Mat2) -> Mat2 {
    let d = det2(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

/// Two profile values and their partials with respect to two chart coordinates:
/// `d[i][j] = ∂ vals[i] / ∂ coord[j]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileJet {
    pub vals: [f64; 2],
    pub d: Mat2,
}

/// Map value and Cartesian gradient at a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub point: CartesianPoint,
    pub value: CartesianPoint,
    pub grad: Matrix3<f64>,
    /// Which chart produced the jet.
    pub frame_note: RegionId,
}

/// Meridian jet of an axisymmetric map at (r, x₃) on the θ = 0 half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeridianJet {
    pub r: f64,
    pub x3: f64,
    /// Image profile (v₁, v₂) = (radial, axial) components of u.
    pub v: [f64; 2],
    /// ∂(v₁,v₂)/∂(r,x₃).
    pub d: Mat2,
    /// Hoop stretch v₁/r (its axis limit ∂_r v₁ at r = 0).
    pub hoop: f64,
    /// det Dv, kept separately because chart jets can have entries many orders of
    /// magnitude larger than their determinant.
    pub jdet: f64,
    pub region: RegionId,
}

impl MeridianJet {
    /// Builds the jet from a chart (a,b) ↦ x = (r,x₃) and the image v(a,b),
    /// using the chain rule Dv/Dx = (Dv/D(a,b)) · (Dx/D(a,b))⁻¹; the determinant is
    /// taken as the quotient det(Dv/D(a,b)) / det(Dx/D(a,b)).
    pub fn from_chart(x: [f64; 2], dx: &Mat2, v: [f64; 2], dv: &Mat2, region: RegionId) -> MeridianJet {
        let d = mul2(dv, &inv2(dx));
        MeridianJet { jdet: det2(dv) / det2(dx), ..MeridianJet::new(x, v, d, region) }
    }

    /// Builds the jet from meridian derivatives directly.
    pub fn new(x: [f64; 2], v: [f64; 2], d: Mat2, region: RegionId) -> MeridianJet {
        let hoop = if x[0] > 0.0 { v[0] / x[0] } else { d[0][0] };
        MeridianJet { r: x[0], x3: x[1], v, d, hoop, jdet: det2(&d), region }
    }

    /// The identity jet at (r, x₃).
    pub fn identity(r: f64, x3: f64, region: RegionId) -> MeridianJet {
        MeridianJet::new([r, x3], [r, x3], [[1.0, 0.0], [0.0, 1.0]], region)
    }

    /// det Du = (v₁/r) det Dv.
    pub fn det(&self) -> f64 {
        self.hoop * self.jdet
    }

    /// |Du|² = |Dv|² + (v₁/r)².
    pub fn dirichlet(&self) -> f64 {
        let d = &self.d;
        d[0][0] * d[0][0] + d[0][1] * d[0][1] + d[1][0] * d[1][0] + d[1][1] * d[1][1] + self.hoop * self.hoop
    }

    /// Reference point at angle θ.
    pub fn point(&self, theta: f64) -> CartesianPoint {
        let (s, c) = theta.sin_cos();
        Vector3::new(self.r * c, self.r * s, self.x3)
    }

    /// Image point at angle θ.
    pub fn value(&self, theta: f64) -> CartesianPoint {
        let (s, c) = theta.sin_cos();
        Vector3::new(self.v[0] * c, self.v[0] * s, self.v[1])
    }

    /// The Cartesian gradient at angle θ.
    pub fn grad(&self, theta: f64) -> Matrix3<f64> {
        let frame = Frame::cylindrical(theta);
        let rot = Matrix3::from_columns(&frame.0);
        let d = &self.d;
        let m = Matrix3::new(d[0][0], 0.0, d[0][1], 0.0, self.hoop, 0.0, d[1][0], 0.0, d[1][1]);
        rot * m * rot.transpose()
    }

    /// Full Cartesian jet at angle θ.
    pub fn to_jet(&self, theta: f64) -> Jet {
        Jet { point: self.point(theta), value: self.value(theta), grad: self.grad(theta), frame_note: self.region }
    }
}

/// Image of a spherical profile about the origin: v = u_ρ (sin u_φ, cos u_φ),
/// together with its derivatives given those of (u_ρ, u_φ) with respect to two
/// chart coordinates.
pub fn polar_image(u_rho: f64, u_phi: f64, d_rho: [f64; 2], d_phi: [f64; 2]) -> ([f64; 2], Mat2) {
    let (s, c) = u_phi.sin_cos();
    let v = [u_rho * s, u_rho * c];
    let dv = [
        [d_rho[0] * s + u_rho * c * d_phi[0], d_rho[1] * s + u_rho * c * d_phi[1]],
        [d_rho[0] * c - u_rho * s * d_phi[0], d_rho[1] * c - u_rho * s * d_phi[1]],
    ];
    (v, dv)
}

fn frame_matrix(f: &Frame) -> Matrix3<f64> {
    Matrix3::from_columns(&f.0)
}

/// Du for a cylindrical profile (v₁, v₂)(r, x₃) in the cylindrical frame pair, rotated to Cartesian.
pub fn grad_cyl_cyl(pj: &ProfileJet, r: f64, theta: f64) -> Result<Matrix3<f64>> {
    if r <= 0.0 {
        return Err(Error::AxisSingular);
    }
    let jet = MeridianJet { r, x3: 0.0, v: pj.vals, d: pj.d, hoop: pj.vals[0] / r, jdet: det2(&pj.d), region: RegionId::D };
    Ok(jet.grad(theta))
}

/// det Du = (v₁/r) det Dv for a cylindrical profile.
pub fn det_cyl_cyl(pj: &ProfileJet, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::AxisSingular);
    }
    Ok(pj.vals[0] / r * det2(&pj.d))
}

/// Du for a spherical profile (u_ρ, u_φ)(ρ, φ) in the spherical frame pair, rotated to Cartesian.
pub fn grad_sph_sph(pj: &ProfileJet, rho: f64, theta: f64, phi: f64) -> Result<Matrix3<f64>> {
    if rho <= 0.0 || phi <= 0.0 || phi >= std::f64::consts::PI {
        return Err(Error::AxisSingular);
    }
    let [u_rho, u_phi] = pj.vals;
    let d = &pj.d;
    // Frame order (e_ρ, e_φ, e_θ) on both sides.
    let m = Matrix3::new(
        d[0][0],
        d[0][1] / rho,
        0.0,
        u_rho * d[1][0],
        u_rho * d[1][1] / rho,
        0.0,
        0.0,
        0.0,
        u_rho * u_phi.sin() / (rho * phi.sin()),
    );
    let target = frame_matrix(&Frame::spherical(theta, u_phi));
    let source = frame_matrix(&Frame::spherical(theta, phi));
    Ok(target * m * source.transpose())
}

/// det Du = u_ρ² sin u_φ / (ρ² sin φ) · (∂_ρ u_ρ ∂_φ u_φ − ∂_φ u_ρ ∂_ρ u_φ).
pub fn det_sph_sph(pj: &ProfileJet, rho: f64, phi: f64) -> Result<f64> {
    if rho <= 0.0 || phi <= 0.0 || phi >= std::f64::consts::PI {
        return Err(Error::AxisSingular);
    }
    let [u_rho, u_phi] = pj.vals;
    Ok(u_rho * u_rho * u_phi.sin() / (rho * rho * phi.sin()) * det2(&pj.d))
}

/// Du for a spherical image profile (u_ρ, u_φ) given as functions of cylindrical (r, x₃).
pub fn grad_cyl_sph(pj: &ProfileJet, r: f64, theta: f64) -> Result<Matrix3<f64>> {
    let (v, dv) = polar_image(pj.vals[0], pj.vals[1], pj.d[0], pj.d[1]);
    grad_cyl_cyl(&ProfileJet { vals: v, d: dv }, r, theta)
}

/// det Du = u_ρ² sin u_φ / r · (∂_r u_φ ∂₃ u_ρ − ∂_r u_ρ ∂₃ u_φ).
pub fn det_cyl_sph(pj: &ProfileJet, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::AxisSingular);
    }
    let [u_rho, u_phi] = pj.vals;
    let d = &pj.d;
    Ok(u_rho * u_rho * u_phi.sin() / r * (d[1][0] * d[0][1] - d[0][0] * d[1][1]))
}

/// Cofactor matrix, cof(M)_{ij} = (−1)^{i+j} · minor_{ij}, so that M · cof(M)ᵀ = det(M) I.
pub fn cofactor(m: &Matrix3<f64>) -> Matrix3<f64> {
    let a = |i: usize, j: usize| m[(i % 3, j % 3)];
    Matrix3::from_fn(|i, j| {
        // Cyclic index trick: the signed minor equals the 2×2 determinant of the
        // cyclically following rows and columns.
        a(i + 1, j + 1) * a(i + 2, j + 2) - a(i + 1, j + 2) * a(i + 2, j + 1)
    })
}

/// Determinant of a 3×3 matrix.
pub fn determinant(m: &Matrix3<f64>) -> f64 {
    m.determinant()
}

/// Dirichlet density |M|² = Σ entries².
pub fn dirichlet_density(m: &Matrix3<f64>) -> f64 {
    m.norm_squared()
}

/// Area–energy residual ½|M|² − |cof(M) e₃| (non-negative for every matrix).
pub fn area_energy_residual(m: &Matrix3<f64>) -> f64 {
    0.5 * m.norm_squared() - (cofactor(m) * Vector3::z()).norm()
}

/// Central-difference Jacobian of `map` at `p` with step `h`.
///
/// `map` returns the value together with a piece tag; if any stencil point
/// reports a different tag than the centre, the stencil straddles an interface
/// and [`Error::StepTooLarge`] is returned. With `richardson`, the estimate is
/// extrapolated from steps h and h/2: (4 J_{h/2} − J_h)/3.
pub fn fd_jacobian<F, T>(map: F, p: &CartesianPoint, h: f64, richardson: bool) -> Result<Matrix3<f64>>
where
    F: Fn(&CartesianPoint) -> Result<(CartesianPoint, T)>,
    T: PartialEq,
{
    let (_, tag) = map(p)?;
    let central = |step: f64| -> Result<Matrix3<f64>> {
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = step;
            let (plus, tp) = map(&(p + e))?;
            let (minus, tm) = map(&(p - e))?;
            if tp != tag || tm != tag {
                return Err(Error::StepTooLarge);
            }
            jac.set_column(k, &((plus - minus) / (2.0 * step)));
        }
        Ok(jac)
    };
    let coarse = central(h)?;
    if !richardson {
        return Ok(coarse);
    }
    let fine = central(h / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// [`fd_jacobian`] with interface-aware step shrinking: the step is halved
/// (up to ten times) while the stencil straddles an interface.
pub fn fd_jacobian_adaptive<F, T>(map: F, p: &CartesianPoint, h: f64, richardson: bool) -> Result<Matrix3<f64>>
where
    F: Fn(&CartesianPoint) -> Result<(CartesianPoint, T)>,
    T: PartialEq,
{
    let mut step = h;
    for _ in 0..10 {
        match fd_jacobian(&map, p, step, richardson) {
            Err(Error::StepTooLarge) => step /= 2.0,
            other => return other,
        }
    }
    Err(Error::StepTooLarge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut impl Rng, scale: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    /// Oracle: cofactors from explicit signed minors.
    fn cofactor_by_minors(m: &Matrix3<f64>) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| {
            let rows: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let cols: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let minor = m[(rows[0], cols[0])] * m[(rows[1], cols[1])] - m[(rows[0], cols[1])] * m[(rows[1], cols[0])];
            if (i + j) % 2 == 0 {
                minor
            } else {
                -minor
            }
        })
    }

    #[test]
    fn cofactor_examples() {
        assert_eq!(cofactor(&Matrix3::identity()), Matrix3::identity());
        let d = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 5.0));
        assert_eq!(cofactor(&d), Matrix3::from_diagonal(&Vector3::new(15.0, 10.0, 6.0)));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let m = random_matrix(&mut rng, 3.0);
            let c = cofactor(&m);
            assert!((c - cofactor_by_minors(&m)).abs().max() < 1e-12);
            let adj = c.transpose();
            assert!((m * adj - Matrix3::identity() * determinant(&m)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn area_energy_examples() {
        assert!((area_energy_residual(&Matrix3::identity()) - 0.5).abs() < 1e-15);
        // Conformal on horizontal planes, no vertical derivative.
        let (s, c) = 0.7f64.sin_cos();
        let m = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 2.0, -2.0, 0.0);
        assert!(area_energy_residual(&m).abs() < 1e-12);
        let m = Matrix3::new(2.0 * c, -2.0 * s, 0.0, 2.0 * s, 2.0 * c, 0.0, 0.0, 0.0, 0.0);
        assert!(area_energy_residual(&m).abs() < 1e-12);
    }

    #[test]
    fn area_energy_residual_is_nonnegative() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for k in 0..100_000 {
            let m = random_matrix(&mut rng, 1.0 + (k % 7) as f64);
            assert!(area_energy_residual(&m) >= -1e-9 * (1.0 + m.norm_squared()));
        }
    }

    #[test]
    fn identity_and_scaling_profiles() {
        let pj = ProfileJet { vals: [0.7, 0.2], d: [[1.0, 0.0], [0.0, 1.0]] };
        let g = grad_cyl_cyl(&pj, 0.7, 1.1).unwrap();
        assert!((g - Matrix3::identity()).abs().max() < 1e-14);
        let pj = ProfileJet { vals: [1.4, 0.2], d: [[2.0, 0.0], [0.0, 1.0]] };
        assert!((det_cyl_cyl(&pj, 0.7).unwrap() - 4.0).abs() < 1e-14);
        assert!((determinant(&grad_cyl_cyl(&pj, 0.7, 2.0).unwrap()) - 4.0).abs() < 1e-12);
        assert_eq!(grad_cyl_cyl(&pj, 0.0, 0.0), Err(Error::AxisSingular));

        let pj = ProfileJet { vals: [0.8, 1.0], d: [[1.0, 0.0], [0.0, 1.0]] };
        let g = grad_sph_sph(&pj, 0.8, 0.4, 1.0).unwrap();
        assert!((g - Matrix3::identity()).abs().max() < 1e-14);
        assert!((det_sph_sph(&pj, 0.8, 1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_in_disguise_through_cyl_sph() {
        let (r, x3): (f64, f64) = (0.6, 0.45);
        let rho = r.hypot(x3);
        let pj = ProfileJet {
            vals: [rho, r.atan2(x3)],
            d: [[r / rho, x3 / rho], [x3 / (rho * rho), -r / (rho * rho)]],
        };
        assert!((det_cyl_sph(&pj, r).unwrap() - 1.0).abs() < 1e-10);
        assert!((grad_cyl_sph(&pj, r, 0.3).unwrap() - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn region_a_limit_profile_det_is_positive() {
        // u_φ = π − φ, u_ρ = (1 − ρ) cos u_φ: det = (1−ρ)² ρ⁻² cos³(u_φ).
        let (rho, phi): (f64, f64) = (0.5, 2.5);
        let u_phi = std::f64::consts::PI - phi;
        let pj = ProfileJet {
            vals: [(1.0 - rho) * u_phi.cos(), u_phi],
            d: [[-u_phi.cos(), (1.0 - rho) * u_phi.sin()], [0.0, -1.0]],
        };
        let expected = (1.0 - rho).powi(2) / (rho * rho) * u_phi.cos().powi(3);
        assert!((det_sph_sph(&pj, rho, phi).unwrap() - expected).abs() < 1e-12);
        assert!(expected > 0.0);
    }

    /// A smooth non-trivial cylindrical profile with analytic derivatives.
    fn sample_profile(r: f64, x3: f64) -> ProfileJet {
        let v1 = r * (1.0 + 0.3 * x3 + 0.1 * r * r);
        let v2 = x3 + 0.2 * r * r + 0.1 * x3.sin();
        ProfileJet {
            vals: [v1, v2],
            d: [[1.0 + 0.3 * x3 + 0.3 * r * r, 0.3 * r], [0.4 * r, 1.0 + 0.1 * x3.cos()]],
        }
    }

    fn sample_map(p: &CartesianPoint) -> Result<(CartesianPoint, u8)> {
        let r = p.x.hypot(p.y);
        let pj = sample_profile(r, p.z);
        let scale = if r > 0.0 { pj.vals[0] / r } else { 1.0 };
        Ok((Vector3::new(p.x * scale, p.y * scale, pj.vals[1]), 0))
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r: f64 = rng.random_range(0.1..2.0);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x3 = rng.random_range(-1.0..1.0);
            let p = Vector3::new(r * theta.cos(), r * theta.sin(), x3);
            let analytic = grad_cyl_cyl(&sample_profile(r, x3), r, theta).unwrap();
            let fd = fd_jacobian(sample_map, &p, 1e-5, true).unwrap();
            assert!((analytic - fd).abs().max() < 1e-6 * (1.0 + fd.norm()));
            let pj = sample_profile(r, x3);
            assert!((det_cyl_cyl(&pj, r).unwrap() - determinant(&analytic)).abs() < 1e-10);
        }
    }

    #[test]
    fn spherical_kernels_match_finite_differences() {
        // u_ρ = ρ(1 + 0.2 cos φ), u_φ = φ + 0.1 sin φ · ρ.
        let profile = |rho: f64, phi: f64| ProfileJet {
            vals: [rho * (1.0 + 0.2 * phi.cos()), phi + 0.1 * phi.sin() * rho],
            d: [[1.0 + 0.2 * phi.cos(), -0.2 * rho * phi.sin()], [0.1 * phi.sin(), 1.0 + 0.1 * phi.cos() * rho]],
        };
        let map = |p: &CartesianPoint| -> Result<(CartesianPoint, u8)> {
            let s = crate::geometry::cart_to_sph(p, &Vector3::zeros());
            let pj = profile(s.rho, s.phi);
            let img = crate::geometry::SphericalPoint { rho: pj.vals[0], theta: s.theta, phi: pj.vals[1], center: Vector3::zeros() };
            Ok((crate::geometry::sph_to_cart(&img), 0))
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let rho: f64 = rng.random_range(0.2..2.0);
            let phi: f64 = rng.random_range(0.2..2.9);
            let theta: f64 = rng.random_range(0.0..6.0);
            let p = crate::geometry::sph_to_cart(&crate::geometry::SphericalPoint { rho, theta, phi, center: Vector3::zeros() });
            let analytic = grad_sph_sph(&profile(rho, phi), rho, theta, phi).unwrap();
            let fd = fd_jacobian(map, &p, 1e-5, true).unwrap();
            assert!((analytic - fd).abs().max() < 1e-5 * (1.0 + fd.norm()));
            let d = det_sph_sph(&profile(rho, phi), rho, phi).unwrap();
            assert!((d - determinant(&analytic)).abs() < 1e-10 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn fd_detects_interfaces() {
        let step = |p: &CartesianPoint| -> Result<(CartesianPoint, bool)> { Ok((*p, p.z > 0.0)) };
        let p = Vector3::new(0.3, 0.0, 1e-6);
        assert_eq!(fd_jacobian(step, &p, 1e-5, false), Err(Error::StepTooLarge));
        let j = fd_jacobian_adaptive(step, &p, 1e-5, false).unwrap();
        assert!((j - Matrix3::identity()).abs().max() < 1e-9);
    }

    proptest! {
        #[test]
        fn linear_maps_are_recovered_exactly(entries in proptest::collection::vec(-2.0f64..2.0, 9)) {
            let a = Matrix3::from_row_slice(&entries);
            let map = |p: &CartesianPoint| -> Result<(CartesianPoint, ())> { Ok((a * p, ())) };
            let j = fd_jacobian(map, &Vector3::new(0.1, -0.4, 0.7), 1e-3, false).unwrap();
            prop_assert!((j - a).abs().max() < 1e-10);
        }

        #[test]
        fn meridian_det_matches_cartesian_det(v in -2.0f64..2.0, d in proptest::collection::vec(-2.0f64..2.0, 4), theta in 0.0f64..std::f64::consts::TAU) {
            let jet = MeridianJet::new([0.5, 0.1], [v, 0.3], [[d[0], d[1]], [d[2], d[3]]], RegionId::D);
            let g = jet.grad(theta);
            prop_assert!((determinant(&g) - jet.det()).abs() < 1e-12);
            prop_assert!((dirichlet_density(&g) - jet.dirichlet()).abs() < 1e-12);
        }
    }
}
