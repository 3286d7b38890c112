//! The incompressible recovery maps u_ε.
//!
//! Scalar building blocks (all on the scale ε, with α_ε = arctan ε):
//!
//! * f_ε(r) = arctan(r/ε²) + α_ε r/ε on [0, ε], a stereographic profile with
//!   f_ε(0) = 0, f_ε(ε) = π/2;
//! * g_ε = f_ε⁻¹ : [0, π/2] → [0, ε];
//! * h_ε(s, φ) = ε ((1−s) g/sinφ + sε) ((1−s) g′ cosφ + s(ε − g sinφ)) and its
//!   s-antiderivative H_ε (a cubic in s, integrated exactly);
//! * ω_ε : [0, 3] → [ε^γ, 6ε^γ], the radial position of the collapsed polyline;
//! * r̂ : the radial reparametrization of the slab region d_ε.
//!
//! Regions (meridian coordinates; P = (0,0,1)):
//!
//! | region | set | construction |
//! |--------|-----|--------------|
//! | c_ε | r < ε, 0 < x₃ < 1 | u_φ = f_ε(r), u_ρ³ = (cos f + 2ε^γ)³ + x₃ · 3r/(f′ sin f) |
//! | a′_ε | \|x\| < ε, x₃ < 0 | chart (s, φ); u_φ = φ, u_ρ³ = (cos φ + 2ε^γ)³ − 3H_ε(s, φ) |
//! | a_ε | ε < \|x\| < 1, x₃ < 0 | interpolation between a′_ε at ρ = ε and ε^γ at ρ = 1 |
//! | b | 1 ≤ \|x\| ≤ 3, x₃ ≤ 0 | ε^γ ψ(ε^{−γ} φ_ε) |
//! | e′_ε | \|x − P\| < ε, x₃ > 1 | chart (s, φ); u_ρ³ = (cos φ + 2ε^γ)³ + 3g/(f′(g) sin φ) + 3H_ε |
//! | e_ε | ε < \|x − P\| < 1 | interpolation between e′_ε and 2cos φ + 6ε^γ |
//! | f | \|x − P\| ≥ 1, x₃ ≥ 1 | limit map + 6ε^γ radially |
//! | d_ε | r > ε, 0 < x₃ < 1 | (ω_ε(z) + s sin φ(z)) e_r − s cos φ(z) e₃ with (s, z) = g(r̂, x₃) |
//!
//! In c_ε, a′_ε and e′_ε the radial profile solves the incompressibility
//! equation, so det Du_ε ≡ 1 there. Every region provides an analytic jet;
//! the finite-difference oracle of [`crate::kernels`] cross-checks them.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    classify_recovery_meridian, spherical_chart, ChartSample, GradeEdge, InnerRange, RegionChart, RegionId,
};
use crate::kernels::{det2, inv2, mul2, polar_image, Mat2, MeridianJet};
use crate::limit_map::{wedge_angle, LimitMap, LimitMapConfig, WEDGE_SLOPE};
use crate::maps::{rho_to_domain_boundary, spherical_region_chart, AxisymmetricMap};
use crate::quadrature::GaussRule;
use crate::roots::{bisect, newton_bisect};

/// (ε, γ) and the derived constants of the recovery family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryParams {
    pub eps: f64,
    pub gamma: f64,
    /// α_ε = arctan ε.
    pub alpha: f64,
    /// ε^γ.
    pub eps_gamma: f64,
    /// η_ε = ((2ε^γ)³ + 3ε/f′_ε(ε))^{1/3}, the value of u_ρ on the c_ε/e′_ε corner circle.
    pub eta: f64,
    /// ε^{2γ}: radius below which r̂ is reparametrized.
    pub knee: f64,
}

/// Largest admissible γ.
pub const GAMMA_MAX: f64 = 1.0 / 3.0;

impl RecoveryParams {
    /// Validates 0 < ε ≤ 0.2, 0 < γ ≤ 1/3 and ε^{2−2γ} < 7/(9π√2).
    pub fn new(eps: f64, gamma: f64) -> Result<RecoveryParams> {
        if !(eps > 0.0 && eps <= 0.2) {
            return Err(Error::Config(format!("eps = {eps} must lie in (0, 0.2]")));
        }
        if !(gamma > 0.0 && gamma <= GAMMA_MAX + 1e-12) {
            return Err(Error::Config(format!("gamma = {gamma} must lie in (0, 1/3]")));
        }
        if eps.powf(2.0 - 2.0 * gamma) >= 7.0 / (9.0 * PI * SQRT_2) {
            return Err(Error::Config(format!("eps = {eps} too large for gamma = {gamma}")));
        }
        let alpha = eps.atan();
        let eps_gamma = eps.powf(gamma);
        let fp_eps = eps * eps / (eps.powi(4) + eps * eps) + alpha / eps;
        let eta = (8.0 * eps_gamma.powi(3) + 3.0 * eps / fp_eps).cbrt();
        Ok(RecoveryParams { eps, gamma, alpha, eps_gamma, eta, knee: eps.powf(2.0 * gamma) })
    }

    // ---------------------------------------------------------------- f_ε, g_ε

    /// f_ε(r) without domain check.
    pub fn f(&self, r: f64) -> f64 {
        let e2 = self.eps * self.eps;
        (r / e2).atan() + self.alpha * r / self.eps
    }

    /// f′_ε(r).
    pub fn fp(&self, r: f64) -> f64 {
        let e2 = self.eps * self.eps;
        e2 / (e2 * e2 + r * r) + self.alpha / self.eps
    }

    /// f″_ε(r).
    pub fn fpp(&self, r: f64) -> f64 {
        let e2 = self.eps * self.eps;
        -2.0 * e2 * r / (e2 * e2 + r * r).powi(2)
    }

    fn check_r(&self, r: f64) -> Result<()> {
        if !(0.0..=self.eps * (1.0 + 1e-14)).contains(&r) {
            return Err(Error::OutOfDomain(format!("r = {r} outside [0, eps]")));
        }
        Ok(())
    }

    /// f_ε(r) on [0, ε].
    pub fn f_eps(&self, r: f64) -> Result<f64> {
        self.check_r(r)?;
        Ok(self.f(r))
    }

    /// f′_ε(r) on [0, ε].
    pub fn f_eps_prime(&self, r: f64) -> Result<f64> {
        self.check_r(r)?;
        Ok(self.fp(r))
    }

    /// g_ε(φ) = f_ε⁻¹(φ) on [0, π/2].
    pub fn g_eps(&self, phi: f64) -> Result<f64> {
        if !(0.0..=FRAC_PI_2 * (1.0 + 1e-14)).contains(&phi) {
            return Err(Error::OutOfDomain(format!("phi = {phi} outside [0, pi/2]")));
        }
        self.g_solve(phi.min(FRAC_PI_2))
    }

    fn g_solve(&self, phi: f64) -> Result<f64> {
        if phi <= 0.0 {
            return Ok(0.0);
        }
        if phi >= FRAC_PI_2 {
            return Ok(self.eps);
        }
        newton_bisect(|r| (self.f(r) - phi, self.fp(r)), 0.0, self.eps, 1e-17 * self.eps, 80)
    }

    /// g_ε(φ), panicking only if the monotone inversion fails (it cannot for valid parameters).
    fn g(&self, phi: f64) -> f64 {
        self.g_solve(phi).expect("f_eps is strictly increasing")
    }

    /// g′_ε(φ) = 1/f′_ε(g(φ)).
    pub fn g_eps_prime(&self, phi: f64) -> Result<f64> {
        Ok(1.0 / self.fp(self.g_eps(phi)?))
    }

    /// g″_ε(φ) = −f″(g) g′³.
    pub fn g_eps_second(&self, phi: f64) -> Result<f64> {
        let g = self.g_eps(phi)?;
        let gp = 1.0 / self.fp(g);
        Ok(-self.fpp(g) * gp.powi(3))
    }

    /// All angle-dependent quantities of the a′/e′ charts at φ.
    pub fn angle(&self, phi: f64) -> AngleBlock {
        AngleBlock::new(self, phi)
    }

    /// h_ε(s, φ).
    pub fn h_eps(&self, s: f64, phi: f64) -> f64 {
        self.angle(phi).h(s)
    }

    /// H_ε(s, φ) = ∫₀ˢ h_ε(σ, φ) dσ.
    #[allow(non_snake_case)]
    pub fn H_eps(&self, s: f64, phi: f64) -> f64 {
        self.angle(phi).hh(s)
    }

    // ---------------------------------------------------------------- r̂, ω

    /// r̂(r): (r − ε) r / (ε^{2γ} − ε) for r ≤ ε^{2γ}, r beyond.
    pub fn r_hat(&self, r: f64) -> f64 {
        if r <= self.knee {
            (r - self.eps) * r / (self.knee - self.eps)
        } else {
            r
        }
    }

    /// dr̂/dr.
    pub fn r_hat_prime(&self, r: f64) -> f64 {
        if r <= self.knee {
            (2.0 * r - self.eps) / (self.knee - self.eps)
        } else {
            1.0
        }
    }

    /// Inverse of r̂ and its derivative: (r, dr/dr̂).
    pub fn r_of_rhat(&self, rhat: f64) -> (f64, f64) {
        if rhat <= self.knee {
            let r = 0.5 * (self.eps + (self.eps * self.eps + 4.0 * rhat * (self.knee - self.eps)).sqrt());
            (r, 1.0 / self.r_hat_prime(r))
        } else {
            (rhat, 1.0)
        }
    }

    /// ω_ε(ξ) and ω′_ε(ξ) on [0, 3].
    ///
    /// On [1, 2] this is the radial profile of c_ε on r = ε; on [0, 1] and
    /// [2, 3] it interpolates towards ε^γ and 6ε^γ with the same radial weights
    /// as the neighbouring regions a_ε and e_ε, which keeps u_ε continuous
    /// across x₃ = 0 and x₃ = 1.
    pub fn omega(&self, xi: f64) -> (f64, f64) {
        let eg = self.eps_gamma;
        let lin = |rhat: f64| {
            let (r, dr) = self.r_of_rhat(rhat);
            ((r - self.eps) / (1.0 - self.eps), dr / (1.0 - self.eps))
        };
        if xi <= 1.0 {
            let (lam, dlam) = lin((1.0 - xi).max(0.0));
            (eg * (2.0 - lam), eg * dlam)
        } else if xi <= 2.0 {
            let k = 3.0 * self.eps / self.fp(self.eps);
            let w = (8.0 * eg.powi(3) + (xi - 1.0) * k).cbrt();
            (w, k / (3.0 * w * w))
        } else {
            let (lam, dlam) = lin((xi - 2.0).min(1.0));
            ((1.0 - lam) * self.eta + lam * 6.0 * eg, (6.0 * eg - self.eta) * dlam)
        }
    }

    /// ω_ε(ξ).
    pub fn omega_eps(&self, xi: f64) -> f64 {
        self.omega(xi).0
    }

    /// z-values where ω_ε has a kink.
    pub fn omega_kinks(&self) -> [f64; 4] {
        [1.0 - self.knee, 1.0, 2.0, 2.0 + self.knee]
    }
}

/// Quantities of the a′_ε/e′_ε charts that depend only on φ:
/// A = g/sinφ, B = g′cosφ, C = ε − g sinφ and their φ-derivatives, so that
/// h_ε = ε P Q with P = (1−s)A + sε, Q = (1−s)B + sC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleBlock {
    pub eps: f64,
    pub phi: f64,
    pub g: f64,
    pub g1: f64,
    pub g2: f64,
    pub a: f64,
    pub a1: f64,
    pub b: f64,
    pub b1: f64,
    pub c: f64,
    pub c1: f64,
}

/// ∫₀ˢ (p₀ + p₁σ)(q₀ + q₁σ) dσ.
fn poly_int(p0: f64, p1: f64, q0: f64, q1: f64, s: f64) -> f64 {
    p0 * q0 * s + 0.5 * (p0 * q1 + p1 * q0) * s * s + p1 * q1 * s * s * s / 3.0
}

impl AngleBlock {
    fn new(p: &RecoveryParams, phi: f64) -> AngleBlock {
        let g = p.g(phi);
        let g1 = 1.0 / p.fp(g);
        let g2 = -p.fpp(g) * g1.powi(3);
        let (sp, cp) = phi.sin_cos();
        let a = if phi > 0.0 { g / sp } else { g1 };
        // A′ = (g′ sinφ − g cosφ)/sin²φ; the numerator equals ∫₀^φ (g″ + g) sin t dt,
        // which is used for small φ to avoid cancellation.
        let a1 = if phi <= 0.0 {
            0.0
        } else if phi < 0.05 {
            let rule = GaussRule::new(8);
            let num = rule.apply(
                |t| {
                    let gt = p.g(t);
                    let g1t = 1.0 / p.fp(gt);
                    (-p.fpp(gt) * g1t.powi(3) + gt) * t.sin()
                },
                0.0,
                phi,
            );
            num / (sp * sp)
        } else {
            (g1 * sp - g * cp) / (sp * sp)
        };
        AngleBlock {
            eps: p.eps,
            phi,
            g,
            g1,
            g2,
            a,
            a1,
            b: g1 * cp,
            b1: g2 * cp - g1 * sp,
            c: p.eps - g * sp,
            c1: -g1 * sp - g * cp,
        }
    }

    /// P(s) = (1−s)A + sε.
    pub fn p(&self, s: f64) -> f64 {
        (1.0 - s) * self.a + s * self.eps
    }

    /// Q(s) = (1−s)B + sC.
    pub fn q(&self, s: f64) -> f64 {
        (1.0 - s) * self.b + s * self.c
    }

    /// h_ε(s, φ) = ε P Q.
    pub fn h(&self, s: f64) -> f64 {
        self.eps * self.p(s) * self.q(s)
    }

    /// H_ε(s, φ).
    pub fn hh(&self, s: f64) -> f64 {
        self.eps * poly_int(self.a, self.eps - self.a, self.b, self.c - self.b, s)
    }

    /// ∂_φ h_ε(s, φ).
    pub fn dh_dphi(&self, s: f64) -> f64 {
        let dp = (1.0 - s) * self.a1;
        let dq = (1.0 - s) * self.b1 + s * self.c1;
        self.eps * (dp * self.q(s) + self.p(s) * dq)
    }

    /// ∂_φ H_ε(s, φ).
    pub fn dhh_dphi(&self, s: f64) -> f64 {
        self.eps
            * (poly_int(self.a1, -self.a1, self.b, self.c - self.b, s)
                + poly_int(self.a, self.eps - self.a, self.b1, self.c1 - self.b1, s))
    }

    /// K(φ) = 3g/(f′(g) sinφ) = 3 A g′ and K′(φ).
    pub fn k(&self) -> (f64, f64) {
        (3.0 * self.a * self.g1, 3.0 * (self.a1 * self.g1 + self.a * self.g2))
    }
}

/// Which of the two small-ball charts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cap {
    /// a′_ε below O.
    Lower,
    /// e′_ε above P.
    Upper,
}

/// The recovery map u_ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryMap {
    pub params: RecoveryParams,
    pub limit: LimitMap,
}

/// The bi-Lipschitz map ψ of the half-plane used in region b, with its Jacobian.
///
/// The input is a point q = (q_r, q₃) of the wedge {R ≥ √2, φ̄ ∈ [3π/4, π]}
/// written in polar coordinates (R, φ̄) about C = (0, 1). ψ = ψ₂ ∘ ψ₁:
///
/// * ψ₁ keeps φ̄ and maps R ∈ [√2, 2√2] affinely onto [m(φ̄), 2√2] with
///   m = −1/cos φ̄ (so the arc R = √2 lands on the line q₃ = 0), identity beyond;
/// * ψ₂, in polar coordinates (ρ, ω) about N = (0, −1) with ω measured from +e₃,
///   scales ρ by k(ω) = 1 + cos 2ω inside the cone ω ≤ π/4 (sending the line
///   q₃ = 0 onto the unit circle) and is the identity outside.
///
/// Properties: ψ = id on the half-line r = 1 + |x₃| (φ̄ = 3π/4) and for R ≥ 2√2;
/// the arc R = √2 is mapped onto the unit circle with ψ(φ̄) = (sin 2(π−φ̄), cos 2(π−φ̄)).
pub fn psi(q: [f64; 2]) -> Result<([f64; 2], Mat2)> {
    let d = [q[0], q[1] - 1.0];
    let big_r = d[0].hypot(d[1]);
    let phibar = d[0].atan2(d[1]);
    if big_r < SQRT_2 * (1.0 - 1e-12) || phibar < 0.75 * PI - 1e-12 {
        return Err(Error::OutOfDomain(format!("psi outside its wedge at {q:?}")));
    }
    let (sb, cb) = phibar.sin_cos();
    // Stage 1.
    let (q1, dq1) = if big_r < 2.0 * SQRT_2 {
        let m = -1.0 / cb;
        let dm = -sb / (cb * cb);
        let t = (big_r - SQRT_2) / SQRT_2;
        let r1 = m + t * (2.0 * SQRT_2 - m);
        let dr1_dr = (2.0 * SQRT_2 - m) / SQRT_2;
        let dr1_dphi = dm * (1.0 - t);
        let dpolar: Mat2 = [[dr1_dr * sb, dr1_dphi * sb + r1 * cb], [dr1_dr * cb, dr1_dphi * cb - r1 * sb]];
        let dq_polar: Mat2 = [[sb, big_r * cb], [cb, -big_r * sb]];
        ([r1 * sb, 1.0 + r1 * cb], mul2(&dpolar, &inv2(&dq_polar)))
    } else {
        (q, [[1.0, 0.0], [0.0, 1.0]])
    };
    // Stage 2.
    let e = [q1[0], q1[1] + 1.0];
    let rho = e[0].hypot(e[1]);
    let om = e[0].atan2(e[1]);
    if om >= FRAC_PI_4 || rho == 0.0 {
        return Ok((q1, dq1));
    }
    let (so, co) = om.sin_cos();
    let k = 1.0 + (2.0 * om).cos();
    let dk = -2.0 * (2.0 * om).sin();
    let out = [k * rho * so, -1.0 + k * rho * co];
    let d_out: Mat2 = [[k * so, dk * rho * so + k * rho * co], [k * co, dk * rho * co - k * rho * so]];
    let d_in: Mat2 = [[so, rho * co], [co, -rho * so]];
    let dpsi2 = mul2(&d_out, &inv2(&d_in));
    Ok((out, mul2(&dpsi2, &dq1)))
}

/// Which smooth piece of ψ contains q (stage-1 annulus and stage-2 cone flags).
fn psi_piece(q: [f64; 2]) -> u8 {
    let d = [q[0], q[1] - 1.0];
    let big_r = d[0].hypot(d[1]);
    let inner = big_r < 2.0 * SQRT_2;
    let q1 = if inner {
        let pb = d[0].atan2(d[1]);
        let m = -1.0 / pb.cos();
        let r1 = m + (big_r - SQRT_2) / SQRT_2 * (2.0 * SQRT_2 - m);
        [r1 * pb.sin(), 1.0 + r1 * pb.cos()]
    } else {
        q
    };
    let cone = q1[0].atan2(q1[1] + 1.0) < FRAC_PI_4;
    (inner as u8) * 2 + cone as u8
}

impl RecoveryMap {
    /// Recovery map with the default limit-map choices.
    pub fn new(params: RecoveryParams) -> RecoveryMap {
        RecoveryMap { params, limit: LimitMap::default() }
    }

    /// Recovery map with explicit limit-map choices (β and the fan).
    pub fn with_limit(params: RecoveryParams, config: LimitMapConfig) -> Result<RecoveryMap> {
        Ok(RecoveryMap { params, limit: LimitMap::new(config)? })
    }

    /// Shorthand for [`RecoveryParams::new`] followed by [`RecoveryMap::new`].
    pub fn from_eps(eps: f64, gamma: f64) -> Result<RecoveryMap> {
        Ok(RecoveryMap::new(RecoveryParams::new(eps, gamma)?))
    }

    // ---------------------------------------------------------------- c_ε

    /// Radial profile of c_ε: (u_ρ, ∂_r u_ρ, ∂₃ u_ρ) at (r, x₃).
    pub fn c_profile(&self, r: f64, x3: f64) -> (f64, f64, f64) {
        let p = &self.params;
        let f = p.f(r);
        let fp = p.fp(r);
        let fpp = p.fpp(r);
        let (sf, cf) = f.sin_cos();
        let base = cf + 2.0 * p.eps_gamma;
        let (k, dk) = if r > 0.0 {
            let den = fp * sf;
            (3.0 * r / den, 3.0 / den - 3.0 * r * (fpp * sf + fp * fp * cf) / (den * den))
        } else {
            (3.0 / (fp * fp), 0.0)
        };
        let u = (base.powi(3) + x3 * k).cbrt();
        let du_dr = (-3.0 * base * base * sf * fp + x3 * dk) / (3.0 * u * u);
        let du_dz = k / (3.0 * u * u);
        (u, du_dr, du_dz)
    }

    fn c_jet(&self, r: f64, x3: f64) -> MeridianJet {
        let p = &self.params;
        let (u, du_dr, du_dz) = self.c_profile(r, x3);
        let (v, dv) = polar_image(u, p.f(r), [du_dr, du_dz], [p.fp(r), 0.0]);
        MeridianJet::new([r, x3], v, dv, RegionId::CEps)
    }

    // ---------------------------------------------------------------- a′_ε, e′_ε

    fn cap_position(&self, cap: Cap, ab: &AngleBlock, s: f64) -> ([f64; 2], Mat2) {
        let eps = self.params.eps;
        let (sp, cp) = ab.phi.sin_cos();
        let r = (1.0 - s) * ab.g + s * eps * sp;
        let dr = [eps * sp - ab.g, (1.0 - s) * ab.g1 + s * eps * cp];
        match cap {
            Cap::Lower => ([r, -s * eps * cp], [dr, [-eps * cp, s * eps * sp]]),
            Cap::Upper => ([r, 1.0 + s * eps * cp], [dr, [eps * cp, -s * eps * sp]]),
        }
    }

    /// u_ρ and its (s, φ) partials in a′_ε or e′_ε.
    fn cap_profile(&self, cap: Cap, ab: &AngleBlock, s: f64) -> (f64, [f64; 2]) {
        let p = &self.params;
        let (sp, cp) = ab.phi.sin_cos();
        let base = cp + 2.0 * p.eps_gamma;
        match cap {
            Cap::Lower => {
                let u = (base.powi(3) - 3.0 * ab.hh(s)).cbrt();
                let uu = u * u;
                (u, [-ab.h(s) / uu, (-base * base * sp - ab.dhh_dphi(s)) / uu])
            }
            Cap::Upper => {
                let (k, dk) = ab.k();
                let u = (base.powi(3) + k + 3.0 * ab.hh(s)).cbrt();
                let uu = u * u;
                (u, [ab.h(s) / uu, (-3.0 * base * base * sp + dk + 3.0 * ab.dhh_dphi(s)) / (3.0 * uu)])
            }
        }
    }

    /// u_ρ and (∂_s u_ρ, ∂_φ u_ρ) at chart coordinates (s, φ) of a′_ε (`upper = false`) or e′_ε.
    pub fn cap_u_rho(&self, upper: bool, s: f64, phi: f64) -> (f64, [f64; 2]) {
        let cap = if upper { Cap::Upper } else { Cap::Lower };
        self.cap_profile(cap, &self.params.angle(phi), s)
    }

    /// Meridian position x(s, φ) = (r, x₃) of a′_ε or e′_ε and its Jacobian ∂x_i/∂(s, φ)_j.
    pub fn cap_geometry(&self, upper: bool, s: f64, phi: f64) -> ([f64; 2], Mat2) {
        let cap = if upper { Cap::Upper } else { Cap::Lower };
        self.cap_position(cap, &self.params.angle(phi), s)
    }

    fn cap_jet(&self, cap: Cap, ab: &AngleBlock, s: f64) -> (MeridianJet, Mat2) {
        let (x, dx) = self.cap_position(cap, ab, s);
        let (u, du) = self.cap_profile(cap, ab, s);
        let (v, dv) = polar_image(u, ab.phi, du, [0.0, 1.0]);
        let region = match cap {
            Cap::Lower => RegionId::APrimeEps,
            Cap::Upper => RegionId::EPrimeEps,
        };
        (MeridianJet::from_chart(x, &dx, v, &dv, region), dx)
    }

    /// Chart coordinates (s, φ) of a meridian point of a′_ε or e′_ε.
    fn cap_coords(&self, cap: Cap, r: f64, x3: f64) -> Result<(f64, f64)> {
        let p = &self.params;
        let eps = p.eps;
        // Depth below the cap's flat face (x₃ = 0 or x₃ = 1).
        let depth = match cap {
            Cap::Lower => -x3,
            Cap::Upper => x3 - 1.0,
        }
        .max(0.0);
        if depth == 0.0 {
            return Ok((0.0, p.f(r.min(eps))));
        }
        if r == 0.0 {
            return Ok(((depth / eps).min(1.0), 0.0));
        }
        // Points admitted by the classification slack just outside the ball sit on the rim s = 1.
        if r.hypot(depth) >= eps {
            return Ok((1.0, r.atan2(depth)));
        }
        let phi_max = (depth / eps).min(1.0).acos();
        let r_of = |phi: f64| {
            let s = depth / (eps * phi.cos());
            (1.0 - s) * p.g(phi) + s * eps * phi.sin() - r
        };
        let phi = bisect(r_of, 0.0, phi_max, 1e-15, 200)?;
        Ok(((depth / (eps * phi.cos())).min(1.0), phi))
    }

    // ---------------------------------------------------------------- a_ε, e_ε, f

    fn a_eps_jet(&self, rho: f64, phi: f64, x: [f64; 2], dx: &Mat2) -> MeridianJet {
        let p = &self.params;
        let phi1 = PI - phi;
        let ab = p.angle(phi1.clamp(0.0, FRAC_PI_2));
        let (sp, cp) = phi1.sin_cos();
        let base = cp + 2.0 * p.eps_gamma;
        let q = (base.powi(3) - 3.0 * ab.hh(1.0)).cbrt();
        let dq = (-base * base * sp - ab.dhh_dphi(1.0)) / (q * q);
        let w = (1.0 - rho) / (1.0 - p.eps);
        let u = w * q + p.eps_gamma * (rho - p.eps) / (1.0 - p.eps);
        let du = [(p.eps_gamma - q) / (1.0 - p.eps), -w * dq];
        let (v, dv) = polar_image(u, phi1, du, [0.0, -1.0]);
        MeridianJet::from_chart(x, dx, v, &dv, RegionId::AEps)
    }

    /// Outer boundary profile of e′_ε (s = 1) and its φ-derivative.
    fn e_prime_rim(&self, phi: f64) -> (f64, f64) {
        let ab = self.params.angle(phi.clamp(0.0, FRAC_PI_2));
        let (u, du) = self.cap_profile(Cap::Upper, &ab, 1.0);
        (u, du[1])
    }

    fn e_eps_jet(&self, rho: f64, phi: f64, x: [f64; 2], dx: &Mat2) -> MeridianJet {
        let p = &self.params;
        let (u1, du1) = self.e_prime_rim(phi);
        let (sp, cp) = phi.sin_cos();
        let outer = 2.0 * cp + 6.0 * p.eps_gamma;
        let w = (1.0 - rho) / (1.0 - p.eps);
        let w2 = (rho - p.eps) / (1.0 - p.eps);
        let u = w * u1 + w2 * outer;
        let du = [(outer - u1) / (1.0 - p.eps), w * du1 - w2 * 2.0 * sp];
        let (v, dv) = polar_image(u, phi, du, [0.0, 1.0]);
        MeridianJet::from_chart(x, dx, v, &dv, RegionId::EEps)
    }

    fn f_eps_jet(&self, rho: f64, phi: f64, x: [f64; 2], dx: &Mat2) -> MeridianJet {
        let beta = self.limit.config.beta;
        let u = 2.0 * phi.cos() + beta * (rho - 1.0) + 6.0 * self.params.eps_gamma;
        let (v, dv) = polar_image(u, phi, [beta, -2.0 * phi.sin()], [0.0, 1.0]);
        MeridianJet::from_chart(x, dx, v, &dv, RegionId::FEps)
    }

    // ---------------------------------------------------------------- b

    /// φ_ε(ρ, φ) scaled by ε^{−γ}: the point q = C + R(sin φ̄, cos φ̄) with
    /// R = (ρ − 1)ε^{−γ} + √2, φ̄ = (φ + π)/2, and ∂q/∂(ρ, φ).
    pub fn phi_eps_b(&self, rho: f64, phi: f64) -> ([f64; 2], Mat2) {
        let eg = self.params.eps_gamma;
        let big_r = (rho - 1.0) / eg + SQRT_2;
        let pb = 0.5 * (phi + PI);
        let (sb, cb) = pb.sin_cos();
        ([big_r * sb, 1.0 + big_r * cb], [[sb / eg, 0.5 * big_r * cb], [cb / eg, -0.5 * big_r * sb]])
    }

    fn b_jet(&self, rho: f64, phi: f64, x: [f64; 2], dx: &Mat2) -> Result<MeridianJet> {
        let eg = self.params.eps_gamma;
        let (q, dq) = self.phi_eps_b(rho, phi);
        let (w, dpsi) = psi(q)?;
        let dw = mul2(&dpsi, &dq);
        let v = [eg * w[0], eg * w[1]];
        let dv = [[eg * dw[0][0], eg * dw[0][1]], [eg * dw[1][0], eg * dw[1][1]]];
        Ok(MeridianJet::from_chart(x, dx, v, &dv, RegionId::BEps))
    }

    /// ρ where the ψ₂ cone boundary is crossed along the ray φ (a kink of Du_ε).
    fn b_cone_kink(&self, phi: f64) -> Option<f64> {
        let eg = self.params.eps_gamma;
        let hi = (1.0 + SQRT_2 * eg).min(3.0);
        let side = |rho: f64| {
            let (q, _) = self.phi_eps_b(rho, phi);
            if psi_piece(q) & 1 == 1 { 1.0 } else { -1.0 }
        };
        let (lo_side, hi_side) = (side(1.0 + 1e-15), side(hi));
        if lo_side == hi_side {
            return None;
        }
        bisect(side, 1.0, hi, 1e-14, 200).ok().filter(|r| *r > 1.0 && *r < hi)
    }

    // ---------------------------------------------------------------- d_ε

    fn d_image(&self, w: [f64; 2], dw: &Mat2) -> ([f64; 2], Mat2) {
        let (s, z) = (w[0], w[1]);
        let (om, dom) = self.params.omega(z);
        let (sp, cp) = wedge_angle(z).sin_cos();
        let v = [om + s * sp, -s * cp];
        let dv_dsz: Mat2 = [[sp, dom + s * cp * WEDGE_SLOPE], [-cp, s * sp * WEDGE_SLOPE]];
        (v, mul2(&dv_dsz, dw))
    }

    /// Region d_ε jet in fan coordinates (a, μ); returns the jet and ∂(r, x₃)/∂(a, μ).
    fn d_fan_jet(&self, a: f64, mu: f64) -> (MeridianJet, Mat2) {
        let (ph, dph) = self.limit.fan.position(a, mu);
        let (r, dr) = self.params.r_of_rhat(ph[0].max(0.0));
        let dx: Mat2 = [[dr * dph[0][0], dr * dph[0][1]], dph[1]];
        let (w, dw) = self.limit.fan.image(a, mu);
        let (v, dv) = self.d_image(w, &dw);
        (MeridianJet::from_chart([r, ph[1]], &dx, v, &dv, RegionId::DEps), dx)
    }

    fn d_strip_jet(&self, r: f64, x3: f64) -> Result<MeridianJet> {
        let (w, jg) = self.limit.fan.g(r, x3)?;
        let (v, dv) = self.d_image(w, &jg);
        Ok(MeridianJet::new([r, x3], v, dv, RegionId::DEps))
    }

    /// μ-breakpoints of the d_ε integrand along the fan ray a.
    fn d_fan_breaks(&self, a: f64) -> Vec<f64> {
        let p = &self.params;
        let fan = &self.limit.fan;
        let mut out = Vec::new();
        // r̂ = ε^{2γ} (kink of the radial reparametrization); r̂ is affine in μ along a ray.
        let start = fan.position(a, 0.0).0[0];
        let end = fan.position(a, 1.0).0[0];
        if (start - p.knee) * (end - p.knee) < 0.0 {
            out.push((p.knee - start) / (end - start));
        }
        // Kinks of ω at fixed z: z = t + μ(3a − t) is affine in μ.
        let z0 = fan.image(a, 0.0).0[1];
        let z1 = fan.image(a, 1.0).0[1];
        if (z1 - z0).abs() > 1e-300 {
            for zk in p.omega_kinks() {
                let mu = (zk - z0) / (z1 - z0);
                if mu > 0.0 && mu < 1.0 {
                    out.push(mu);
                }
            }
        }
        out.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        out
    }

    /// Jet at a meridian point, also reporting the smooth piece (for finite differences).
    pub fn profile_piece(&self, r: f64, x3: f64) -> Result<(MeridianJet, u8)> {
        let p = &self.params;
        let region = classify_recovery_meridian(r, x3, p.eps)?;
        let sph = |center: f64| {
            let rho = r.hypot(x3 - center);
            let phi = r.atan2(x3 - center);
            let (_, dx) = spherical_chart(rho, phi, center);
            (rho, phi, dx)
        };
        Ok(match region {
            RegionId::CEps => (self.c_jet(r, x3), 0),
            RegionId::APrimeEps | RegionId::EPrimeEps => {
                let cap = if region == RegionId::APrimeEps { Cap::Lower } else { Cap::Upper };
                let (s, phi) = self.cap_coords(cap, r, x3)?;
                let ab = p.angle(phi);
                (self.cap_jet(cap, &ab, s).0.with_position([r, x3]), 0)
            }
            RegionId::AEps => {
                let (rho, phi, dx) = sph(0.0);
                (self.a_eps_jet(rho, phi, [r, x3], &dx), 0)
            }
            RegionId::EEps => {
                let (rho, phi, dx) = sph(1.0);
                (self.e_eps_jet(rho, phi, [r, x3], &dx), 0)
            }
            RegionId::FEps => {
                let (rho, phi, dx) = sph(1.0);
                (self.f_eps_jet(rho, phi, [r, x3], &dx), 0)
            }
            RegionId::BEps => {
                let (rho, phi, dx) = sph(0.0);
                let (q, _) = self.phi_eps_b(rho, phi);
                let piece = psi_piece(q);
                (self.b_jet(rho, phi, [r, x3], &dx)?, piece)
            }
            _ => {
                let rhat = p.r_hat(r);
                if rhat >= 1.0 {
                    let z = 3.0 * x3;
                    let piece = 10 + p.omega_kinks().iter().filter(|k| z > **k).count() as u8;
                    (self.d_strip_jet(r, x3)?, piece)
                } else {
                    let (a, mu) = self.limit.fan.coords(rhat, x3);
                    let z = self.limit.fan.image(a, mu).0[1];
                    let piece = self.limit.fan.piece_of(a) as u8 * 16
                        + p.omega_kinks().iter().filter(|k| z > **k).count() as u8
                        + if rhat > p.knee { 8 } else { 0 };
                    (self.d_fan_jet(a, mu).0.with_position([r, x3]), 20 + piece)
                }
            }
        })
    }

    fn cap_chart(&self, cap: Cap) -> RegionChart {
        let me = *self;
        let region = match cap {
            Cap::Lower => RegionId::APrimeEps,
            Cap::Upper => RegionId::EPrimeEps,
        };
        let eps = self.params.eps;
        RegionChart::rectangular(
            region,
            region.tag(),
            (0.0, FRAC_PI_2),
            vec![GradeEdge { at: 0.0, min_cell: 1e-6 }, GradeEdge { at: FRAC_PI_2, min_cell: 1e-9 }],
            (0.0, 1.0),
            vec![GradeEdge { at: 0.0, min_cell: 1e-4 * eps }, GradeEdge { at: 1.0, min_cell: 1e-4 }],
            Arc::new(move |phi, s| {
                let ab = me.params.angle(phi);
                let (jet, dx) = me.cap_jet(cap, &ab, s);
                Ok(ChartSample { r: jet.r, x3: jet.x3, weight: 2.0 * PI * jet.r * det2(&dx).abs(), jet })
            }),
        )
    }
}

impl AxisymmetricMap for RecoveryMap {
    fn name(&self) -> String {
        format!("recovery(eps={}, gamma={})", self.params.eps, self.params.gamma)
    }

    fn regions(&self) -> Vec<RegionId> {
        RegionId::RECOVERY.to_vec()
    }

    fn classify(&self, r: f64, x3: f64) -> Result<RegionId> {
        classify_recovery_meridian(r, x3, self.params.eps)
    }

    fn profile(&self, r: f64, x3: f64) -> Result<MeridianJet> {
        Ok(self.profile_piece(r, x3)?.0)
    }

    fn value_tagged(&self, p: &crate::geometry::CartesianPoint) -> Result<(crate::geometry::CartesianPoint, RegionId)> {
        let c = crate::geometry::cart_to_cyl(p);
        let (jet, _) = self.profile_piece(c.r, c.x3)?;
        Ok((jet.value(c.theta), jet.region))
    }

    fn charts(&self, region: RegionId) -> Result<Vec<RegionChart>> {
        let me = *self;
        let eps = self.params.eps;
        let axis = |at: f64| GradeEdge { at, min_cell: 1e-6 };
        Ok(match region {
            RegionId::CEps => vec![RegionChart::rectangular(
                region,
                "c_eps",
                (0.0, 1.0),
                vec![],
                (0.0, eps),
                vec![GradeEdge { at: 0.0, min_cell: 1e-4 * eps * eps }],
                Arc::new(move |x3, r| Ok(ChartSample { r, x3, weight: 2.0 * PI * r, jet: me.c_jet(r, x3) })),
            )],
            RegionId::APrimeEps => vec![self.cap_chart(Cap::Lower)],
            RegionId::EPrimeEps => vec![self.cap_chart(Cap::Upper)],
            RegionId::AEps => vec![spherical_region_chart(
                region,
                "a_eps",
                0.0,
                (FRAC_PI_2, PI),
                vec![GradeEdge { at: FRAC_PI_2, min_cell: 1e-9 }, axis(PI)],
                Arc::new(move |_| (eps, 1.0)),
                vec![GradeEdge { at: eps, min_cell: 1e-4 * eps }],
                move |rho, phi, x, dx| Ok(me.a_eps_jet(rho, phi, x, dx)),
            )],
            RegionId::EEps => vec![spherical_region_chart(
                region,
                "e_eps",
                1.0,
                (0.0, FRAC_PI_2),
                vec![axis(0.0), GradeEdge { at: FRAC_PI_2, min_cell: 1e-9 }],
                Arc::new(move |_| (eps, 1.0)),
                vec![GradeEdge { at: eps, min_cell: 1e-4 * eps }],
                move |rho, phi, x, dx| Ok(me.e_eps_jet(rho, phi, x, dx)),
            )],
            RegionId::FEps => vec![spherical_region_chart(
                region,
                "f_eps",
                1.0,
                (0.0, FRAC_PI_2),
                vec![axis(0.0)],
                Arc::new(|phi| (1.0, rho_to_domain_boundary(phi, 1.0))),
                vec![],
                move |rho, phi, x, dx| Ok(me.f_eps_jet(rho, phi, x, dx)),
            )],
            RegionId::BEps => {
                let rho_knee = (1.0 + SQRT_2 * self.params.eps_gamma).min(3.0);
                let inner = move |phi: f64| {
                    let mut breaks = vec![rho_knee];
                    breaks.extend(me.b_cone_kink(phi));
                    InnerRange { lo: 1.0, hi: 3.0, breaks, grading: vec![GradeEdge { at: 1.0, min_cell: 1e-6 }] }
                };
                vec![RegionChart {
                    region,
                    name: "b_eps",
                    outer: (FRAC_PI_2, PI),
                    outer_breaks: vec![],
                    outer_grading: vec![axis(FRAC_PI_2), axis(PI)],
                    inner: Arc::new(inner),
                    eval: Arc::new(move |phi, rho| {
                        let (x, dx) = spherical_chart(rho, phi, 0.0);
                        let jet = me.b_jet(rho, phi, x, &dx)?;
                        Ok(ChartSample { r: x[0], x3: x[1], weight: 2.0 * PI * rho * rho * phi.sin(), jet })
                    }),
                }]
            }
            RegionId::DEps => {
                let (ab, ac) = self.limit.fan.corner_params();
                let mut charts = Vec::new();
                for (name, lo, hi) in [("d_eps_fan_lower", 0.0, ab), ("d_eps_fan_middle", ab, ac), ("d_eps_fan_upper", ac, 1.0)]
                {
                    charts.push(RegionChart {
                        region,
                        name,
                        outer: (lo, hi),
                        outer_breaks: vec![],
                        outer_grading: vec![axis(0.0), axis(1.0)],
                        inner: Arc::new(move |a| InnerRange {
                            lo: 0.0,
                            hi: 1.0,
                            breaks: me.d_fan_breaks(a),
                            grading: vec![],
                        }),
                        eval: Arc::new(move |a, mu| {
                            let (jet, dx) = me.d_fan_jet(a, mu);
                            Ok(ChartSample { r: jet.r, x3: jet.x3, weight: 2.0 * PI * jet.r * det2(&dx).abs(), jet })
                        }),
                    });
                }
                let kinks: Vec<f64> = self.params.omega_kinks().iter().map(|z| z / 3.0).collect();
                charts.push(RegionChart {
                    region,
                    name: "d_eps_strip",
                    outer: (0.0, 1.0),
                    outer_breaks: kinks,
                    outer_grading: vec![],
                    inner: Arc::new(|x3: f64| InnerRange { lo: 1.0, hi: (9.0 - x3 * x3).sqrt(), breaks: vec![], grading: vec![] }),
                    eval: Arc::new(move |x3, r| Ok(ChartSample { r, x3, weight: 2.0 * PI * r, jet: me.d_strip_jet(r, x3)? })),
                });
                charts
            }
            other => return Err(Error::OutOfDomain(format!("{other} is not a recovery region"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cart_to_cyl, region_volume, CartesianPoint};
    use crate::kernels::{determinant, fd_jacobian_adaptive};
    use crate::quadrature::{integrate_1d, integrate_charts, QuadSpec};
    use crate::sampling::halton;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn params() -> RecoveryParams {
        RecoveryParams::new(0.05, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(RecoveryParams::new(0.0, 0.3).is_err());
        assert!(RecoveryParams::new(0.3, 0.3).is_err());
        assert!(RecoveryParams::new(0.1, 0.5).is_err());
        assert!(RecoveryParams::new(0.1, 0.25).is_ok());
    }

    #[test]
    fn f_endpoints_and_inverse() {
        for eps in [1e-1, 1e-2, 1e-3] {
            let p = RecoveryParams::new(eps, 1.0 / 3.0).unwrap();
            assert_eq!(p.f_eps(0.0).unwrap(), 0.0);
            assert!((p.f_eps(eps).unwrap() - FRAC_PI_2).abs() < 1e-12);
            assert!(p.f_eps(2.0 * eps).is_err());
            assert_eq!(p.g_eps(0.0).unwrap(), 0.0);
            assert_eq!(p.g_eps(FRAC_PI_2).unwrap(), eps);
            for k in 0..=1000 {
                let r = eps * k as f64 / 1000.0;
                let phi = p.f(r);
                let g = p.g_eps(phi).unwrap();
                assert!((g - r).abs() <= 1e-12 * eps, "eps {eps}, r {r}");
                assert!((p.f(g) - phi).abs() <= 1e-13);
                if k > 0 {
                    assert!(p.f(r) > p.f(eps * (k - 1) as f64 / 1000.0));
                }
            }
            for k in 0..=100 {
                let phi = FRAC_PI_4 * k as f64 / 100.0;
                assert!(p.g_eps(phi).unwrap() <= eps * eps);
            }
        }
    }

    #[test]
    fn stereographic_energy_matches_closed_form() {
        let spec = QuadSpec { atol: 1e-14, rtol: 1e-13, ..QuadSpec::default() };
        for eps in [1e-1f64, 1e-2, 1e-3] {
            let p = RecoveryParams::new(eps, 1.0 / 3.0).unwrap();
            let v = integrate_1d(|r| r * p.fp(r).powi(2), 0.0, eps, &[], &[GradeEdge { at: 0.0, min_cell: 1e-4 * eps * eps }], &spec)
                .unwrap();
            let a = p.alpha;
            let closed = 0.5 * ((1.0 - 1.0 / (1.0 + eps.powi(-2))) + 2.0 * eps * a * (1.0 + eps.powi(-2)).ln() + a * a);
            assert!((v.value - closed).abs() < 1e-10, "eps {eps}");
            assert!((v.value - 0.5).abs() <= 5.0 * eps * eps * eps.ln().abs());
        }
    }

    #[test]
    fn h_blocks() {
        let p = params();
        for i in 0..100 {
            let phi = FRAC_PI_2 * i as f64 / 100.0;
            let ab = p.angle(phi);
            for j in 0..=100 {
                let s = j as f64 / 100.0;
                if s > 0.0 && s < 1.0 {
                    assert!(ab.h(s) > 0.0);
                }
                assert!(ab.h(s).abs() <= 1.5 * PI * SQRT_2 * p.eps * p.eps * phi.cos() + 1e-18);
            }
            assert_eq!(ab.hh(0.0), 0.0);
            // H is the exact antiderivative of h.
            let rule = GaussRule::new(6);
            let num = rule.apply(|s| ab.h(s), 0.0, 0.7);
            assert!((num - ab.hh(0.7)).abs() < 1e-15);
        }
        let ab = p.angle(FRAC_PI_2);
        assert!(ab.h(0.5).abs() < 1e-18);
    }

    #[test]
    fn phi_derivatives_of_h_match_differences() {
        let p = params();
        for phi in [1e-3, 0.03, 0.2, 0.7, 1.2, 1.5] {
            let d = 1e-6;
            let (lo, hi) = (p.angle(phi - d), p.angle(phi + d));
            let ab = p.angle(phi);
            for s in [0.1, 0.5, 0.9, 1.0] {
                let fd = (hi.hh(s) - lo.hh(s)) / (2.0 * d);
                assert!((fd - ab.dhh_dphi(s)).abs() < 1e-6 * (1.0 + fd.abs()) * p.eps * p.eps, "phi {phi} s {s}");
                let fd = (hi.h(s) - lo.h(s)) / (2.0 * d);
                assert!((fd - ab.dh_dphi(s)).abs() < 1e-6 * p.eps * p.eps * (1.0 + fd.abs() / (p.eps * p.eps)));
            }
            let fd = (hi.a - lo.a) / (2.0 * d);
            assert!((fd - ab.a1).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn omega_table_and_monotonicity() {
        let p = params();
        let eg = p.eps_gamma;
        assert!((p.omega_eps(0.0) - eg).abs() < 1e-14);
        assert!((p.omega_eps(1.0) - 2.0 * eg).abs() < 1e-14);
        assert!((p.omega_eps(2.0) - p.eta).abs() < 1e-14);
        assert!((p.omega_eps(3.0) - 6.0 * eg).abs() < 1e-13);
        let mut prev = 0.0;
        for k in 0..=3000 {
            let w = p.omega_eps(k as f64 / 1000.0);
            assert!(w >= prev);
            prev = w;
        }
        assert!((p.r_hat(p.eps)).abs() < 1e-16 && (p.r_hat(p.knee) - p.knee).abs() < 1e-15);
        for k in 0..100 {
            let rh = k as f64 / 100.0;
            assert!((p.r_hat(p.r_of_rhat(rh).0) - rh).abs() < 1e-14);
        }
    }

    #[test]
    fn psi_properties() {
        let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
        assert!(close(psi([1.0, 0.0]).unwrap().0, [1.0, 0.0]));
        let pb = 7.0 * PI / 8.0;
        let q = [SQRT_2 * pb.sin(), 1.0 + SQRT_2 * pb.cos()];
        assert!(close(psi(q).unwrap().0, [FRAC_PI_4.sin(), FRAC_PI_4.cos()]));
        for k in 0..=20 {
            let pb = 0.75 * PI + 0.25 * PI * k as f64 / 20.0;
            // Identity for R ≥ 2√2.
            let q = [3.0 * pb.sin(), 1.0 + 3.0 * pb.cos()];
            assert!(close(psi(q).unwrap().0, q));
            // Unit circle for R = √2.
            let q = [SQRT_2 * pb.sin(), 1.0 + SQRT_2 * pb.cos()];
            let w = psi(q).unwrap().0;
            assert!(close(w, [(2.0 * (PI - pb)).sin(), (2.0 * (PI - pb)).cos()]));
            // Identity on the half-line r = 1 + |x₃|.
            let t = 1.0 + k as f64 / 5.0;
            assert!(close(psi([t, 1.0 - t]).unwrap().0, [t, 1.0 - t]));
        }
        // Positive Jacobian on a validation grid.
        for i in 0..20 {
            for j in 0..20 {
                let big_r = SQRT_2 + 2.0 * SQRT_2 * (i as f64 + 0.5) / 20.0;
                let pb = 0.75 * PI + 0.25 * PI * (j as f64 + 0.5) / 20.0;
                let (_, d) = psi([big_r * pb.sin(), 1.0 + big_r * pb.cos()]).unwrap();
                assert!(det2(&d) > 0.0);
            }
        }
    }

    #[test]
    fn region_examples() {
        let m = RecoveryMap::new(params());
        let eg = m.params.eps_gamma;
        let eps = m.params.eps;
        let j = m.c_jet(eps, 0.0);
        assert!((j.v[0] - 2.0 * eg).abs() < 1e-12 && j.v[1].abs() < 1e-12);
        for k in 0..10 {
            let phi = FRAC_PI_2 + FRAC_PI_2 * (k as f64 + 0.5) / 10.0;
            let j = m.profile(phi.sin() * (1.0 - 1e-15), phi.cos() * (1.0 - 1e-15)).unwrap();
            assert!((j.v[0].hypot(j.v[1]) - eg).abs() < 1e-10);
        }
        let j = m.profile(1.0 + 1e-12, 1e-15).unwrap();
        assert!((j.v[0] - eg).abs() < 1e-9 && j.v[1].abs() < 1e-9);
        let j = m.profile(2.0, 1e-16).unwrap();
        assert!((j.v[0] - (eg + 1.0 / SQRT_2)).abs() < 1e-9 && (j.v[1] + 1.0 / SQRT_2).abs() < 1e-9);
    }

    fn random_points(n: u64, m: &RecoveryMap, region: RegionId) -> Vec<(f64, f64)> {
        let eps = m.params.eps;
        let mut out = Vec::new();
        let mut k = 0;
        while out.len() < n as usize {
            let u = halton::<2>(k);
            k += 1;
            let (r, z) = match region {
                RegionId::CEps => (eps * u[0], u[1]),
                RegionId::APrimeEps => crate::sampling::ball_meridian_sample(u, 0.0, eps),
                RegionId::EPrimeEps => crate::sampling::ball_meridian_sample(u, 1.0, eps),
                _ => (3.0 * u[0], 6.0 * u[1] - 3.0),
            };
            if m.classify(r, z).ok() == Some(region) && crate::geometry::in_open_region(region, r, z, eps) {
                out.push((r, z));
            }
        }
        out
    }

    #[test]
    fn incompressible_regions_have_unit_determinant() {
        let m = RecoveryMap::new(params());
        for region in [RegionId::CEps, RegionId::APrimeEps, RegionId::EPrimeEps] {
            let mut worst: f64 = 0.0;
            for (r, z) in random_points(2000, &m, region) {
                let jet = m.profile(r, z).unwrap();
                worst = worst.max((jet.det() - 1.0).abs());
            }
            assert!(worst < 1e-8, "{region}: {worst}");
        }
    }

    #[test]
    fn analytic_jets_match_finite_differences() {
        for (eps, gamma) in [(0.05, 1.0 / 3.0), (0.1, 0.25)] {
            let m = RecoveryMap::from_eps(eps, gamma).unwrap();
            for region in RegionId::RECOVERY {
                let pts = random_points(300, &m, region);
                let mut worst: f64 = 0.0;
                let mut compared = 0;
                for (k, (r, z)) in pts.iter().enumerate() {
                    let theta = 0.37 * k as f64;
                    let p = Vector3::new(r * theta.cos(), r * theta.sin(), *z);
                    if *r < 1e-4 * eps {
                        continue;
                    }
                    let analytic = m.eval(&p).unwrap().grad;
                    let tag = |q: &CartesianPoint| -> Result<(CartesianPoint, (RegionId, u8))> {
                        let c = cart_to_cyl(q);
                        let (jet, piece) = m.profile_piece(c.r, c.x3)?;
                        Ok((jet.value(c.theta), (jet.region, piece)))
                    };
                    let h = 1e-6 * eps.min(*r).max(1e-9);
                    let Ok(fd) = fd_jacobian_adaptive(tag, &p, h, true) else { continue };
                    compared += 1;
                    let err = (analytic - fd).abs().max() / (1.0 + fd.abs().max());
                    worst = worst.max(err);
                    assert!(determinant(&analytic) > 0.0, "{region} at ({r},{z})");
                }
                assert!(compared >= 150, "{region}: only {compared} comparisons");
                assert!(worst < 1e-4, "eps {eps} {region}: worst {worst}");
            }
        }
    }

    #[test]
    fn interfaces_are_continuous() {
        let m = RecoveryMap::new(params());
        let eps = m.params.eps;
        let mut worst: f64 = 0.0;
        let d = 1e-13;
        for k in 0..400 {
            let t = (k as f64 + 0.5) / 400.0;
            let q = FRAC_PI_2 * t;
            let pairs: Vec<((f64, f64), (f64, f64))> = vec![
                ((eps * t, -d), (eps * t, d)),                       // a′/c
                ((eps + (1.0 - eps) * t, -d), (eps + (1.0 - eps) * t, d)), // a/d
                ((1.0 + 2.0 * t, -d), (1.0 + 2.0 * t, d)),           // b/d
                ((eps - d, t), (eps + d, t)),                        // c/d
                ((eps * t, 1.0 - d), (eps * t, 1.0 + d)),            // c/e′
                ((eps + (1.0 - eps) * t, 1.0 - d), (eps + (1.0 - eps) * t, 1.0 + d)), // d/e
                ((1.0 + 1.8 * t, 1.0 - d), (1.0 + 1.8 * t, 1.0 + d)), // d/f
                (((eps - d) * q.sin(), -(eps - d) * q.cos()), ((eps + d) * q.sin(), -(eps + d) * q.cos())), // a′/a
                (((1.0 - d) * q.sin(), -(1.0 - d) * q.cos()), ((1.0 + d) * q.sin(), -(1.0 + d) * q.cos())), // a/b
                (((eps - d) * q.sin(), 1.0 + (eps - d) * q.cos()), ((eps + d) * q.sin(), 1.0 + (eps + d) * q.cos())), // e′/e
                (((1.0 - d) * q.sin(), 1.0 + (1.0 - d) * q.cos()), ((1.0 + d) * q.sin(), 1.0 + (1.0 + d) * q.cos())), // e/f
            ];
            for (i, (a, b)) in pairs.iter().enumerate() {
                let ja = m.profile(a.0, a.1).unwrap();
                let jb = m.profile(b.0, b.1).unwrap();
                let jump = (ja.v[0] - jb.v[0]).abs().max((ja.v[1] - jb.v[1]).abs());
                assert!(jump < 1e-8, "interface {i} at t={t}: {:?} vs {:?}", ja, jb);
                worst = worst.max(jump);
            }
        }
        assert!(worst < 1e-8);
    }

    #[test]
    fn chart_volumes_match_closed_forms() {
        let m = RecoveryMap::new(params());
        let spec = QuadSpec::default();
        for region in RegionId::RECOVERY {
            let charts = m.charts(region).unwrap();
            let vol = integrate_charts(&charts, |_| 1.0, &spec).unwrap();
            let exact = region_volume(region, m.params.eps);
            assert!((vol.value - exact).abs() < 1e-8 * exact, "{region}: {} vs {exact}", vol.value);
        }
    }

    #[test]
    fn partial_u_a_prime_bounds_hold_on_a_grid() {
        for (eps, gamma) in [(0.05, 1.0 / 3.0), (0.01, 0.25)] {
            let m = RecoveryMap::from_eps(eps, gamma).unwrap();
            let eg = m.params.eps_gamma;
            for i in 0..=100 {
                let phi = FRAC_PI_2 * i as f64 / 100.0;
                let ab = m.params.angle(phi);
                let base = phi.cos() + 2.0 * eg;
                for j in 0..=100 {
                    let s = j as f64 / 100.0;
                    let (u, _) = m.cap_profile(Cap::Lower, &ab, s);
                    assert!(0.25 * base <= u && u <= base * (1.0 + 1e-15) && base <= 2.0);
                }
                // Lower bound of the a_ε cube root.
                let q = (base.powi(3) - 3.0 * ab.hh(1.0)).cbrt();
                assert!(q >= phi.cos() + eg);
            }
        }
    }

    #[test]
    fn a_eps_determinant_dominates_the_limit() {
        let m = RecoveryMap::new(params());
        let limit = LimitMap::default();
        for k in 0..2000u64 {
            let u = halton::<2>(k);
            let (r, z) = crate::sampling::ball_meridian_sample(u, 0.0, 1.0);
            if z >= 0.0 || r.hypot(z) <= m.params.eps || r < 1e-6 {
                continue;
            }
            let d_eps = m.profile(r, z).unwrap().det();
            let d = limit.profile(r, z).unwrap().det();
            assert!(d_eps >= d * (1.0 - 1e-12), "({r},{z}): {d_eps} < {d}");
        }
    }

    #[test]
    fn pointwise_convergence_to_the_limit() {
        let limit = LimitMap::default();
        let probes: Vec<(f64, f64)> = (0..100u64)
            .map(|k| halton::<2>(k + 7))
            .map(|u| (0.2 + 2.0 * u[0], 4.0 * u[1] - 2.0))
            .filter(|(r, z)| r.hypot(*z) < 2.9)
            .collect();
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let m = RecoveryMap::from_eps(eps, 1.0 / 3.0).unwrap();
            let worst = probes
                .iter()
                .map(|(r, z)| {
                    let a = m.profile(*r, *z).unwrap().v;
                    let b = limit.profile(*r, *z).unwrap().v;
                    (a[0] - b[0]).hypot(a[1] - b[1])
                })
                .fold(0.0, f64::max);
            let c = worst / m.params.eps_gamma;
            assert!(c < 10.0 && worst < prev, "eps {eps}: {worst}");
            prev = worst;
        }
    }

    proptest! {
        #[test]
        fn g_inverts_f(t in 0.0f64..1.0, eps in 1e-3f64..0.2) {
            let p = RecoveryParams::new(eps, 0.25).unwrap();
            let r = t * eps;
            prop_assert!((p.g_eps(p.f(r)).unwrap() - r).abs() <= 1e-12 * eps);
        }

        #[test]
        fn cap_coordinates_round_trip(u0 in 0.01f64..0.99, u1 in 0.01f64..0.99, upper: bool) {
            let m = RecoveryMap::new(params());
            let cap = if upper { Cap::Upper } else { Cap::Lower };
            let (s, phi) = (u0, u1 * FRAC_PI_2);
            let ab = m.params.angle(phi);
            let (x, _) = m.cap_position(cap, &ab, s);
            let (s2, phi2) = m.cap_coords(cap, x[0], x[1]).unwrap();
            prop_assert!((s2 - s).abs() < 1e-8 && (phi2 - phi).abs() < 1e-8);
        }
    }
}
