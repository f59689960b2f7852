//! Fixed-corotated hyperelasticity.
//!
//! The Kirchhoff stress is `τ = 2μ(F − R)Fᵀ + λ(J − 1)J·I`, where `R = UVᵀ`
//! is the rotation from the SVD `F = UΣVᵀ` and `J = det F`. Only pure
//! elasticity is modeled (no plastic part of `F`).

use nalgebra::SVD;

use crate::{Error, Mat3, Result, Vec3};

/// Lower bound on `σᵢ + σⱼ` in the rotation derivative.
const SVD_DENOM_GUARD: f64 = 1e-8;

/// Young's modulus / Poisson's ratio with the derived Lamé parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub youngs: f64,
    pub poisson: f64,
    pub mu: f64,
    pub lambda: f64,
}

impl MaterialParams {
    pub fn new(youngs: f64, poisson: f64) -> Result<Self> {
        let (mu, lambda) = lame_parameters(youngs, poisson)?;
        Ok(MaterialParams { youngs, poisson, mu, lambda })
    }
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams::new(1e4, 0.3).expect("default material is valid")
    }
}

/// Shear modulus `μ` and Lamé's first parameter `λ` from `(E, ν)`.
pub fn lame_parameters(youngs: f64, poisson: f64) -> Result<(f64, f64)> {
    if !(youngs > 0.0 && youngs.is_finite()) {
        return Err(Error::InvalidMaterial(format!("Young's modulus must be positive, got {youngs}")));
    }
    if poisson >= 0.5 {
        return Err(Error::InvalidMaterial(format!(
            "Poisson's ratio {poisson} reaches the incompressible limit (must be < 0.5)"
        )));
    }
    if !(poisson >= 0.0) {
        return Err(Error::InvalidMaterial(format!("Poisson's ratio must be non-negative, got {poisson}")));
    }
    let mu = youngs / (2.0 * (1.0 + poisson));
    let lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    Ok((mu, lambda))
}

/// Stress evaluation that keeps the SVD around for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct StressEval {
    pub tau: Mat3,
    u: Mat3,
    sigma: Vec3,
    v_t: Mat3,
    rotation: Mat3,
    det: f64,
}

impl StressEval {
    pub fn new(f: &Mat3, material: &MaterialParams) -> Result<Self> {
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidDeformation { particle: 0, reason: "non-finite entries".into() });
        }
        let det = f.determinant();
        if !(det > 0.0) {
            return Err(Error::InvalidDeformation {
                particle: 0,
                reason: format!("det(F) = {det:e} is not positive"),
            });
        }
        let svd = SVD::new(*f, true, true);
        let u = svd.u.expect("U requested");
        let v_t = svd.v_t.expect("Vᵀ requested");
        let rotation = u * v_t;
        let tau = 2.0 * material.mu * (f - rotation) * f.transpose()
            + Mat3::identity() * (material.lambda * (det - 1.0) * det);
        Ok(StressEval { tau, u, sigma: svd.singular_values, v_t, rotation, det })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Vector-Jacobian product: given `∂L/∂τ`, returns `∂L/∂F`.
    pub fn vjp(&self, f: &Mat3, material: &MaterialParams, upstream: &Mat3) -> Mat3 {
        let g = upstream;
        let two_mu = 2.0 * material.mu;
        // τ₁ = 2μ (F − R) Fᵀ
        let d_diff = two_mu * g * f; // ∂L/∂(F − R)
        let mut grad = d_diff + two_mu * g.transpose() * (f - self.rotation);
        grad -= self.rotation_vjp(&d_diff);
        // τ₂ = λ (J − 1) J · I
        let d_j = material.lambda * (2.0 * self.det - 1.0) * g.trace();
        let f_inv_t = f.try_inverse().map(|m| m.transpose()).unwrap_or_else(Mat3::zeros);
        grad += d_j * self.det * f_inv_t;
        grad
    }

    /// Adjoint of `dF ↦ dR` for the polar rotation `R = UVᵀ`.
    ///
    /// With `M = Uᵀ dF V`, `dR = U Ω Vᵀ` where `Ω_ij = (M_ij − M_ji)/(σᵢ + σⱼ)`.
    fn rotation_vjp(&self, h: &Mat3) -> Mat3 {
        let v = self.v_t.transpose();
        let k = self.u.transpose() * h * v;
        let mut dm = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let denom = (self.sigma[i] + self.sigma[j]).max(SVD_DENOM_GUARD);
                dm[(i, j)] = (k[(i, j)] - k[(j, i)]) / denom;
            }
        }
        self.u * dm * self.v_t
    }
}

/// Fixed-corotated Kirchhoff stress for a deformation gradient with `det F > 0`.
pub fn kirchhoff_stress(f: &Mat3, material: &MaterialParams) -> Result<Mat3> {
    Ok(StressEval::new(f, material)?.tau)
}
