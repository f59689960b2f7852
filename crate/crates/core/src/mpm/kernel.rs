//! Quadratic B-spline interpolation kernel on a 3×3×3 stencil.

use crate::Vec3;

/// Kernel weights and weight gradients for one particle.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    /// Lowest node index of the stencil on each axis.
    pub base: [i64; 3],
    /// Fractional offset of the particle from `base`, in cells (∈ [0.5, 1.5)).
    pub frac: Vec3,
    w: [[f64; 3]; 3],
    dw: [[f64; 3]; 3],
}

impl Kernel {
    /// `grid_pos` is the particle position in cell units, `(x − origin)/dx`.
    pub fn new(grid_pos: &Vec3, inv_dx: f64) -> Self {
        let mut base = [0i64; 3];
        let mut frac = Vec3::zeros();
        let mut w = [[0.0; 3]; 3];
        let mut dw = [[0.0; 3]; 3];
        for a in 0..3 {
            let b = (grid_pos[a] - 0.5).floor();
            let f = grid_pos[a] - b;
            base[a] = b as i64;
            frac[a] = f;
            w[a] = [0.5 * (1.5 - f).powi(2), 0.75 - (f - 1.0).powi(2), 0.5 * (f - 0.5).powi(2)];
            dw[a] = [-(1.5 - f) * inv_dx, -2.0 * (f - 1.0) * inv_dx, (f - 0.5) * inv_dx];
        }
        Kernel { base, frac, w, dw }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize, k: usize) -> f64 {
        self.w[0][i] * self.w[1][j] * self.w[2][k]
    }

    /// Gradient of the weight with respect to the particle position.
    #[inline]
    pub fn weight_grad(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.dw[0][i] * self.w[1][j] * self.w[2][k],
            self.w[0][i] * self.dw[1][j] * self.w[2][k],
            self.w[0][i] * self.w[1][j] * self.dw[2][k],
        )
    }

    /// `x_node − x_particle` in world units.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize, dx: f64) -> Vec3 {
        Vec3::new(
            (i as f64 - self.frac.x) * dx,
            (j as f64 - self.frac.y) * dx,
            (k as f64 - self.frac.z) * dx,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_at_node() {
        let k = Kernel::new(&Vec3::new(4.0, 7.0, 2.0), 1.0);
        assert_eq!(k.base, [3, 6, 1]);
        let expect = [0.125, 0.75, 0.125];
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    assert_relative_eq!(k.weight(i, j, l), expect[i] * expect[j] * expect[l], epsilon = 1e-16);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_linear_reproduction() {
        for p in [Vec3::new(3.21, 5.5, 9.99), Vec3::new(2.5, 2.5001, 7.75)] {
            let k = Kernel::new(&p, 1.0);
            let mut sum = 0.0;
            let mut first = Vec3::zeros();
            let mut grad = Vec3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    for l in 0..3 {
                        sum += k.weight(i, j, l);
                        first += k.weight(i, j, l) * k.offset(i, j, l, 0.1);
                        grad += k.weight_grad(i, j, l);
                    }
                }
            }
            assert_relative_eq!(sum, 1.0, epsilon = 1e-14);
            assert!(first.norm() < 1e-15);
            assert!(grad.norm() < 1e-13);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let inv_dx = 8.0;
        let p = Vec3::new(3.3, 4.9, 5.61);
        let h = 1e-7;
        let k = Kernel::new(&p, inv_dx);
        for a in 0..3 {
            let mut pp = p;
            pp[a] += h * inv_dx;
            let mut pm = p;
            pm[a] -= h * inv_dx;
            let (kp, km) = (Kernel::new(&pp, inv_dx), Kernel::new(&pm, inv_dx));
            let fd = (kp.weight(1, 2, 0) - km.weight(1, 2, 0)) / (2.0 * h);
            assert_relative_eq!(k.weight_grad(1, 2, 0)[a], fd, epsilon = 1e-6);
        }
    }
}
