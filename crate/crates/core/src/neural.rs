//! Triplane feature field decoded by a small MLP into a delta velocity.
//!
//! A point is normalized into the field's domain box, projected onto the XY,
//! XZ and YZ planes, bilinearly sampled on each, and the three channel
//! vectors are concatenated and fed through `3C → H → H → 3` with SiLU on
//! the hidden layers. All parameters live in one flat vector so optimizers
//! can treat them uniformly.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::correspondence::Aabb;
use crate::{Error, Result, Vec3};

/// Plane axis pairs, in storage order.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    /// Lattice points per plane side.
    pub resolution: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Std-dev of the random plane features.
    pub plane_init_scale: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { resolution: 32, channels: 16, hidden: 64, plane_init_scale: 0.1 }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "field needs resolution ≥ 2 and non-zero widths, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub planes: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub len: usize,
}

impl ParamLayout {
    fn new(p: usize, c: usize, h: usize) -> Self {
        let planes = 0;
        let w1 = planes + 3 * p * p * c;
        let b1 = w1 + h * 3 * c;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + 3 * h;
        ParamLayout { planes, w1, b1, w2, b2, w3, b3, len: b3 + 3 }
    }
}

#[derive(Debug)]
pub struct TriplaneField {
    config: FieldConfig,
    layout: ParamLayout,
    domain: Aabb,
    params: Vec<f64>,
    clamped: AtomicUsize,
}

impl Clone for TriplaneField {
    fn clone(&self) -> Self {
        TriplaneField {
            config: self.config,
            layout: self.layout,
            domain: self.domain,
            params: self.params.clone(),
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for TriplaneField {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.domain == other.domain && self.params == other.params
    }
}

#[inline]
fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// Lower lattice index and fractional offset along one plane axis.
#[inline]
fn lattice(u: f64, p: usize) -> (usize, f64) {
    let g = u * (p - 1) as f64;
    let i = (g.floor() as usize).min(p - 2);
    (i, g - i as f64)
}

/// Bilinear footprint of one plane sample: four flat feature offsets and weights.
type Footprint = [(usize, f64); 4];

struct Forward {
    footprints: [Footprint; 3],
    feat: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec3,
}

impl TriplaneField {
    /// Field with every parameter zero (queries return zero everywhere).
    pub fn zeros(config: FieldConfig, domain: Aabb) -> Result<Self> {
        config.validate()?;
        if !(0..3).all(|a| domain.max[a] > domain.min[a]) || !(domain.min.iter().chain(domain.max.iter()).all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument(format!("field domain must have positive finite extent, got {domain:?}")));
        }
        let layout = ParamLayout::new(config.resolution, config.channels, config.hidden);
        Ok(TriplaneField { config, layout, domain, params: vec![0.0; layout.len], clamped: AtomicUsize::new(0) })
    }

    /// Random planes and hidden weights, zero biases and a zero output layer,
    /// so the field starts identically zero but has a useful gradient path.
    pub fn new(config: FieldConfig, domain: Aabb, rng: &mut impl Rng) -> Result<Self> {
        let mut f = Self::zeros(config, domain)?;
        let l = f.layout;
        let (c, h) = (config.channels, config.hidden);
        let planes = Normal::new(0.0, config.plane_init_scale.abs()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut f.params[l.planes..l.w1] {
            *v = planes.sample(rng);
        }
        let xavier = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Uniform::new_inclusive(-a, a).expect("finite bound")
        };
        let d1 = xavier(3 * c, h);
        for v in &mut f.params[l.w1..l.b1] {
            *v = d1.sample(rng);
        }
        let d2 = xavier(h, h);
        for v in &mut f.params[l.w2..l.b2] {
            *v = d2.sample(rng);
        }
        Ok(f)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    /// Moves the normalization box; parameters are kept.
    pub fn set_domain(&mut self, domain: Aabb) -> Result<()> {
        let checked = Self::zeros(FieldConfig { resolution: 2, channels: 1, hidden: 1, plane_init_scale: 0.0 }, domain)?;
        self.domain = checked.domain;
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Replaces the parameter vector, which must keep its length.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.len {
            return Err(Error::Shape(format!("expected {} field parameters, got {}", self.layout.len, params.len())));
        }
        self.params = params;
        Ok(())
    }

    /// Number of queries so far whose position fell outside the domain box.
    pub fn clamped_queries(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Flat offset of plane feature `(plane, j, k, channel)`.
    pub fn plane_index(&self, plane: usize, j: usize, k: usize, channel: usize) -> usize {
        let (p, c) = (self.config.resolution, self.config.channels);
        self.layout.planes + ((plane * p + j) * p + k) * c + channel
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("triplane field parameters".into()))
        }
    }

    fn normalize(&self, x: &Vec3) -> Vec3 {
        let ext = self.domain.max - self.domain.min;
        let u = (x - self.domain.min).component_div(&ext);
        let clamped = u.map(|v| v.clamp(0.0, 1.0));
        if clamped != u {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        clamped
    }

    fn footprints(&self, x: &Vec3) -> [Footprint; 3] {
        let u = self.normalize(x);
        let p = self.config.resolution;
        PLANE_AXES.map(|(a, b)| {
            let (j, s) = lattice(u[a], p);
            let (k, t) = lattice(u[b], p);
            let plane = PLANE_AXES.iter().position(|&ax| ax == (a, b)).expect("known plane");
            [
                (self.plane_index(plane, j, k, 0), (1.0 - s) * (1.0 - t)),
                (self.plane_index(plane, j + 1, k, 0), s * (1.0 - t)),
                (self.plane_index(plane, j, k + 1, 0), (1.0 - s) * t),
                (self.plane_index(plane, j + 1, k + 1, 0), s * t),
            ]
        })
    }

    /// Concatenated `3C` plane features at `x`, before the MLP.
    pub fn features(&self, x: &Vec3) -> Vec<f64> {
        self.gather(&self.footprints(x))
    }

    fn gather(&self, fps: &[Footprint; 3]) -> Vec<f64> {
        let c = self.config.channels;
        let mut feat = vec![0.0; 3 * c];
        for (plane, fp) in fps.iter().enumerate() {
            for &(base, w) in fp {
                for ch in 0..c {
                    feat[plane * c + ch] += w * self.params[base + ch];
                }
            }
        }
        feat
    }

    fn forward(&self, x: &Vec3) -> Forward {
        let (c3, h) = (3 * self.config.channels, self.config.hidden);
        let l = &self.layout;
        let p = &self.params;
        let footprints = self.footprints(x);
        let feat = self.gather(&footprints);
        let dense = |w: usize, b: usize, input: &[f64], rows: usize| -> Vec<f64> {
            let cols = input.len();
            (0..rows)
                .map(|r| p[b + r] + p[w + r * cols..w + (r + 1) * cols].iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        };
        let z1 = dense(l.w1, l.b1, &feat, h);
        let h1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
        let z2 = dense(l.w2, l.b2, &h1, h);
        let h2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();
        let o = dense(l.w3, l.b3, &h2, 3);
        debug_assert_eq!(feat.len(), c3);
        Forward { footprints, feat, z1, h1, z2, h2, out: Vec3::new(o[0], o[1], o[2]) }
    }

    /// Delta velocity at `x`; positions outside the domain are clamped to it.
    pub fn query(&self, x: &Vec3) -> Result<Vec3> {
        self.check_finite()?;
        Ok(self.forward(x).out)
    }

    pub fn query_batch(&self, xs: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check_finite()?;
        Ok(xs.iter().map(|x| self.forward(x).out).collect())
    }

    /// Gradient of `Σ upstream_i · query(x_i)` with respect to every
    /// parameter, laid out like [`params`](Self::params).
    pub fn query_batch_with_param_grad(&self, xs: &[Vec3], upstream: &[Vec3]) -> Result<Vec<f64>> {
        if xs.len() != upstream.len() {
            return Err(Error::Shape(format!("{} positions but {} upstream rows", xs.len(), upstream.len())));
        }
        self.check_finite()?;
        let (c, h) = (self.config.channels, self.config.hidden);
        let (c3, l, p) = (3 * c, self.layout, &self.params);
        let mut grad = vec![0.0; l.len];
        for (x, g) in xs.iter().zip(upstream) {
            if *g == Vec3::zeros() {
                continue;
            }
            let fw = self.forward(x);
            let mut dh2 = vec![0.0; h];
            for r in 0..3 {
                grad[l.b3 + r] += g[r];
                for (k, dh) in dh2.iter_mut().enumerate() {
                    grad[l.w3 + r * h + k] += g[r] * fw.h2[k];
                    *dh += p[l.w3 + r * h + k] * g[r];
                }
            }
            let dz2: Vec<f64> = dh2.iter().zip(&fw.z2).map(|(d, &z)| d * silu_grad(z)).collect();
            let mut dh1 = vec![0.0; h];
            for (r, &dz) in dz2.iter().enumerate() {
                grad[l.b2 + r] += dz;
                for (k, dh) in dh1.iter_mut().enumerate() {
                    grad[l.w2 + r * h + k] += dz * fw.h1[k];
                    *dh += p[l.w2 + r * h + k] * dz;
                }
            }
            let dz1: Vec<f64> = dh1.iter().zip(&fw.z1).map(|(d, &z)| d * silu_grad(z)).collect();
            let mut dfeat = vec![0.0; c3];
            for (r, &dz) in dz1.iter().enumerate() {
                grad[l.b1 + r] += dz;
                for (k, df) in dfeat.iter_mut().enumerate() {
                    grad[l.w1 + r * c3 + k] += dz * fw.feat[k];
                    *df += p[l.w1 + r * c3 + k] * dz;
                }
            }
            for (plane, fp) in fw.footprints.iter().enumerate() {
                for &(base, w) in fp {
                    for ch in 0..c {
                        grad[base + ch] += w * dfeat[plane * c + ch];
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Squared-difference total variation over all planes and channels,
    /// with its gradient (plane entries only; MLP entries are zero).
    pub fn tv_loss(&self) -> (f64, Vec<f64>) {
        let (p, c) = (self.config.resolution, self.config.channels);
        let mut grad = vec![0.0; self.layout.len];
        let mut loss = 0.0;
        for plane in 0..3 {
            for j in 0..p {
                for k in 0..p {
                    let here = self.plane_index(plane, j, k, 0);
                    let mut neighbours = [None, None];
                    if j + 1 < p {
                        neighbours[0] = Some(self.plane_index(plane, j + 1, k, 0));
                    }
                    if k + 1 < p {
                        neighbours[1] = Some(self.plane_index(plane, j, k + 1, 0));
                    }
                    for next in neighbours.into_iter().flatten() {
                        for ch in 0..c {
                            let d = self.params[next + ch] - self.params[here + ch];
                            loss += d * d;
                            grad[next + ch] += 2.0 * d;
                            grad[here + ch] -= 2.0 * d;
                        }
                    }
                }
            }
        }
        (loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> Aabb {
        Aabb { min: Vec3::zeros(), max: Vec3::repeat(1.0) }
    }

    fn small(p: usize, c: usize, h: usize) -> FieldConfig {
        FieldConfig { resolution: p, channels: c, hidden: h, plane_init_scale: 0.5 }
    }

    /// Field with every parameter random (including the output layer).
    fn random_field(cfg: FieldConfig, seed: u64) -> TriplaneField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = TriplaneField::zeros(cfg, unit_box()).unwrap();
        for v in f.params_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
        f
    }

    #[test]
    fn layout_counts() {
        let f = TriplaneField::zeros(FieldConfig::default(), unit_box()).unwrap();
        let l = f.layout();
        assert_eq!(l.w1, 3 * 32 * 32 * 16);
        assert_eq!(l.len, 3 * 32 * 32 * 16 + 64 * 48 + 64 + 64 * 64 + 64 + 3 * 64 + 3);
    }

    #[test]
    fn fresh_field_is_zero_everywhere() {
        let f = TriplaneField::new(FieldConfig::default(), unit_box(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for x in [Vec3::zeros(), Vec3::new(0.3, 0.7, 0.1), Vec3::repeat(1.0)] {
            assert_eq!(f.query(&x).unwrap(), Vec3::zeros());
        }
        assert!(f.params()[..f.layout().w1].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn lattice_point_matches_hand_evaluated_mlp() {
        let mut f = TriplaneField::zeros(small(3, 1, 3), unit_box()).unwrap();
        // lattice (1, 2) on XY, (1, 0) on XZ, (2, 0) on YZ for x = (0.5, 1, 0)
        let idx = [f.plane_index(0, 1, 2, 0), f.plane_index(1, 1, 0, 0), f.plane_index(2, 2, 0, 0)];
        let feats = [0.4, -0.3, 1.2];
        for (i, v) in idx.iter().zip(feats) {
            f.params_mut()[*i] = v;
        }
        let l = *f.layout();
        for r in 0..3 {
            f.params_mut()[l.w1 + r * 3 + r] = 1.0;
            f.params_mut()[l.w2 + r * 3 + r] = 1.0;
            f.params_mut()[l.w3 + r * 3 + r] = 1.0;
        }
        let x = Vec3::new(0.5, 1.0, 0.0);
        assert_eq!(f.features(&x), feats.to_vec());
        let out = f.query(&x).unwrap();
        for r in 0..3 {
            assert_relative_eq!(out[r], silu(silu(feats[r])), epsilon = 1e-15);
        }
    }

    #[test]
    fn cell_midpoint_averages_four_corners() {
        let f = random_field(small(4, 2, 3), 1);
        // u = 1/6 sits halfway between lattice 0 and 1 on every axis
        let x = Vec3::repeat(1.0 / 6.0);
        let feat = f.features(&x);
        for plane in 0..3 {
            for ch in 0..2 {
                let avg = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(j, k)| f.params()[f.plane_index(plane, j, k, ch)])
                    .sum::<f64>()
                    / 4.0;
                assert_relative_eq!(feat[plane * 2 + ch], avg, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn outside_points_are_clamped_and_counted() {
        let f = random_field(small(4, 2, 3), 2);
        let a = f.query(&Vec3::new(1.5, 0.2, -3.0)).unwrap();
        let b = f.query(&Vec3::new(1.0, 0.2, 0.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(f.clamped_queries(), 1);
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let mut f = random_field(small(2, 1, 2), 3);
        f.params_mut()[0] = f64::NAN;
        assert!(matches!(f.query(&Vec3::zeros()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn degenerate_domain_rejected() {
        let flat = Aabb { min: Vec3::zeros(), max: Vec3::new(1.0, 0.0, 1.0) };
        assert!(TriplaneField::zeros(FieldConfig::default(), flat).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = random_field(small(4, 2, 5), 4);
        let g = f.query_batch_with_param_grad(&[Vec3::repeat(0.3)], &[Vec3::zeros()]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn plane_gradient_is_bilinear_weight_times_upstream() {
        // identity weights, zero planes: the MLP is diagonal around 0
        let mut f = TriplaneField::zeros(small(3, 1, 3), unit_box()).unwrap();
        let l = *f.layout();
        for r in 0..3 {
            f.params_mut()[l.w1 + r * 3 + r] = 1.0;
            f.params_mut()[l.w2 + r * 3 + r] = 1.0;
            f.params_mut()[l.w3 + r * 3 + r] = 1.0;
        }
        // zero features: silu'(0) = 1/2, so d out_r / d feat_r = 1/4
        let x = Vec3::new(0.2, 0.7, 0.9);
        let up = Vec3::new(1.0, -2.0, 0.5);
        let g = f.query_batch_with_param_grad(&[x], &[up]).unwrap();
        let fps = f.footprints(&x);
        for (plane, fp) in fps.iter().enumerate() {
            for &(idx, w) in fp {
                assert_relative_eq!(g[idx], w * up[plane] * 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let f = random_field(small(4, 2, 5), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<Vec3> =
            (0..6).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let up: Vec<Vec3> =
            (0..6).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let g = f.query_batch_with_param_grad(&xs, &up).unwrap();
        let objective = |f: &TriplaneField| -> f64 {
            xs.iter().zip(&up).map(|(x, u)| u.dot(&f.query(x).unwrap())).sum()
        };
        let h = 1e-5;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..f.params().len() {
            let mut fp = f.clone();
            fp.params_mut()[i] += h;
            let mut fm = f.clone();
            fm.params_mut()[i] -= h;
            let fd = (objective(&fp) - objective(&fm)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6 * gmax);
            assert!(rel <= 1e-5, "param {i}: adjoint {} vs fd {fd} (rel {rel})", g[i]);
        }
    }

    #[test]
    fn tv_examples() {
        let mut f = TriplaneField::zeros(small(2, 1, 1), unit_box()).unwrap();
        assert_eq!(f.tv_loss().0, 0.0);
        // plane rows (0, 1) and (0, 1): neighbours along k differ by one
        let i = f.plane_index(0, 0, 1, 0);
        f.params_mut()[i] = 1.0;
        let i = f.plane_index(0, 1, 1, 0);
        f.params_mut()[i] = 1.0;
        assert_eq!(f.tv_loss().0, 2.0);
        let constant = TriplaneField { params: vec![3.0; f.params().len()], ..f.clone() };
        assert_eq!(constant.tv_loss().0, 0.0);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let f = random_field(small(4, 2, 2), 7);
        let (_, g) = f.tv_loss();
        let h = 1e-4;
        for i in 0..f.layout().w1 {
            let mut fp = f.clone();
            fp.params_mut()[i] += h;
            let mut fm = f.clone();
            fm.params_mut()[i] -= h;
            let fd = (fp.tv_loss().0 - fm.tv_loss().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-8 * fd.abs().max(1.0), "param {i}: {} vs {fd}", g[i]);
        }
        assert!(g[f.layout().w1..].iter().all(|v| *v == 0.0));
    }
}
