//! Probe-set checks of the smoothness and growth conditions the sampler relies on.
//!
//! The RKHS-norm bounds on the kernel cannot be evaluated exactly; these
//! probes check pointwise surrogates (symmetry, derivative consistency,
//! boundedness, Lipschitz ratios) on random points.

use rand::Rng;

use crate::kernels::{sq_dist, Kernel};
use crate::rng::{Domain, RngStream};
use crate::targets::Target;

/// Relative tolerance for `∇F` and `∇₂K` against central differences.
pub const GRADIENT_REL_TOL: f64 = 1e-4;
/// Relative tolerance for the mixed trace against differences of `∇₂K`.
pub const MIXED_REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFailure {
    pub point: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub probes: usize,
    pub max_rel_error: f64,
    pub failure: Option<ProbeFailure>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub probes: usize,
    pub symmetric: bool,
    pub max_grad2_rel_error: f64,
    pub max_mixed_rel_error: f64,
    /// Largest `|K|` seen on the probe set.
    pub sup_value: f64,
    /// Largest `‖∇₂K‖` seen on the probe set.
    pub sup_grad: f64,
    /// Largest `|K(x,y) − K(x',y)| / ‖x − x'‖` seen on the probe set.
    pub lipschitz_ratio: f64,
}

impl KernelReport {
    pub fn passed(&self, bound: f64) -> bool {
        self.symmetric
            && self.max_grad2_rel_error <= GRADIENT_REL_TOL
            && self.max_mixed_rel_error <= MIXED_REL_TOL
            && self.sup_value <= bound
            && self.sup_grad <= bound
            && self.lipschitz_ratio <= bound
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn probe_point(stream: &RngStream, probe: u64, d: usize, radius: f64) -> Vec<f64> {
    let mut rng = stream.generator(Domain::Probe, probe, d as u64);
    (0..d).map(|_| rng.random_range(-radius..radius)).collect()
}

/// Compares `∇F` with central differences of `F` at random points in `[−radius, radius]^d`.
pub fn check_target_gradient(
    target: &dyn Target,
    probes: usize,
    radius: f64,
    seed: u64,
) -> GradientReport {
    let d = target.dim();
    let stream = RngStream::new(seed);
    let mut g = vec![0.0; d];
    let mut worst = 0.0f64;
    let mut failure = None;
    for p in 0..probes {
        let x = probe_point(&stream, p as u64, d, radius);
        target.gradient(&x, &mut g);
        for a in 0..d {
            let h = 1e-5 * x[a].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += h;
            xm[a] -= h;
            let fd = (target.potential(&xp) - target.potential(&xm)) / (2.0 * h);
            let e = rel_err(g[a], fd);
            worst = worst.max(e);
            if e > GRADIENT_REL_TOL && failure.is_none() {
                failure = Some(ProbeFailure {
                    point: x.clone(),
                    detail: format!("component {a}: analytic {} vs fd {fd}", g[a]),
                });
            }
        }
    }
    GradientReport {
        probes,
        max_rel_error: worst,
        failure,
    }
}

/// Symmetry, derivative consistency, boundedness and Lipschitz probes for a kernel.
pub fn check_kernel(
    kernel: &Kernel,
    d: usize,
    probes: usize,
    radius: f64,
    seed: u64,
) -> KernelReport {
    let stream = RngStream::new(seed);
    let mut symmetric = true;
    let (mut e_grad, mut e_mixed, mut sup_k, mut sup_g, mut lip) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut g = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for p in 0..probes as u64 {
        let x = probe_point(&stream, 3 * p, d, radius);
        let y = probe_point(&stream, 3 * p + 1, d, radius);
        let x2 = probe_point(&stream, 3 * p + 2, d, radius);
        let k = kernel.eval(&x, &y);
        symmetric &= k == kernel.eval(&y, &x);
        sup_k = sup_k.max(k.abs()).max(kernel.eval(&x, &x).abs());
        kernel.grad2(&x, &y, &mut g);
        sup_g = sup_g.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        let dist = sq_dist(&x, &x2).sqrt();
        if dist > 0.0 {
            lip = lip.max((k - kernel.eval(&x2, &y)).abs() / dist);
        }
        let mut mixed_fd = 0.0;
        for a in 0..d {
            let h = 1e-5 * y[a].abs().max(1.0);
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[a] += h;
            ym[a] -= h;
            let fd = (kernel.eval(&x, &yp) - kernel.eval(&x, &ym)) / (2.0 * h);
            e_grad = e_grad.max(rel_err(g[a], fd));

            let hx = 1e-5 * x[a].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += hx;
            xm[a] -= hx;
            kernel.grad2(&xp, &y, &mut gp);
            kernel.grad2(&xm, &y, &mut gm);
            mixed_fd += (gp[a] - gm[a]) / (2.0 * hx);
        }
        e_mixed = e_mixed.max(rel_err(kernel.mixed_trace(&x, &y), mixed_fd));
    }
    KernelReport {
        probes,
        symmetric,
        max_grad2_rel_error: e_grad,
        max_mixed_rel_error: e_mixed,
        sup_value: sup_k,
        sup_grad: sup_g,
        lipschitz_ratio: lip,
    }
}

/// Checks `c‖x‖² − C ≤ F(x)` on random points; returns the smallest radius
/// beyond which every probe satisfied the bound (0 when all did).
pub fn dissipativity_radius(
    target: &dyn Target,
    c: f64,
    big_c: f64,
    probes: usize,
    radius: f64,
    seed: u64,
) -> f64 {
    let d = target.dim();
    let stream = RngStream::new(seed);
    let origin = target.potential(&vec![0.0; d]);
    let mut worst = 0.0f64;
    for p in 0..probes as u64 {
        let x = probe_point(&stream, p, d, radius);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        // potentials are defined up to a constant; compare against F(0)
        if c * r2 - big_c > target.potential(&x) - origin {
            worst = worst.max(r2.sqrt());
        }
    }
    worst
}

/// Largest `‖∇F(x) − ∇F(y)‖ / ‖x − y‖` over random probe pairs.
pub fn gradient_lipschitz_probe(target: &dyn Target, probes: usize, radius: f64, seed: u64) -> f64 {
    let d = target.dim();
    let stream = RngStream::new(seed);
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut best = 0.0f64;
    for p in 0..probes as u64 {
        let x = probe_point(&stream, 2 * p, d, radius);
        let y = probe_point(&stream, 2 * p + 1, d, radius);
        target.gradient(&x, &mut gx);
        target.gradient(&y, &mut gy);
        let dist = sq_dist(&x, &y).sqrt();
        if dist > 0.0 {
            best = best.max(sq_dist(&gx, &gy).sqrt() / dist);
        }
    }
    best
}
