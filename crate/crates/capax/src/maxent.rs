//! Minimum relative entropy estimation from noisy monomial moments.
//!
//! The primal problem is `min KL(mu || nu)` subject to `A mu in T`, where
//! `(A mu)_j = E_mu[x^j]` and `T` is a box around the observed moments. It is
//! solved through a doubly smoothed dual with a fast gradient method for
//! strongly concave objectives. Support points are rescaled by `B =
//! max|x|` internally, so all moments live in `[-1, 1]`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{domain, solver, Error, Result};
use crate::numkit::{norm2, project_box, softmax2_into, xlog2x, Quadrature};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Support {
    /// Interval with the uniform reference density.
    Interval { a: f64, b: f64 },
    /// Finite points with reference weights (all positive, summing to one).
    Finite { points: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentData {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub support: Support,
}

impl MomentData {
    pub fn new(y: Vec<f64>, u: Vec<f64>, support: Support) -> Result<Self> {
        if y.is_empty() {
            return domain("at least one moment is required");
        }
        if y.len() != u.len() {
            return domain("moments and radii differ in length");
        }
        if y.iter().any(|v| !v.is_finite()) {
            return domain("moments must be finite");
        }
        if u.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("uncertainty radii must be nonnegative");
        }
        match &support {
            Support::Interval { a, b } => {
                if !(b > a) || !a.is_finite() || !b.is_finite() {
                    return domain(format!("support interval [{a}, {b}] is empty"));
                }
            }
            Support::Finite { points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return domain("finite support needs one weight per point");
                }
                if points.iter().any(|x| !x.is_finite()) {
                    return domain("support points must be finite");
                }
                if let Some(i) = weights.iter().position(|w| !(*w > 0.0)) {
                    return domain(format!("reference weight {i} is not positive"));
                }
                let s: f64 = weights.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return domain(format!("reference weights sum to {s}"));
                }
            }
        }
        Ok(MomentData { y, u, support })
    }

    pub fn uniform_interval(y: Vec<f64>, u: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        Self::new(y, u, Support::Interval { a, b })
    }

    /// Uniform reference on the given points.
    pub fn uniform_finite(y: Vec<f64>, u: Vec<f64>, points: Vec<f64>) -> Result<Self> {
        let n = points.len().max(1);
        let weights = vec![1.0 / n as f64; points.len()];
        Self::new(y, u, Support::Finite { points, weights })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// B = max |x| over the support.
    pub fn scale(&self) -> f64 {
        let b = match &self.support {
            Support::Interval { a, b } => a.abs().max(b.abs()),
            Support::Finite { points, .. } => points.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        };
        if b > 0.0 {
            b
        } else {
            1.0
        }
    }

    /// Bound on the operator norm of the moment map, sum of B^j.
    pub fn op_norm_bound(&self) -> f64 {
        let b = self.scale();
        (1..=self.dim()).map(|j| b.powi(j as i32)).sum()
    }

    /// Same problem with x replaced by x / B.
    pub fn rescaled(&self) -> MomentData {
        let b = self.scale();
        let f = |j: usize| b.powi(j as i32 + 1);
        let support = match &self.support {
            Support::Interval { a, b: hi } => Support::Interval { a: a / b, b: hi / b },
            Support::Finite { points, weights } => Support::Finite {
                points: points.iter().map(|x| x / b).collect(),
                weights: weights.clone(),
            },
        };
        MomentData {
            y: self.y.iter().enumerate().map(|(j, v)| v / f(j)).collect(),
            u: self.u.iter().enumerate().map(|(j, v)| v / f(j)).collect(),
            support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl TargetBox {
    pub fn new(data: &MomentData) -> Self {
        TargetBox {
            lo: data.y.iter().zip(&data.u).map(|(y, u)| y - u).collect(),
            hi: data.y.iter().zip(&data.u).map(|(y, u)| y + u).collect(),
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        project_box(x, &self.lo, &self.hi).expect("box dimensions agree")
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let p = self.project(x);
        x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// sigma_T(z) = max over the box of <x, z>.
    pub fn support_value(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(z, (l, h))| (z * l).max(z * h))
            .sum()
    }

    /// D = max over the box of ||x|| / 2.
    pub fn half_diameter(&self) -> f64 {
        0.5 * self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest distance from x to the complement of the box.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| (x - l).min(h - x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gibbs law mu ∝ 2^c nu and its optimal value -log2 sum nu 2^c.
pub fn gibbs_minimizer(c: &[f64], reference: &[f64]) -> Result<(Vec<f64>, f64)> {
    if c.len() != reference.len() || c.is_empty() {
        return domain("score and reference lengths differ");
    }
    if c.iter().any(|v| !v.is_finite()) {
        return domain("score must be finite");
    }
    let s: Vec<f64> = c.iter().zip(reference).map(|(c, w)| c + w.log2()).collect();
    let mut mu = vec![0.0; c.len()];
    softmax2_into(&s, &mut mu);
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = s.iter().map(|v| (v - m).exp2()).sum();
    Ok((mu, -(m + z.log2())))
}

/// Discretized problem: reference masses on nodes and the moment matrix.
#[derive(Debug, Clone)]
pub struct MaxEntProblem {
    pub nodes: Vec<f64>,
    pub reference: Vec<f64>,
    /// moments[j][k] = nodes[k]^(j+1).
    moments: Vec<Vec<f64>>,
    pub target: TargetBox,
}

pub const DEFAULT_NODES: usize = 256;

impl MaxEntProblem {
    /// Interval supports use a Gauss-Legendre rule with `nodes` points.
    pub fn new(data: &MomentData, nodes: usize) -> Result<Self> {
        let (xs, ws) = match &data.support {
            Support::Interval { a, b } => {
                let panels = (nodes / 8).max(1);
                let q = Quadrature::composite(*a, *b, panels, 8)?;
                let len = b - a;
                (q.nodes, q.weights.iter().map(|w| w / len).collect::<Vec<_>>())
            }
            Support::Finite { points, weights } => (points.clone(), weights.clone()),
        };
        let moments = (1..=data.dim())
            .map(|j| xs.iter().map(|x| x.powi(j as i32)).collect())
            .collect();
        Ok(MaxEntProblem { nodes: xs, reference: ws, moments, target: TargetBox::new(data) })
    }

    pub fn dim(&self) -> usize {
        self.moments.len()
    }

    /// Node masses of mu_z ∝ 2^{-A* z} nu and -log2 of the normalizer.
    pub fn gibbs(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let c: Vec<f64> = (0..self.nodes.len())
            .map(|k| -self.moments.iter().zip(z).map(|(m, z)| m[k] * z).sum::<f64>())
            .collect();
        gibbs_minimizer(&c, &self.reference).expect("finite scores")
    }

    pub fn moments_of(&self, mu: &[f64]) -> Vec<f64> {
        self.moments
            .iter()
            .map(|m| m.iter().zip(mu).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn kl(&self, mu: &[f64]) -> f64 {
        mu.iter()
            .zip(&self.reference)
            .map(|(m, r)| if *m > 0.0 { xlog2x(*m) - m * r.log2() } else { 0.0 })
            .sum()
    }

    /// Unsmoothed dual F(z) = -sigma_T(z) - log2 sum nu 2^{-A* z}.
    pub fn dual(&self, z: &[f64]) -> f64 {
        let (_, v) = self.gibbs(z);
        v - self.target.support_value(z)
    }

    /// F_eta(z), its gradient and the Gibbs masses at z.
    pub fn smoothed(&self, z: &[f64], eta1: f64, eta2: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = z.iter().map(|v| v / eta1).collect();
        let xs = self.target.project(&xs);
        let (mu, v) = self.gibbs(z);
        let am = self.moments_of(&mu);
        let inner: f64 = xs.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() - 0.5 * eta1 * norm2(&xs).powi(2);
        let value = -inner + v - 0.5 * eta2 * norm2(z).powi(2);
        let grad = (0..z.len()).map(|j| -xs[j] + am[j] - eta2 * z[j]).collect();
        (value, grad, mu)
    }
}

/// F_eta and its gradient for data on its own (unscaled) coordinates.
pub fn smoothed_dual(z: &[f64], data: &MomentData, eta1: f64, eta2: f64) -> Result<(f64, Vec<f64>)> {
    if !(eta1 > 0.0 && eta2 > 0.0) {
        return domain("smoothing parameters must be positive");
    }
    if z.len() != data.dim() {
        return domain("dual vector has the wrong length");
    }
    let p = MaxEntProblem::new(data, DEFAULT_NODES)?;
    let (v, g, _) = p.smoothed(z, eta1, eta2);
    Ok((v, g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingEta {
    pub eta1: f64,
    pub eta2: f64,
    pub d: f64,
    pub c: f64,
    pub delta: f64,
    pub op_norm: f64,
    pub l: f64,
    pub n1: f64,
    pub n2: f64,
}

impl SmoothingEta {
    pub fn new(eps: f64, d: f64, op_norm: f64, c: f64, delta: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return domain("accuracy must be positive");
        }
        if !(delta > 0.0 && c > 0.0) {
            return domain("smoothing needs C > 0 and delta > 0");
        }
        let d = d.max(f64::MIN_POSITIVE);
        let eta1 = eps / (4.0 * d);
        let eta2 = eps * delta * delta / (2.0 * c * c);
        let a2 = op_norm * op_norm;
        let l = 1.0 / eta1 + a2 + eta2;
        let root = 2.0
            * (8.0 * d * c * c / (eps * eps * delta * delta) + 2.0 * a2 * c * c / (eps * delta * delta) + 1.0)
                .sqrt();
        let n1 = root * (10.0 * (eps + 2.0 * c) / eps).ln();
        let inner = 4.0 * (4.0 * d / eps + a2 + eta2) * (c + 0.5 * eps);
        let n2 = root * (c / (eps * delta * (2.0 - 3f64.sqrt())) * inner.sqrt()).ln();
        Ok(SmoothingEta { eta1, eta2, d, c, delta, op_norm, l, n1, n2 })
    }

    pub fn iterations(&self) -> usize {
        self.n1.max(self.n2).max(1.0).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlaterCertificate {
    /// Coefficients of p(t) = sum alpha_j t^j on t in [0, 1].
    pub alpha: Vec<f64>,
    /// Scaled support [lo, hi] that t = 0..1 maps onto.
    pub interval: (f64, f64),
    pub c: f64,
    pub delta: f64,
    /// Positivity holds between the validation nodes as well.
    pub certified: bool,
    pub interior: bool,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// int_0^1 (a + c t)^i t^j dt.
fn shifted_moment(a: f64, c: f64, i: usize, j: usize) -> f64 {
    (0..=i)
        .map(|k| binom(i, k) * a.powi((i - k) as i32) * c.powi(k as i32) / (k + j + 1) as f64)
        .sum()
}

fn poly(alpha: &[f64], t: f64) -> f64 {
    alpha.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

/// minilp unwraps a failed LU factorization internally; treat that panic as
/// an infeasible or degenerate LP instead of aborting.
fn solve_lp(lp: &Problem) -> Option<minilp::Solution> {
    static QUIET: std::sync::Once = std::sync::Once::new();
    QUIET.call_once(|| {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(move |info| {
            if !info.location().is_some_and(|l| l.file().contains("minilp")) {
                prev(info);
            }
        }));
    });
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| lp.solve())).ok()?.ok()
}

const SLATER_GRID: usize = 1024;
const SLATER_FLOOR: f64 = 1e-6;
const SLATER_MAX_DEGREE: usize = 25;

fn slater_attempt(lo: f64, hi: f64, target: &TargetBox, beta: &[f64], r: usize) -> Option<Vec<f64>> {
    let c = hi - lo;
    let mm = beta.len();
    let a = DMatrix::from_fn(mm, r, |i, j| shifted_moment(lo, c, i, j));
    let grid: Vec<f64> = (0..SLATER_GRID).map(|g| g as f64 / (SLATER_GRID - 1) as f64).collect();
    let b = DVector::from_column_slice(beta);
    if let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-14) {
        let alpha: Vec<f64> = sol.iter().copied().collect();
        let res = (&a * &sol - &b).norm();
        if res < 1e-9 && grid.iter().all(|&t| poly(&alpha, t) >= SLATER_FLOOR) {
            return Some(alpha);
        }
    }
    // Linear feasibility: maximize the moment margin with p >= floor on the grid.
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..r).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let m = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let row = |i: usize| -> Vec<(minilp::Variable, f64)> {
        vars.iter().enumerate().map(|(j, v)| (*v, a[(i, j)])).collect()
    };
    lp.add_constraint(row(0), ComparisonOp::Eq, 1.0);
    for i in 1..mm {
        let mut e = row(i);
        e.push((m, -1.0));
        lp.add_constraint(e, ComparisonOp::Ge, target.lo[i - 1]);
        let mut e = row(i);
        e.push((m, 1.0));
        lp.add_constraint(e, ComparisonOp::Le, target.hi[i - 1]);
    }
    for &t in &grid {
        let e: Vec<_> = vars.iter().enumerate().map(|(j, v)| (*v, t.powi(j as i32))).collect();
        lp.add_constraint(e, ComparisonOp::Ge, SLATER_FLOOR);
    }
    let sol = solve_lp(&lp)?;
    if *sol.var_value(m) < 0.0 {
        return None;
    }
    Some(vars.iter().map(|v| *sol.var_value(*v)).collect())
}

/// Strictly feasible polynomial density on the rescaled interval.
pub fn slater_point(data: &MomentData, r: usize) -> Result<SlaterCertificate> {
    let scaled = data.rescaled();
    let (lo, hi) = match scaled.support {
        Support::Interval { a, b } => (a, b),
        Support::Finite { .. } => return domain("Slater polynomials need an interval support"),
    };
    if r < data.dim() + 1 {
        return domain(format!("degree {r} below number of moments + 1"));
    }
    let target = TargetBox::new(&scaled);
    let mut beta = vec![1.0];
    beta.extend(&scaled.y);
    let mut deg = r;
    while deg <= SLATER_MAX_DEGREE {
        if let Some(alpha) = slater_attempt(lo, hi, &target, &beta, deg) {
            return Ok(certificate(alpha, lo, hi, &target));
        }
        deg += 2;
    }
    Err(Error::CertificateUnavailable(format!(
        "no nonnegative polynomial density of degree up to {SLATER_MAX_DEGREE} matches the moments"
    )))
}

fn certificate(alpha: Vec<f64>, lo: f64, hi: f64, target: &TargetBox) -> SlaterCertificate {
    let h = 1.0 / (SLATER_GRID - 1) as f64;
    let grid_min = (0..SLATER_GRID)
        .map(|g| poly(&alpha, g as f64 * h))
        .fold(f64::INFINITY, f64::min);
    let lip: f64 = alpha.iter().enumerate().map(|(j, a)| j as f64 * a.abs()).sum();
    let q = Quadrature::composite(0.0, 1.0, 64, 8).expect("valid rule");
    let c = q.integrate(|t| xlog2x(poly(&alpha, t).max(0.0)));
    let c_len = hi - lo;
    let moments: Vec<f64> = (1..=target.lo.len())
        .map(|i| (0..alpha.len()).map(|j| alpha[j] * shifted_moment(lo, c_len, i, j)).sum())
        .collect();
    let delta = target.margin(&moments).max(0.0);
    SlaterCertificate {
        alpha,
        interval: (lo, hi),
        c,
        delta,
        certified: grid_min - 0.5 * lip * h >= 0.0,
        interior: delta > 0.0,
    }
}

/// Finite-support analogue: C = max log2(1/nu_i) and delta the best moment
/// margin of any law on the points.
pub fn finite_constants(problem: &MaxEntProblem) -> (f64, f64) {
    let c = problem
        .reference
        .iter()
        .fold(0.0f64, |m, w| m.max(-w.log2()));
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = problem.nodes.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    lp.add_constraint(vars.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for (j, m) in problem.moments.iter().enumerate() {
        let mut e: Vec<_> = vars.iter().zip(m).map(|(v, a)| (*v, *a)).collect();
        e.push((t, -1.0));
        lp.add_constraint(e.clone(), ComparisonOp::Ge, problem.target.lo[j]);
        let mut e: Vec<_> = vars.iter().zip(m).map(|(v, a)| (*v, *a)).collect();
        e.push((t, 1.0));
        lp.add_constraint(e, ComparisonOp::Le, problem.target.hi[j]);
    }
    let delta = solve_lp(&lp).map(|s| *s.var_value(t)).unwrap_or(f64::NEG_INFINITY);
    (c, delta)
}

/// Iterates y_0, y_1, ... of the fast gradient method for F_eta.
pub fn fast_gradient_sc(
    problem: &MaxEntProblem,
    eta1: f64,
    eta2: f64,
    l: f64,
    z0: &[f64],
    iters: usize,
) -> Result<Vec<Vec<f64>>> {
    if iters == 0 {
        return domain("at least one iteration is required");
    }
    let mut seq = vec![z0.to_vec()];
    run_fgm(problem, eta1, eta2, l, z0, iters, false, None, None, |y| {
        seq.push(y.to_vec());
        Ok(false)
    })?;
    Ok(seq)
}

/// Runs the scheme; `visit` sees every y_k and may stop the run.
#[allow(clippy::too_many_arguments)]
fn run_fgm<V>(
    problem: &MaxEntProblem,
    eta1: f64,
    eta2: f64,
    l: f64,
    z0: &[f64],
    iters: usize,
    restart: bool,
    grad_tol: Option<f64>,
    mut check: Option<(usize, &mut dyn FnMut(&[f64]) -> Result<bool>)>,
    mut visit: V,
) -> Result<(Vec<f64>, usize)>
where
    V: FnMut(&[f64]) -> Result<bool>,
{
    let q = (l.sqrt() - eta2.sqrt()) / (l.sqrt() + eta2.sqrt());
    let mut y = z0.to_vec();
    let mut w = z0.to_vec();
    for k in 0..iters {
        let (_, g, _) = problem.smoothed(&w, eta1, eta2);
        if g.iter().any(|v| !v.is_finite()) {
            return solver(format!("non-finite gradient at iteration {k}"), f64::NAN);
        }
        if let Some(tol) = grad_tol {
            if norm2(&g) <= tol {
                return Ok((w, k));
            }
        }
        let yn: Vec<f64> = w.iter().zip(&g).map(|(w, g)| w + g / l).collect();
        let ascent: f64 = g.iter().zip(yn.iter().zip(&y)).map(|(g, (a, b))| g * (a - b)).sum();
        if restart && ascent < 0.0 {
            w.clone_from(&y);
            continue;
        }
        for i in 0..w.len() {
            w[i] = yn[i] + q * (yn[i] - y[i]);
        }
        y = yn;
        if visit(&y)? {
            return Ok((y, k + 1));
        }
        if let Some((every, f)) = check.as_mut() {
            if (k + 1) % *every == 0 && f(&y)? {
                return Ok((y, k + 1));
            }
        }
    }
    Ok((y, iters))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MaxEntMode {
    Continuous,
    Finite,
}

#[derive(Debug, Clone)]
pub struct MaxEntOptions {
    /// First polynomial degree tried for the Slater point.
    pub slater_degree: Option<usize>,
    /// Replaces the computed certificate.
    pub certificate: Option<SlaterCertificate>,
    /// delta used to pick eta2 when no interior point exists.
    pub pseudo_delta: f64,
    /// Explicit (eta1, eta2) in rescaled coordinates.
    pub eta: Option<(f64, f64)>,
    pub max_iters: Option<usize>,
    /// Check the a-posteriori gap every this many iterations.
    pub check_every: Option<usize>,
    pub grad_tol: Option<f64>,
    pub restart: bool,
    /// Warm start in rescaled coordinates.
    pub z0: Option<Vec<f64>>,
    pub nodes: usize,
    pub require_apriori: bool,
}

impl Default for MaxEntOptions {
    fn default() -> Self {
        MaxEntOptions {
            slater_degree: None,
            certificate: None,
            pseudo_delta: 1e-3,
            eta: None,
            max_iters: None,
            check_every: None,
            grad_tol: None,
            restart: false,
            z0: None,
            nodes: DEFAULT_NODES,
            require_apriori: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxEntResult {
    pub mode: MaxEntMode,
    /// Dual vector for the original moments.
    pub z_hat: Vec<f64>,
    /// Dual vector for the rescaled moments x^j / B^j.
    pub z_scaled: Vec<f64>,
    pub scale: f64,
    /// mu_hat(dx) = 2^{-sum z_j x^j - log2_normalizer} nu(dx).
    pub log2_normalizer: f64,
    pub nodes: Vec<f64>,
    /// Masses of mu_hat on the nodes.
    pub weights: Vec<f64>,
    pub moments: Vec<f64>,
    pub kl_value: f64,
    /// d(A mu_hat, T) for the rescaled moments.
    pub feasibility_distance: f64,
    pub dual_value: f64,
    pub posterior_upper: Option<f64>,
    pub entropy_upper: f64,
    pub entropy_lower: Option<f64>,
    pub apriori: bool,
    pub feasibility_bound: Option<f64>,
    pub eta: Option<SmoothingEta>,
    pub eta1: f64,
    pub eta2: f64,
    pub iterations: usize,
    pub planned_iterations: usize,
    pub certificate: Option<SlaterCertificate>,
    pub c: f64,
    pub delta: f64,
}

impl MaxEntResult {
    /// Density of mu_hat with respect to the reference.
    pub fn density(&self, x: f64) -> f64 {
        let s: f64 = self.z_hat.iter().enumerate().map(|(j, z)| z * x.powi(j as i32 + 1)).sum();
        (-s - self.log2_normalizer).exp2()
    }
}

pub fn solve_maxent(data: &MomentData, eps: f64, mode: MaxEntMode) -> Result<MaxEntResult> {
    solve_maxent_with(data, eps, mode, &MaxEntOptions::default())
}

pub fn solve_maxent_with(
    data: &MomentData,
    eps: f64,
    mode: MaxEntMode,
    opts: &MaxEntOptions,
) -> Result<MaxEntResult> {
    if !(eps > 0.0) {
        return domain("accuracy must be positive");
    }
    match (&data.support, mode) {
        (Support::Interval { .. }, MaxEntMode::Continuous) | (Support::Finite { .. }, MaxEntMode::Finite) => {}
        _ => return domain("mode does not match the support type"),
    }
    let b = data.scale();
    let scaled = data.rescaled();
    let problem = MaxEntProblem::new(&scaled, opts.nodes)?;
    let mm = data.dim();
    let (certificate, c, delta) = match mode {
        MaxEntMode::Continuous => {
            let cert = match &opts.certificate {
                Some(c) => Some(c.clone()),
                None => match slater_point(data, opts.slater_degree.unwrap_or(mm + 2)) {
                    Ok(c) => Some(c),
                    Err(Error::CertificateUnavailable(_)) => None,
                    Err(e) => return Err(e),
                },
            };
            // Any C above KL(mu0 || nu) is valid; keep it away from zero.
            let (c, d) = cert.as_ref().map_or((0.0, 0.0), |c| (c.c.max(1e-12), c.delta));
            (cert, c, d)
        }
        MaxEntMode::Finite => {
            let (c, d) = finite_constants(&problem);
            (None, c, d.max(0.0))
        }
    };
    let apriori = delta > 0.0 && c > 0.0;
    if opts.require_apriori && !apriori {
        return Err(Error::CertificateUnavailable(
            "no strictly feasible point with positive margin; a-priori bounds unavailable".into(),
        ));
    }
    let d = problem.target.half_diameter();
    let op_norm = scaled.op_norm_bound();
    let eta = if apriori {
        Some(SmoothingEta::new(eps, d, op_norm, c, delta)?)
    } else {
        // Pseudo constants keep the iteration well defined.
        Some(SmoothingEta::new(eps, d, op_norm, c.max(1.0), opts.pseudo_delta)?)
    };
    let (eta1, eta2) = opts.eta.unwrap_or_else(|| {
        let e = eta.as_ref().unwrap();
        (e.eta1, e.eta2)
    });
    if !(eta1 > 0.0 && eta2 > 0.0) {
        return domain("smoothing parameters must be positive");
    }
    let l = 1.0 / eta1 + op_norm * op_norm + eta2;
    let planned = opts.max_iters.unwrap_or_else(|| eta.as_ref().unwrap().iterations());
    let z0 = opts.z0.clone().unwrap_or_else(|| vec![0.0; mm]);
    if z0.len() != mm {
        return domain("warm start has the wrong length");
    }
    let ratio = if apriori { Some(c / delta) } else { None };
    let mut gap_check = |y: &[f64]| -> Result<bool> {
        let (mu, _) = problem.gibbs(y);
        let dist = problem.target.distance(&problem.moments_of(&mu));
        Ok(match ratio {
            Some(r) => problem.kl(&mu) + r * dist - problem.dual(y) <= eps,
            None => false,
        })
    };
    let check = opts
        .check_every
        .map(|e| (e.max(1), &mut gap_check as &mut dyn FnMut(&[f64]) -> Result<bool>));
    let (z, iterations) =
        run_fgm(&problem, eta1, eta2, l, &z0, planned, opts.restart, opts.grad_tol, check, |_| Ok(false))?;
    let (mu, neg_log_norm) = problem.gibbs(&z);
    let moments_scaled = problem.moments_of(&mu);
    let kl_value = problem.kl(&mu).max(0.0);
    let dist = problem.target.distance(&moments_scaled);
    let dual_value = problem.dual(&z);
    if !dual_value.is_finite() || !kl_value.is_finite() {
        return solver("non-finite objective", f64::NAN);
    }
    let posterior_upper = ratio.map(|r| kl_value + r * dist);
    let z_hat: Vec<f64> = z.iter().enumerate().map(|(j, v)| v / b.powi(j as i32 + 1)).collect();
    // Normalizer relative to the reference measure in original coordinates.
    let log2_normalizer = -neg_log_norm;
    Ok(MaxEntResult {
        mode,
        z_hat,
        z_scaled: z,
        scale: b,
        log2_normalizer,
        nodes: problem.nodes.iter().map(|x| x * b).collect(),
        weights: mu,
        moments: moments_scaled
            .iter()
            .enumerate()
            .map(|(j, m)| m * b.powi(j as i32 + 1))
            .collect(),
        kl_value,
        feasibility_distance: dist,
        dual_value,
        posterior_upper,
        entropy_upper: -dual_value,
        entropy_lower: posterior_upper.map(|v| -v),
        apriori,
        feasibility_bound: if apriori { Some(2.0 * eps * delta / c) } else { None },
        eta: if apriori { eta } else { None },
        eta1,
        eta2,
        iterations,
        planned_iterations: planned,
        certificate,
        c,
        delta,
    })
}

/// (F(z_hat), KL(mu_hat) + (C/delta) d(A mu_hat, T)).
pub fn posterior_bounds(result: &MaxEntResult, certificate: &SlaterCertificate) -> Result<(f64, f64)> {
    if !(certificate.delta > 0.0) {
        return Err(Error::CertificateUnavailable("certificate has no interior margin".into()));
    }
    let upper = result.kl_value + certificate.c / certificate.delta * result.feasibility_distance;
    Ok((result.dual_value, upper))
}
