//! Base-2 information primitives, stable log-sum-exp, projections and
//! composite Gauss-Legendre rules shared by the solvers.

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::dmc::DiscreteChannel;
use crate::error::{domain, Result};

/// Relative entropy value. Support violations are tagged, never NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Divergence::Infinite)
    }

    pub fn value(&self) -> f64 {
        match self {
            Divergence::Finite(v) => *v,
            Divergence::Infinite => f64::INFINITY,
        }
    }
}

/// `t log2 t` with the `0 log 0 = 0` convention.
#[inline]
pub fn xlog2x(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.log2()
    }
}

pub fn log_sum_exp2(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return domain("log_sum_exp2 of an empty vector");
    }
    if values.iter().any(|v| v.is_nan()) {
        return domain("log_sum_exp2 input contains NaN");
    }
    let mx = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx.is_infinite() {
        return Ok(mx);
    }
    let s: f64 = values.iter().map(|v| (v - mx).exp2()).sum();
    Ok(mx + s.log2())
}

/// Weighted variant: log2 sum_i w_i 2^{v_i}, weights nonnegative.
pub fn log_sum_exp2_weighted(values: &[f64], weights: &[f64]) -> f64 {
    let mx = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if mx.is_infinite() {
        return mx;
    }
    let s: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mx).exp2())
        .sum();
    mx + s.log2()
}

/// Normalized base-2 softmax with exponent shift, written into `out`.
pub fn softmax2_into(scores: &[f64], out: &mut [f64]) {
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(scores) {
        *o = (v - mx).exp2();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn softmax2(scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    softmax2_into(scores, &mut out);
    out
}

pub fn check_prob(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return domain("empty probability vector");
    }
    if let Some(i) = p.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return domain(format!("entry {i} is negative or not finite"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 * (p.len() as f64).max(1.0) {
        return domain(format!("probability vector sums to {s}"));
    }
    Ok(())
}

pub fn entropy_bits(p: &[f64]) -> Result<f64> {
    check_prob(p)?;
    Ok(-p.iter().map(|&v| xlog2x(v)).sum::<f64>())
}

pub fn binary_entropy(a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return domain(format!("binary entropy argument {a} outside [0,1]"));
    }
    Ok(-xlog2x(a) - xlog2x(1.0 - a))
}

pub fn kl_bits(p: &[f64], q: &[f64]) -> Result<Divergence> {
    if p.len() != q.len() {
        return domain("kl_bits dimension mismatch");
    }
    check_prob(p)?;
    check_prob(q)?;
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Ok(Divergence::Infinite);
        }
        d += a * (a / b).log2();
    }
    Ok(Divergence::Finite(d.max(0.0)))
}

/// I(p, W) = H(W^T p) - r^T p.
pub fn mutual_information(p: &[f64], w: &DiscreteChannel) -> Result<f64> {
    if p.len() != w.n() {
        return domain(format!(
            "input distribution has length {} but channel has {} inputs",
            p.len(),
            w.n()
        ));
    }
    Ok(mutual_information_unchecked(p, w))
}

pub(crate) fn mutual_information_unchecked(p: &[f64], w: &DiscreteChannel) -> f64 {
    let q = w.output_dist(p);
    let hq = -q.iter().map(|&v| xlog2x(v)).sum::<f64>();
    let rp: f64 = w.r().iter().zip(p).map(|(a, b)| a * b).sum();
    hq - rp
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn project_l2_ball(x: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) {
        return domain(format!("ball radius {radius} must be positive"));
    }
    let mut y = x.to_vec();
    project_l2_ball_in_place(&mut y, radius);
    Ok(y)
}

pub(crate) fn project_l2_ball_in_place(x: &mut [f64], radius: f64) {
    let n = norm2(x);
    if n > radius {
        let s = radius / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    if x.len() != lo.len() || x.len() != hi.len() {
        return domain("project_box dimension mismatch");
    }
    if let Some(i) = lo.iter().zip(hi).position(|(l, h)| l > h) {
        return domain(format!("box bound lo[{i}] > hi[{i}]"));
    }
    Ok(x
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect())
}

/// Nodes and weights of a composite Gauss-Legendre rule on [a, b].
#[derive(Debug, Clone, Serialize)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// `panels` equal subintervals, `order` Gauss-Legendre points on each.
    pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Result<Self> {
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return domain(format!("quadrature interval [{a}, {b}] is empty"));
        }
        if panels == 0 || order == 0 {
            return domain("quadrature needs at least one panel and one node");
        }
        let rule = GaussLegendre::new(order.try_into().unwrap());
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for k in 0..panels {
            let lo = a + k as f64 * h;
            for &(t, w) in rule.as_node_weight_pairs() {
                nodes.push(lo + 0.5 * h * (t + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        Ok(Quadrature { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Golden-section maximization of a unimodal function on [a, b].
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
