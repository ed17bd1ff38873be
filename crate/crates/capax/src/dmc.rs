//! Capacity of discrete memoryless channels through the smoothed dual
//! with a fast gradient scheme, plus a Blahut-Arimoto baseline and a
//! perturbation wrapper for channels with zero entries.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{domain, solver, Result};
use crate::numkit::{
    self, log_sum_exp2, mutual_information_unchecked, project_l2_ball_in_place, softmax2_into,
    xlog2x,
};

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteChannel {
    n: usize,
    m: usize,
    w: Vec<f64>,
    r: Vec<f64>,
    gamma: f64,
}

impl DiscreteChannel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return domain("channel has no rows");
        }
        let m = rows[0].len();
        if m == 0 {
            return domain("channel has no columns");
        }
        let mut w = Vec::with_capacity(n * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return domain(format!("row {i} has {} entries, expected {m}", row.len()));
            }
            w.extend_from_slice(row);
        }
        Self::from_flat(n, m, w)
    }

    pub fn from_flat(n: usize, m: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != n * m || n == 0 || m == 0 {
            return domain("channel matrix shape mismatch");
        }
        for i in 0..n {
            let row = &w[i * m..(i + 1) * m];
            if let Some(j) = row.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
                return domain(format!("row {i} column {j}: entry is negative or not finite"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return domain(format!("row {i} sums to {s}, not 1"));
            }
        }
        let r = (0..n)
            .map(|i| -w[i * m..(i + 1) * m].iter().map(|&v| xlog2x(v)).sum::<f64>())
            .collect();
        let gamma = w.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(DiscreteChannel { n, m, w, r, gamma })
    }

    /// Number of inputs.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of outputs.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Conditional output entropies r_i = H(W(.|i)).
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Output distribution W^T p.
    pub fn output_dist(&self, p: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.m];
        self.accumulate_output(p, 1.0, &mut q);
        q
    }

    fn accumulate_output(&self, p: &[f64], scale: f64, q: &mut [f64]) {
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            let c = scale * pi;
            for (qj, wj) in q.iter_mut().zip(self.row(i)) {
                *qj += c * wj;
            }
        }
    }

    /// W lambda (length N).
    pub fn apply(&self, lambda: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(lambda).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Scores W lambda - r.
    pub fn scores(&self, lambda: &[f64]) -> Vec<f64> {
        let mut c = self.apply(lambda);
        c.iter_mut().zip(&self.r).for_each(|(a, b)| *a -= b);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CostMode {
    /// s^T p = S.
    Equality,
    /// s^T p <= S.
    Inequality,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputCostConstraint {
    pub s: Vec<f64>,
    pub budget: f64,
    pub mode: CostMode,
}

impl InputCostConstraint {
    pub fn new(s: Vec<f64>, budget: f64, mode: CostMode) -> Result<Self> {
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("cost vector must be nonnegative and finite");
        }
        if s.is_empty() {
            return domain("empty cost vector");
        }
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(budget >= lo) {
            return domain(format!("budget {budget} below the minimal cost {lo}"));
        }
        if mode == CostMode::Equality {
            let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if budget > hi {
                return domain(format!("budget {budget} above the maximal cost {hi}"));
            }
        }
        Ok(InputCostConstraint { s, budget, mode })
    }
}

/// Radius of the ball Q that contains a dual optimizer.
pub fn dual_ball_radius(m: usize, gamma: f64) -> f64 {
    m as f64 * (1.0 / gamma).log2().max(1.0 / LN_2)
}

/// F(lambda) = log2 sum_j 2^{-lambda_j} and its gradient.
pub fn dual_f(lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
    if lambda.iter().any(|v| !v.is_finite()) {
        return domain("dual_f needs finite lambda");
    }
    let neg: Vec<f64> = lambda.iter().map(|v| -v).collect();
    let value = log_sum_exp2(&neg)?;
    let mut g = numkit::softmax2(&neg);
    g.iter_mut().for_each(|v| *v = -*v);
    Ok((value, g))
}

/// Maximizer of c^T p + H(p) over the (cost-sliced) simplex, where
/// `c` already carries the 1/nu factor. Optional `base` weights give the
/// measure against which the exponential family is formed.
pub(crate) fn gibbs_with_cost(
    c: &[f64],
    base: Option<&[f64]>,
    s: &[f64],
    budget: f64,
    mode: CostMode,
) -> Result<Vec<f64>> {
    let n = c.len();
    let logb = |i: usize| base.map_or(0.0, |b| b[i].log2());
    let mut p = vec![0.0; n];
    let scores: Vec<f64> = (0..n).map(|i| c[i] + logb(i)).collect();
    softmax2_into(&scores, &mut p);
    let mean: f64 = p.iter().zip(s).map(|(a, b)| a * b).sum();
    if mode == CostMode::Inequality && mean <= budget {
        return Ok(p);
    }
    let active: Vec<usize> = (0..n).filter(|&i| base.map_or(true, |b| b[i] > 0.0)).collect();
    let lo = active.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
    let hi = active.iter().map(|&i| s[i]).fold(f64::NEG_INFINITY, f64::max);
    if budget < lo - 1e-12 || budget > hi + 1e-12 {
        return domain(format!("budget {budget} outside [{lo}, {hi}]"));
    }
    let span = (hi - lo).max(1e-300);
    if budget - lo <= 1e-12 * span || hi - budget <= 1e-12 * span {
        // Only the extreme-cost inputs can meet the budget.
        let target = if budget - lo <= 1e-12 * span { lo } else { hi };
        let masked: Vec<f64> = (0..n)
            .map(|i| if s[i] == target { scores[i] } else { f64::NEG_INFINITY })
            .collect();
        softmax2_into(&masked, &mut p);
        return Ok(p);
    }
    // Newton on (mu1, mu2) for p_i = 2^{mu1 + c_i + mu2 s_i}; costs centred
    // at the budget and scores shifted by their maximum.
    let cmax = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cs: Vec<f64> = scores.iter().map(|v| v - cmax).collect();
    let sc: Vec<f64> = s.iter().map(|v| (v - budget) / span).collect();
    let eval = |mu: [f64; 2], p: &mut [f64]| -> (f64, [f64; 2], [f64; 3]) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let e = mu[0] + cs[i] + mu[1] * sc[i];
            let v = if cs[i] == f64::NEG_INFINITY { 0.0 } else { e.exp2() };
            p[i] = v;
            s0 += v;
            s1 += sc[i] * v;
            s2 += sc[i] * sc[i] * v;
        }
        let obj = mu[0] - s0 / LN_2;
        (obj, [1.0 - s0, -s1], [LN_2 * s0, LN_2 * s1, LN_2 * s2])
    };
    let mut mu = [-(n as f64).log2(), 0.0];
    let mut q = vec![0.0; n];
    let (mut obj, mut g, mut h) = eval(mu, &mut p);
    for _ in 0..100 {
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn <= 1e-10 {
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= z);
            return Ok(p);
        }
        let det = h[0] * h[2] - h[1] * h[1];
        let d = if det > 1e-300 {
            [(h[2] * g[0] - h[1] * g[1]) / det, (h[0] * g[1] - h[1] * g[0]) / det]
        } else {
            [g[0], g[1]]
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [mu[0] + t * d[0], mu[1] + t * d[1]];
            let (o2, g2, h2) = eval(cand, &mut q);
            if o2.is_finite() && o2 >= obj - 1e-15 * obj.abs().max(1.0) {
                mu = cand;
                obj = o2;
                g = g2;
                h = h2;
                std::mem::swap(&mut p, &mut q);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = (g[0] * g[0] + g[1] * g[1]).sqrt();
    solver("cost multiplier Newton iteration did not converge", residual)
}

/// Optimizer p_nu(lambda) of the smoothed inner problem.
pub fn smoothed_input_dist(
    channel: &DiscreteChannel,
    lambda: &[f64],
    nu: f64,
    cost: Option<&InputCostConstraint>,
) -> Result<Vec<f64>> {
    if !(nu > 0.0) {
        return domain("smoothing parameter must be positive");
    }
    if lambda.len() != channel.m() {
        return domain("lambda length must equal the number of outputs");
    }
    let c: Vec<f64> = channel.scores(lambda).iter().map(|v| v / nu).collect();
    match cost {
        None => Ok(numkit::softmax2(&c)),
        Some(k) => {
            if k.s.len() != channel.n() {
                return domain("cost vector length must equal the number of inputs");
            }
            gibbs_with_cost(&c, None, &k.s, k.budget, k.mode)
        }
    }
}

/// G(lambda): maximum of (W lambda - r)^T p over feasible inputs.
pub fn dual_g(
    channel: &DiscreteChannel,
    lambda: &[f64],
    cost: Option<&InputCostConstraint>,
) -> f64 {
    let c = channel.scores(lambda);
    linear_max(&c, cost)
}

pub(crate) fn linear_max(c: &[f64], cost: Option<&InputCostConstraint>) -> f64 {
    let Some(k) = cost else {
        return c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    };
    let s = &k.s;
    let b = k.budget;
    let mut best = f64::NEG_INFINITY;
    for i in 0..c.len() {
        if s[i] == b || (k.mode == CostMode::Inequality && s[i] <= b) {
            best = best.max(c[i]);
        }
    }
    // Extreme points of the cost-sliced simplex mix one cheap and one costly input.
    for i in 0..c.len() {
        if s[i] >= b {
            continue;
        }
        for j in 0..c.len() {
            if s[j] <= b {
                continue;
            }
            let th = (s[j] - b) / (s[j] - s[i]);
            best = best.max(th * c[i] + (1.0 - th) * c[j]);
        }
    }
    best
}

/// F(lambda) + G(lambda) - I(p, W).
pub fn posterior_gap(
    channel: &DiscreteChannel,
    lambda_hat: &[f64],
    p_hat: &[f64],
    cost: Option<&InputCostConstraint>,
) -> Result<f64> {
    if lambda_hat.len() != channel.m() || p_hat.len() != channel.n() {
        return domain("posterior_gap dimension mismatch");
    }
    let (f, _) = dual_f(lambda_hat)?;
    let g = dual_g(channel, lambda_hat, cost);
    Ok(f + g - mutual_information_unchecked(p_hat, channel))
}

/// Smoothed G_nu(lambda), its gradient W^T p_nu and the optimizer p_nu.
pub fn smoothed_dual_g(
    channel: &DiscreteChannel,
    lambda: &[f64],
    nu: f64,
    cost: Option<&InputCostConstraint>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = smoothed_input_dist(channel, lambda, nu, cost)?;
    let c = channel.scores(lambda);
    let hp = -p.iter().map(|&v| xlog2x(v)).sum::<f64>();
    let value = match cost {
        None => {
            let scaled: Vec<f64> = c.iter().map(|v| v / nu).collect();
            nu * log_sum_exp2(&scaled)? - nu * (channel.n() as f64).log2()
        }
        Some(_) => {
            c.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() + nu * hp
                - nu * (channel.n() as f64).log2()
        }
    };
    Ok((value, channel.output_dist(&p), p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StoppingMode {
    APriori,
    APosteriori,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    /// Iteration budget n; derived from `target_eps` when absent.
    pub iters: Option<usize>,
    pub target_eps: Option<f64>,
    pub stopping: StoppingMode,
    /// Check interval for a-posteriori stopping; default max(100, n/100).
    pub check_every: Option<usize>,
    /// Overrides the smoothing parameter derived from n.
    pub nu: Option<f64>,
}

impl SolveConfig {
    pub fn iterations(n: usize) -> Self {
        SolveConfig {
            iters: Some(n),
            target_eps: None,
            stopping: StoppingMode::APriori,
            check_every: None,
            nu: None,
        }
    }

    pub fn target(eps: f64) -> Self {
        SolveConfig {
            iters: None,
            target_eps: Some(eps),
            stopping: StoppingMode::APosteriori,
            check_every: None,
            nu: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub k: usize,
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityCertificate {
    pub upper: f64,
    pub lower: f64,
    pub posterior_gap: f64,
    pub apriori_bound: f64,
    pub p_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub iterations: usize,
    pub planned_iterations: usize,
    pub nu: f64,
    pub radius: f64,
    pub trace: Vec<TracePoint>,
}

/// Prox constants D1 = R^2/2 and D2 = log2 N.
pub fn prox_constants(radius: f64, n_inputs: usize) -> (f64, f64) {
    (0.5 * radius * radius, (n_inputs as f64).log2().max(f64::MIN_POSITIVE))
}

pub fn apriori_bound(d1: f64, d2: f64, n: usize) -> f64 {
    let k = n as f64 + 1.0;
    4.0 * (d1 * d2).sqrt() / k + 4.0 * d1 / (k * k)
}

/// Smallest n whose a-priori bound is at most eps.
pub fn iterations_for(d1: f64, d2: f64, eps: f64) -> usize {
    let a = 4.0 * d1;
    let b = 4.0 * (d1 * d2).sqrt();
    let t = (-b + (b * b + 4.0 * a * eps).sqrt()) / (2.0 * a);
    let mut n = ((1.0 / t) - 1.0).ceil().max(1.0) as usize;
    while n > 1 && apriori_bound(d1, d2, n - 1) <= eps {
        n -= 1;
    }
    while apriori_bound(d1, d2, n) > eps {
        n += 1;
    }
    n
}

pub fn smoothing_for(d1: f64, d2: f64, n: usize) -> f64 {
    2.0 / (n as f64 + 1.0) * (d1 / d2).sqrt()
}

pub(crate) struct FgmOutput {
    pub lambda_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
}

/// The three-sequence scheme over the ball of radius `radius`. `oracle`
/// returns the gradient of F + G_nu at x and the inner optimizer p_nu(x);
/// `check` evaluates (upper, lower) for a candidate (lambda, p).
pub(crate) fn fast_gradient_ball<O, C>(
    dim: usize,
    pdim: usize,
    radius: f64,
    lip: f64,
    n: usize,
    check_every: Option<usize>,
    eps: Option<f64>,
    mut oracle: O,
    mut check: C,
) -> Result<FgmOutput>
where
    O: FnMut(&[f64], &mut [f64], &mut [f64]) -> Result<()>,
    C: FnMut(&[f64], &[f64]) -> Result<(f64, f64)>,
{
    let mut x = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut gsum = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut p = vec![0.0; pdim];
    let mut p_acc = vec![0.0; pdim];
    let mut wsum = 0.0;
    let mut trace = Vec::new();
    let mut done = n;
    for k in 0..n {
        oracle(&x, &mut g, &mut p)?;
        if g.iter().any(|v| !v.is_finite()) {
            return solver(format!("non-finite gradient at iteration {k}"), f64::NAN);
        }
        let wk = (k + 1) as f64;
        for (a, b) in p_acc.iter_mut().zip(&p) {
            *a += wk * b;
        }
        wsum += wk;
        for i in 0..dim {
            y[i] = x[i] - g[i] / lip;
            gsum[i] += 0.5 * wk * g[i];
            z[i] = -gsum[i] / lip;
        }
        project_l2_ball_in_place(&mut y, radius);
        project_l2_ball_in_place(&mut z, radius);
        let a = 2.0 / (k as f64 + 3.0);
        for i in 0..dim {
            x[i] = a * z[i] + (1.0 - a) * y[i];
        }
        let last = k + 1 == n;
        if let Some(every) = check_every {
            if (k + 1) % every == 0 || last {
                let ph: Vec<f64> = p_acc.iter().map(|v| v / wsum).collect();
                let (upper, lower) = check(&y, &ph)?;
                trace.push(TracePoint { k: k + 1, upper, lower, gap: upper - lower });
                if let Some(e) = eps {
                    if upper - lower <= e {
                        done = k + 1;
                        break;
                    }
                }
            }
        }
    }
    let p_hat: Vec<f64> = p_acc.iter().map(|v| v / wsum).collect();
    Ok(FgmOutput { lambda_hat: y, p_hat, iterations: done, trace })
}

pub fn solve_capacity(
    channel: &DiscreteChannel,
    cost: Option<&InputCostConstraint>,
    config: &SolveConfig,
) -> Result<CapacityCertificate> {
    if !(channel.gamma() > 0.0) {
        return domain(
            "channel has zero entries (gamma = 0); use perturb_and_bound for such channels",
        );
    }
    if let Some(k) = cost {
        if k.s.len() != channel.n() {
            return domain("cost vector length must equal the number of inputs");
        }
    }
    let radius = dual_ball_radius(channel.m(), channel.gamma());
    let (d1, d2) = prox_constants(radius, channel.n());
    let n = match (config.iters, config.target_eps) {
        (Some(n), _) => n,
        (None, Some(e)) if e > 0.0 => iterations_for(d1, d2, e),
        _ => return domain("either an iteration budget or a positive target is required"),
    };
    if n == 0 {
        return domain("iteration budget must be positive");
    }
    let nu = config.nu.unwrap_or_else(|| smoothing_for(d1, d2, n));
    if !(nu > 0.0) {
        return domain("smoothing parameter must be positive");
    }
    let lip = 1.0 + 1.0 / nu;
    let every = match config.stopping {
        StoppingMode::APriori => None,
        StoppingMode::APosteriori => Some(config.check_every.unwrap_or((n / 100).max(100))),
    };
    let eps = match config.stopping {
        StoppingMode::APriori => None,
        StoppingMode::APosteriori => config.target_eps,
    };
    let n_in = channel.n();
    let oracle = |x: &[f64], g: &mut [f64], p: &mut [f64]| -> Result<()> {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        softmax2_into(&neg, g);
        g.iter_mut().for_each(|v| *v = -*v);
        let c: Vec<f64> = channel.scores(x).iter().map(|v| v / nu).collect();
        match cost {
            None => softmax2_into(&c, p),
            Some(k) => p.copy_from_slice(&gibbs_with_cost(&c, None, &k.s, k.budget, k.mode)?),
        }
        channel.accumulate_output(p, 1.0, g);
        Ok(())
    };
    let check = |lam: &[f64], ph: &[f64]| -> Result<(f64, f64)> {
        let (f, _) = dual_f(lam)?;
        Ok((f + dual_g(channel, lam, cost), mutual_information_unchecked(ph, channel)))
    };
    let out = fast_gradient_ball(channel.m(), n_in, radius, lip, n, every, eps, oracle, check)?;
    let (f, _) = dual_f(&out.lambda_hat)?;
    let upper = f + dual_g(channel, &out.lambda_hat, cost);
    let lower = mutual_information_unchecked(&out.p_hat, channel);
    if !upper.is_finite() || !lower.is_finite() {
        return solver("non-finite bound", f64::NAN);
    }
    Ok(CapacityCertificate {
        upper,
        lower,
        posterior_gap: upper - lower,
        apriori_bound: apriori_bound(d1, d2, n),
        p_hat: out.p_hat,
        lambda_hat: out.lambda_hat,
        iterations: out.iterations,
        planned_iterations: n,
        nu,
        radius,
        trace: out.trace,
    })
}

/// Blahut-Arimoto iteration. Returns I(p_t, W) for t = 0..=n and p_n.
pub fn blahut_arimoto(channel: &DiscreteChannel, n: usize) -> (Vec<f64>, Vec<f64>) {
    let nn = channel.n();
    let mut p = vec![1.0 / nn as f64; nn];
    let mut bounds = Vec::with_capacity(n + 1);
    let mut d = vec![0.0; nn];
    for t in 0..=n {
        let q = channel.output_dist(&p);
        for (i, di) in d.iter_mut().enumerate() {
            *di = channel
                .row(i)
                .iter()
                .zip(&q)
                .map(|(&w, &qj)| if w == 0.0 { 0.0 } else { w * (w / qj).log2() })
                .sum();
        }
        bounds.push(p.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>());
        if t == n {
            break;
        }
        let scores: Vec<f64> = p
            .iter()
            .zip(&d)
            .map(|(&pi, &di)| if pi > 0.0 { pi.log2() + di } else { f64::NEG_INFINITY })
            .collect();
        softmax2_into(&scores, &mut p);
    }
    (bounds, p)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationBounds {
    pub lower: f64,
    pub upper: f64,
    /// Row-wise l1 bound on the perturbation.
    pub delta: f64,
    pub widening: f64,
    pub certificate: CapacityCertificate,
}

/// Adds `eps` to zero entries and renormalizes rows.
pub fn perturb_channel(channel: &DiscreteChannel, eps: f64) -> Result<(DiscreteChannel, f64)> {
    if !(eps > 0.0) {
        return domain("perturbation eps must be positive");
    }
    if eps * channel.m() as f64 >= 1.0 {
        return domain("perturbation eps too large for the output alphabet");
    }
    let mut rows = Vec::with_capacity(channel.n());
    let mut delta: f64 = 0.0;
    for i in 0..channel.n() {
        let row = channel.row(i);
        if !row.iter().any(|&v| v == 0.0) {
            rows.push(row.to_vec());
            continue;
        }
        let raw: Vec<f64> = row.iter().map(|&v| if v == 0.0 { eps } else { v }).collect();
        let s: f64 = raw.iter().sum();
        let new: Vec<f64> = raw.iter().map(|v| v / s).collect();
        delta = delta.max(new.iter().zip(row).map(|(a, b)| (a - b).abs()).sum());
        rows.push(new);
    }
    Ok((DiscreteChannel::new(rows)?, delta))
}

/// 3 d log2(M v N) + 2 eta(d), eta(t) = -t log2 t.
pub fn continuity_widening(delta: f64, n: usize, m: usize) -> f64 {
    3.0 * delta * (n.max(m) as f64).log2() - 2.0 * xlog2x(delta)
}

pub fn perturb_and_bound(
    channel: &DiscreteChannel,
    eps: f64,
    config: &SolveConfig,
) -> Result<PerturbationBounds> {
    let (w2, delta) = perturb_channel(channel, eps)?;
    let certificate = solve_capacity(&w2, None, config)?;
    let widening = continuity_widening(delta, channel.n(), channel.m());
    Ok(PerturbationBounds {
        lower: (certificate.lower - widening).max(0.0),
        upper: certificate.upper + widening,
        delta,
        widening,
        certificate,
    })
}
