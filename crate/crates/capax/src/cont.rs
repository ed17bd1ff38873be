//! Capacity sandwiches for channels with a compact continuous input set
//! and countable output alphabet, via output truncation.

use std::f64::consts::{E, LN_2, PI};
use std::sync::Arc;

use serde::Serialize;

use crate::dmc::{
    dual_ball_radius, dual_f, fast_gradient_ball, gibbs_with_cost, CostMode, TracePoint,
};
use crate::error::{domain, solver, Error, Result};
use crate::numkit::{golden_max, log_sum_exp2_weighted, softmax2_into, xlog2x, Quadrature};

/// Transition law W(i|x) with a compact input interval.
pub trait Kernel: Send + Sync {
    fn prob(&self, i: usize, x: f64) -> f64;
    fn interval(&self) -> (f64, f64);
    /// Lipschitz constant of x -> W(i|x), uniform in i.
    fn lipschitz(&self) -> f64;
    /// W(0..out.len() | x).
    fn row(&self, x: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.prob(i, x);
        }
    }
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonChannelSpec {
    /// Peak input intensity.
    pub a: f64,
    /// Dark current.
    pub eta: f64,
}

impl PoissonChannelSpec {
    pub fn new(a: f64, eta: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return domain(format!("peak power A = {a} must be positive"));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return domain(format!("dark current {eta} must be nonnegative"));
        }
        Ok(PoissonChannelSpec { a, eta })
    }
}

impl Kernel for PoissonChannelSpec {
    fn prob(&self, i: usize, x: f64) -> f64 {
        let mu = x + self.eta;
        if mu <= 0.0 {
            return if i == 0 { 1.0 } else { 0.0 };
        }
        (i as f64 * mu.ln() - mu - ln_factorial(i)).exp()
    }

    fn interval(&self) -> (f64, f64) {
        (0.0, self.a)
    }

    /// d/dmu pmf_i = pmf_{i-1} - pmf_i, bounded by 1 in absolute value.
    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn row(&self, x: f64, out: &mut [f64]) {
        let mu = x + self.eta;
        if mu <= 0.0 {
            out.iter_mut().enumerate().for_each(|(i, o)| *o = if i == 0 { 1.0 } else { 0.0 });
            return;
        }
        let lm = mu.ln();
        let mut lp = -mu;
        for (i, o) in out.iter_mut().enumerate() {
            if i > 0 {
                lp += lm - (i as f64).ln();
            }
            *o = lp.exp();
        }
    }
}

/// Kernel tabulated on an input grid and linearly interpolated; outputs
/// beyond the tabulated rows have probability zero.
#[derive(Debug, Clone, Serialize)]
pub struct GridKernel {
    x: Vec<f64>,
    /// rows[i][k] = W(i | x[k]).
    rows: Vec<Vec<f64>>,
    lipschitz: f64,
}

impl GridKernel {
    pub fn new(x: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() < 2 {
            return domain("grid kernel needs at least two input points");
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("grid kernel inputs must be strictly increasing");
        }
        if rows.is_empty() {
            return domain("grid kernel has no outputs");
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != x.len() {
                return Err(Error::Input(format!("kernel row {i} has wrong length")));
            }
            if r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Input(format!("kernel row {i} has a negative entry")));
            }
        }
        for k in 0..x.len() {
            let s: f64 = rows.iter().map(|r| r[k]).sum();
            if s > 1.0 + 1e-8 {
                return Err(Error::Model(format!(
                    "kernel column at x = {} sums to {s} > 1",
                    x[k]
                )));
            }
        }
        let mut lipschitz: f64 = 0.0;
        for r in &rows {
            for k in 1..x.len() {
                lipschitz = lipschitz.max((r[k] - r[k - 1]).abs() / (x[k] - x[k - 1]));
            }
        }
        Ok(GridKernel { x, rows, lipschitz })
    }

    pub fn outputs(&self) -> usize {
        self.rows.len()
    }

    /// sup_x W(i|x), attained on the grid for a piecewise linear kernel.
    pub fn row_sup(&self, i: usize) -> f64 {
        self.rows
            .get(i)
            .map_or(0.0, |r| r.iter().cloned().fold(0.0, f64::max))
    }
}

impl Kernel for GridKernel {
    fn prob(&self, i: usize, x: f64) -> f64 {
        let Some(r) = self.rows.get(i) else { return 0.0 };
        let n = self.x.len();
        if x <= self.x[0] {
            return r[0];
        }
        if x >= self.x[n - 1] {
            return r[n - 1];
        }
        let k = self.x.partition_point(|v| *v <= x).min(n - 1);
        let t = (x - self.x[k - 1]) / (self.x[k] - self.x[k - 1]);
        r[k - 1] + t * (r[k] - r[k - 1])
    }

    fn interval(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadConfig {
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Panels per unit length of the input interval.
    pub panels_per_unit: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { order: 8, panels_per_unit: 8.0 }
    }
}

impl QuadConfig {
    pub fn rule(&self, a: f64, b: f64) -> Result<Quadrature> {
        if self.order < 8 {
            return domain("quadrature order must be at least 8");
        }
        let panels = ((b - a) * self.panels_per_unit).ceil().max(1.0) as usize;
        Quadrature::composite(a, b, panels, self.order)
    }
}

/// Output-truncated channel: tail mass beyond M-1 spread evenly.
#[derive(Clone)]
pub struct TruncatedChannel {
    kernel: Arc<dyn Kernel>,
    m: usize,
    gamma_m: f64,
}

impl std::fmt::Debug for TruncatedChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruncatedChannel")
            .field("m", &self.m)
            .field("gamma_m", &self.gamma_m)
            .finish()
    }
}

/// Folds the output tail into outputs 0..M. The grid used to check the
/// kernel and estimate gamma_M is the default quadrature plus endpoints.
pub fn truncate_kernel(kernel: Arc<dyn Kernel>, m: usize) -> Result<TruncatedChannel> {
    if m == 0 {
        return domain("truncation level must be at least 1");
    }
    let (a, b) = kernel.interval();
    if !(b >= a) {
        return domain("kernel input interval is empty");
    }
    let mut grid = vec![a, b];
    if b > a {
        grid.extend(QuadConfig::default().rule(a, b)?.nodes);
    }
    let mut row = vec![0.0; m];
    let mut gamma = f64::INFINITY;
    for &x in &grid {
        kernel.row(x, &mut row);
        let s: f64 = row.iter().sum();
        if s > 1.0 + 1e-8 {
            return Err(Error::Model(format!("kernel mass {s} > 1 at x = {x}")));
        }
        let fold = (1.0 - s).max(0.0) / m as f64;
        for v in &row {
            gamma = gamma.min(v + fold);
        }
    }
    Ok(TruncatedChannel { kernel, m, gamma_m: 0.99 * gamma })
}

impl TruncatedChannel {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn gamma_m(&self) -> f64 {
        self.gamma_m
    }

    pub fn interval(&self) -> (f64, f64) {
        self.kernel.interval()
    }

    pub fn kernel(&self) -> &Arc<dyn Kernel> {
        &self.kernel
    }

    pub fn row(&self, x: f64, out: &mut [f64]) {
        self.kernel.row(x, out);
        let s: f64 = out.iter().sum();
        let fold = (1.0 - s).max(0.0) / self.m as f64;
        out.iter_mut().for_each(|v| *v += fold);
    }

    pub fn prob(&self, i: usize, x: f64) -> f64 {
        let mut row = vec![0.0; self.m];
        self.row(x, &mut row);
        row.get(i).copied().unwrap_or(0.0)
    }

    /// f_lambda(x) = (W lambda)(x) - r(x), reusing `buf` of length M.
    fn score(&self, lambda: &[f64], x: f64, buf: &mut [f64]) -> f64 {
        self.row(x, buf);
        buf.iter()
            .zip(lambda)
            .map(|(w, l)| w * l + xlog2x(*w))
            .sum()
    }

    /// sup over the input interval of f_lambda + ell (s - S), from a fine
    /// grid refined by golden-section search around the best grid points.
    fn sup_score(&self, lambda: &[f64], extra: Option<(&ContCost, f64)>) -> f64 {
        let (a, b) = self.interval();
        let eval = |x: f64| -> f64 {
            let mut buf = vec![0.0; self.m];
            let v = self.score(lambda, x, &mut buf);
            match extra {
                Some((c, ell)) => v - ell * ((c.s)(x) - c.budget),
                None => v,
            }
        };
        if b <= a {
            return eval(a);
        }
        let g = 2048;
        let h = (b - a) / g as f64;
        let vals: Vec<f64> = (0..=g).map(|k| eval(a + k as f64 * h)).collect();
        let mut best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut idx: Vec<usize> = (0..=g)
            .filter(|&k| {
                (k == 0 || vals[k] >= vals[k - 1]) && (k == g || vals[k] >= vals[k + 1])
            })
            .collect();
        idx.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
        for &k in idx.iter().take(6) {
            let lo = a + (k.saturating_sub(1)) as f64 * h;
            let hi = (a + (k + 1) as f64 * h).min(b);
            let (_, v) = golden_max(&eval, lo, hi, 1e-12 * (b - a).max(1.0));
            best = best.max(v);
        }
        best
    }
}

/// Average-input-cost constraint for a continuous input.
#[derive(Clone)]
pub struct ContCost {
    pub s: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub budget: f64,
    pub mode: CostMode,
    pub lipschitz: f64,
}

impl std::fmt::Debug for ContCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContCost")
            .field("budget", &self.budget)
            .field("mode", &self.mode)
            .finish()
    }
}

impl ContCost {
    /// Average power constraint E[X] <= budget (or = budget).
    pub fn linear(budget: f64, mode: CostMode) -> Self {
        ContCost { s: Arc::new(|x| x), budget, mode, lipschitz: 1.0 }
    }
}

/// Truncated channel restricted to a quadrature rule.
struct QuadChannel {
    weights: Vec<f64>,
    m: usize,
    rows: Vec<f64>,
    r: Vec<f64>,
    rho: f64,
    s: Option<Vec<f64>>,
}

impl QuadChannel {
    fn new(trunc: &TruncatedChannel, q: &Quadrature, cost: Option<&ContCost>) -> Self {
        let m = trunc.m();
        let k = q.len();
        let mut rows = vec![0.0; k * m];
        let mut r = vec![0.0; k];
        for j in 0..k {
            let row = &mut rows[j * m..(j + 1) * m];
            trunc.row(q.nodes[j], row);
            r[j] = -row.iter().map(|&v| xlog2x(v)).sum::<f64>();
        }
        QuadChannel {
            weights: q.weights.clone(),
            m,
            rows,
            r,
            rho: q.weights.iter().sum(),
            s: cost.map(|c| q.nodes.iter().map(|&x| (c.s)(x)).collect()),
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.m..(j + 1) * self.m]
    }

    fn scores(&self, lambda: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.row(j).iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>() - self.r[j];
        }
    }

    /// Node masses of the smoothed optimizer (already including weights).
    fn gibbs(&self, f: &[f64], nu: f64, cost: Option<&ContCost>, out: &mut [f64]) -> Result<()> {
        let c: Vec<f64> = f.iter().map(|v| v / nu).collect();
        match (cost, &self.s) {
            (Some(k), Some(s)) => {
                out.copy_from_slice(&gibbs_with_cost(&c, Some(&self.weights), s, k.budget, k.mode)?)
            }
            _ => {
                let sc: Vec<f64> =
                    c.iter().zip(&self.weights).map(|(a, w)| a + w.log2()).collect();
                softmax2_into(&sc, out);
            }
        }
        Ok(())
    }

    fn output(&self, q: &[f64], out: &mut [f64]) {
        for (j, &qj) in q.iter().enumerate() {
            if qj == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(j)) {
                *o += qj * w;
            }
        }
    }

    fn mutual_information(&self, q: &[f64]) -> f64 {
        let mut out = vec![0.0; self.m];
        self.output(q, &mut out);
        let h = -out.iter().map(|&v| xlog2x(v)).sum::<f64>();
        h - q.iter().zip(&self.r).map(|(a, b)| a * b).sum::<f64>()
    }

    /// G_nu and its gradient.
    fn smoothed(&self, lambda: &[f64], nu: f64, cost: Option<&ContCost>) -> Result<(f64, Vec<f64>)> {
        let mut f = vec![0.0; self.weights.len()];
        self.scores(lambda, &mut f);
        let mut q = vec![0.0; f.len()];
        self.gibbs(&f, nu, cost, &mut q)?;
        let mut grad = vec![0.0; self.m];
        self.output(&q, &mut grad);
        let value = match cost {
            None => {
                let c: Vec<f64> = f.iter().map(|v| v / nu).collect();
                nu * log_sum_exp2_weighted(&c, &self.weights) - nu * self.rho.log2()
            }
            Some(_) => {
                // f^T q + nu h(q) - nu log2 rho, h the differential entropy.
                let mut v = 0.0;
                for j in 0..q.len() {
                    if q[j] > 0.0 {
                        v += q[j] * f[j] - nu * q[j] * (q[j] / self.weights[j]).log2();
                    }
                }
                v - nu * self.rho.log2()
            }
        };
        Ok((value, grad))
    }
}

/// Smoothed inner value G_nu(lambda) and gradient W* p_nu on a quadrature.
pub fn smoothed_dual_cts(
    trunc: &TruncatedChannel,
    lambda: &[f64],
    nu: f64,
    quad: &QuadConfig,
    cost: Option<&ContCost>,
) -> Result<(f64, Vec<f64>)> {
    if !(nu > 0.0) {
        return domain("smoothing parameter must be positive");
    }
    if lambda.len() != trunc.m() {
        return domain("lambda length must equal the truncation level");
    }
    let (a, b) = trunc.interval();
    let q = quad.rule(a, b)?;
    QuadChannel::new(trunc, &q, cost).smoothed(lambda, nu, cost)
}

/// G(lambda) over input densities on the interval, meeting the cost if any.
pub fn dual_g_cts(trunc: &TruncatedChannel, lambda: &[f64], cost: Option<&ContCost>) -> f64 {
    let Some(c) = cost else {
        return trunc.sup_score(lambda, None);
    };
    // Weak duality: G <= max_x f(x) - ell (s(x) - S) for every admissible ell.
    let h = |ell: f64| trunc.sup_score(lambda, Some((c, ell)));
    let lo = if c.mode == CostMode::Inequality { 0.0 } else { -1e3 };
    let (ell, v) = golden_max(|l| -h(l), lo, 1e3, 1e-7);
    (-v).min(h(ell.max(lo)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    pub k: f64,
    pub m: usize,
    pub rk: f64,
    pub alpha: f64,
    /// Directly summed tail series, for comparison.
    pub series: f64,
}

pub fn poisson_tail_bound(spec: &PoissonChannelSpec, k: f64, m: usize) -> Result<TailBound> {
    if !(k > 0.0 && k <= 1.0) {
        return domain(format!("tail order k = {k} outside (0, 1]"));
    }
    let lam = spec.a + spec.eta;
    if (m as f64) < lam {
        return domain(format!("truncation level {m} below A + eta = {lam}"));
    }
    let alpha = (1.0 / k - 1.0).exp2();
    let log_inner = alpha.ln() + (alpha - 1.0) * lam + m as f64 * lam.ln() - ln_factorial(m);
    let rk = (k * log_inner).exp();
    // For i >= A + eta the supremum over the input sits at x = A.
    let mut series = 0.0;
    let mut lp = m as f64 * lam.ln() - lam - ln_factorial(m);
    for i in m..m + 100_000 {
        if i > m {
            lp += lam.ln() - (i as f64).ln();
        }
        let t = (k * lp).exp();
        series += t;
        if t < 1e-18 * series || t == 0.0 {
            break;
        }
    }
    if rk < series * (1.0 - 1e-12) {
        return Err(Error::Model(format!("tail bound {rk} below series {series}")));
    }
    Ok(TailBound { k, m, rk, alpha, series })
}

/// Uniform bound on |I(p, W) - I(p, W_M)| from polynomial tails.
pub fn mi_truncation_error(k: f64, m: usize, r1: f64, rk: f64) -> Result<f64> {
    if !(k > 0.0 && k < 1.0) {
        return domain(format!("tail order k = {k} outside (0, 1)"));
    }
    if !(r1 >= 0.0 && rk >= 0.0) {
        return domain("tail sums must be nonnegative");
    }
    let c = 2.0 * E.log2() / (E * (1.0 - k));
    Ok(c * ((m as f64).powf(1.0 - k) * r1.powf(k) + rk))
}

pub fn poisson_truncation_error(spec: &PoissonChannelSpec, k: f64, m: usize) -> Result<f64> {
    let r1 = poisson_tail_bound(spec, 1.0, m)?.rk;
    let rk = poisson_tail_bound(spec, k, m)?.rk;
    mi_truncation_error(k, m, r1, rk)
}

/// Smallest valid M with truncation error at most target / 2.
pub fn choose_truncation(spec: &PoissonChannelSpec, k: f64, target: f64) -> Result<usize> {
    if !(target > 0.0) {
        return domain("truncation target must be positive");
    }
    let floor = (spec.a + spec.eta).ceil().max(1.0) as usize;
    // E is not monotone right at the validity floor when k < 1/2, so scan.
    for m in floor..=10_000 {
        if poisson_truncation_error(spec, k, m)? <= 0.5 * target {
            return Ok(m);
        }
    }
    Err(Error::Budget(format!("no truncation level up to 10^4 meets target {target}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IotaConstants {
    pub l_f: f64,
    pub l_s: f64,
    pub rho: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub t1: f64,
    pub t2: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
}

impl IotaConstants {
    pub fn new(trunc: &TruncatedChannel, cost: Option<(&ContCost, f64, f64)>) -> Self {
        let (a, b) = trunc.interval();
        let rho = b - a;
        let m = trunc.m() as f64;
        let l = trunc.kernel().lipschitz();
        let lg = (1.0 / trunc.gamma_m()).log2();
        let l_f = l * m * m * lg.max(1.0 / LN_2) + m * l * (lg - 1.0 / LN_2).abs();
        let (l_s, s_lo, s_hi) = match cost {
            Some((c, smin, smax)) => (c.lipschitz, smin - c.budget, smax - c.budget),
            None => (0.0, 0.0, 0.0),
        };
        let (mut t1, mut t2, mut mu_lo, mut mu_hi) = (l_f * rho, 0.0, 0.0, 0.0);
        if l_s > 0.0 && s_lo < 0.0 && s_hi > 0.0 {
            t1 += 2.0 * l_f * l_s * rho * rho * (1.0 / -s_lo).max(1.0 / s_hi);
            mu_lo = 2.0 / -s_lo * (2.0 * l_s * rho / -s_lo).max(1.0).log2();
            mu_hi = 2.0 / s_hi * (2.0 * l_s * rho / s_hi).max(1.0).log2();
            t2 = l_s * rho * mu_lo.max(mu_hi);
        }
        IotaConstants { l_f, l_s, rho, s_lo, s_hi, t1, t2, mu_lo, mu_hi }
    }

    /// Uniform gap G - G_nu; None when a cost sits at the edge of its range.
    pub fn iota(&self, nu: f64) -> Option<f64> {
        if self.l_s > 0.0 && (self.s_lo >= 0.0 || self.s_hi <= 0.0) {
            return None;
        }
        if nu < self.t1 / (1.0 - self.t2) || self.t2 > 1.0 || self.t2 == 1.0 {
            Some(nu * ((self.t1 / nu + self.t2).log2() + 1.0))
        } else {
            Some(nu)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContSolveConfig {
    pub iters: usize,
    /// Smoothing parameter; chosen to minimize the a-priori error when absent.
    pub nu: Option<f64>,
    pub quad: QuadConfig,
    pub check_every: Option<usize>,
    /// Stop once (F+G) - I falls below this.
    pub eps: Option<f64>,
}

impl ContSolveConfig {
    pub fn iterations(n: usize) -> Self {
        ContSolveConfig { iters: n, nu: None, quad: QuadConfig::default(), check_every: None, eps: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuousCapacityBounds {
    pub lower: f64,
    pub upper: f64,
    pub truncation_error: f64,
    /// F(lambda) + G(lambda) for the truncated channel.
    pub dual_value: f64,
    /// I(p_hat, W_M).
    pub primal_value: f64,
    pub posterior_gap: f64,
    pub apriori_bound: Option<f64>,
    pub iota: Option<f64>,
    /// F + G_nu + iota, reported when a cost constraint is active.
    pub aux_upper: Option<f64>,
    pub m: usize,
    pub nu: f64,
    pub iterations: usize,
    pub quadrature_nodes: usize,
    pub lambda_hat: Vec<f64>,
    pub trace: Vec<TracePoint>,
    /// Node positions and masses of the reconstructed input law.
    pub input_nodes: Vec<f64>,
    pub input_masses: Vec<f64>,
}

/// A-priori error iota(nu) + 4 D1 / (nu (n+1)^2) + 4 D1 / (n+1)^2.
pub fn cts_apriori_error(iota: f64, d1: f64, nu: f64, n: usize) -> f64 {
    let k = (n as f64 + 1.0).powi(2);
    iota + 4.0 * d1 / (nu * k) + 4.0 * d1 / k
}

pub fn solve_capacity_cts(
    trunc: &TruncatedChannel,
    cost: Option<&ContCost>,
    truncation_error: f64,
    config: &ContSolveConfig,
) -> Result<ContinuousCapacityBounds> {
    if !(trunc.gamma_m() > 0.0) {
        return domain("truncated channel has gamma_M = 0: some output has zero probability at some input (for Poisson, eta = 0)");
    }
    if config.iters == 0 {
        return domain("iteration budget must be positive");
    }
    let (a, b) = trunc.interval();
    let quad = config.quad.rule(a, b)?;
    let qc = QuadChannel::new(trunc, &quad, cost);
    let cost_range = match (cost, &qc.s) {
        (Some(c), Some(s)) => {
            let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
            let smax = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if c.budget < smin || (c.mode == CostMode::Equality && c.budget > smax) {
                return domain(format!("average cost {} infeasible on the input set", c.budget));
            }
            Some((c, smin, smax))
        }
        _ => None,
    };
    let radius = dual_ball_radius(trunc.m(), trunc.gamma_m());
    let d1 = 0.5 * radius * radius;
    let iota_c = IotaConstants::new(trunc, cost_range);
    let n = config.iters;
    let nu = match config.nu {
        Some(v) if v > 0.0 => v,
        Some(_) => return domain("smoothing parameter must be positive"),
        None => {
            let err = |lnu: f64| {
                let nu = lnu.exp();
                -cts_apriori_error(iota_c.iota(nu).unwrap_or(nu), d1, nu, n)
            };
            golden_max(err, (1e-12f64).ln(), (1e3f64).ln(), 1e-6).0.exp()
        }
    };
    let lip = 1.0 + 1.0 / nu;
    let every = config.check_every.unwrap_or((n / 100).max(100));
    let m = trunc.m();
    let k = quad.len();
    let mut fbuf = vec![0.0; k];
    let oracle = |x: &[f64], g: &mut [f64], p: &mut [f64]| -> Result<()> {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        softmax2_into(&neg, g);
        g.iter_mut().for_each(|v| *v = -*v);
        qc.scores(x, &mut fbuf);
        qc.gibbs(&fbuf, nu, cost, p)?;
        qc.output(p, g);
        Ok(())
    };
    let check = |lam: &[f64], ph: &[f64]| -> Result<(f64, f64)> {
        let (f, _) = dual_f(lam)?;
        Ok((f + dual_g_cts(trunc, lam, cost), qc.mutual_information(ph)))
    };
    let out = fast_gradient_ball(m, k, radius, lip, n, Some(every), config.eps, oracle, check)?;
    let (f, _) = dual_f(&out.lambda_hat)?;
    let dual_value = f + dual_g_cts(trunc, &out.lambda_hat, cost);
    let primal_value = qc.mutual_information(&out.p_hat);
    if !dual_value.is_finite() || !primal_value.is_finite() {
        return solver("non-finite bound", f64::NAN);
    }
    let iota = iota_c.iota(nu);
    let aux_upper = match (cost, iota) {
        (Some(_), Some(i)) => Some(f + qc.smoothed(&out.lambda_hat, nu, cost)?.0 + i),
        _ => None,
    };
    Ok(ContinuousCapacityBounds {
        lower: 2.0 * primal_value - dual_value - truncation_error,
        upper: 2.0 * dual_value - primal_value + truncation_error,
        truncation_error,
        dual_value,
        primal_value,
        posterior_gap: dual_value - primal_value,
        apriori_bound: iota.map(|i| cts_apriori_error(i, d1, nu, n)),
        iota,
        aux_upper,
        m,
        nu,
        iterations: out.iterations,
        quadrature_nodes: k,
        lambda_hat: out.lambda_hat,
        trace: out.trace,
        input_nodes: quad.nodes.clone(),
        input_masses: out.p_hat,
    })
}

/// Poisson channel with truncation error from the polynomial tail of order k.
pub fn solve_poisson(
    spec: &PoissonChannelSpec,
    m: usize,
    k: f64,
    cost: Option<&ContCost>,
    config: &ContSolveConfig,
) -> Result<ContinuousCapacityBounds> {
    let e = poisson_truncation_error(spec, k, m)?;
    let trunc = truncate_kernel(Arc::new(*spec), m)?;
    solve_capacity_cts(&trunc, cost, e, config)
}

/// Grid kernel; the tail sums come straight from the tabulated rows.
pub fn solve_grid_kernel(
    kernel: GridKernel,
    m: usize,
    k: f64,
    cost: Option<&ContCost>,
    config: &ContSolveConfig,
) -> Result<ContinuousCapacityBounds> {
    let tail = |order: f64| -> f64 { (m..kernel.outputs()).map(|i| kernel.row_sup(i).powf(order)).sum() };
    let e = if m >= kernel.outputs() { 0.0 } else { mi_truncation_error(k, m, tail(1.0), tail(k))? };
    let trunc = truncate_kernel(Arc::new(kernel), m)?;
    solve_capacity_cts(&trunc, cost, e, config)
}

/// Closed-form lower bound on the Poisson capacity under a peak constraint.
pub fn lapidoth_moser_lb(a: f64, eta: f64) -> Result<f64> {
    if !(a > 0.0) {
        return domain("peak power must be positive");
    }
    if !(eta >= 0.0) {
        return domain("dark current must be nonnegative");
    }
    let v = 0.5 * a.ln() + (a / 3.0 + 1.0) * (1.0 + 3.0 / a).ln()
        - 1.0
        - ((eta + 1.0 / 12.0) / a).sqrt() * (PI / 4.0 + 0.5 * LN_2)
        - 0.5 * (PI * E / 2.0).ln();
    Ok(v / LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_trunc(m: usize) -> TruncatedChannel {
        truncate_kernel(Arc::new(PoissonChannelSpec::new(1.0, 1.0).unwrap()), m).unwrap()
    }

    #[test]
    fn truncation_rows_are_distributions() {
        let t = poisson_trunc(16);
        for &x in &[0.0, 0.3, 1.0] {
            let mut row = vec![0.0; 16];
            t.row(x, &mut row);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // x = 0: e^{-1}/i! plus the folded tail
        let tail: f64 = 1.0 - (0..16).map(|i| (-1.0f64).exp() / (ln_factorial(i).exp())).sum::<f64>();
        let w0 = t.prob(3, 0.0);
        assert!((w0 - ((-1.0f64).exp() / 6.0 + tail / 16.0)).abs() < 1e-15);
        let one = poisson_trunc(1);
        assert_eq!(one.prob(0, 0.7), 1.0);
    }

    #[test]
    fn supported_kernel_is_unchanged() {
        let g = GridKernel::new(vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let t = truncate_kernel(Arc::new(g), 2).unwrap();
        assert!((t.prob(0, 0.25) - 0.25).abs() < 1e-15);
        assert!((t.prob(1, 0.25) - 0.75).abs() < 1e-15);
        let bad = GridKernel::new(vec![0.0, 1.0], vec![vec![0.6, 0.5], vec![0.6, 0.5]]);
        assert!(matches!(bad, Err(Error::Model(_))));
    }

    #[test]
    fn tail_bound_examples() {
        let s = PoissonChannelSpec::new(1.0, 1.0).unwrap();
        let t1 = poisson_tail_bound(&s, 1.0, 16).unwrap();
        let taylor = (16.0 * 2f64.ln() - ln_factorial(16)).exp();
        assert!((t1.rk - taylor).abs() < 1e-12 * taylor);
        let a = poisson_tail_bound(&s, 0.5, 16).unwrap();
        let b = poisson_tail_bound(&s, 0.5, 17).unwrap();
        assert!(a.rk >= a.series && b.rk < a.rk);
        assert!(poisson_tail_bound(&s, 0.5, 1).is_err());
    }

    #[test]
    fn truncation_error_examples() {
        assert_eq!(mi_truncation_error(0.5, 16, 0.0, 0.0).unwrap(), 0.0);
        let e1 = mi_truncation_error(0.5, 16, 0.0, 1e-3).unwrap();
        let e2 = mi_truncation_error(0.5, 16, 0.0, 2e-3).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-18);
        assert!(mi_truncation_error(1.0, 16, 0.0, 0.0).is_err());
        let s = PoissonChannelSpec::new(1.0, 1.0).unwrap();
        let e = poisson_truncation_error(&s, 0.5, 16).unwrap();
        assert!(e > 5e-4 && e < 1.5e-3, "{e}");
    }

    #[test]
    fn truncation_choice() {
        let s = PoissonChannelSpec::new(1.0, 1.0).unwrap();
        assert_eq!(choose_truncation(&s, 0.5, 2e-3).unwrap(), 16);
        assert_eq!(choose_truncation(&s, 0.5, 100.0).unwrap(), 2);
        assert_eq!(choose_truncation(&s, 0.5, 10.0).unwrap(), 6);
        let mut last = 0;
        let mut t = 1.0;
        for _ in 0..20 {
            let m = choose_truncation(&s, 0.5, t).unwrap();
            assert!(m >= last);
            last = m;
            t /= 2.0;
        }
    }

    #[test]
    fn smoothed_constant_score() {
        // All rows identical: W lambda - r is constant in x.
        let g = GridKernel::new(vec![0.0, 1.0], vec![vec![0.4, 0.4], vec![0.6, 0.6]]).unwrap();
        let t = truncate_kernel(Arc::new(g), 2).unwrap();
        let lam = [0.3, -1.2];
        let c = 0.4 * 0.3 - 0.6 * 1.2 + 0.4 * 0.4f64.log2() + 0.6 * 0.6f64.log2();
        for &nu in &[0.01, 1.0] {
            let (v, grad) = smoothed_dual_cts(&t, &lam, nu, &QuadConfig::default(), None).unwrap();
            assert!((v - c).abs() < 1e-12);
            assert!((grad.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_matches_trapezoid() {
        let g = GridKernel::new(vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let t = truncate_kernel(Arc::new(g), 2).unwrap();
        let quad = QuadConfig { order: 8, panels_per_unit: 32.0 };
        let (v, _) = smoothed_dual_cts(&t, &[1.0, 0.0], 1.0, &quad, None).unwrap();
        let f = |x: f64| (x - (-xlog2x(x) - xlog2x(1.0 - x))).exp2();
        let n = 20_000;
        let h = 1.0 / n as f64;
        let trap: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * f(k as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((v - trap.log2()).abs() < 1e-6, "{v} vs {}", trap.log2());
    }

    #[test]
    fn moser_bound_increases() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=48 {
            let a = 1.0 + 0.5 * k as f64;
            let v = lapidoth_moser_lb(a, 1.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(lapidoth_moser_lb(0.0, 1.0).is_err());
    }

    #[test]
    fn tiny_peak_has_tiny_capacity() {
        let s = PoissonChannelSpec::new(1e-6, 1.0).unwrap();
        let m = choose_truncation(&s, 0.5, 1e-3).unwrap();
        let b = solve_poisson(&s, m, 0.5, None, &ContSolveConfig::iterations(2000)).unwrap();
        assert!(b.lower <= 0.0 && b.upper >= 0.0);
        assert!(b.upper - b.lower <= 1e-2, "{:?}", (b.lower, b.upper));
    }

    #[test]
    fn average_power_solve_is_consistent() {
        let s = PoissonChannelSpec::new(1.0, 1.0).unwrap();
        let cost = ContCost::linear(0.3, CostMode::Inequality);
        let mut cfg = ContSolveConfig::iterations(4000);
        cfg.nu = Some(0.01);
        let b = solve_poisson(&s, 12, 0.5, Some(&cost), &cfg).unwrap();
        let mean: f64 = b.input_nodes.iter().zip(&b.input_masses).map(|(x, p)| x * p).sum();
        assert!(mean <= 0.3 + 1e-8);
        assert!(b.primal_value <= b.dual_value + 1e-9);
        assert!(b.aux_upper.is_some());
    }
}
