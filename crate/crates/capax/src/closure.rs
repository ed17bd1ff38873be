//! Moment dynamics of the reversible dimerization 2M <-> D, closed by
//! maximum entropy, and a Gillespie simulator to compare against.
//!
//! Propensities are `k1 M (M - 1)` for 2M -> D and `k2 (S0 - M) / 2` for
//! D -> 2M, where `S0 = M + 2 D` is conserved.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::maxent::{solve_maxent_with, MaxEntMode, MaxEntOptions, MomentData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimerizationModel {
    pub k1: f64,
    pub k2: f64,
    pub m0: u32,
    pub d0: u32,
}

impl DimerizationModel {
    pub fn new(k1: f64, k2: f64, m0: u32, d0: u32) -> Result<Self> {
        if !(k1 >= 0.0 && k2 >= 0.0) || !k1.is_finite() || !k2.is_finite() {
            return domain("rate constants must be nonnegative");
        }
        if k1 == 0.0 && k2 == 0.0 {
            return domain("at least one rate constant must be positive");
        }
        Ok(DimerizationModel { k1, k2, m0, d0 })
    }

    pub fn s0(&self) -> u32 {
        self.m0 + 2 * self.d0
    }

    fn rates(&self, m: u32) -> (f64, f64) {
        let mf = m as f64;
        (self.k1 * mf * (mf - 1.0), self.k2 * (self.s0() - m) as f64 / 2.0)
    }

    /// Moments 1, <M>, ..., <M^order> of the initial point mass.
    pub fn initial_moments(&self, order: usize) -> Vec<f64> {
        (0..=order).map(|j| (self.m0 as f64).powi(j as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentMatrices {
    /// (Mc+1) x (Mc+1), acting on (1, <M>, ..., <M^Mc>).
    pub a: Vec<Vec<f64>>,
    /// (Mc+1) x 1, acting on <M^(Mc+1)>.
    pub b: Vec<Vec<f64>>,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients of (M + s)^j - M^j.
fn shift_diff(j: usize, s: f64) -> Vec<f64> {
    let mut c: Vec<f64> = (0..=j).map(|k| binom(j, k) * s.powi((j - k) as i32)).collect();
    c[j] -= 1.0;
    c
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn build_moment_matrices(model: &DimerizationModel, mc: usize) -> Result<MomentMatrices> {
    if mc < 2 {
        return domain(format!("closure order {mc} below 2"));
    }
    let s0 = model.s0() as f64;
    let a1 = [0.0, -model.k1, model.k1];
    let a2 = [model.k2 * s0 / 2.0, -model.k2 / 2.0];
    let mut a = vec![vec![0.0; mc + 1]; mc + 1];
    let mut b = vec![vec![0.0]; mc + 1];
    for j in 1..=mc {
        let mut p = poly_mul(&a1, &shift_diff(j, -2.0));
        let q = poly_mul(&a2, &shift_diff(j, 2.0));
        for (i, v) in q.iter().enumerate() {
            p[i] += v;
        }
        for (i, v) in p.iter().enumerate() {
            match i {
                _ if i <= mc => a[j][i] = *v,
                _ if i == mc + 1 => b[j][0] = *v,
                _ if *v != 0.0 => unreachable!("generator raises degree by one"),
                _ => {}
            }
        }
    }
    Ok(MomentMatrices { a, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClosureSupport {
    /// All counts 0..=S0.
    Full,
    /// Only counts with the parity of S0.
    Parity,
}

/// Maximum-entropy closure with a warm-started dual.
#[derive(Debug, Clone)]
pub struct Closure {
    model: DimerizationModel,
    mc: usize,
    kappa: f64,
    points: Vec<f64>,
    warm: Option<Vec<f64>>,
    pub eta: (f64, f64),
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Closure {
    pub fn new(model: DimerizationModel, mc: usize, kappa: f64, support: ClosureSupport) -> Result<Self> {
        if mc < 2 {
            return domain(format!("closure order {mc} below 2"));
        }
        if !(kappa > 0.0) {
            return domain("kappa must be positive");
        }
        let s0 = model.s0();
        let points = (0..=s0)
            .filter(|m| support == ClosureSupport::Full || (s0 - m) % 2 == 0)
            .map(|m| m as f64)
            .collect();
        Ok(Closure {
            model,
            mc,
            kappa,
            points,
            warm: None,
            eta: (1.0, 1e-8),
            grad_tol: 1e-10,
            max_iters: 200_000,
        })
    }

    /// Closure moment <M^(Mc+1)> for the state (1, <M>, ..., <M^Mc>).
    pub fn phi(&mut self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.mc + 1 {
            return domain("moment state has the wrong length");
        }
        let data = MomentData::uniform_finite(mu[1..].to_vec(), vec![self.kappa; self.mc], self.points.clone())?;
        let opts = MaxEntOptions {
            eta: Some(self.eta),
            max_iters: Some(self.max_iters),
            grad_tol: Some(self.grad_tol),
            restart: true,
            z0: self.warm.clone(),
            ..Default::default()
        };
        let r = solve_maxent_with(&data, 1e-6, MaxEntMode::Finite, &opts)?;
        let miss = r
            .moments
            .iter()
            .zip(&mu[1..])
            .map(|(m, y)| ((m - y).abs() - self.kappa).max(0.0))
            .fold(0.0f64, f64::max);
        if miss > self.kappa {
            return Err(Error::Closure(format!(
                "moments {:?} lie outside the reachable hull by {miss:.3e} (kappa {})",
                &mu[1..],
                self.kappa
            )));
        }
        self.warm = Some(r.z_scaled.clone());
        let order = self.mc as i32 + 1;
        Ok(vec![r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(order)).sum()])
    }

    pub fn model(&self) -> &DimerizationModel {
        &self.model
    }
}

pub fn closure_phi(mu: &[f64], model: &DimerizationModel, mc: usize, kappa: f64) -> Result<Vec<f64>> {
    Closure::new(*model, mc, kappa, ClosureSupport::Full)?.phi(mu)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTrajectory {
    pub t: Vec<f64>,
    /// (1, <M>, ..., <M^Mc>) at each time.
    pub mu: Vec<Vec<f64>>,
    pub zeta: Vec<f64>,
}

impl MomentTrajectory {
    pub fn last(&self) -> &[f64] {
        self.mu.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrationOptions {
    pub kappa: f64,
    pub dt: f64,
    pub t_end: f64,
    pub support: ClosureSupport,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { kappa: 0.01, dt: 1e-3, t_end: 5.0, support: ClosureSupport::Full }
    }
}

pub fn integrate_moments(
    model: &DimerizationModel,
    mc: usize,
    kappa: f64,
    dt: f64,
    t_end: f64,
) -> Result<MomentTrajectory> {
    let opts = IntegrationOptions { kappa, dt, t_end, support: ClosureSupport::Full };
    integrate_moments_with(model, mc, &opts, None)
}

/// Fixed-step RK4 on d mu / dt = A mu + B phi(mu), from `start` or the
/// initial point mass.
pub fn integrate_moments_with(
    model: &DimerizationModel,
    mc: usize,
    opts: &IntegrationOptions,
    start: Option<&[f64]>,
) -> Result<MomentTrajectory> {
    if !(opts.dt > 0.0) || !(opts.t_end >= opts.dt) {
        return domain("need dt > 0 and T >= dt");
    }
    let mats = build_moment_matrices(model, mc)?;
    let mut closure = Closure::new(*model, mc, opts.kappa, opts.support)?;
    let steps = (opts.t_end / opts.dt).round() as usize;
    let s0 = model.s0() as f64;
    let mut mu = match start {
        Some(s) if s.len() == mc + 1 => s.to_vec(),
        Some(_) => return domain("start state has the wrong length"),
        None => model.initial_moments(mc),
    };
    let rhs = |closure: &mut Closure, mu: &[f64]| -> Result<(Vec<f64>, f64)> {
        let z = closure.phi(mu)?[0];
        let d = (0..=mc)
            .map(|i| mats.a[i].iter().zip(mu).map(|(a, m)| a * m).sum::<f64>() + mats.b[i][0] * z)
            .collect();
        Ok((d, z))
    };
    let mut traj = MomentTrajectory { t: Vec::with_capacity(steps + 1), mu: Vec::new(), zeta: Vec::new() };
    let h = opts.dt;
    for step in 0..=steps {
        let at = |e: Error| match e {
            Error::Closure(msg) => Error::Integration { step, msg },
            other => other,
        };
        let (k1, z) = rhs(&mut closure, &mu).map_err(at)?;
        traj.t.push(step as f64 * h);
        traj.mu.push(mu.clone());
        traj.zeta.push(z);
        if step == steps {
            break;
        }
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { mu.iter().zip(k).map(|(m, k)| m + a * k).collect() };
        let (k2, _) = rhs(&mut closure, &axpy(h / 2.0, &k1)).map_err(at)?;
        let (k3, _) = rhs(&mut closure, &axpy(h / 2.0, &k2)).map_err(at)?;
        let (k4, _) = rhs(&mut closure, &axpy(h, &k3)).map_err(at)?;
        for i in 0..=mc {
            mu[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let var = mu[2] - mu[1] * mu[1];
        if !(mu[1] >= -1e-9 && mu[1] <= s0 + 1e-9) || var < -1e-9 * mu[2].abs().max(1.0) {
            return Err(Error::Integration {
                step: step + 1,
                msg: format!("invalid moment state <M> = {}, var = {var}", mu[1]),
            });
        }
    }
    Ok(traj)
}

/// Exact stationary law on the reachable counts, from the null space of
/// the generator. Entries are (count, probability).
pub fn stationary_distribution(model: &DimerizationModel) -> Result<Vec<(u32, f64)>> {
    let s0 = model.s0();
    let states: Vec<u32> = (0..=s0).filter(|m| (s0 - m) % 2 == 0).collect();
    let n = states.len();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for (i, &m) in states.iter().enumerate() {
        let (a1, a2) = model.rates(m);
        if m >= 2 && a1 > 0.0 {
            q[(i, i - 1)] += a1;
            q[(i, i)] -= a1;
        }
        if m + 2 <= s0 && a2 > 0.0 {
            q[(i, i + 1)] += a2;
            q[(i, i)] -= a2;
        }
    }
    if n == 1 {
        return Ok(vec![(states[0], 1.0)]);
    }
    let svd = q.transpose().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Solver { msg: "SVD failed".into(), residual: f64::NAN })?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    let v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let total: f64 = v.iter().sum();
    Ok(states.iter().zip(v).map(|(&m, p)| (m, (p / total).max(0.0))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsaResult {
    pub t: Vec<f64>,
    /// Empirical <M>, <M^2>, <M^3> at each grid time.
    pub moments: Vec<[f64; 3]>,
    pub stderr: Vec<[f64; 3]>,
    /// Counts of M at the final time, indexed by M.
    pub final_histogram: Vec<u64>,
    pub n_traj: usize,
}

const SSA_CHUNK: usize = 1024;

/// Worker count from CAPAX_THREADS, if set.
pub fn ssa_threads() -> Option<usize> {
    std::env::var("CAPAX_THREADS").ok()?.trim().parse().ok().filter(|n| *n > 0)
}

struct ChunkSums {
    powers: Vec<[f64; 6]>,
    hist: Vec<u64>,
}

fn run_trajectory(model: &DimerizationModel, grid: &[f64], rng: &mut ChaCha8Rng, sums: &mut ChunkSums) {
    let mut m = model.m0;
    let mut t = 0.0;
    let mut g = 0;
    let mut record = |m: u32, upto: f64, g: &mut usize| {
        let mf = m as f64;
        while *g < grid.len() && grid[*g] < upto {
            let s = &mut sums.powers[*g];
            let mut p = 1.0;
            for v in s.iter_mut() {
                p *= mf;
                *v += p;
            }
            *g += 1;
        }
    };
    loop {
        let (a1, a2) = model.rates(m);
        let a0 = a1 + a2;
        if a0 <= 0.0 {
            record(m, f64::INFINITY, &mut g);
            break;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let next = t - u.ln() / a0;
        record(m, next, &mut g);
        if g == grid.len() {
            break;
        }
        t = next;
        if rng.random::<f64>() * a0 < a1 {
            m -= 2;
        } else {
            m += 2;
        }
    }
    sums.hist[m as usize] += 1;
}

/// Gillespie direct method on `n_grid` uniform times in [0, T]; each
/// trajectory has its own stream so results do not depend on threading.
pub fn ssa_simulate(
    model: &DimerizationModel,
    t_end: f64,
    n_grid: usize,
    n_traj: usize,
    seed: u64,
) -> Result<SsaResult> {
    if n_traj == 0 {
        return domain("at least one trajectory is required");
    }
    if n_grid < 2 || !(t_end > 0.0) {
        return domain("need a positive horizon and at least two grid times");
    }
    let grid: Vec<f64> = (0..n_grid).map(|g| t_end * g as f64 / (n_grid - 1) as f64).collect();
    let chunks = n_traj.div_ceil(SSA_CHUNK);
    let s0 = model.s0() as usize;
    let work = |c: usize| -> ChunkSums {
        let mut sums = ChunkSums { powers: vec![[0.0; 6]; n_grid], hist: vec![0; s0 + 1] };
        for idx in c * SSA_CHUNK..((c + 1) * SSA_CHUNK).min(n_traj) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            run_trajectory(model, &grid, &mut rng, &mut sums);
        }
        sums
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = ssa_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Solver { msg: format!("thread pool: {e}"), residual: f64::NAN })?;
    let parts: Vec<ChunkSums> = pool.install(|| (0..chunks).into_par_iter().map(work).collect());
    let mut total = vec![[0.0; 6]; n_grid];
    let mut hist = vec![0u64; s0 + 1];
    for p in &parts {
        for (t, s) in total.iter_mut().zip(&p.powers) {
            for j in 0..6 {
                t[j] += s[j];
            }
        }
        for (h, c) in hist.iter_mut().zip(&p.hist) {
            *h += c;
        }
    }
    let n = n_traj as f64;
    let moments = total.iter().map(|s| [s[0] / n, s[1] / n, s[2] / n]).collect();
    let stderr = total
        .iter()
        .map(|s| {
            let se = |j: usize| {
                let mean = s[j] / n;
                let var = (s[2 * j + 1] / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
                (var / n).sqrt()
            };
            [se(0), se(1), se(2)]
        })
        .collect();
    Ok(SsaResult { t: grid, moments, stderr, final_histogram: hist, n_traj })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_two_matrices() {
        let (k1, k2) = (0.7, 2.3);
        let model = DimerizationModel::new(k1, k2, 6, 2).unwrap();
        let s0 = 10.0;
        let m = build_moment_matrices(&model, 2).unwrap();
        let a = [
            [0.0, 0.0, 0.0],
            [k2 * s0, 2.0 * k1 - k2, -2.0 * k1],
            [2.0 * k2 * s0, 2.0 * k2 * (s0 - 1.0) - 4.0 * k1, 8.0 * k1 - 2.0 * k2],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.a[i][j] - a[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(m.b, vec![vec![0.0], vec![0.0], vec![-4.0 * k1]]);
        assert!(build_moment_matrices(&model, 1).is_err());
    }

    #[test]
    fn no_dimerization() {
        let model = DimerizationModel::new(0.0, 1.5, 2, 3).unwrap();
        let m = build_moment_matrices(&model, 2).unwrap();
        assert_eq!(m.a[1][..2], [1.5 * 8.0, -1.5]);
        assert!(m.b.iter().all(|r| r[0] == 0.0));
    }

    fn exact_check(mc: usize) {
        // Compare against d/dt E[M^j] from the exact master equation on S0 = 4.
        let model = DimerizationModel::new(0.9, 1.7, 4, 0).unwrap();
        let p = [0.2, 0.5, 0.3];
        let states = [0.0f64, 2.0, 4.0];
        let mut dp = [0.0; 3];
        for i in 0..3 {
            let (a1, a2) = model.rates(states[i] as u32);
            dp[i] -= (a1 + a2) * p[i];
            if i > 0 {
                dp[i - 1] += a1 * p[i];
            }
            if i < 2 {
                dp[i + 1] += a2 * p[i];
            }
        }
        let mom = |j: i32, w: &[f64]| -> f64 { states.iter().zip(w).map(|(x, w)| x.powi(j) * w).sum() };
        let mu: Vec<f64> = (0..=mc as i32).map(|j| mom(j, &p)).collect();
        let zeta = mom(mc as i32 + 1, &p);
        let m = build_moment_matrices(&model, mc).unwrap();
        for j in 1..=mc {
            let lhs = mom(j as i32, &dp);
            let rhs: f64 = m.a[j].iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() + m.b[j][0] * zeta;
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{mc} {j}: {lhs} {rhs}");
        }
        for j in 1..mc {
            assert_eq!(m.b[j][0], 0.0);
        }
    }

    #[test]
    fn generator_matches_master_equation() {
        exact_check(2);
        exact_check(3);
        exact_check(4);
    }

    #[test]
    fn two_point_support_closure() {
        let model = DimerizationModel::new(1.0, 1.0, 1, 0).unwrap();
        let z = closure_phi(&[1.0, 0.3, 0.3], &model, 2, 1e-3).unwrap();
        assert!((z[0] - 0.3).abs() < 2e-3, "{z:?}");
    }

    #[test]
    fn uniform_is_a_fixed_point() {
        let model = DimerizationModel::new(1.0, 1.0, 6, 0).unwrap();
        let mom = |j: i32| (0..=6).map(|x| (x as f64).powi(j)).sum::<f64>() / 7.0;
        let z = closure_phi(&[1.0, mom(1), mom(2)], &model, 2, 1e-3).unwrap();
        assert!((z[0] - mom(3)).abs() < 0.05, "{} vs {}", z[0], mom(3));
    }

    #[test]
    fn unreachable_moments_fail() {
        let model = DimerizationModel::new(1.0, 1.0, 4, 0).unwrap();
        let mut c = Closure::new(model, 2, 0.01, ClosureSupport::Full).unwrap();
        c.max_iters = 5_000;
        assert!(matches!(c.phi(&[1.0, 2.0, 1.0]), Err(Error::Closure(_))));
    }

    #[test]
    fn stationary_law_balances() {
        let model = DimerizationModel::new(1.0, 10.0, 4, 0).unwrap();
        let pi = stationary_distribution(&model).unwrap();
        // detailed balance between 2 and 4 and between 0 and 2
        let (a1_4, _) = model.rates(4);
        let (_, a2_2) = model.rates(2);
        assert!((pi[2].1 * a1_4 - pi[1].1 * a2_2).abs() < 1e-12);
        let total: f64 = pi.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_ssa() {
        let model = DimerizationModel::new(0.0, 1.0, 7, 0).unwrap();
        let r = ssa_simulate(&model, 1.0, 5, 10, 3).unwrap();
        for m in &r.moments {
            assert_eq!(m[0], 7.0);
        }
    }

    #[test]
    fn ssa_is_deterministic_and_conserves_parity() {
        let model = DimerizationModel::new(1.0, 2.0, 5, 1).unwrap();
        let a = ssa_simulate(&model, 2.0, 11, 3000, 42).unwrap();
        let b = ssa_simulate(&model, 2.0, 11, 3000, 42).unwrap();
        assert_eq!(a, b);
        for (m, c) in a.final_histogram.iter().enumerate() {
            if m % 2 == 0 {
                assert_eq!(*c, 0);
            }
        }
    }

    #[test]
    fn ssa_matches_stationary_law() {
        let model = DimerizationModel::new(1.0, 3.0, 4, 0).unwrap();
        let r = ssa_simulate(&model, 20.0, 2, 20_000, 7).unwrap();
        let pi = stationary_distribution(&model).unwrap();
        let n = r.n_traj as f64;
        for (m, p) in pi {
            let f = r.final_histogram[m as usize] as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((f - p).abs() <= 3.0 * se, "{m}: {f} vs {p}");
        }
    }

    #[test]
    fn steady_start_stays_put() {
        let model = DimerizationModel::new(1.0, 10.0, 10, 0).unwrap();
        let mats = build_moment_matrices(&model, 2).unwrap();
        let mut c = Closure::new(model, 2, 0.01, ClosureSupport::Full).unwrap();
        // Find the closed steady state by integrating, then restart there.
        let opts = IntegrationOptions { t_end: 4.0, ..Default::default() };
        let tr = integrate_moments_with(&model, 2, &opts, None).unwrap();
        let s = tr.last().to_vec();
        let z = c.phi(&s).unwrap()[0];
        let d1: f64 = mats.a[1].iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() + mats.b[1][0] * z;
        assert!(d1.abs() < 1e-4, "{d1}");
        let short = IntegrationOptions { t_end: 0.1, ..Default::default() };
        let tr2 = integrate_moments_with(&model, 2, &short, Some(&s)).unwrap();
        assert!((tr2.last()[1] - s[1]).abs() < 1e-6);
    }
}
