//! Property checks shared by the proptest suite and the acceptance target.
#![allow(dead_code)]

use std::sync::Arc;

use capax::cont::{poisson_tail_bound, smoothed_dual_cts, truncate_kernel, PoissonChannelSpec, QuadConfig};
use capax::dmc::{
    dual_f, dual_g, posterior_gap, smoothed_dual_g, CostMode, DiscreteChannel, InputCostConstraint,
};
use capax::maxent::{smoothed_dual, solve_maxent_with, MaxEntMode, MaxEntOptions, MomentData};

pub type Check = Result<(), String>;

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

pub fn channel(rows: &[Vec<f64>]) -> DiscreteChannel {
    DiscreteChannel::new(rows.iter().map(|r| normalize(r)).collect()).unwrap()
}

fn rel_err(fd: &[f64], g: &[f64]) -> f64 {
    let diff: f64 = fd.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-6)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += h;
            m[j] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// F + G_nu for a discrete channel against finite differences.
pub fn dmc_gradient(ch: &DiscreteChannel, lam: &[f64], nu: f64) -> Check {
    let obj = |l: &[f64]| dual_f(l).unwrap().0 + smoothed_dual_g(ch, l, nu, None).unwrap().0;
    let (_, gf) = dual_f(lam).unwrap();
    let (_, gg, _) = smoothed_dual_g(ch, lam, nu, None).unwrap();
    let g: Vec<f64> = gf.iter().zip(&gg).map(|(a, b)| a + b).collect();
    let fd = central_difference(obj, lam, 1e-5);
    let e = rel_err(&fd, &g);
    if e <= 1e-5 { Ok(()) } else { Err(format!("dmc gradient rel err {e:e}")) }
}

/// G_nu for the truncated Poisson channel.
pub fn poisson_gradient(a: f64, eta: f64, m: usize, lam: &[f64], nu: f64) -> Check {
    let spec = PoissonChannelSpec::new(a, eta).unwrap();
    let trunc = truncate_kernel(Arc::new(spec), m).unwrap();
    let q = QuadConfig::default();
    let obj = |l: &[f64]| smoothed_dual_cts(&trunc, l, nu, &q, None).unwrap().0;
    let (_, g) = smoothed_dual_cts(&trunc, lam, nu, &q, None).unwrap();
    let fd = central_difference(obj, lam, 1e-5);
    let e = rel_err(&fd, &g);
    if e <= 1e-4 { Ok(()) } else { Err(format!("continuous gradient rel err {e:e}")) }
}

/// Smoothed max-ent dual on [0, 1].
pub fn maxent_gradient(y: &[f64], u: f64, z: &[f64], eta1: f64, eta2: f64) -> Check {
    let data = MomentData::uniform_interval(y.to_vec(), vec![u; y.len()], 0.0, 1.0).unwrap();
    let obj = |v: &[f64]| smoothed_dual(v, &data, eta1, eta2).unwrap().0;
    let (_, g) = smoothed_dual(z, &data, eta1, eta2).unwrap();
    let fd = central_difference(obj, z, 1e-5);
    let e = rel_err(&fd, &g);
    if e <= 1e-4 { Ok(()) } else { Err(format!("max-ent gradient rel err {e:e}")) }
}

/// G_nu <= G <= G_nu + nu log2 N.
pub fn sandwich(ch: &DiscreteChannel, lam: &[f64], nu: f64, cost: Option<&InputCostConstraint>) -> Check {
    let g = dual_g(ch, lam, cost);
    let (gn, _, _) = smoothed_dual_g(ch, lam, nu, cost).unwrap();
    let slack = 1e-10 * (1.0 + g.abs());
    let top = gn + nu * (ch.n() as f64).log2();
    if gn <= g + slack && g <= top + slack {
        Ok(())
    } else {
        Err(format!("G_nu {gn} G {g} G_nu + nu log2 N {top}"))
    }
}

pub fn tail_bound(a: f64, eta: f64, k: f64, m: usize) -> Check {
    let spec = PoissonChannelSpec::new(a, eta).unwrap();
    let b = poisson_tail_bound(&spec, k, m).unwrap();
    if b.rk >= b.series { Ok(()) } else { Err(format!("k {k} M {m}: bound {} below series {}", b.rk, b.series)) }
}

/// F(lambda) + G(lambda) - I(p, W) >= 0 for any feasible p.
pub fn weak_duality(ch: &DiscreteChannel, lam: &[f64], p: &[f64], cost: Option<&InputCostConstraint>) -> Check {
    let gap = posterior_gap(ch, lam, p, cost).unwrap();
    if gap >= -1e-12 { Ok(()) } else { Err(format!("negative duality gap {gap}")) }
}

/// Cost vector and budget that a given p meets with equality.
pub fn cost_through(p: &[f64], s: &[f64]) -> InputCostConstraint {
    let b: f64 = p.iter().zip(s).map(|(a, b)| a * b).sum();
    InputCostConstraint::new(s.to_vec(), b, CostMode::Equality).unwrap()
}

fn kl_uniform(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter().filter(|v| **v > 0.0).map(|v| v * (v * n).log2()).sum()
}

fn feasible(p: &[f64], pts: &[f64], y: &[f64], u: f64) -> bool {
    y.iter().enumerate().all(|(j, yj)| {
        let m: f64 = p.iter().zip(pts).map(|(a, x)| a * x.powi(j as i32 + 1)).sum();
        (m - yj).abs() <= u
    })
}

/// Minimum of KL(p || uniform) over the moment box, by a grid on the
/// simplex refined around the incumbent.
pub fn grid_min_kl(pts: &[f64], y: &[f64], u: f64) -> Option<f64> {
    let n = pts.len();
    let free = n - 1;
    let base = match free {
        1 => 20_000,
        2 => 1500,
        3 => 120,
        4 => 36,
        _ => 20,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let scan = |lo: &[f64], step: f64, per: usize, best: &mut Option<(f64, Vec<f64>)>| -> bool {
        // Returns whether the incumbent moved to the edge of the window.
        let mut edge = false;
        let mut idx = vec![0usize; free];
        loop {
            let q: Vec<f64> = (0..free).map(|j| lo[j] + idx[j] as f64 * step).collect();
            let last = 1.0 - q.iter().sum::<f64>();
            if q.iter().all(|v| *v >= 0.0) && last >= -1e-15 {
                let mut p = q.clone();
                p.push(last.max(0.0));
                if feasible(&p, pts, y, u) {
                    let v = kl_uniform(&p);
                    if best.as_ref().is_none_or(|(b, _)| v < *b) {
                        edge = idx.iter().any(|&i| i == 0 || i + 1 == per);
                        *best = Some((v, q));
                    }
                }
            }
            let mut j = 0;
            while j < free {
                idx[j] += 1;
                if idx[j] < per {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == free {
                return edge;
            }
        }
    };
    let mut step = 1.0 / base as f64;
    scan(&vec![0.0; free], step, base + 1, &mut best);
    for _level in 0..7 {
        step /= 5.0;
        for _ in 0..200 {
            let Some((_, q)) = &best else { return None };
            let lo: Vec<f64> = q.iter().map(|v| v - 10.0 * step).collect();
            if !scan(&lo, step, 21, &mut best) {
                break;
            }
        }
    }
    best.map(|(v, _)| v)
}

/// Finite max-ent KL value against the grid minimum.
pub fn finite_maxent(pts: &[f64], y: &[f64], u: f64) -> Check {
    let Some(grid) = grid_min_kl(pts, y, u) else {
        return Err("grid found no feasible point".into());
    };
    let data = MomentData::uniform_finite(y.to_vec(), vec![u; y.len()], pts.to_vec()).unwrap();
    let opts = MaxEntOptions { check_every: Some(500), ..MaxEntOptions::default() };
    let r = solve_maxent_with(&data, 1e-3, MaxEntMode::Finite, &opts).map_err(|e| e.to_string())?;
    let kl = r.kl_value;
    let lower = -r.entropy_upper;
    let upper = r.entropy_lower.map_or(f64::INFINITY, |v| -v);
    // The grid value only bounds the minimum from above.
    if (kl - grid).abs() <= 1e-3 && lower <= grid + 1e-9 {
        Ok(())
    } else {
        Err(format!("solver KL {kl} in [{lower}, {upper}], grid {grid}"))
    }
}
