//! Benchmark power allocators.
//!
//! WMMSE and FP both start at full power and stop when the sum rate moves by
//! less than their tolerance between iterations. With unit weights their
//! closed-form updates generate the same iterates, so the two differ only in
//! where they stop.

use rand::Rng;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::netsim::{sum_rate, LinkGains};
use crate::scalar::{lit, Scalar};

/// Output of an iterative allocator.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocatorResult<T> {
    pub powers: Vec<T>,
    pub iterations: usize,
    /// Sum rate at the starting point followed by one entry per iteration.
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> AllocatorResult<T> {
    pub fn objective(&self) -> T {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Names accepted by [`Allocator::from_name`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Allocator {
    Full,
    Random,
    Wmmse,
    Fp,
    FpDelayed,
}

impl Allocator {
    pub const ALL: [Allocator; 5] = [
        Allocator::Full,
        Allocator::Random,
        Allocator::FpDelayed,
        Allocator::Fp,
        Allocator::Wmmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Allocator::Full => "full",
            Allocator::Random => "random",
            Allocator::Wmmse => "wmmse",
            Allocator::Fp => "fp",
            Allocator::FpDelayed => "fp_delayed",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{name}` (expected one of full, random, wmmse, fp, fp_delayed)")))
    }
}

pub fn full_power<T: Scalar>(n: usize, pmax: T) -> Vec<T> {
    vec![pmax; n]
}

/// I.i.d. uniform powers on `[0, P_max]`.
pub fn random_power<T: Scalar, R: Rng + ?Sized>(n: usize, pmax: T, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| pmax * lit(rng.random::<f64>())).collect()
}

fn check_finite<T: Scalar>(gains: &LinkGains<T>) -> Result<()> {
    if gains.matrix().iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("gain matrix".into()))
    }
}

/// Runs `update` until the sum rate settles.
fn iterate<T: Scalar>(
    gains: &LinkGains<T>,
    noise: T,
    tol: f64,
    max_iter: usize,
    mut powers: Vec<T>,
    mut update: impl FnMut(&mut Vec<T>),
) -> AllocatorResult<T> {
    let tol = lit::<T>(tol);
    let mut trace = vec![sum_rate(gains, &powers, noise)];
    let mut iterations = 0;
    while iterations < max_iter {
        update(&mut powers);
        iterations += 1;
        let f = sum_rate(gains, &powers, noise);
        let delta = (f - trace[trace.len() - 1]).abs();
        trace.push(f);
        if delta < tol {
            break;
        }
    }
    AllocatorResult {
        powers,
        iterations,
        objective_trace: trace,
    }
}

/// Scalar WMMSE over amplitudes `v = √p`.
pub fn wmmse<T: Scalar>(gains: &LinkGains<T>, pmax: T, noise: T, cfg: &SolverConfig) -> Result<AllocatorResult<T>> {
    check_finite(gains)?;
    let n = gains.num_links();
    let vmax = pmax.sqrt();
    let sqrt_direct: Vec<T> = (0..n).map(|i| gains.direct(i).sqrt()).collect();
    let mut v = vec![vmax; n];
    let mut u = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    Ok(iterate(gains, noise, cfg.wmmse_tol, cfg.max_iter, full_power(n, pmax), |powers| {
        for i in 0..n {
            let total = (0..n).map(|m| gains.get(m, i) * v[m] * v[m]).sum::<T>() + noise;
            u[i] = sqrt_direct[i] * v[i] / total;
            w[i] = T::one() / (T::one() - u[i] * sqrt_direct[i] * v[i]);
        }
        for i in 0..n {
            let num = w[i] * u[i] * sqrt_direct[i];
            let den: T = (0..n).map(|m| w[m] * u[m] * u[m] * gains.get(i, m)).sum();
            v[i] = if den > T::zero() {
                (num / den).max(T::zero()).min(vmax)
            } else {
                T::zero()
            };
        }
        for (p, vi) in powers.iter_mut().zip(&v) {
            *p = (*vi * *vi).min(pmax);
        }
    }))
}

/// Fractional programming with the quadratic transform.
pub fn fp<T: Scalar>(gains: &LinkGains<T>, pmax: T, noise: T, cfg: &SolverConfig) -> Result<AllocatorResult<T>> {
    check_finite(gains)?;
    let n = gains.num_links();
    let mut y = vec![T::zero(); n];
    let mut gamma = vec![T::zero(); n];
    Ok(iterate(gains, noise, cfg.fp_tol, cfg.max_iter, full_power(n, pmax), |p| {
        for i in 0..n {
            let total = (0..n).map(|m| gains.get(m, i) * p[m]).sum::<T>() + noise;
            let signal = gains.direct(i) * p[i];
            gamma[i] = signal / (total - signal);
            y[i] = ((T::one() + gamma[i]) * signal).sqrt() / total;
        }
        for i in 0..n {
            let den: T = (0..n).map(|m| y[m] * y[m] * gains.get(i, m)).sum();
            let num = y[i] * y[i] * (T::one() + gamma[i]) * gains.direct(i);
            p[i] = if den > T::zero() {
                (num / (den * den)).max(T::zero()).min(pmax)
            } else {
                T::zero()
            };
        }
    }))
}

/// Powers for each slot computed by FP on the previous slot's gains; the
/// first slot uses full power.
pub fn fp_delayed<T: Scalar>(
    gain_history: &[LinkGains<T>],
    pmax: T,
    noise: T,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<T>>> {
    let mut out = Vec::with_capacity(gain_history.len());
    for (t, gains) in gain_history.iter().enumerate() {
        out.push(if t == 0 {
            full_power(gains.num_links(), pmax)
        } else {
            fp(&gain_history[t - 1], pmax, noise, cfg)?.powers
        });
    }
    Ok(out)
}

/// Largest instance the exhaustive search accepts.
pub const GRID_MAX_LINKS: usize = 3;

/// Exhaustive search over `grid_points` evenly spaced levels per link
/// (including 0 and `P_max`). Ties go to the first lattice point found.
pub fn grid_oracle<T: Scalar>(gains: &LinkGains<T>, pmax: T, noise: T, grid_points: usize) -> Result<AllocatorResult<T>> {
    check_finite(gains)?;
    let n = gains.num_links();
    if n > GRID_MAX_LINKS {
        return Err(Error::InvalidArgument(format!(
            "grid oracle supports at most {GRID_MAX_LINKS} links, got {n}"
        )));
    }
    if grid_points < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
    }
    let step = pmax / lit((grid_points - 1) as f64);
    let level = |k: usize| if k == grid_points - 1 { pmax } else { step * lit(k as f64) };
    let total = grid_points.pow(n as u32);
    let mut idx = vec![0usize; n];
    let mut p = vec![T::zero(); n];
    let mut best = (T::neg_infinity(), p.clone());
    for _ in 0..total {
        for (pi, &k) in p.iter_mut().zip(&idx) {
            *pi = level(k);
        }
        let f = sum_rate(gains, &p, noise);
        if f > best.0 {
            best = (f, p.clone());
        }
        for k in idx.iter_mut() {
            *k += 1;
            if *k < grid_points {
                break;
            }
            *k = 0;
        }
    }
    Ok(AllocatorResult {
        powers: best.1,
        iterations: total,
        objective_trace: vec![best.0],
    })
}
