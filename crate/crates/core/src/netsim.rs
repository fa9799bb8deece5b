//! Per-slot network physics: SINR, spectral efficiency, the sum-rate
//! objective, interfering/interfered neighbor sets and the externality-based
//! reward.

use std::cmp::Ordering;

use ndarray::Array2;

use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Link-level gains `g[m, n] = ḡ[b_m, n]`: rows are transmitters (the AP
/// serving link `m`), columns are receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkGains<T> {
    g: Array2<T>,
}

impl<T: Scalar> LinkGains<T> {
    pub fn from_matrix(g: Array2<T>) -> Result<Self> {
        if g.nrows() != g.ncols() {
            return Err(Error::shape("square link gain matrix", format!("{:?}", g.dim())));
        }
        if g.iter().any(|x| !x.is_finite() || *x < T::zero()) {
            return Err(Error::NonFinite("link gains".into()));
        }
        Ok(Self { g })
    }

    pub fn from_cell_gains(cells: &GainMatrix<T>, associations: &[usize]) -> Result<Self> {
        let n = cells.num_devices();
        if associations.len() != n {
            return Err(Error::shape(n, associations.len()));
        }
        let mut g = Array2::zeros((n, n));
        for (m, &b) in associations.iter().enumerate() {
            if b >= cells.num_cells() {
                return Err(Error::InvalidArgument(format!("association {b} out of range")));
            }
            g.row_mut(m).assign(&cells.g_bar.row(b));
        }
        Ok(Self { g })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            g: Array2::zeros((n, n)),
        }
    }

    pub fn num_links(&self) -> usize {
        self.g.nrows()
    }

    #[inline]
    pub fn get(&self, tx: usize, rx: usize) -> T {
        self.g[[tx, rx]]
    }

    #[inline]
    pub fn direct(&self, n: usize) -> T {
        self.g[[n, n]]
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.g
    }
}

/// `Σ_{m≠n} g_{m→n} p_m + σ²`.
pub fn interference_plus_noise<T: Scalar>(gains: &LinkGains<T>, powers: &[T], noise: T, n: usize) -> T {
    let mut acc = noise;
    for (m, &p) in powers.iter().enumerate() {
        if m != n {
            acc += gains.get(m, n) * p;
        }
    }
    acc
}

/// SINR at receiver `n`.
pub fn sinr<T: Scalar>(gains: &LinkGains<T>, powers: &[T], noise: T, n: usize) -> T {
    gains.direct(n) * powers[n] / interference_plus_noise(gains, powers, noise, n)
}

/// `log2(1 + γ)` in bps/Hz.
#[inline]
pub fn spectral_efficiency<T: Scalar>(gamma: T) -> T {
    gamma.ln_1p() / T::LN_2()
}

pub fn link_rates<T: Scalar>(gains: &LinkGains<T>, powers: &[T], noise: T) -> Vec<T> {
    (0..powers.len())
        .map(|n| spectral_efficiency(sinr(gains, powers, noise, n)))
        .collect()
}

/// Sum of link rates.
pub fn sum_rate<T: Scalar>(gains: &LinkGains<T>, powers: &[T], noise: T) -> T {
    link_rates(gains, powers, noise).into_iter().sum()
}

/// Everything measured in one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotLog<T> {
    pub slot: i64,
    pub powers: Vec<T>,
    pub rates: Vec<T>,
    pub interference_plus_noise: Vec<T>,
    pub gains: LinkGains<T>,
    pub associations: Vec<usize>,
    pub noise: T,
}

impl<T: Scalar> SlotLog<T> {
    pub fn new(slot: i64, gains: LinkGains<T>, powers: Vec<T>, associations: Vec<usize>, noise: T) -> Self {
        let n = gains.num_links();
        assert_eq!(powers.len(), n);
        let ipn: Vec<T> = (0..n)
            .map(|i| interference_plus_noise(&gains, &powers, noise, i))
            .collect();
        let rates = (0..n)
            .map(|i| spectral_efficiency(gains.direct(i) * powers[i] / ipn[i]))
            .collect();
        Self {
            slot,
            powers,
            rates,
            interference_plus_noise: ipn,
            gains,
            associations,
            noise,
        }
    }

    /// Placeholder history before the first slot: nothing transmitted,
    /// nothing measured, interference at the noise floor.
    pub fn bootstrap(slot: i64, num_links: usize, noise: T) -> Self {
        Self {
            slot,
            powers: vec![T::zero(); num_links],
            rates: vec![T::zero(); num_links],
            interference_plus_noise: vec![noise; num_links],
            gains: LinkGains::zeros(num_links),
            associations: vec![0; num_links],
            noise,
        }
    }

    pub fn num_links(&self) -> usize {
        self.powers.len()
    }

    /// `g_{i→n} p_i`.
    #[inline]
    pub fn received_power(&self, tx: usize, rx: usize) -> T {
        self.gains.get(tx, rx) * self.powers[tx]
    }

    pub fn direct_gain(&self, n: usize) -> T {
        self.gains.direct(n)
    }

    pub fn sum_rate(&self) -> T {
        self.rates.iter().copied().sum()
    }

    /// Per-link average rate.
    pub fn mean_rate(&self) -> T {
        self.sum_rate() / lit(self.num_links() as f64)
    }
}

/// A neighbor-list entry: a real link, or a padding placeholder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Neighbor<D> {
    Real(usize, D),
    Virtual,
}

impl<D> Neighbor<D> {
    pub fn link(&self) -> Option<usize> {
        match self {
            Neighbor::Real(i, _) => Some(*i),
            Neighbor::Virtual => None,
        }
    }
}

/// Measurements an interfered neighbor contributes, fixed at the observing
/// agent's last active slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterferedEntry<T> {
    /// `g_{n→o} p_n` at the last active slot.
    pub received: T,
    /// `received` over the interference-plus-noise at `o` in the latest slot.
    pub share: T,
}

/// Capped and padded neighbor lists for every link.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSets<T> {
    pub cap: usize,
    /// Ī_n, prioritized by received interference at n.
    pub interferers: Vec<Vec<Neighbor<()>>>,
    /// Ō_n, prioritized by n's share of the interference at o.
    pub interfered: Vec<Vec<Neighbor<InterferedEntry<T>>>>,
    /// Last slot in which each link transmitted.
    pub last_active_slot: Vec<Option<i64>>,
}

impl<T: Scalar> NeighborSets<T> {
    /// All lists fully padded.
    pub fn empty(num_links: usize, cap: usize) -> Self {
        Self {
            cap,
            interferers: vec![vec![Neighbor::Virtual; cap]; num_links],
            interfered: vec![vec![Neighbor::Virtual; cap]; num_links],
            last_active_slot: vec![None; num_links],
        }
    }
}

/// Uncapped `I_n`: links whose received power at `n` exceeds `η σ²`.
pub fn interferers_of<T: Scalar>(log: &SlotLog<T>, n: usize, eta: T) -> Vec<usize> {
    let threshold = eta * log.noise;
    (0..log.num_links())
        .filter(|&i| i != n && log.received_power(i, n) > threshold)
        .collect()
}

/// Uncapped `O_n`: receivers at which link `n`'s power exceeds `η σ²`.
pub fn interfered_by<T: Scalar>(log: &SlotLog<T>, n: usize, eta: T) -> Vec<usize> {
    let threshold = eta * log.noise;
    (0..log.num_links())
        .filter(|&o| o != n && log.received_power(n, o) > threshold)
        .collect()
}

/// Sorts by key descending, ties broken by ascending index.
fn sort_desc<T: Scalar>(items: &mut [(usize, T)]) {
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
}

/// What each link's receivers looked like the last time that link transmitted.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSnapshot<T> {
    pub slot: i64,
    /// `(o, g_{n→o} p_n)` for every `o` above the threshold at that slot.
    pub received: Vec<(usize, T)>,
}

/// Tracks `O_n^{(t'_n + 1)}` where `t'_n` is link `n`'s last active slot.
#[derive(Clone, Debug, PartialEq)]
pub struct InterferedHistory<T> {
    entries: Vec<Option<ActiveSnapshot<T>>>,
}

impl<T: Scalar> InterferedHistory<T> {
    pub fn new(num_links: usize) -> Self {
        Self {
            entries: vec![None; num_links],
        }
    }

    /// Folds in a completed slot.
    pub fn record(&mut self, log: &SlotLog<T>, eta: T) {
        for n in 0..log.num_links() {
            if log.powers[n] > T::zero() {
                let received = interfered_by(log, n, eta)
                    .into_iter()
                    .map(|o| (o, log.received_power(n, o)))
                    .collect();
                self.entries[n] = Some(ActiveSnapshot {
                    slot: log.slot,
                    received,
                });
            }
        }
    }

    pub fn get(&self, n: usize) -> Option<&ActiveSnapshot<T>> {
        self.entries[n].as_ref()
    }
}

/// Neighbor lists for slot `t` from the slot `t-1` log and the activity
/// history (which must already include slot `t-1`).
pub fn compute_neighbor_sets<T: Scalar>(
    prev: &SlotLog<T>,
    history: &InterferedHistory<T>,
    eta: T,
    cap: usize,
) -> NeighborSets<T> {
    let n_links = prev.num_links();
    let mut sets = NeighborSets::empty(n_links, cap);
    for n in 0..n_links {
        let mut inter: Vec<(usize, T)> = interferers_of(prev, n, eta)
            .into_iter()
            .map(|i| (i, prev.received_power(i, n)))
            .collect();
        sort_desc(&mut inter);
        for (slot, (i, _)) in sets.interferers[n].iter_mut().zip(inter) {
            *slot = Neighbor::Real(i, ());
        }

        if let Some(snap) = history.get(n) {
            sets.last_active_slot[n] = Some(snap.slot);
            let mut shares: Vec<(usize, T)> = snap
                .received
                .iter()
                .map(|&(o, rx)| (o, rx / prev.interference_plus_noise[o]))
                .collect();
            sort_desc(&mut shares);
            for (slot, (o, share)) in sets.interfered[n].iter_mut().zip(shares) {
                let received = snap
                    .received
                    .iter()
                    .find(|(x, _)| *x == o)
                    .map(|&(_, r)| r)
                    .expect("present");
                *slot = Neighbor::Real(o, InterferedEntry { received, share });
            }
        }
    }
    sets
}

/// Rate `o` would get if link `n` were silent, minus its actual rate.
pub fn externality<T: Scalar>(log: &SlotLog<T>, n: usize, o: usize) -> T {
    let mut ipn = log.noise;
    for m in 0..log.num_links() {
        if m != o && m != n {
            ipn += log.received_power(m, o);
        }
    }
    let without = spectral_efficiency(log.received_power(o, o) / ipn);
    // Removing interference can never lower the rate; clamp rounding noise.
    (without - log.rates[o]).max(T::zero())
}

/// `C_n − Σ_{o ∈ O_n} π_{n→o}` over the supplied interfered set.
pub fn reward<T: Scalar>(log: &SlotLog<T>, interfered: &[usize], n: usize) -> T {
    let mut r = log.rates[n];
    for &o in interfered {
        r -= externality(log, n, o);
    }
    r
}

/// Rewards for every link, using the uncapped interfered sets derived from
/// the same slot.
pub fn rewards<T: Scalar>(log: &SlotLog<T>, eta: T) -> Vec<T> {
    (0..log.num_links())
        .map(|n| reward(log, &interfered_by(log, n, eta), n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn log_from(g: Array2<f64>, p: Vec<f64>, noise: f64) -> SlotLog<f64> {
        let n = p.len();
        SlotLog::new(0, LinkGains::from_matrix(g).unwrap(), p, vec![0; n], noise)
    }

    #[test]
    fn single_link_sinr() {
        let g = LinkGains::from_matrix(array![[4.0]]).unwrap();
        assert_eq!(sinr(&g, &[1.0], 1.0, 0), 4.0);
        assert_eq!(sinr(&g, &[0.0], 1.0, 0), 0.0);
    }

    #[test]
    fn rate_values() {
        assert_eq!(spectral_efficiency(0.0f64), 0.0);
        assert!((spectral_efficiency(4.0f64) - 5f64.log2()).abs() < 1e-15);
        assert!((spectral_efficiency(4.0f64) - 2.3219).abs() < 1e-4);
        assert!((spectral_efficiency(5.0f64) - 2.5850).abs() < 1e-4);
    }

    #[test]
    fn three_link_sinr_matches_direct_sum() {
        let g = array![[1.0, 0.2, 0.05], [0.3, 2.0, 0.1], [0.01, 0.4, 0.7]];
        let p = [0.5, 1.0, 0.25];
        let gains = LinkGains::from_matrix(g.clone()).unwrap();
        for n in 0..3 {
            let mut i: f64 = 0.1;
            for m in 0..3 {
                if m != n {
                    i += g[[m, n]] * p[m];
                }
            }
            let expect = g[[n, n]] * p[n] / i;
            assert!((sinr(&gains, &p, 0.1, n) - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn sum_rate_examples() {
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let log = log_from(g.clone(), vec![0.0, 0.0], 1.0);
        assert_eq!(log.sum_rate(), 0.0);
        let log = log_from(g * 4.0, vec![1.0, 1.0], 1.0);
        assert!((log.sum_rate() - 2.0 * 5f64.log2()).abs() < 1e-12);
        assert!((log.mean_rate() - 5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn threshold_membership() {
        // Interferer at 6σ² is in, at 4σ² is out.
        let g = array![[1.0, 6.0, 4.0], [0.0, 1.0, 0.0], [0.0, 4.0, 1.0]];
        let log = log_from(g, vec![1.0, 1.0, 1.0], 1.0);
        assert_eq!(interferers_of(&log, 1, 5.0), vec![0]);
        assert_eq!(interfered_by(&log, 0, 5.0), vec![1]);
    }

    #[test]
    fn short_lists_are_padded() {
        let g = array![[1.0, 6.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let log = log_from(g, vec![1.0, 1.0, 1.0], 1.0);
        let mut h = InterferedHistory::new(3);
        h.record(&log, 5.0);
        let sets = compute_neighbor_sets(&log, &h, 5.0, 3);
        assert_eq!(sets.interferers[1], vec![Neighbor::Real(0, ()), Neighbor::Virtual, Neighbor::Virtual]);
        assert!(sets.interferers[0].iter().all(|x| *x == Neighbor::Virtual));
        assert_eq!(sets.interfered[0][0].link(), Some(1));
        assert_eq!(sets.interfered[0].len(), 3);
        assert_eq!(sets.last_active_slot, vec![Some(0); 3]);
    }

    #[test]
    fn externality_two_link_case() {
        // g_oo p_o = 10σ², g_no p_n = σ².
        let g = array![[10.0, 0.0], [1.0, 1.0]];
        let log = log_from(g, vec![1.0, 1.0], 1.0);
        let pi = externality(&log, 1, 0);
        assert!((pi - (11f64.log2() - 6f64.log2())).abs() < 1e-12);
        assert!((pi - 0.8745).abs() < 1e-4);
        // o = 0 silent interferer direction: g_{0→1} = 0.
        assert_eq!(externality(&log, 0, 1), 0.0);
    }

    #[test]
    fn externality_of_silent_link_is_zero() {
        let g = array![[10.0, 3.0], [1.0, 1.0]];
        let log = log_from(g, vec![1.0, 0.0], 1.0);
        assert_eq!(externality(&log, 1, 0), 0.0);
    }

    #[test]
    fn reward_examples() {
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let log = log_from(g, vec![1.0, 1.0], 1.0);
        assert_eq!(reward(&log, &[], 0), log.rates[0]);
        // Zero own rate, one interfered link losing 0.8745.
        let g = array![[10.0, 0.0], [1.0, 0.0]];
        let log = log_from(g, vec![1.0, 1.0], 1.0);
        assert_eq!(log.rates[1], 0.0);
        let r = reward(&log, &[0], 1);
        assert!((r + (11f64.log2() - 6f64.log2())).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_log_is_silent() {
        let log = SlotLog::<f64>::bootstrap(-1, 4, 2.0);
        assert_eq!(log.interference_plus_noise, vec![2.0; 4]);
        assert_eq!(log.sum_rate(), 0.0);
    }
}
