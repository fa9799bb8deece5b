//! Per-agent observation vectors.
//!
//! A state for link `n` at slot `t` has `6 + 10c` ports:
//!
//! | group        | ports | contents                                                                 |
//! |--------------|-------|--------------------------------------------------------------------------|
//! | local        | 6     | `p_n(t-1)`, `C_n(t-1)`, `g_nn(t)`, `g_nn(t-1)`, `ipn_n(t-1)`, `ipn_n(t-2)` |
//! | interferers  | 3c    | per `i` in `Ī_n(t)`: `g_in(t) p_i(t-1)`, `C_i(t-1)`, `p_i(t-1)`          |
//! | interferer history | 3c | per `i` in `Ī_n(t-1)`: `g_in(t-1) p_i(t-2)`, `C_i(t-2)`, `p_i(t-2)`   |
//! | interfered   | 4c    | per `o` in `Ō_n(t)`: `g_oo(t-1)`, `C_o(t-1)`, share, `g_no(t') p_n(t')`  |
//!
//! `ipn` is interference plus noise and `t'` is the last slot in which `n`
//! transmitted. Virtual neighbors fill unused slots with `(0, -1, 0)` or
//! `(0, -1, 0, 0)`. The only slot-`t` quantities read are the current
//! direct and cross gains.

use crate::config::NeighborConfig;
use crate::netsim::{LinkGains, Neighbor, NeighborSets, SlotLog};
use crate::scalar::{from_db, lit, to_db, Scalar};

/// Number of local ports.
pub const LOCAL_PORTS: usize = 6;

/// Observation dimension for neighbor cap `c`.
pub const fn state_dim(cap: usize) -> usize {
    LOCAL_PORTS + 10 * cap
}

/// Physical kind of a port, which decides its normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PortKind {
    Power,
    Rate,
    Gain,
    ReceivedPower,
    Share,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortGroup {
    Local,
    Interferer,
    InterfererHistory,
    Interfered,
}

/// Where one port's value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Port {
    pub group: PortGroup,
    /// Neighbor position within the group (0 for local ports).
    pub position: usize,
    pub name: &'static str,
    pub kind: PortKind,
    /// Slot the value was measured in, or `None` for padding.
    pub slot: Option<i64>,
    /// Link the value describes, or `None` for padding.
    pub source: Option<usize>,
}

/// Fixed logarithmic map of one port kind onto roughly `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct LogAnchor<T> {
    floor: T,
    db_zero: T,
    db_span: T,
}

impl<T: Scalar> LogAnchor<T> {
    fn new(zero: T, one: T, floor: T) -> Self {
        let db_zero = to_db(zero + floor);
        Self {
            floor,
            db_zero,
            db_span: to_db(one + floor) - db_zero,
        }
    }

    fn forward(&self, x: T) -> T {
        (to_db(x + self.floor) - self.db_zero) / self.db_span
    }

    fn inverse(&self, y: T) -> T {
        from_db(y * self.db_span + self.db_zero) - self.floor
    }
}

/// Deterministic, state-independent input scaling anchored on `P_max` and
/// the noise power.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer<T> {
    power: LogAnchor<T>,
    gain: LogAnchor<T>,
    received: LogAnchor<T>,
    rate_scale: T,
}

impl<T: Scalar> Normalizer<T> {
    /// Rates are divided by this many bps/Hz.
    pub const RATE_SCALE: f64 = 10.0;
    /// Received-power ports map `noise` to 0 and `noise · 10^6` to 1.
    pub const RECEIVED_SPAN: f64 = 1e6;

    pub fn new(pmax: T, noise: T) -> Self {
        let span = lit::<T>(Self::RECEIVED_SPAN);
        let floor = noise * lit(1e-2);
        Self {
            power: LogAnchor::new(T::zero(), pmax, pmax * lit(1e-3)),
            gain: LogAnchor::new(noise / pmax, noise * span / pmax, floor / pmax),
            received: LogAnchor::new(noise, noise * span, floor),
            rate_scale: lit(Self::RATE_SCALE),
        }
    }

    pub fn normalize(&self, kind: PortKind, x: T) -> T {
        match kind {
            PortKind::Power => self.power.forward(x),
            PortKind::Gain => self.gain.forward(x),
            PortKind::ReceivedPower => self.received.forward(x),
            PortKind::Rate => x / self.rate_scale,
            PortKind::Share => x,
        }
    }

    pub fn denormalize(&self, kind: PortKind, y: T) -> T {
        match kind {
            PortKind::Power => self.power.inverse(y),
            PortKind::Gain => self.gain.inverse(y),
            PortKind::ReceivedPower => self.received.inverse(y),
            PortKind::Rate => y * self.rate_scale,
            PortKind::Share => y,
        }
    }
}

/// Everything a state at slot `t` may read.
#[derive(Clone, Copy, Debug)]
pub struct StateInputs<'a, T> {
    /// Gains measured at the start of slot `t`.
    pub gains_now: &'a LinkGains<T>,
    /// Log of slot `t-1`.
    pub prev: &'a SlotLog<T>,
    /// Log of slot `t-2`.
    pub prev2: &'a SlotLog<T>,
    /// Neighbor sets for slot `t`.
    pub sets: &'a NeighborSets<T>,
    /// Neighbor sets for slot `t-1`.
    pub prev_sets: &'a NeighborSets<T>,
}

/// A built observation.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentObservation<T> {
    pub values: Vec<T>,
    pub raw: Vec<T>,
}

/// Builds observations for a fixed neighbor cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateBuilder<T> {
    cap: usize,
    virtual_rate: T,
    normalizer: Normalizer<T>,
}

const INTERFERER_NAMES: [&str; 3] = ["rx_power", "rate", "power"];
const INTERFERED_NAMES: [&str; 4] = ["direct_gain", "rate", "share", "rx_power"];
const INTERFERER_KINDS: [PortKind; 3] = [PortKind::ReceivedPower, PortKind::Rate, PortKind::Power];
const INTERFERED_KINDS: [PortKind; 4] = [PortKind::Gain, PortKind::Rate, PortKind::Share, PortKind::ReceivedPower];

impl<T: Scalar> StateBuilder<T> {
    pub fn new(neighbors: &NeighborConfig, pmax: T, noise: T) -> Self {
        Self {
            cap: neighbors.cap,
            virtual_rate: lit(neighbors.virtual_rate),
            normalizer: Normalizer::new(pmax, noise),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn dim(&self) -> usize {
        state_dim(self.cap)
    }

    pub fn normalizer(&self) -> &Normalizer<T> {
        &self.normalizer
    }

    /// Raw and normalized observation for link `n`.
    pub fn observe(&self, inputs: &StateInputs<'_, T>, n: usize) -> AgentObservation<T> {
        let mut raw = Vec::with_capacity(self.dim());
        let mut values = Vec::with_capacity(self.dim());
        self.emit(inputs, n, &mut |port, x| {
            raw.push(x);
            values.push(self.normalizer.normalize(port.kind, x));
        });
        AgentObservation { values, raw }
    }

    /// Normalized observation only.
    pub fn state(&self, inputs: &StateInputs<'_, T>, n: usize) -> Vec<T> {
        let mut values = Vec::with_capacity(self.dim());
        self.emit(inputs, n, &mut |port, x| values.push(self.normalizer.normalize(port.kind, x)));
        values
    }

    /// Labelled ports with raw values, in vector order.
    pub fn explain(&self, inputs: &StateInputs<'_, T>, n: usize) -> Vec<(Port, T)> {
        let mut out = Vec::with_capacity(self.dim());
        self.emit(inputs, n, &mut |port, x| out.push((port, x)));
        out
    }

    fn emit(&self, inputs: &StateInputs<'_, T>, n: usize, sink: &mut impl FnMut(Port, T)) {
        let StateInputs {
            gains_now,
            prev,
            prev2,
            sets,
            prev_sets,
        } = *inputs;
        let t = prev.slot + 1;
        let local = |name, kind, slot| Port {
            group: PortGroup::Local,
            position: 0,
            name,
            kind,
            slot: Some(slot),
            source: Some(n),
        };
        sink(local("power", PortKind::Power, prev.slot), prev.powers[n]);
        sink(local("rate", PortKind::Rate, prev.slot), prev.rates[n]);
        sink(local("direct_gain", PortKind::Gain, t), gains_now.direct(n));
        sink(local("direct_gain", PortKind::Gain, prev.slot), prev.direct_gain(n));
        sink(local("ipn", PortKind::ReceivedPower, prev.slot), prev.interference_plus_noise[n]);
        sink(local("ipn", PortKind::ReceivedPower, prev2.slot), prev2.interference_plus_noise[n]);

        // Current interferers: today's gain with yesterday's power.
        self.emit_interferers(sink, PortGroup::Interferer, &sets.interferers[n], |i| {
            (
                [gains_now.get(i, n) * prev.powers[i], prev.rates[i], prev.powers[i]],
                [t, prev.slot, prev.slot],
            )
        });
        self.emit_interferers(sink, PortGroup::InterfererHistory, &prev_sets.interferers[n], |i| {
            (
                [prev.gains.get(i, n) * prev2.powers[i], prev2.rates[i], prev2.powers[i]],
                [prev.slot, prev2.slot, prev2.slot],
            )
        });

        let last_active = sets.last_active_slot[n];
        for (position, entry) in sets.interfered[n].iter().enumerate() {
            let (values, slots, source) = match entry {
                Neighbor::Real(o, e) => (
                    [prev.direct_gain(*o), prev.rates[*o], e.share, e.received],
                    [Some(prev.slot), Some(prev.slot), Some(prev.slot), last_active],
                    Some(*o),
                ),
                Neighbor::Virtual => ([T::zero(), self.virtual_rate, T::zero(), T::zero()], [None; 4], None),
            };
            for k in 0..4 {
                sink(
                    Port {
                        group: PortGroup::Interfered,
                        position,
                        name: INTERFERED_NAMES[k],
                        kind: INTERFERED_KINDS[k],
                        slot: slots[k],
                        source,
                    },
                    values[k],
                );
            }
        }
    }

    fn emit_interferers(
        &self,
        sink: &mut impl FnMut(Port, T),
        group: PortGroup,
        list: &[Neighbor<()>],
        measure: impl Fn(usize) -> ([T; 3], [i64; 3]),
    ) {
        for (position, entry) in list.iter().enumerate() {
            let (values, slots, source) = match entry {
                Neighbor::Real(i, ()) => {
                    let (values, slots) = measure(*i);
                    (values, slots.map(Some), Some(*i))
                }
                Neighbor::Virtual => ([T::zero(), self.virtual_rate, T::zero()], [None; 3], None),
            };
            for k in 0..3 {
                sink(
                    Port {
                        group,
                        position,
                        name: INTERFERER_NAMES[k],
                        kind: INTERFERER_KINDS[k],
                        slot: slots[k],
                        source,
                    },
                    values[k],
                );
            }
        }
    }
}
