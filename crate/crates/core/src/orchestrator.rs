//! Slot-level event loop: channel evolution, state building, ε-greedy
//! actions under a delayed broadcast policy, rewards, one-slot-late
//! experience delivery, centralized training and the episode schedule.
//! Also paired evaluation of a policy against the benchmark allocators.

use std::collections::VecDeque;
use std::io::Write;

use crate::agent_state::{StateBuilder, StateInputs};
use crate::baselines::{fp, full_power, random_power, wmmse, Allocator};
use crate::channel::{compose_gains, FadingField, GainMatrix, ShadowingField};
use crate::config::{MobilityConfig, NetworkConfig, PowerMap, RunConfig};
use crate::ddpg::{act, DdpgLearner, Experience, ReplayMemory};
use crate::error::{Error, Result};
use crate::geometry::{
    build_layout, init_devices, step_mobility, update_association, Association, Bounds, CellLayout,
    DeviceKinematics, MobilityParams,
};
use crate::netsim::{compute_neighbor_sets, rewards, sum_rate, InterferedHistory, LinkGains, NeighborSets, SlotLog};
use crate::nn::{Checkpoint, Mlp};
use crate::rng::{stream, SimRng, Stream};
use crate::scalar::{lit, watts_to_dbm, Scalar};

/// Device positions are sampled into the movement trace every this many slots.
pub const TRACE_PERIOD_SLOTS: u64 = 50;

/// Geometry, mobility and channel state of one deployment.
#[derive(Clone, Debug)]
pub struct World<T> {
    layout: CellLayout<T>,
    bounds: Bounds<T>,
    devices: Vec<DeviceKinematics<T>>,
    associations: Vec<Association>,
    shadowing: ShadowingField<T>,
    fading: FadingField<T>,
    cell_gains: GainMatrix<T>,
    gains: LinkGains<T>,
    mobility: MobilityParams<T>,
    register_slots: u64,
    carrier_hz: f64,
    slot_seconds: f64,
    doppler_override_hz: Option<f64>,
    min_distance_m: T,
    mobility_rng: SimRng,
    shadowing_rng: SimRng,
    fading_rng: SimRng,
    slot: u64,
    handovers: u64,
}

impl<T: Scalar> World<T> {
    /// Fresh deployment with the channel of slot 0.
    pub fn new(net: &NetworkConfig, mobility: &MobilityConfig, seed: u64) -> Result<Self> {
        let layout = build_layout(net.num_cells, lit::<T>(net.cell_radius_m))?;
        let max_speed = lit::<T>(mobility.effective_max_speed());
        let (devices, associations): (Vec<_>, Vec<_>) =
            init_devices(&layout, net.num_links, max_speed, &mut stream(seed, Stream::Placement))
                .into_iter()
                .unzip();
        let mut shadowing_rng = stream(seed, Stream::Shadowing);
        let shadowing = ShadowingField::new(
            net.num_cells,
            net.num_links,
            lit(net.shadowing_std_db),
            lit(net.shadowing_corr_length_m),
            &mut shadowing_rng,
        );
        let mut fading_rng = stream(seed, Stream::Fading);
        let fading = FadingField::new(net.num_cells, net.num_links, &mut fading_rng);
        let min_distance_m = lit(net.min_distance_m);
        let cell_gains = compose_gains(&layout, &devices, &shadowing, &fading, min_distance_m)?;
        let serving: Vec<usize> = associations.iter().map(|a: &Association| a.serving_cell).collect();
        let gains = LinkGains::from_cell_gains(&cell_gains, &serving)?;
        Ok(Self {
            bounds: layout.bounds(),
            layout,
            devices,
            associations,
            shadowing,
            fading,
            cell_gains,
            gains,
            mobility: MobilityParams {
                max_speed,
                speed_step: lit(mobility.speed_step_mps),
                heading_step: lit(mobility.heading_step_rad),
                slot_seconds: lit(net.slot_seconds()),
                cadence: mobility.cadence_slots(net.slot_seconds()),
            },
            register_slots: mobility.register_slots,
            carrier_hz: net.carrier_freq_hz,
            slot_seconds: net.slot_seconds(),
            doppler_override_hz: net.doppler_override_hz,
            min_distance_m,
            mobility_rng: stream(seed, Stream::Mobility),
            shadowing_rng,
            fading_rng,
            slot: 0,
            handovers: 0,
        })
    }

    /// Moves to the next slot: mobility, re-association, shadowing, fading.
    pub fn advance(&mut self) -> Result<()> {
        self.slot += 1;
        step_mobility(&mut self.devices, &self.bounds, self.slot, &self.mobility, &mut self.mobility_rng);
        self.handovers +=
            update_association(&self.devices, &mut self.associations, &self.layout, self.register_slots) as u64;
        self.shadowing.step(&self.devices, &mut self.shadowing_rng);
        self.fading.step(
            &self.devices,
            self.carrier_hz,
            self.slot_seconds,
            self.doppler_override_hz,
            &mut self.fading_rng,
        );
        self.cell_gains = compose_gains(&self.layout, &self.devices, &self.shadowing, &self.fading, self.min_distance_m)?;
        self.gains = LinkGains::from_cell_gains(&self.cell_gains, &self.serving_cells())?;
        Ok(())
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn gains(&self) -> &LinkGains<T> {
        &self.gains
    }

    pub fn cell_gains(&self) -> &GainMatrix<T> {
        &self.cell_gains
    }

    pub fn layout(&self) -> &CellLayout<T> {
        &self.layout
    }

    pub fn devices(&self) -> &[DeviceKinematics<T>] {
        &self.devices
    }

    pub fn associations(&self) -> &[Association] {
        &self.associations
    }

    pub fn serving_cells(&self) -> Vec<usize> {
        self.associations.iter().map(|a| a.serving_cell).collect()
    }

    pub fn shadowing(&self) -> &ShadowingField<T> {
        &self.shadowing
    }

    pub fn fading(&self) -> &FadingField<T> {
        &self.fading
    }

    pub fn handovers(&self) -> u64 {
        self.handovers
    }

    pub fn num_links(&self) -> usize {
        self.devices.len()
    }
}

/// The agents' view of a world: measurement logs, neighbor bookkeeping and
/// state construction. Knows nothing about learning.
#[derive(Clone, Debug)]
pub struct Rollout<T> {
    world: World<T>,
    builder: StateBuilder<T>,
    eta: T,
    noise: T,
    pmax: T,
    power_map: PowerMap,
    prev: SlotLog<T>,
    prev2: SlotLog<T>,
    sets: NeighborSets<T>,
    prev_sets: NeighborSets<T>,
    history: InterferedHistory<T>,
    /// The world's current slot has not been played yet.
    fresh: bool,
}

impl<T: Scalar> Rollout<T> {
    pub fn new(world: World<T>, cfg: &RunConfig) -> Self {
        let noise = lit::<T>(cfg.network.noise_watts());
        let pmax = lit::<T>(cfg.network.pmax_watts());
        let n = world.num_links();
        let cap = cfg.neighbors.cap;
        let mut r = Self {
            builder: StateBuilder::new(&cfg.neighbors, pmax, noise),
            eta: lit(cfg.neighbors.eta),
            noise,
            pmax,
            power_map: cfg.learner.power_map,
            prev: SlotLog::bootstrap(-1, n, noise),
            prev2: SlotLog::bootstrap(-2, n, noise),
            sets: NeighborSets::empty(n, cap),
            prev_sets: NeighborSets::empty(n, cap),
            history: InterferedHistory::new(n),
            world,
            fresh: true,
        };
        r.reset_history();
        r
    }

    /// Forgets all measurements, as if the network had been silent.
    pub fn reset_history(&mut self) {
        let n = self.world.num_links();
        let next = self.next_slot();
        self.prev = SlotLog::bootstrap(next - 1, n, self.noise);
        self.prev2 = SlotLog::bootstrap(next - 2, n, self.noise);
        self.sets = NeighborSets::empty(n, self.builder.cap());
        self.prev_sets = NeighborSets::empty(n, self.builder.cap());
        self.history = InterferedHistory::new(n);
    }

    fn next_slot(&self) -> i64 {
        self.world.slot() as i64 + i64::from(!self.fresh)
    }

    /// Starts the next slot: evolves the world (except for its very first
    /// slot) and refreshes neighbor sets from the latest log.
    pub fn begin_slot(&mut self) -> Result<i64> {
        if !self.fresh {
            self.world.advance()?;
        }
        self.fresh = false;
        let t = self.world.slot() as i64;
        debug_assert_eq!(self.prev.slot, t - 1);
        let sets = compute_neighbor_sets(&self.prev, &self.history, self.eta, self.builder.cap());
        self.prev_sets = std::mem::replace(&mut self.sets, sets);
        Ok(t)
    }

    /// Evolves the world one slot without any transmission.
    pub fn travel(&mut self) -> Result<()> {
        if !self.fresh {
            self.world.advance()?;
        }
        self.fresh = false;
        Ok(())
    }

    /// Current slot index (the last one begun).
    pub fn slot(&self) -> i64 {
        self.world.slot() as i64
    }

    pub fn inputs(&self) -> StateInputs<'_, T> {
        StateInputs {
            gains_now: self.world.gains(),
            prev: &self.prev,
            prev2: &self.prev2,
            sets: &self.sets,
            prev_sets: &self.prev_sets,
        }
    }

    /// Normalized states of every agent for the current slot.
    pub fn states(&self) -> Vec<Vec<T>> {
        let inputs = self.inputs();
        (0..self.world.num_links()).map(|n| self.builder.state(&inputs, n)).collect()
    }

    pub fn power(&self, action: T) -> T {
        lit(self.power_map.apply(action.as_f64(), self.pmax.as_f64()))
    }

    /// Transmits with the given actions, logs the slot and returns its log.
    pub fn transmit(&mut self, actions: &[T]) -> Result<&SlotLog<T>> {
        let powers: Vec<T> = actions.iter().map(|&a| self.power(a)).collect();
        self.transmit_powers(powers)
    }

    pub fn transmit_powers(&mut self, powers: Vec<T>) -> Result<&SlotLog<T>> {
        if powers.len() != self.world.num_links() {
            return Err(Error::shape(self.world.num_links(), powers.len()));
        }
        if powers.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("transmit powers".into()));
        }
        let log = SlotLog::new(
            self.slot(),
            self.world.gains().clone(),
            powers,
            self.world.serving_cells(),
            self.noise,
        );
        self.history.record(&log, self.eta);
        self.prev2 = std::mem::replace(&mut self.prev, log);
        Ok(&self.prev)
    }

    /// Log of the latest completed slot.
    pub fn last_log(&self) -> &SlotLog<T> {
        &self.prev
    }

    pub fn builder(&self) -> &StateBuilder<T> {
        &self.builder
    }

    pub fn world(&self) -> &World<T> {
        &self.world
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn noise(&self) -> T {
        self.noise
    }

    pub fn pmax(&self) -> T {
        self.pmax
    }
}

/// Actor parameters as broadcast to the agents.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot<T> {
    pub params: Mlp<T>,
    /// `None` for the initial policy every agent starts with.
    pub issued_slot: Option<i64>,
    pub valid_from: i64,
}

/// Counters checking that no information is used before it could exist.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CausalityAudit {
    pub experiences_delivered: u64,
    /// Experiences entering replay in the slot they were formed.
    pub early_experiences: u64,
    pub snapshot_uses: u64,
    /// Agent decisions taken with a snapshot before its `valid_from`.
    pub early_snapshots: u64,
    pub snapshots_issued: u64,
}

impl CausalityAudit {
    pub fn violations(&self) -> u64 {
        self.early_experiences + self.early_snapshots
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What happened in one played slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotOutcome<T> {
    pub slot: i64,
    pub epsilon: f64,
    pub actions: Vec<T>,
    pub powers: Vec<T>,
    pub rates: Vec<T>,
    /// Rewards for this slot's actions.
    pub rewards: Vec<T>,
    /// Critic loss before the gradient step, when one was taken.
    pub critic_loss: Option<T>,
}

#[derive(Clone, Debug)]
struct PendingExperience<T> {
    slot: i64,
    states: Vec<Vec<T>>,
    actions: Vec<T>,
    rewards: Vec<T>,
}

/// Agents plus the central trainer over one world.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    rollout: Rollout<T>,
    learner: DdpgLearner<T>,
    replay: ReplayMemory<T>,
    batch_size: usize,
    broadcast_period: u64,
    broadcast_delay: u64,
    snapshots: VecDeque<PolicySnapshot<T>>,
    pending: Option<PendingExperience<T>>,
    in_flight: Vec<(i64, Experience<T>)>,
    exploration_rng: SimRng,
    replay_rng: SimRng,
    audit: CausalityAudit,
}

impl<T: Scalar> Trainer<T> {
    /// World and networks seeded from `cfg.seed`.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let world = World::new(&cfg.network, &cfg.mobility, cfg.seed)?;
        let dim = crate::agent_state::state_dim(cfg.neighbors.cap);
        let learner = DdpgLearner::new(dim, &cfg.learner, &mut stream(cfg.seed, Stream::NetworkInit))?;
        Self::from_parts(cfg, world, learner)
    }

    pub fn from_parts(cfg: &RunConfig, world: World<T>, learner: DdpgLearner<T>) -> Result<Self> {
        let rollout = Rollout::new(world, cfg);
        if learner.state_dim() != rollout.builder().dim() {
            return Err(Error::shape(rollout.builder().dim(), learner.state_dim()));
        }
        let initial = PolicySnapshot {
            params: learner.actor.clone(),
            issued_slot: None,
            valid_from: i64::MIN,
        };
        Ok(Self {
            rollout,
            replay: ReplayMemory::new(cfg.learner.replay_capacity),
            batch_size: cfg.learner.batch_size,
            broadcast_period: cfg.timing.broadcast_period,
            broadcast_delay: cfg.timing.broadcast_delay,
            snapshots: VecDeque::from([initial]),
            pending: None,
            in_flight: Vec::new(),
            exploration_rng: stream(cfg.seed, Stream::Exploration),
            replay_rng: stream(cfg.seed, Stream::Replay),
            audit: CausalityAudit::default(),
            learner,
        })
    }

    /// Clears replay and any experience still in transit, and forgets the
    /// measurement history.
    pub fn start_episode(&mut self) {
        self.replay.clear();
        self.in_flight.clear();
        self.pending = None;
        self.rollout.reset_history();
    }

    /// Plays one slot. In eval mode `epsilon` is ignored and nothing is
    /// learned or broadcast.
    pub fn run_slot(&mut self, mode: Mode, epsilon: f64) -> Result<SlotOutcome<T>> {
        let epsilon = if mode == Mode::Train { epsilon } else { 0.0 };
        let t = self.rollout.begin_slot()?;
        let states = self.rollout.states();

        if mode == Mode::Train {
            for (formed, e) in self.in_flight.drain(..) {
                self.audit.experiences_delivered += 1;
                if t <= formed {
                    self.audit.early_experiences += 1;
                }
                self.replay.push(e);
            }
            if let Some(p) = self.pending.take() {
                for (agent, next_state) in states.iter().enumerate() {
                    let e = Experience {
                        agent,
                        slot: p.slot,
                        state: p.states[agent].clone(),
                        action: p.actions[agent],
                        reward: p.rewards[agent],
                        next_state: next_state.clone(),
                    };
                    self.in_flight.push((t, e));
                }
            }
        }

        while self.snapshots.len() > 1 && self.snapshots[1].valid_from <= t {
            self.snapshots.pop_front();
        }
        let policy = &self.snapshots[0];
        self.audit.snapshot_uses += states.len() as u64;
        if policy.valid_from > t {
            self.audit.early_snapshots += states.len() as u64;
        }
        let actions = states
            .iter()
            .map(|s| act(&policy.params, s, epsilon, &mut self.exploration_rng))
            .collect::<Result<Vec<T>>>()?;
        if actions.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("actions at slot {t}")));
        }

        let eta = self.rollout.eta();
        let log = self.rollout.transmit(&actions)?;
        let rewards = rewards(log, eta);
        let powers = log.powers.clone();
        let rates = log.rates.clone();

        let mut critic_loss = None;
        if mode == Mode::Train {
            self.pending = Some(PendingExperience {
                slot: t,
                states,
                actions: actions.clone(),
                rewards: rewards.clone(),
            });
            if self.replay.len() >= self.batch_size {
                let batch = self.replay.sample(self.batch_size, &mut self.replay_rng)?;
                critic_loss = Some(self.learner.critic_step(&batch)?);
                self.learner.actor_step(&batch)?;
                self.learner.sync_target();
                if !self.learner.actor.is_finite() {
                    return Err(Error::NonFinite(format!("actor parameters at slot {t}")));
                }
            }
            if t % self.broadcast_period as i64 == 0 {
                self.issue_snapshot(t);
            }
        }

        Ok(SlotOutcome {
            slot: t,
            epsilon,
            actions,
            powers,
            rates,
            rewards,
            critic_loss,
        })
    }

    fn issue_snapshot(&mut self, t: i64) {
        self.audit.snapshots_issued += 1;
        let delay = i64::try_from(self.broadcast_delay).unwrap_or(i64::MAX);
        let valid_from = t.saturating_add(delay);
        if valid_from == i64::MAX {
            // Never delivered.
            return;
        }
        self.snapshots.push_back(PolicySnapshot {
            params: self.learner.actor.clone(),
            issued_slot: Some(t),
            valid_from,
        });
    }

    /// Evolves the world without transmissions or learning.
    pub fn travel(&mut self, slots: u64) -> Result<()> {
        for _ in 0..slots {
            self.rollout.travel()?;
        }
        Ok(())
    }

    /// Policy agents would use at slot `t`.
    pub fn policy_at(&self, t: i64) -> &PolicySnapshot<T> {
        self.snapshots
            .iter()
            .rev()
            .find(|s| s.valid_from <= t)
            .unwrap_or(&self.snapshots[0])
    }

    pub fn learner(&self) -> &DdpgLearner<T> {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut DdpgLearner<T> {
        &mut self.learner
    }

    pub fn replay(&self) -> &ReplayMemory<T> {
        &self.replay
    }

    pub fn audit(&self) -> &CausalityAudit {
        &self.audit
    }

    pub fn rollout(&self) -> &Rollout<T> {
        &self.rollout
    }

    pub fn world(&self) -> &World<T> {
        self.rollout.world()
    }
}

/// One row group of the metrics file: every link in one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotMetrics {
    pub slot: u64,
    pub episode: u64,
    pub epsilon: f64,
    pub powers: Vec<f64>,
    pub rates: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl SlotMetrics {
    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// A sampled device position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub slot: u64,
    pub episode: u64,
    pub device: usize,
    pub x: f64,
    pub y: f64,
    pub cell: usize,
}

/// Everything recorded over a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub slots: Vec<SlotMetrics>,
    pub trace: Vec<TracePoint>,
    /// First slot of each episode.
    pub episode_starts: Vec<u64>,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<metrics>".into(),
            source,
        },
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

impl RunMetrics {
    /// `slot,link,power_dBm,rate_bpsHz,reward,epsilon,episode`; silent links
    /// have power `-inf`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["slot", "link", "power_dBm", "rate_bpsHz", "reward", "epsilon", "episode"])
            .map_err(csv_error)?;
        for s in &self.slots {
            for link in 0..s.powers.len() {
                out.write_record(&[
                    s.slot.to_string(),
                    link.to_string(),
                    watts_to_dbm(s.powers[link]).to_string(),
                    s.rates[link].to_string(),
                    s.rewards[link].to_string(),
                    s.epsilon.to_string(),
                    s.episode.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
        out.flush().map_err(|source| Error::Io {
            path: "<metrics>".into(),
            source,
        })
    }

    /// `slot,episode,device,x_m,y_m,cell`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["slot", "episode", "device", "x_m", "y_m", "cell"])
            .map_err(csv_error)?;
        for p in &self.trace {
            out.write_record(&[
                p.slot.to_string(),
                p.episode.to_string(),
                p.device.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.cell.to_string(),
            ])
            .map_err(csv_error)?;
        }
        out.flush().map_err(|source| Error::Io {
            path: "<trace>".into(),
            source,
        })
    }

    /// Mean rate per link over all recorded slots.
    pub fn mean_rate(&self) -> f64 {
        let (sum, count) = self
            .slots
            .iter()
            .fold((0.0, 0usize), |(s, c), m| (s + m.sum_rate(), c + m.rates.len()));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Trailing moving average of the per-link mean rate over `window` slots.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let per_slot: Vec<f64> = self
            .slots
            .iter()
            .map(|m| m.sum_rate() / m.rates.len().max(1) as f64)
            .collect();
        let mut out = Vec::with_capacity(per_slot.len());
        let mut acc = 0.0;
        for (i, x) in per_slot.iter().enumerate() {
            acc += x;
            if i >= window {
                acc -= per_slot[i - window];
            }
            out.push(acc / (i + 1).min(window) as f64);
        }
        out
    }
}

/// Actor checkpoint taken at the end of an episode's training phase.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeCheckpoint<T> {
    pub episode: u64,
    pub checkpoint: Checkpoint<T>,
}

impl<T> EpisodeCheckpoint<T> {
    pub fn file_name(&self) -> String {
        format!("policy_ep{}.ckpt", self.episode)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub metrics: RunMetrics,
    pub checkpoints: Vec<EpisodeCheckpoint<T>>,
    pub audit: CausalityAudit,
    pub handovers: u64,
    pub trainer: Trainer<T>,
}

fn record_trace<T: Scalar>(metrics: &mut RunMetrics, world: &World<T>, episode: u64) {
    if world.slot() % TRACE_PERIOD_SLOTS != 0 {
        return;
    }
    for (device, (d, a)) in world.devices().iter().zip(world.associations()).enumerate() {
        metrics.trace.push(TracePoint {
            slot: world.slot(),
            episode,
            device,
            x: d.position[0].as_f64(),
            y: d.position[1].as_f64(),
            cell: a.serving_cell,
        });
    }
}

/// `E` episodes of `T_train` training slots followed by `T_travel`
/// unscored slots of movement, checkpointing the actor after each training
/// phase.
pub fn run_episode_schedule<T: Scalar>(cfg: &RunConfig) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let mut trainer = Trainer::<T>::new(cfg)?;
    let timing = &cfg.timing;
    let mut metrics = RunMetrics::default();
    let mut checkpoints = Vec::new();
    for episode in 1..=timing.episodes {
        trainer.start_episode();
        metrics.episode_starts.push(timing.episode_start(episode));
        for k in 0..timing.train_slots {
            let eps = cfg.learner.epsilon_at(k, timing.train_slots);
            let out = trainer.run_slot(Mode::Train, eps)?;
            debug_assert_eq!(out.slot as u64, timing.episode_start(episode) + k);
            record_trace(&mut metrics, trainer.world(), episode);
            metrics.slots.push(SlotMetrics {
                slot: out.slot as u64,
                episode,
                epsilon: out.epsilon,
                powers: out.powers.iter().map(|p| p.as_f64()).collect(),
                rates: out.rates.iter().map(|r| r.as_f64()).collect(),
                rewards: out.rewards.iter().map(|r| r.as_f64()).collect(),
            });
        }
        let issued = trainer.world().slot() as i64;
        checkpoints.push(EpisodeCheckpoint {
            episode,
            checkpoint: Checkpoint::new(trainer.learner().actor.clone(), Some(issued)),
        });
        for _ in 0..timing.travel_slots {
            trainer.travel(1)?;
            record_trace(&mut metrics, trainer.world(), episode);
        }
    }
    Ok(RunOutcome {
        metrics,
        checkpoints,
        audit: *trainer.audit(),
        handovers: trainer.world().handovers(),
        trainer,
    })
}

/// A column of the evaluation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Policy,
    Baseline(Allocator),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Policy => "policy",
            Method::Baseline(a) => a.name(),
        }
    }
}

/// Results of one evaluated deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct DeploymentReport {
    pub seed: u64,
    /// `(method, mean rate per link)` in evaluation column order.
    pub mean_rates: Vec<(Method, f64)>,
    pub wmmse_iterations: Option<f64>,
    pub fp_iterations: Option<f64>,
}

impl DeploymentReport {
    pub fn rate(&self, method: Method) -> Option<f64> {
        self.mean_rates.iter().find(|(m, _)| *m == method).map(|(_, r)| *r)
    }
}

/// Paired comparison over several deployments.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub num_cells: usize,
    pub num_links: usize,
    pub slots: u64,
    pub methods: Vec<Method>,
    pub deployments: Vec<DeploymentReport>,
}

impl EvaluationReport {
    /// Mean over deployments of the per-link mean rate.
    pub fn mean_rate(&self, method: Method) -> Option<f64> {
        let rates: Option<Vec<f64>> = self.deployments.iter().map(|d| d.rate(method)).collect();
        rates.filter(|r| !r.is_empty()).map(|r| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn mean_wmmse_iterations(&self) -> Option<f64> {
        mean(self.deployments.iter().map(|d| d.wmmse_iterations))
    }

    pub fn mean_fp_iterations(&self) -> Option<f64> {
        mean(self.deployments.iter().map(|d| d.fp_iterations))
    }

    /// One header row and one row per deployment.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["deployment_seed".to_string()];
        header.extend(self.methods.iter().map(|m| m.name().to_string()));
        out.write_record(&header).map_err(csv_error)?;
        for d in &self.deployments {
            let mut row = vec![d.seed.to_string()];
            row.extend(self.methods.iter().map(|m| d.rate(*m).map(|r| r.to_string()).unwrap_or_default()));
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush().map_err(|source| Error::Io {
            path: "<evaluation>".into(),
            source,
        })
    }
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-slot benchmark state for one deployment.
struct BaselineRunner<T> {
    allocators: Vec<Allocator>,
    sums: Vec<f64>,
    random_rng: SimRng,
    last_fp: Option<Vec<T>>,
    wmmse_iters: u64,
    fp_iters: u64,
}

impl<T: Scalar> BaselineRunner<T> {
    fn play(&mut self, gains: &LinkGains<T>, pmax: T, noise: T, cfg: &RunConfig) -> Result<()> {
        let n = gains.num_links();
        let needs_fp = self.allocators.iter().any(|a| matches!(a, Allocator::Fp | Allocator::FpDelayed));
        let fp_now = if needs_fp {
            let r = fp(gains, pmax, noise, &cfg.solver)?;
            self.fp_iters += r.iterations as u64;
            Some(r.powers)
        } else {
            None
        };
        for (k, a) in self.allocators.iter().enumerate() {
            let powers = match a {
                Allocator::Full => full_power(n, pmax),
                Allocator::Random => random_power(n, pmax, &mut self.random_rng),
                Allocator::Fp => fp_now.clone().expect("computed"),
                Allocator::FpDelayed => self.last_fp.clone().unwrap_or_else(|| full_power(n, pmax)),
                Allocator::Wmmse => {
                    let r = wmmse(gains, pmax, noise, &cfg.solver)?;
                    self.wmmse_iters += r.iterations as u64;
                    r.powers
                }
            };
            self.sums[k] += sum_rate(gains, &powers, noise).as_f64();
        }
        if fp_now.is_some() {
            self.last_fp = fp_now;
        }
        Ok(())
    }
}

/// Rolls out `policy` greedily (if given) on `cfg.evaluation.deployments`
/// fresh deployments of size `net`, seeded `seed + d`, and plays every
/// requested allocator on the same channel realizations.
pub fn evaluate<T: Scalar>(
    cfg: &RunConfig,
    net: &NetworkConfig,
    policy: Option<&Mlp<T>>,
    allocators: &[Allocator],
) -> Result<EvaluationReport> {
    let eval = &cfg.evaluation;
    let dim = crate::agent_state::state_dim(cfg.neighbors.cap);
    if let Some(p) = policy {
        if p.input_dim() != dim {
            return Err(Error::shape(dim, p.input_dim()));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("policy parameters".into()));
        }
    }
    let mut cfg = cfg.clone();
    cfg.network = net.clone();
    let mut methods = Vec::new();
    if policy.is_some() {
        methods.push(Method::Policy);
    }
    methods.extend(allocators.iter().map(|a| Method::Baseline(*a)));
    let mut deployments = Vec::with_capacity(eval.deployments);
    for d in 0..eval.deployments {
        let seed = eval.seed + d as u64;
        let world = World::<T>::new(net, &cfg.mobility, seed)?;
        let mut rollout = Rollout::new(world, &cfg);
        let (pmax, noise) = (rollout.pmax(), rollout.noise());
        let mut runner = BaselineRunner {
            allocators: allocators.to_vec(),
            sums: vec![0.0; allocators.len()],
            random_rng: stream(seed, Stream::RandomBaseline),
            last_fp: None,
            wmmse_iters: 0,
            fp_iters: 0,
        };
        let mut explore = stream(seed, Stream::Exploration);
        let mut policy_sum = 0.0;
        for _ in 0..eval.slots {
            let t = rollout.begin_slot()?;
            runner.play(rollout.world().gains(), pmax, noise, &cfg)?;
            let log = match policy {
                Some(p) => {
                    let actions = rollout
                        .states()
                        .iter()
                        .map(|s| act(p, s, 0.0, &mut explore))
                        .collect::<Result<Vec<T>>>()?;
                    rollout.transmit(&actions)?
                }
                // Without a policy the logs only need to stay consistent.
                None => rollout.transmit_powers(vec![T::zero(); net.num_links])?,
            };
            let s = log.sum_rate().as_f64();
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("policy rates at slot {t}")));
            }
            policy_sum += s;
        }
        let denom = (eval.slots as f64 * net.num_links as f64).max(1.0);
        let mut mean_rates = Vec::new();
        if policy.is_some() {
            mean_rates.push((Method::Policy, policy_sum / denom));
        }
        for (a, s) in allocators.iter().zip(&runner.sums) {
            mean_rates.push((Method::Baseline(*a), s / denom));
        }
        let per_solve = |iters: u64, used: bool| (used && eval.slots > 0).then(|| iters as f64 / eval.slots as f64);
        deployments.push(DeploymentReport {
            seed,
            mean_rates,
            wmmse_iterations: per_solve(runner.wmmse_iters, allocators.contains(&Allocator::Wmmse)),
            fp_iterations: per_solve(
                runner.fp_iters,
                allocators.iter().any(|a| matches!(a, Allocator::Fp | Allocator::FpDelayed)),
            ),
        });
    }
    Ok(EvaluationReport {
        num_cells: net.num_cells,
        num_links: net.num_links,
        slots: eval.slots,
        methods,
        deployments,
    })
}
