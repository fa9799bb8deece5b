//! Deterministic-policy actor-critic learner: replay memory, critic
//! regression onto the Bellman target, policy-gradient ascent through the
//! critic, hard target-network sync and ε-greedy exploration.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::config::LearnerConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp};
use crate::scalar::{lit, Scalar};

/// One transition `(s, a, r', s')` reported by an agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience<T> {
    pub agent: usize,
    /// Slot in which `state` was observed and `action` taken.
    pub slot: i64,
    pub state: Vec<T>,
    pub action: T,
    pub reward: T,
    pub next_state: Vec<T>,
}

/// Bounded FIFO store of experiences.
#[derive(Clone, Debug)]
pub struct ReplayMemory<T> {
    capacity: usize,
    buffer: VecDeque<Experience<T>>,
}

impl<T: Scalar> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, e: Experience<T>) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(e);
    }

    pub fn clear(&mut self) {
        self.buffer.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience<T>> {
        self.buffer.iter()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Experience<T>>> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyReplay);
        }
        Ok((0..batch_size)
            .map(|_| &self.buffer[rng.random_range(0..self.buffer.len())])
            .collect())
    }
}

/// ε-greedy action: with probability `epsilon` a uniform draw on `[0, 1]`,
/// otherwise the policy output (a non-finite output is an error). Always consumes one uniform draw for the
/// coin flip, so the stream advances the same way for any `epsilon`.
pub fn act<T: Scalar, R: Rng + ?Sized>(
    policy: &Mlp<T>,
    state: &[T],
    epsilon: f64,
    rng: &mut R,
) -> Result<T> {
    let coin: f64 = rng.random();
    if coin < epsilon {
        return Ok(lit(rng.random::<f64>()));
    }
    let out = policy.forward(ArrayView1::from(state))?;
    if !out[0].is_finite() {
        return Err(Error::NonFinite("policy output".into()));
    }
    Ok(out[0].max(T::zero()).min(T::one()))
}

/// Anything that scores state-action pairs and reports `∂Q/∂a`.
pub trait ActionValue<T> {
    /// Values and action gradients for a batch (`states` one row per sample).
    fn value_and_action_gradient(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView1<T>,
    ) -> Result<(Array1<T>, Array1<T>)>;
}

/// Critic input: the state with the action appended.
fn critic_input<T: Scalar>(states: ArrayView2<T>, actions: ArrayView1<T>) -> Array2<T> {
    let (b, d) = states.dim();
    let mut x = Array2::zeros((b, d + 1));
    x.slice_mut(s![.., ..d]).assign(&states);
    x.column_mut(d).assign(&actions);
    x
}

impl<T: Scalar> ActionValue<T> for Mlp<T> {
    fn value_and_action_gradient(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView1<T>,
    ) -> Result<(Array1<T>, Array1<T>)> {
        let x = critic_input(states, actions);
        let trace = self.forward_trace(x.view())?;
        let q = trace.output().column(0).to_owned();
        let ones = Array2::from_elem((x.nrows(), 1), T::one());
        let (_, dx) = self.backward_trace(&trace, ones.view(), false, true)?;
        let dx = dx.expect("requested");
        Ok((q, dx.column(states.ncols()).to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdpgSettings {
    pub discount: f64,
    pub actor: AdamConfig,
    pub critic: AdamConfig,
    pub target_sync_period: u64,
    pub target_actor: bool,
}

impl From<&LearnerConfig> for DdpgSettings {
    fn from(c: &LearnerConfig) -> Self {
        let adam = |lr| AdamConfig {
            lr,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        };
        Self {
            discount: c.discount,
            actor: adam(c.actor_lr),
            critic: adam(c.critic_lr),
            target_sync_period: c.target_sync_period,
            target_actor: c.target_actor,
        }
    }
}

/// Shared actor, critic and target critic owned by the central trainer.
#[derive(Clone, Debug)]
pub struct DdpgLearner<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub critic_target: Mlp<T>,
    pub actor_target: Option<Mlp<T>>,
    actor_opt: Adam<T>,
    critic_opt: Adam<T>,
    settings: DdpgSettings,
    gradient_steps: u64,
}

impl<T: Scalar> DdpgLearner<T> {
    /// Fresh networks: the actor maps a state to one squashed output, the
    /// critic maps a state with the action appended to one linear output.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, cfg: &LearnerConfig, rng: &mut R) -> Result<Self> {
        let mut actor_dims = vec![state_dim];
        actor_dims.extend(&cfg.actor_hidden);
        actor_dims.push(1);
        let mut critic_dims = vec![state_dim + 1];
        critic_dims.extend(&cfg.critic_hidden);
        critic_dims.push(1);
        let actor = Mlp::new(&actor_dims, Activation::Relu, Activation::Sigmoid, rng)?;
        let critic = Mlp::new(&critic_dims, Activation::Relu, Activation::Identity, rng)?;
        Self::from_networks(actor, critic, cfg.into())
    }

    pub fn from_networks(actor: Mlp<T>, critic: Mlp<T>, settings: DdpgSettings) -> Result<Self> {
        if actor.output_dim() != 1 {
            return Err(Error::shape("actor with one output", actor.output_dim()));
        }
        if critic.output_dim() != 1 {
            return Err(Error::shape("critic with one output", critic.output_dim()));
        }
        if critic.input_dim() != actor.input_dim() + 1 {
            return Err(Error::shape(actor.input_dim() + 1, critic.input_dim()));
        }
        if !(settings.discount > 0.0 && settings.discount <= 1.0) {
            return Err(Error::InvalidArgument(format!("discount {} outside (0, 1]", settings.discount)));
        }
        if settings.target_sync_period == 0 {
            return Err(Error::InvalidArgument("target sync period must be positive".into()));
        }
        Ok(Self {
            actor_opt: Adam::new(&actor, settings.actor),
            critic_opt: Adam::new(&critic, settings.critic),
            critic_target: critic.clone(),
            actor_target: settings.target_actor.then(|| actor.clone()),
            actor,
            critic,
            settings,
            gradient_steps: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn settings(&self) -> &DdpgSettings {
        &self.settings
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[T], epsilon: f64, rng: &mut R) -> Result<T> {
        act(&self.actor, state, epsilon, rng)
    }

    fn stack_states<'a>(&self, rows: impl ExactSizeIterator<Item = &'a [T]>) -> Result<Array2<T>> {
        let d = self.state_dim();
        let b = rows.len();
        let mut m = Array2::zeros((b, d));
        for (i, s) in rows.enumerate() {
            if s.len() != d {
                return Err(Error::shape(d, s.len()));
            }
            m.row_mut(i).assign(&ArrayView1::from(s));
        }
        Ok(m)
    }

    /// `y = r' + γ Q_target(s', μ(s'))`.
    pub fn bellman_target(&self, reward: T, next_state: &[T]) -> Result<T> {
        let states = self.stack_states(std::iter::once(next_state))?;
        Ok(self.targets_for(&states, ArrayView1::from(&[reward][..]))?[0])
    }

    fn targets_for(&self, next_states: &Array2<T>, rewards: ArrayView1<T>) -> Result<Array1<T>> {
        let policy = self.actor_target.as_ref().unwrap_or(&self.actor);
        let next_actions = policy.forward_batch(next_states.view())?;
        let x = critic_input(next_states.view(), next_actions.column(0));
        let q = self.critic_target.forward_batch(x.view())?;
        let gamma = lit::<T>(self.settings.discount);
        Ok(&rewards + &(q.column(0).to_owned() * gamma))
    }

    /// Bellman targets for a minibatch; treated as constants by the critic.
    pub fn bellman_targets(&self, batch: &[&Experience<T>]) -> Result<Array1<T>> {
        let next = self.stack_states(batch.iter().map(|e| e.next_state.as_slice()))?;
        let rewards: Array1<T> = batch.iter().map(|e| e.reward).collect();
        self.targets_for(&next, rewards.view())
    }

    fn batch_inputs(&self, batch: &[&Experience<T>]) -> Result<(Array2<T>, Array1<T>)> {
        let states = self.stack_states(batch.iter().map(|e| e.state.as_slice()))?;
        let actions: Array1<T> = batch.iter().map(|e| e.action).collect();
        Ok((states, actions))
    }

    /// Mean-squared Bellman error and its gradient with respect to the
    /// critic parameters.
    pub fn critic_loss_and_gradient(&self, batch: &[&Experience<T>]) -> Result<(T, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let y = self.bellman_targets(batch)?;
        let (states, actions) = self.batch_inputs(batch)?;
        let x = critic_input(states.view(), actions.view());
        let trace = self.critic.forward_trace(x.view())?;
        let diff = &trace.output().column(0) - &y;
        let b = lit::<T>(batch.len() as f64);
        let loss = diff.iter().map(|d| *d * *d).sum::<T>() / b;
        let upstream = (diff * (lit::<T>(2.0) / b)).insert_axis(Axis(1));
        let (grads, _) = self.critic.backward_trace(&trace, upstream.view(), true, false)?;
        Ok((loss, grads.expect("requested")))
    }

    /// One descent step on the critic. Returns the pre-step loss.
    pub fn critic_step(&mut self, batch: &[&Experience<T>]) -> Result<T> {
        let (loss, grads) = self.critic_loss_and_gradient(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        self.critic_opt.minimize(&mut self.critic, &grads);
        Ok(loss)
    }

    /// Mean `Q(s, μ(s))` under `critic` and its gradient with respect to the
    /// actor parameters.
    pub fn actor_objective_and_gradient(
        &self,
        critic: &impl ActionValue<T>,
        batch: &[&Experience<T>],
    ) -> Result<(T, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let states = self.stack_states(batch.iter().map(|e| e.state.as_slice()))?;
        let trace = self.actor.forward_trace(states.view())?;
        let actions = trace.output().column(0).to_owned();
        let (q, dq_da) = critic.value_and_action_gradient(states.view(), actions.view())?;
        let b = lit::<T>(batch.len() as f64);
        let objective = q.sum() / b;
        let upstream = (dq_da / b).insert_axis(Axis(1));
        let (grads, _) = self.actor.backward_trace(&trace, upstream.view(), true, false)?;
        Ok((objective, grads.expect("requested")))
    }

    /// One ascent step on the actor through the current critic. Returns the
    /// pre-step objective.
    pub fn actor_step(&mut self, batch: &[&Experience<T>]) -> Result<T> {
        let critic = std::mem::replace(&mut self.critic, Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity)?);
        let result = self.actor_step_with(&critic, batch);
        self.critic = critic;
        result
    }

    /// Actor ascent against an arbitrary action-value function.
    pub fn actor_step_with(&mut self, critic: &impl ActionValue<T>, batch: &[&Experience<T>]) -> Result<T> {
        let (objective, grads) = self.actor_objective_and_gradient(critic, batch)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("actor objective".into()));
        }
        self.actor_opt.maximize(&mut self.actor, &grads);
        Ok(objective)
    }

    /// Counts one completed gradient step and hard-copies the critic (and
    /// actor, when a target actor is kept) every `target_sync_period` steps.
    pub fn sync_target(&mut self) {
        self.gradient_steps += 1;
        if self.gradient_steps % self.settings.target_sync_period == 0 {
            self.force_sync();
        }
    }

    pub fn force_sync(&mut self) {
        self.critic_target.copy_from(&self.critic);
        if let Some(t) = &mut self.actor_target {
            t.copy_from(&self.actor);
        }
    }
}
