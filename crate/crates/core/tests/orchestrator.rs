use powerctl::baselines::Allocator;
use powerctl::orchestrator::{evaluate, run_episode_schedule, Method, Mode};
use powerctl::{Mlp, RunConfig, Trainer};

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.network = cfg.network.with_size(3, 6);
    cfg.learner.actor_hidden = vec![8];
    cfg.learner.critic_hidden = vec![8];
    cfg.learner.batch_size = 8;
    cfg.learner.replay_capacity = 200;
    cfg.timing.broadcast_period = 5;
    cfg.evaluation.deployments = 2;
    cfg.evaluation.slots = 20;
    cfg
}

#[test]
fn eval_slots_leave_learning_state_alone() {
    let mut trainer = Trainer::new(&small()).unwrap();
    for _ in 0..15 {
        trainer.run_slot(Mode::Train, 0.2).unwrap();
    }
    let replay = trainer.replay().len();
    let actor = trainer.learner().actor.clone();
    let steps = trainer.learner().gradient_steps();
    for _ in 0..10 {
        let out = trainer.run_slot(Mode::Eval, 0.9).unwrap();
        assert_eq!(out.epsilon, 0.0);
        assert!(out.critic_loss.is_none());
    }
    assert_eq!(trainer.replay().len(), replay);
    assert_eq!(trainer.learner().actor, actor);
    assert_eq!(trainer.learner().gradient_steps(), steps);
}

#[test]
fn infinite_broadcast_delay_keeps_initial_policy() {
    let mut cfg = small();
    cfg.timing.broadcast_delay = u64::MAX;
    let mut trainer = Trainer::new(&cfg).unwrap();
    let initial = trainer.policy_at(0).params.clone();
    for _ in 0..40 {
        trainer.run_slot(Mode::Train, 0.1).unwrap();
    }
    let t = trainer.world().slot() as i64;
    assert!(trainer.policy_at(t).issued_slot.is_none());
    assert_eq!(trainer.policy_at(t).params, initial);
    assert_ne!(trainer.learner().actor, initial);
    assert_eq!(trainer.audit().early_snapshots, 0);
}

#[test]
fn broadcasts_arrive_after_the_delay() {
    let mut cfg = small();
    cfg.timing.broadcast_delay = 3;
    let mut trainer = Trainer::new(&cfg).unwrap();
    for _ in 0..12 {
        trainer.run_slot(Mode::Train, 0.1).unwrap();
    }
    let snap = trainer.policy_at(trainer.world().slot() as i64);
    let issued = snap.issued_slot.expect("a broadcast has landed");
    assert_eq!(snap.valid_from, issued + 3);
    assert_eq!(trainer.audit().violations(), 0);
}

#[test]
fn episodes_start_with_empty_replay() {
    let mut trainer = Trainer::new(&small()).unwrap();
    for _ in 0..10 {
        trainer.run_slot(Mode::Train, 0.3).unwrap();
    }
    assert!(!trainer.replay().is_empty());
    trainer.start_episode();
    assert!(trainer.replay().is_empty());
    // The first two slots of an episode cannot deliver anything yet.
    trainer.run_slot(Mode::Train, 0.3).unwrap();
    assert!(trainer.replay().is_empty());
    trainer.run_slot(Mode::Train, 0.3).unwrap();
    assert!(trainer.replay().is_empty());
    trainer.run_slot(Mode::Train, 0.3).unwrap();
    assert_eq!(trainer.replay().len(), 6);
}

#[test]
fn frozen_training_matches_evaluation() {
    let mut cfg = small();
    cfg.learner.actor_lr = 0.0;
    let mut train = Trainer::new(&cfg).unwrap();
    let mut eval = train.clone();
    for _ in 0..25 {
        let a = train.run_slot(Mode::Train, 0.0).unwrap();
        let b = eval.run_slot(Mode::Eval, 0.0).unwrap();
        assert_eq!(a.powers, b.powers);
        assert_eq!(a.rates, b.rates);
    }
}

#[test]
fn saturated_policy_reproduces_full_power() {
    let cfg = small();
    let dim = powerctl::agent_state::state_dim(cfg.neighbors.cap);
    let mut rng = powerctl::rng::stream(0, powerctl::rng::Stream::NetworkInit);
    let mut policy = Mlp::new(&[dim, 4, 1], powerctl::nn::Activation::Relu, powerctl::nn::Activation::Sigmoid, &mut rng).unwrap();
    let mut params = vec![0.0; policy.num_params()];
    *params.last_mut().unwrap() = 60.0;
    policy.set_params_flat(&params).unwrap();
    let rep = evaluate(&cfg, &cfg.network, Some(&policy), &[Allocator::Full]).unwrap();
    for d in &rep.deployments {
        let p = d.rate(Method::Policy).unwrap();
        let f = d.rate(Method::Baseline(Allocator::Full)).unwrap();
        assert!((p - f).abs() < 1e-12, "{p} vs {f}");
    }
}

#[test]
fn trained_policy_runs_on_larger_deployments() {
    let mut cfg = small();
    cfg.timing.episodes = 2;
    cfg.timing.train_slots = 30;
    cfg.timing.travel_slots = 10;
    let out = run_episode_schedule::<f64>(&cfg).unwrap();
    assert_eq!(out.checkpoints.len(), 2);
    assert_eq!(out.metrics.slots.len(), 60);
    assert_eq!(out.metrics.slots[30].slot, 40);
    let policy = &out.checkpoints[1].checkpoint.params;
    let rep = evaluate(&cfg, &cfg.network.with_size(6, 14), Some(policy), &[Allocator::Fp]).unwrap();
    assert_eq!(rep.num_links, 14);
    let rate = rep.mean_rate(Method::Policy).unwrap();
    assert!(rate.is_finite() && rate >= 0.0);
}
