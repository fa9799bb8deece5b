//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! The learning criteria share two trained policies, built once per process.
//! Run with `cargo test --release -p powerctl --test acceptance -- --nocapture`
//! to see the report lines.

use std::sync::OnceLock;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use powerctl::baselines::{fp, grid_oracle, wmmse, Allocator};
use powerctl::channel::{FadingField, ShadowingField};
use powerctl::config::{LearnerConfig, SolverConfig};
use powerctl::netsim::{interfered_by, rewards, sum_rate, SlotLog};
use powerctl::orchestrator::{evaluate, run_episode_schedule, EvaluationReport, Method};
use powerctl::{DdpgLearner, Experience, LinkGains, Mlp, RunConfig, World};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {name:<28} {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b)).max(1e-12);
    diff / scale
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn central_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + h;
            let up = f(&p);
            p[i] = x - h;
            let down = f(&p);
            p[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn c01_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_critic: f64 = 0.0;
    let mut worst_actor: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(2..7);
        let cfg = LearnerConfig {
            actor_hidden: vec![rng.random_range(2..8), rng.random_range(2..6)],
            critic_hidden: vec![rng.random_range(2..8), rng.random_range(2..6)],
            discount: rng.random_range(0.1..1.0),
            ..LearnerConfig::default()
        };
        let mut learner = DdpgLearner::new(dim, &cfg, &mut rng).unwrap();
        let mut target_params = learner.critic_target.params_flat();
        target_params.iter_mut().for_each(|p| *p += rng.random_range(-0.1..0.1));
        learner.critic_target.set_params_flat(&target_params).unwrap();
        let batch: Vec<Experience> = (0..rng.random_range(1..9))
            .map(|i| Experience {
                agent: i,
                slot: 0,
                state: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: rng.random(),
                reward: rng.random_range(-2.0..2.0),
                next_state: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let refs: Vec<&Experience> = batch.iter().collect();

        let (_, g) = learner.critic_loss_and_gradient(&refs).unwrap();
        let base = learner.critic.params_flat();
        let mut probe = learner.clone();
        let fd = central_difference(&base, 1e-5, |p| {
            probe.critic.set_params_flat(p).unwrap();
            probe.critic_loss_and_gradient(&refs).unwrap().0
        });
        worst_critic = worst_critic.max(rel_err(&g.flat(), &fd));

        let critic = learner.critic.clone();
        let (_, g) = learner.actor_objective_and_gradient(&critic, &refs).unwrap();
        let base = learner.actor.params_flat();
        let mut probe = learner.clone();
        let fd = central_difference(&base, 1e-5, |p| {
            probe.actor.set_params_flat(p).unwrap();
            probe.actor_objective_and_gradient(&critic, &refs).unwrap().0
        });
        worst_actor = worst_actor.max(rel_err(&g.flat(), &fd));
    }
    report(
        1,
        "gradient correctness",
        worst_critic < 1e-4 && worst_actor < 1e-4,
        format!("max rel err critic {worst_critic:.2e} actor {worst_actor:.2e} over 100 nets"),
    );
}

/// Mean and standard error by batch means.
fn batch_mean(samples: &[f64], batches: usize) -> (f64, f64) {
    let size = samples.len() / batches;
    let means: Vec<f64> = samples.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

/// Lag-1 autocorrelation estimated per batch, with its standard error.
fn batch_lag1(power: &[f64], cross: &[f64], batches: usize) -> (f64, f64) {
    let size = power.len() / batches;
    let ratios: Vec<f64> = power
        .chunks(size)
        .zip(cross.chunks(size))
        .take(batches)
        .map(|(p, c)| c.iter().sum::<f64>() / p.iter().sum::<f64>())
        .collect();
    let m = ratios.iter().sum::<f64>() / batches as f64;
    let var = ratios.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

#[test]
fn c02_channel_statistics() {
    const STEPS: usize = 100_000;
    const BATCHES: usize = 50;
    let mut pass = true;
    let mut details = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for rho in [0.0, 0.1698, 0.6425, 0.99] {
        let mut field = FadingField::<f64>::new(1, 1, &mut rng);
        let mut prev: Complex<f64> = field.h[[0, 0]];
        let mut power = Vec::with_capacity(STEPS);
        let mut cross = Vec::with_capacity(STEPS);
        for _ in 0..STEPS {
            field.step_with_correlation(&[rho], &mut rng);
            let h = field.h[[0, 0]];
            power.push(h.norm_sqr());
            cross.push((h * prev.conj()).re);
            prev = h;
        }
        let (m, se) = batch_mean(&power, BATCHES);
        let (r, se_r) = batch_lag1(&power, &cross, BATCHES);
        let ok = (m - 1.0).abs() <= 3.0 * se && (r - rho).abs() <= 3.0 * se_r;
        pass &= ok;
        details.push(format!("fading rho={rho}: E|h|^2={m:.4}+-{se:.4} lag1={r:.4}+-{se_r:.4}"));
    }
    let sigma: f64 = 10.0;
    for rho in [0.0, (-1.0f64).exp(), (-0.005f64).exp()] {
        let mut field = ShadowingField::<f64>::new(1, 1, sigma, 10.0, &mut rng);
        let mut prev = field.x_db[[0, 0]];
        let mut square = Vec::with_capacity(STEPS);
        let mut cross = Vec::with_capacity(STEPS);
        for _ in 0..STEPS {
            field.step_with_correlation(&[rho], &mut rng);
            let x = field.x_db[[0, 0]];
            square.push(x * x);
            cross.push(x * prev);
            prev = x;
        }
        let (v, se) = batch_mean(&square, BATCHES);
        let (r, se_r) = batch_lag1(&square, &cross, BATCHES);
        let ok = (v - sigma * sigma).abs() <= 3.0 * se && (r - rho).abs() <= 3.0 * se_r;
        pass &= ok;
        details.push(format!("shadowing rho={rho:.4}: var={v:.2}+-{se:.2} lag1={r:.4}+-{se_r:.4}"));
    }
    report(2, "channel statistics", pass, details.join("; "));
}

#[test]
fn c03_solvers_match_grid_oracle() {
    let cfg = RunConfig::default();
    let pmax = cfg.network.pmax_watts();
    let noise = cfg.network.noise_watts();
    let tight = SolverConfig::converged(1e-9, 5000);
    let mut exceed = 0;
    let mut short = 0;
    let mut worst_short: f64 = 0.0;
    for i in 0..200u64 {
        let n = 2 + (i % 2) as usize;
        let grid_points = if n == 2 { 1001 } else { 101 };
        let world = World::new(&cfg.network.with_size(n, n), &cfg.mobility, 30_000 + i).unwrap();
        let gains = world.gains();
        let oracle = grid_oracle(gains, pmax, noise, grid_points).unwrap();
        let best = oracle.objective();
        let resolution = grid_resolution(gains, &oracle.powers, pmax, noise, grid_points);
        for r in [wmmse(gains, pmax, noise, &tight).unwrap(), fp(gains, pmax, noise, &tight).unwrap()] {
            let gap = r.objective() - best;
            if gap > resolution {
                exceed += 1;
            }
            if gap < -resolution {
                short += 1;
                worst_short = worst_short.max(-gap);
            }
        }
    }
    report(
        3,
        "oracle equivalence",
        exceed == 0 && short == 0,
        format!(
            "of 400 solves: {exceed} exceed the oracle, {short} fall short by more than grid resolution (worst {worst_short:.2} bps/Hz)"
        ),
    );
}

/// Largest objective change between the grid maximizer and any adjacent
/// grid point.
fn grid_resolution(gains: &LinkGains, best: &[f64], pmax: f64, noise: f64, points: usize) -> f64 {
    let step = pmax / (points - 1) as f64;
    let f0 = sum_rate(gains, best, noise);
    let n = best.len();
    let mut worst: f64 = 0.0;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let p: Vec<f64> = best
            .iter()
            .map(|&x| {
                let d = (c % 3) as f64 - 1.0;
                c /= 3;
                (x + d * step).clamp(0.0, pmax)
            })
            .collect();
        worst = worst.max((sum_rate(gains, &p, noise) - f0).abs());
    }
    worst
}

#[test]
fn c04_rewards_match_leave_one_out() {
    let cfg = RunConfig::default();
    let noise = cfg.network.noise_watts();
    let pmax = cfg.network.pmax_watts();
    let eta = cfg.neighbors.eta;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for s in 0..100u64 {
        let world = World::new(&cfg.network.with_size(3, 5), &cfg.mobility, 40_000 + s).unwrap();
        let powers: Vec<f64> = (0..5).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() * pmax }).collect();
        let gains = world.gains().clone();
        let log = SlotLog::new(0, gains.clone(), powers.clone(), vec![0; 5], noise);
        let fast = rewards(&log, eta);
        for n in 0..5 {
            let rate = |p: &[f64], o: usize| {
                let signal = gains.get(o, o) * p[o];
                let interference: f64 = (0..5).filter(|&m| m != o).map(|m| gains.get(m, o) * p[m]).sum();
                (1.0 + signal / (interference + noise)).log2()
            };
            let mut silent = powers.clone();
            silent[n] = 0.0;
            let brute = rate(&powers, n)
                - interfered_by(&log, n, eta)
                    .into_iter()
                    .map(|o| rate(&silent, o) - rate(&powers, o))
                    .sum::<f64>();
            worst = worst.max((brute - fast[n]).abs());
        }
    }
    report(4, "reward identity", worst <= 1e-10, format!("max abs diff {worst:.2e} over 100 slots"));
}

fn small_learning_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.learner.actor_hidden = vec![16, 8];
    cfg.learner.critic_hidden = vec![16, 8];
    cfg.learner.batch_size = 32;
    cfg.learner.replay_capacity = 2_000;
    cfg.timing.episodes = 2;
    cfg.timing.train_slots = 5_000;
    cfg.timing.travel_slots = 200;
    cfg
}

#[test]
fn c05_causality_holds() {
    let cfg = small_learning_config(55);
    let out = run_episode_schedule::<f64>(&cfg).unwrap();
    let a = &out.audit;
    let pass = a.violations() == 0 && a.experiences_delivered > 0 && a.snapshots_issued > 0 && out.metrics.slots.len() == 10_000;
    report(
        5,
        "causality invariants",
        pass,
        format!(
            "{} experiences ({} early), {} snapshot uses ({} early) over {} slots",
            a.experiences_delivered,
            a.early_experiences,
            a.snapshot_uses,
            a.early_snapshots,
            out.metrics.slots.len()
        ),
    );
}

#[test]
fn c06_runs_are_deterministic() {
    let mut cfg = small_learning_config(66);
    cfg.timing.train_slots = 600;
    let csv = |cfg: &RunConfig| {
        let out = run_episode_schedule::<f64>(cfg).unwrap();
        let mut metrics = Vec::new();
        out.metrics.write_csv(&mut metrics).unwrap();
        let mut trace = Vec::new();
        out.metrics.write_trace_csv(&mut trace).unwrap();
        (metrics, trace)
    };
    let a = csv(&cfg);
    let b = csv(&cfg);
    report(
        6,
        "determinism",
        a == b && !a.0.is_empty(),
        format!("metrics {} bytes, trace {} bytes", a.0.len(), a.1.len()),
    );
}

fn baseline_report() -> &'static EvaluationReport {
    static REPORT: OnceLock<EvaluationReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = RunConfig::default();
        evaluate::<f64>(&cfg, &cfg.network, None, &Allocator::ALL).unwrap()
    })
}

fn rate_of(report: &EvaluationReport, a: Allocator) -> f64 {
    report.mean_rate(Method::Baseline(a)).unwrap()
}

#[test]
fn c07_baseline_table() {
    let rep = baseline_report();
    let expected = [
        (Allocator::Full, 0.91),
        (Allocator::Random, 0.93),
        (Allocator::FpDelayed, 2.37),
        (Allocator::Fp, 2.45),
        (Allocator::Wmmse, 2.61),
    ];
    let mut pass = rep.deployments.len() >= 5 && rep.slots >= 500;
    let mut cells = Vec::new();
    for (a, target) in expected {
        let r = rate_of(rep, a);
        let dev = r / target - 1.0;
        pass &= dev.abs() <= 0.15;
        cells.push(format!("{}={r:.3}({:+.1}%)", a.name(), 100.0 * dev));
    }
    let full = rate_of(rep, Allocator::Full);
    let random = rate_of(rep, Allocator::Random);
    let delayed = rate_of(rep, Allocator::FpDelayed);
    let fp_rate = rate_of(rep, Allocator::Fp);
    let wmmse_rate = rate_of(rep, Allocator::Wmmse);
    let ordering = (random - full).abs() <= 0.15 * full
        && delayed > 2.0 * full.max(random)
        && delayed < fp_rate
        && fp_rate < wmmse_rate;
    pass &= ordering;
    cells.push(format!("ordering {}", if ordering { "holds" } else { "violated" }));
    report(7, "baseline table (10,20)", pass, cells.join(" "));
}

#[test]
fn c08_convergence_counts() {
    let rep = baseline_report();
    let wmmse20 = rep.mean_wmmse_iterations().unwrap();
    let fp20 = rep.mean_fp_iterations().unwrap();
    let cfg = RunConfig::default();
    let big = evaluate::<f64>(&cfg, &cfg.network.with_size(20, 100), None, &[Allocator::Wmmse]).unwrap();
    let wmmse100 = big.mean_wmmse_iterations().unwrap();
    let within = |x: f64, target: f64| (x / target - 1.0).abs() <= 0.5;
    report(
        8,
        "convergence counts",
        within(wmmse20, 42.0) && within(fp20, 24.0) && within(wmmse100, 74.0),
        format!("WMMSE(20)={wmmse20:.1} FP(20)={fp20:.1} WMMSE(100)={wmmse100:.1}"),
    );
}

struct TrainedPolicies {
    mobile: Mlp,
    fixed: Mlp,
}

/// Reduced-scale schedule shared by the learning criteria.
fn learning_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.timing.episodes = 3;
    cfg.timing.train_slots = 5_000;
    cfg.timing.travel_slots = 10_000;
    cfg
}

fn trained() -> &'static TrainedPolicies {
    static POLICIES: OnceLock<TrainedPolicies> = OnceLock::new();
    POLICIES.get_or_init(|| {
        let cfg = learning_config();
        let mobile = run_episode_schedule::<f64>(&cfg).unwrap();
        let mut still = cfg.clone();
        still.mobility.enabled = false;
        still.network.doppler_override_hz = Some(10.0);
        let fixed = run_episode_schedule::<f64>(&still).unwrap();
        let last = |o: &powerctl::RunOutcome| o.checkpoints.last().unwrap().checkpoint.params.clone();
        TrainedPolicies {
            mobile: last(&mobile),
            fixed: last(&fixed),
        }
    })
}

fn policy_vs(net_size: (usize, usize), policy: &Mlp, allocators: &[Allocator]) -> EvaluationReport {
    let cfg = learning_config();
    evaluate(&cfg, &cfg.network.with_size(net_size.0, net_size.1), Some(policy), allocators).unwrap()
}

#[test]
fn c09_policy_reaches_fp() {
    let rep = policy_vs((10, 20), &trained().mobile, &[Allocator::FpDelayed, Allocator::Fp]);
    let policy = rep.mean_rate(Method::Policy).unwrap();
    let delayed = rate_of(&rep, Allocator::FpDelayed);
    let fp_rate = rate_of(&rep, Allocator::Fp);
    report(
        9,
        "learning (10,20)",
        policy >= delayed && policy >= 0.9 * fp_rate,
        format!("policy={policy:.3} fp_delayed={delayed:.3} fp={fp_rate:.3} ratio={:.3}", policy / fp_rate),
    );
}

#[test]
fn c10_mobility_training_helps() {
    let p = trained();
    let cfg = learning_config();
    let mobile = evaluate(&cfg, &cfg.network, Some(&p.mobile), &[]).unwrap();
    let fixed = evaluate(&cfg, &cfg.network, Some(&p.fixed), &[]).unwrap();
    let m = mobile.mean_rate(Method::Policy).unwrap();
    let s = fixed.mean_rate(Method::Policy).unwrap();
    report(10, "mobility-training effect", m > s, format!("mobile-trained={m:.3} static-trained={s:.3}"));
}

#[test]
fn c11_policy_transfers() {
    let policy = &trained().mobile;
    let mut pass = true;
    let mut cells = Vec::new();
    for size in [(20, 40), (20, 60)] {
        let rep = policy_vs(size, policy, &[Allocator::Fp]);
        let ratio = rep.mean_rate(Method::Policy).unwrap() / rate_of(&rep, Allocator::Fp);
        pass &= ratio >= 0.9;
        cells.push(format!("{size:?} policy/fp={ratio:.3}"));
    }
    report(11, "transfer", pass, cells.join(" "));
}
