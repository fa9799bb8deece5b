use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use powerctl::baselines::{fp, wmmse};
use powerctl::channel::{FadingField, ShadowingField};
use powerctl::config::{MobilityConfig, SolverConfig};
use powerctl::ddpg::{act, ReplayMemory};
use powerctl::geometry::{build_layout, init_devices, step_mobility, update_association, MobilityParams};
use powerctl::netsim::{externality, interfered_by, interferers_of, reward, sinr, SlotLog};
use powerctl::nn::Activation;
use powerctl::orchestrator::{Rollout, World};
use powerctl::{Experience, LinkGains, Mlp, RunConfig};

fn gains_strategy(max_links: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_links).prop_flat_map(|n| {
        prop::collection::vec(-14.0f64..-2.0, n * n).prop_map(move |v| {
            let mut g = Array2::from_shape_vec((n, n), v.iter().map(|e| 10f64.powf(*e)).collect()).unwrap();
            for i in 0..n {
                g[[i, i]] *= 1e3;
            }
            g
        })
    })
}

fn powers_for(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| if rand::Rng::random_bool(&mut rng, 0.2) { 0.0 } else { rand::Rng::random_range(&mut rng, 0.0..6.3) })
        .collect()
}

const NOISE: f64 = 3.98e-15;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mobility_stays_inside_and_respects_dwell(
        seed in any::<u64>(),
        cells in 1usize..20,
        devices in 1usize..12,
        register in 1u64..20,
        slots in 50u64..400,
    ) {
        let layout = build_layout(cells, 200.0f64).unwrap();
        let bounds = layout.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut devs, mut assoc): (Vec<_>, Vec<_>) = init_devices(&layout, devices, 2.5, &mut rng).into_iter().unzip();
        let params = MobilityParams { max_speed: 2.5, speed_step: 0.5, heading_step: 0.175, slot_seconds: 0.02, cadence: 50 };
        let mut handovers = vec![0u64; devices];
        for t in 1..=slots {
            let before: Vec<usize> = assoc.iter().map(|a| a.serving_cell).collect();
            step_mobility(&mut devs, &bounds, t, &params, &mut rng);
            update_association(&devs, &mut assoc, &layout, register);
            for (n, d) in devs.iter().enumerate() {
                prop_assert!(bounds.contains(d.position));
                prop_assert!(d.displacement <= 2.5 * 0.02 + 1e-12);
                if assoc[n].serving_cell != before[n] {
                    handovers[n] += 1;
                }
            }
        }
        for h in handovers {
            prop_assert!(h <= slots / register);
        }
    }

    #[test]
    fn world_trajectories_are_reproducible(seed in any::<u64>(), slots in 1usize..30) {
        let cfg = RunConfig::default();
        let net = cfg.network.with_size(3, 6);
        let mut a = World::<f64>::new(&net, &cfg.mobility, seed).unwrap();
        let mut b = World::<f64>::new(&net, &cfg.mobility, seed).unwrap();
        for _ in 0..slots {
            a.advance().unwrap();
            b.advance().unwrap();
            prop_assert!(a.gains().matrix().iter().all(|g| *g >= 0.0 && g.is_finite()));
        }
        prop_assert_eq!(a.gains().matrix(), b.gains().matrix());
    }

    #[test]
    fn static_devices_freeze_the_channel(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shadow = ShadowingField::<f64>::new(3, 4, 10.0, 10.0, &mut rng);
        let mut fading = FadingField::<f64>::new(3, 4, &mut rng);
        let (s0, h0) = (shadow.x_db.clone(), fading.h.clone());
        shadow.step_with_correlation(&[1.0; 4], &mut rng);
        fading.step_with_correlation(&[1.0; 4], &mut rng);
        prop_assert_eq!(s0, shadow.x_db);
        prop_assert_eq!(h0, fading.h);
    }

    #[test]
    fn externalities_and_rewards_are_bounded(g in gains_strategy(6), seed in any::<u64>(), eta in 0.0f64..50.0) {
        let n = g.nrows();
        let p = powers_for(n, seed);
        let log = SlotLog::new(0, LinkGains::from_matrix(g).unwrap(), p, vec![0; n], NOISE);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    prop_assert!(externality(&log, a, b) >= 0.0);
                }
            }
            let r = reward(&log, &interfered_by(&log, a, eta), a);
            prop_assert!(r <= log.rates[a] + 1e-12);
        }
    }

    #[test]
    fn raising_one_power_helps_it_and_hurts_the_rest(g in gains_strategy(5), seed in any::<u64>(), k in any::<prop::sample::Index>(), bump in 0.01f64..3.0) {
        let n = g.nrows();
        let gains = LinkGains::from_matrix(g).unwrap();
        let p = powers_for(n, seed);
        let k = k.index(n);
        let mut q = p.clone();
        q[k] += bump;
        prop_assert!(sinr(&gains, &q, NOISE, k) > sinr(&gains, &p, NOISE, k));
        for m in (0..n).filter(|&m| m != k) {
            prop_assert!(sinr(&gains, &q, NOISE, m) <= sinr(&gains, &p, NOISE, m));
        }
    }

    #[test]
    fn neighbor_relations_are_symmetric(g in gains_strategy(7), seed in any::<u64>(), eta in 0.0f64..50.0) {
        let n = g.nrows();
        let log = SlotLog::new(0, LinkGains::from_matrix(g).unwrap(), powers_for(n, seed), vec![0; n], NOISE);
        for a in 0..n {
            for o in interfered_by(&log, a, eta) {
                prop_assert!(interferers_of(&log, o, eta).contains(&a));
            }
            for i in interferers_of(&log, a, eta) {
                prop_assert!(interfered_by(&log, i, eta).contains(&a));
            }
        }
    }

    #[test]
    fn allocators_are_feasible_and_monotone(g in gains_strategy(6)) {
        let gains = LinkGains::from_matrix(g).unwrap();
        let cfg = SolverConfig::converged(1e-6, 300);
        for r in [wmmse(&gains, 6.3, NOISE, &cfg).unwrap(), fp(&gains, 6.3, NOISE, &cfg).unwrap()] {
            prop_assert!(r.powers.iter().all(|p| (0.0..=6.3).contains(p)));
            for w in r.objective_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9);
            }
        }
    }

    #[test]
    fn actions_stay_in_unit_interval(seed in any::<u64>(), eps in 0.0f64..=1.0, scale in 0.0f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&[4, 6, 1], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let params: Vec<f64> = net.params_flat().iter().map(|x| x * scale).collect();
        net.set_params_flat(&params).unwrap();
        let state = [scale, -scale, 1.0, 0.5];
        for _ in 0..20 {
            let a = act(&net, &state, eps, &mut rng).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn replay_sampling_is_seed_determined(seed in any::<u64>(), len in 1usize..50, batch in 1usize..40) {
        let mut replay = ReplayMemory::<f64>::new(32);
        for i in 0..len {
            replay.push(Experience { agent: i, slot: i as i64, state: vec![i as f64], action: 0.5, reward: 0.0, next_state: vec![0.0] });
        }
        prop_assert!(replay.len() <= 32);
        let pick = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            replay.sample(batch, &mut rng).unwrap().iter().map(|e| e.agent).collect::<Vec<_>>()
        };
        prop_assert_eq!(pick(seed), pick(seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn state_width_ignores_deployment_size(cells in 1usize..12, links in 1usize..30, cap in 1usize..8, seed in any::<u64>()) {
        let mut cfg = RunConfig::default();
        cfg.neighbors.cap = cap;
        let net = cfg.network.with_size(cells, links);
        let world = World::<f64>::new(&net, &MobilityConfig::default(), seed).unwrap();
        let mut rollout = Rollout::new(world, &cfg);
        for _ in 0..3 {
            rollout.begin_slot().unwrap();
            let states = rollout.states();
            prop_assert_eq!(states.len(), links);
            prop_assert!(states.iter().all(|s| s.len() == 6 + 10 * cap));
            rollout.transmit(&vec![0.5; links]).unwrap();
        }
    }
}
