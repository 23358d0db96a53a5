use proptest::prelude::*;
use trgail_core::env::{Action, ActionSpace, Step, Trajectory};
use trgail_core::gail::{imitation_log_reward, DemoDataset, D_CLIP};
use trgail_core::pgm::{composite_reward, sum_emissions, ChannelSet, EmissionContext, OptimalityChannel};
use trgail_core::rl::{compute_gae, RolloutBuffer, Segment};

fn ctx_with<'a>(obs: &'a [f64], action: &'a Action, enc: &'a [f64]) -> EmissionContext<'a> {
    EmissionContext {
        obs,
        action,
        encoded_action: enc,
        task_reward: 1.0,
        info: None,
        discriminator: None,
    }
}

fn buffer(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> RolloutBuffer {
    RolloutBuffer {
        rewards: rewards.to_vec(),
        values: values.to_vec(),
        dones: dones.to_vec(),
        segments: vec![Segment {
            env: 0,
            start: 0,
            end: rewards.len(),
            bootstrap,
        }],
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composite_is_independent_of_channel_order(
        values in prop::collection::vec(-5.0f64..5.0, 1..6),
        weights in prop::collection::vec(0.1f64..3.0, 6),
        rot in 0usize..6,
    ) {
        let make = |k: usize| {
            let v = values[k];
            OptimalityChannel::custom(format!("c{k}"), move |_: &EmissionContext| v).with_weight(weights[k])
        };
        let forward: Vec<_> = (0..values.len()).map(make).collect();
        let mut shuffled: Vec<_> = (0..values.len()).map(make).collect();
        shuffled.rotate_left(rot % values.len());
        shuffled.reverse();
        let (obs, action, enc) = ([0.0], Action::Discrete(0), [1.0]);
        let ctx = ctx_with(&obs, &action, &enc);
        let a = composite_reward(&ChannelSet::new(forward).unwrap(), &ctx).unwrap();
        let b = composite_reward(&ChannelSet::new(shuffled).unwrap(), &ctx).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        // name order equals index order here, so the fold is over weighted values in index order
        let weighted: Vec<f64> = values.iter().zip(&weights).map(|(v, w)| if *w == 1.0 { *v } else { w * v }).collect();
        prop_assert_eq!(a.to_bits(), sum_emissions(&weighted).to_bits());
    }

    #[test]
    fn undiscounted_gae_without_baseline_is_reward_to_go(rewards in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let n = rewards.len();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let mut buf = buffer(&rewards, &vec![0.0; n], &dones, 0.0);
        compute_gae(&mut buf, 1.0, 1.0, false);
        for t in 0..n {
            let to_go: f64 = rewards[t..].iter().sum();
            prop_assert!((buf.advantages[t] - to_go).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_lambda_gae_is_the_td_error(
        rewards in prop::collection::vec(-3.0f64..3.0, 2..20),
        seed_values in prop::collection::vec(-3.0f64..3.0, 20),
        gamma in 0.5f64..1.0,
        bootstrap in -2.0f64..2.0,
    ) {
        let n = rewards.len();
        let values = &seed_values[..n];
        let dones = vec![false; n];
        let mut buf = buffer(&rewards, values, &dones, bootstrap);
        compute_gae(&mut buf, gamma, 0.0, false);
        for t in 0..n {
            let next = if t + 1 < n { values[t + 1] } else { bootstrap };
            let delta = rewards[t] + gamma * next - values[t];
            prop_assert!((buf.advantages[t] - delta).abs() < 1e-12);
            prop_assert!((buf.returns[t] - (buf.advantages[t] + values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_advantages_are_standardized(rewards in prop::collection::vec(-3.0f64..3.0, 3..30)) {
        prop_assume!(rewards.iter().any(|r| (r - rewards[0]).abs() > 1e-3));
        let n = rewards.len();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let mut buf = buffer(&rewards, &vec![0.0; n], &dones, 0.0);
        compute_gae(&mut buf, 0.9, 0.9, true);
        let mean = buf.advantages.iter().sum::<f64>() / n as f64;
        let var = buf.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn imitation_reward_is_clipped_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let (ra, rb) = (imitation_log_reward(a), imitation_log_reward(b));
        prop_assert!(ra >= D_CLIP.ln() && ra <= (1.0 - D_CLIP).ln());
        if a <= b {
            prop_assert!(ra <= rb);
        }
    }

    #[test]
    fn dataset_round_trips_and_rejects_truncation(
        lens in prop::collection::vec(1usize..8, 1..4),
        cut in 1usize..64,
        continuous in any::<bool>(),
        draws in prop::collection::vec(-1.0f64..1.0, 200),
    ) {
        let space = if continuous {
            ActionSpace::Continuous { low: vec![-1.0; 2], high: vec![1.0; 2] }
        } else {
            ActionSpace::Discrete { n: 4 }
        };
        let mut k = 0;
        let mut next = || { k = (k + 1) % draws.len(); draws[k] };
        let trajs: Vec<Trajectory> = lens.iter().enumerate().map(|(i, &len)| Trajectory {
            steps: (0..len).map(|_| {
                let action = if continuous {
                    Action::Continuous(vec![next(), next()])
                } else {
                    Action::Discrete(((next() + 1.0) * 1.99) as usize)
                };
                let achieved = next() > 0.0;
                Step { obs: vec![next(), next(), next()], action, task_reward: achieved as u8 as f64, achieved, log_prob: 0.0 }
            }).collect(),
            seed: if i % 2 == 0 { Some(i as u64 * 7) } else { None },
        }).collect();
        // the file format carries no demonstrator log-probabilities
        let ds = DemoDataset::new("grid-push", 3, space, 10, trajs).unwrap();
        let bytes = ds.encode();
        prop_assert_eq!(DemoDataset::decode(&bytes).unwrap(), ds);
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(DemoDataset::decode(&bytes[..bytes.len() - cut]).is_err());
    }
}
