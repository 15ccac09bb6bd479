//! QMIX: monotonic mixing of per-agent Q-values, episode replay, TD targets against a
//! target network and the epoch-structured trainer.

mod episode;
mod learn;
mod mixer;
mod model;
mod rollout;
mod trainer;

pub use episode::{EpisodeRecord, ReplayBuffer};
pub use learn::{greedy_joint_action, qmix_loss, qmix_loss_and_grad, taken_q_tot, td_targets};
pub use mixer::{mix, GlobalState, Mixer, MixingParams, HYPER_HIDDEN, MIXING_EMBED};
pub use model::{ModelDims, QmixModel};
pub use rollout::{run_episode, ActingPolicy, EpisodeMetrics};
pub use trainer::{
    greedy_rollouts, Algorithm, EpochMetrics, Trainer, TrainerConfig, TrainerRngs, TrainerState,
};

#[cfg(test)]
pub(crate) use episode::tests::random_episode;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentnet::EpsilonSchedule;
    use crate::envsim::{init_markov, ChannelModel, Environment};
    use crate::rng::{stream, Stream};

    pub(crate) fn small_config(algorithm: Algorithm) -> TrainerConfig {
        TrainerConfig {
            dims: ModelDims {
                num_channels: 4,
                sensed: 2,
                num_agents: 2,
            },
            slots_per_episode: 5,
            gamma: 1.0,
            learning_rate: 5e-4,
            batch_size: 4,
            epsilon: EpsilonSchedule::default(),
            target_sync_interval: 40,
            buffer_capacity: 50,
            episodes_per_epoch: 4,
            train_steps_per_epoch: 5,
            grad_clip: 10.0,
            algorithm,
            seed: 3,
        }
    }

    fn env(seed: u64) -> Environment {
        let chans = init_markov(4, seed, 0.05, 0.95).unwrap();
        Environment::new(ChannelModel::Markov(chans), stream(seed, Stream::ChannelDynamics))
    }

    #[test]
    fn target_is_synced_after_forty_steps() {
        let mut cfg = small_config(Algorithm::Qmix);
        cfg.train_steps_per_epoch = 0;
        let mut tr = Trainer::new(cfg).unwrap();
        let mut e = env(1);
        tr.train_epoch(&mut e).unwrap();
        for step in 1..=40 {
            tr.train_step().unwrap();
            if step < 40 {
                assert!(!tr.theta().values_bit_equal(tr.target()));
            }
        }
        assert!(tr.theta().values_bit_equal(tr.target()));
    }

    #[test]
    fn sync_copies_and_is_idempotent() {
        let mut tr = Trainer::new(small_config(Algorithm::Qmix)).unwrap();
        let mut e = env(2);
        tr.train_epoch(&mut e).unwrap();
        tr.train_step().unwrap();
        tr.sync_target();
        let once = tr.target().clone();
        tr.sync_target();
        assert!(once.values_bit_equal(tr.target()));
        let mut rng = stream(9, Stream::Evaluation);
        let mixer = tr.model().mixer().unwrap();
        for _ in 0..100 {
            let ep = random_episode(tr.model().space(), 2, 1, &mut rng);
            let s = ep.global_state(0);
            let q = [rand::Rng::random_range(&mut rng, -3.0..3.0), rand::Rng::random_range(&mut rng, -3.0..3.0)];
            assert_eq!(mixer.forward(tr.theta(), &q, &s).unwrap(), mixer.forward(tr.target(), &q, &s).unwrap());
        }
        tr.train_step().unwrap();
        assert!(once.values_bit_equal(tr.target()));
        assert!(!once.values_bit_equal(tr.theta()));
    }

    #[test]
    fn warm_up_skips_training_until_a_batch_is_available() {
        let mut cfg = small_config(Algorithm::Qmix);
        cfg.batch_size = 6;
        let mut tr = Trainer::new(cfg).unwrap();
        let mut e = env(3);
        let m = tr.train_epoch(&mut e).unwrap();
        assert_eq!(m.train_steps, 0);
        assert!(m.mean_loss.is_none());
        let m = tr.train_epoch(&mut e).unwrap();
        assert_eq!(m.train_steps, 5);
        assert_eq!(tr.state().train_steps, 5);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let run = || {
            let mut tr = Trainer::new(small_config(Algorithm::Qmix)).unwrap();
            let mut e = env(4);
            let out: Vec<EpochMetrics> = (0..4).map(|_| tr.train_epoch(&mut e).unwrap()).collect();
            (out, tr.theta().clone())
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert!(ta.values_bit_equal(&tb));
    }

    #[test]
    fn full_exploration_without_training_matches_random_policy() {
        // With epsilon pinned to 1 every action is a uniform draw, exactly as in the
        // random baseline, so the two reduce to the same episode distribution.
        let mut cfg = small_config(Algorithm::Qmix);
        cfg.epsilon = EpsilonSchedule { start: 1.0, end: 1.0, horizon: 1 };
        cfg.train_steps_per_epoch = 0;
        cfg.episodes_per_epoch = 400;
        let mut greedy = Trainer::new(cfg.clone()).unwrap();
        let a = greedy.train_epoch(&mut env(5)).unwrap();
        cfg.algorithm = Algorithm::Random;
        let mut random = Trainer::new(cfg).unwrap();
        let b = random.train_epoch(&mut env(5)).unwrap();
        let mean = |m: &EpochMetrics| m.episodes.iter().map(|e| e.success_rate).sum::<f64>() / m.episodes.len() as f64;
        assert!((mean(&a) - mean(&b)).abs() < 0.04, "{} vs {}", mean(&a), mean(&b));
    }

    #[test]
    fn reset_clears_learning_state() {
        let mut tr = Trainer::new(small_config(Algorithm::Qmix)).unwrap();
        let mut e = env(6);
        for _ in 0..3 {
            tr.train_epoch(&mut e).unwrap();
        }
        let before = tr.theta().clone();
        tr.reset_learning().unwrap();
        assert!(tr.buffer().is_empty());
        assert_eq!(tr.state().global_slots, 0);
        assert_eq!(tr.state().adam.step_count(), 0);
        assert_eq!(tr.state().epoch, 3);
        assert!(!before.values_bit_equal(tr.theta()));
        assert!(tr.theta().values_bit_equal(tr.target()));
    }

    #[test]
    fn metrics_account_for_every_user_slot() {
        let mut tr = Trainer::new(small_config(Algorithm::Qmix)).unwrap();
        let mut e = env(7);
        for _ in 0..3 {
            for m in tr.train_epoch(&mut e).unwrap().episodes {
                assert_eq!(m.successes + m.collisions + m.silent, 10);
                assert!(m.successes <= m.oracle_bound);
            }
        }
    }
}
