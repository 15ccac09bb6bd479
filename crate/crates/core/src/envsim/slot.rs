use rand::Rng;

use super::channels::ChannelStateVector;
use crate::agentnet::SenseAction;
use crate::error::{usage, Result};

pub const REWARD_SUCCESS: f64 = 2.0;
pub const REWARD_COLLISION: f64 = -1.0;
pub const REWARD_SILENT: f64 = 0.0;

/// One user's view of the channels after sensing: the true state where sensed, `-1`
/// elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    values: Vec<i8>,
}

impl Observation {
    /// Nothing sensed yet.
    pub fn unsensed(num_channels: usize) -> Self {
        Observation {
            values: vec![-1; num_channels],
        }
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_sensed(&self, k: usize) -> bool {
        self.values[k] != -1
    }

    pub fn sensed_mask(&self) -> Vec<u8> {
        self.values.iter().map(|&z| u8::from(z != -1)).collect()
    }

    pub fn sensed_count(&self) -> usize {
        self.values.iter().filter(|&&z| z != -1).count()
    }

    /// Sensed channels observed idle.
    pub fn idle_channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &z)| z == 1)
            .map(|(k, _)| k)
    }
}

pub fn observe(s: &ChannelStateVector, sense: &SenseAction) -> Result<Observation> {
    let mut values = vec![-1i8; s.len()];
    for &k in sense.channels() {
        if k >= s.len() {
            return usage(format!("sensed channel {k} out of range {}", s.len()));
        }
        values[k] = s.as_slice()[k] as i8;
    }
    Ok(Observation { values })
}

/// Result of one slot: who transmitted where, and the per-user rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub transmit: Vec<Option<usize>>,
    pub rewards: Vec<f64>,
    pub transmitters_per_channel: Vec<usize>,
}

impl SlotOutcome {
    pub fn num_users(&self) -> usize {
        self.rewards.len()
    }

    pub fn successes(&self) -> usize {
        self.rewards.iter().filter(|&&r| r == REWARD_SUCCESS).count()
    }

    /// Users whose transmission collided.
    pub fn collisions(&self) -> usize {
        self.rewards.iter().filter(|&&r| r == REWARD_COLLISION).count()
    }

    pub fn silent(&self) -> usize {
        self.transmit.iter().filter(|t| t.is_none()).count()
    }

    pub fn total_reward(&self) -> f64 {
        total_reward(self)
    }
}

pub fn total_reward(o: &SlotOutcome) -> f64 {
    o.rewards.iter().sum()
}

/// Listen-before-talk slot resolution. Each user with at least one idle sensed channel
/// transmits on one of them chosen uniformly; a lone transmitter earns `+2`, every user on
/// a shared channel earns `-1`, silent users earn `0`.
pub fn resolve_slot<R: Rng + ?Sized>(
    s: &ChannelStateVector,
    joint_sense: &[&SenseAction],
    rng: &mut R,
) -> Result<SlotOutcome> {
    let num_channels = s.len();
    let mut transmit = Vec::with_capacity(joint_sense.len());
    let mut idle = Vec::with_capacity(num_channels);
    for sense in joint_sense {
        idle.clear();
        for &k in sense.channels() {
            if k >= num_channels {
                return usage(format!("sensed channel {k} out of range {num_channels}"));
            }
            if s.is_idle(k) {
                idle.push(k);
            }
        }
        transmit.push(match idle.len() {
            0 => None,
            1 => Some(idle[0]),
            n => Some(idle[rng.random_range(0..n)]),
        });
    }
    let mut per_channel = vec![0usize; num_channels];
    for k in transmit.iter().flatten() {
        per_channel[*k] += 1;
    }
    let rewards = transmit
        .iter()
        .map(|t| match t {
            None => REWARD_SILENT,
            Some(k) if per_channel[*k] == 1 => REWARD_SUCCESS,
            Some(_) => REWARD_COLLISION,
        })
        .collect();
    Ok(SlotOutcome {
        transmit,
        rewards,
        transmitters_per_channel: per_channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentnet::ActionSpace;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(v: &[u8]) -> ChannelStateVector {
        ChannelStateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn observe_examples() {
        let space = ActionSpace::new(4, 2).unwrap();
        let s = state(&[1, 0, 1, 0]);
        let a = space.action(&[0, 1]).unwrap();
        assert_eq!(observe(&s, &a).unwrap().values(), &[1, 0, -1, -1]);

        let all = ActionSpace::new(4, 4).unwrap();
        let z = observe(&s, all.unrank(0).unwrap()).unwrap();
        assert_eq!(z.values(), &[1, 0, 1, 0]);

        let one = ActionSpace::new(4, 1).unwrap();
        let z = observe(&s, &one.action(&[2]).unwrap()).unwrap();
        assert_eq!(z.sensed_count(), 1);
        assert_eq!(z.values()[2], 1);
    }

    #[test]
    fn observation_masking_is_exhaustively_correct() {
        for k in 1..=5usize {
            for mask in 0u32..(1 << k) {
                let s = ChannelStateVector::from_idle((0..k).map(|c| mask & (1 << c) != 0));
                for m in 1..=k {
                    let space = ActionSpace::new(k, m).unwrap();
                    for a in space.iter() {
                        let z = observe(&s, a).unwrap();
                        let delta = z.sensed_mask();
                        assert_eq!(delta.iter().map(|&d| d as usize).sum::<usize>(), m);
                        for c in 0..k {
                            if delta[c] == 0 {
                                assert_eq!(z.values()[c], -1);
                            } else {
                                assert_eq!(z.values()[c], s.as_slice()[c] as i8);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_user_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let space = ActionSpace::new(4, 2).unwrap();
        let s = state(&[1, 0, 0, 0]);
        let hit = space.action(&[0, 1]).unwrap();
        let miss = space.action(&[2, 3]).unwrap();
        let o = resolve_slot(&s, &[&hit], &mut rng).unwrap();
        assert_eq!(o.rewards, vec![2.0]);
        assert_eq!(o.transmit, vec![Some(0)]);
        let o = resolve_slot(&s, &[&miss], &mut rng).unwrap();
        assert_eq!(o.rewards, vec![0.0]);
        assert_eq!(o.transmit, vec![None]);
    }

    #[test]
    fn forced_collision() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let space = ActionSpace::new(4, 1).unwrap();
        let s = state(&[0, 1, 0, 1]);
        let a = space.action(&[1]).unwrap();
        let o = resolve_slot(&s, &[&a, &a], &mut rng).unwrap();
        assert_eq!(o.rewards, vec![-1.0, -1.0]);
        assert_eq!(o.total_reward(), -2.0);
        assert_eq!(o.collisions(), 2);
    }

    #[test]
    fn total_reward_examples() {
        let mk = |r: Vec<f64>| SlotOutcome {
            transmit: r.iter().map(|&x| if x == 0.0 { None } else { Some(0) }).collect(),
            rewards: r,
            transmitters_per_channel: vec![],
        };
        assert_eq!(total_reward(&mk(vec![0.0, 0.0, 0.0])), 0.0);
        assert_eq!(total_reward(&mk(vec![2.0, 2.0, -1.0])), 3.0);
        assert_eq!(total_reward(&mk(vec![0.0; 7])), 0.0);
    }

    proptest! {
        #[test]
        fn reward_accounting_and_no_primary_interference(
            k in 2usize..8,
            n in 1usize..8,
            seed in any::<u64>(),
            idle_bits in any::<u32>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 1 + (seed as usize % k);
            let space = ActionSpace::new(k, m).unwrap();
            let s = ChannelStateVector::from_idle((0..k).map(|c| idle_bits & (1 << c) != 0));
            let picks: Vec<&SenseAction> = (0..n)
                .map(|i| space.unrank((seed as usize / 7 + i * 31) % space.count()).unwrap())
                .collect();
            let o = resolve_slot(&s, &picks, &mut rng).unwrap();

            let singles = o.transmitters_per_channel.iter().filter(|&&c| c == 1).count();
            let crowded: usize = o.transmitters_per_channel.iter().filter(|&&c| c >= 2).sum();
            prop_assert_eq!(o.total_reward(), 2.0 * singles as f64 - crowded as f64);
            prop_assert_eq!(o.successes() + o.collisions() + o.silent(), n);
            for (user, t) in o.transmit.iter().enumerate() {
                if let Some(ch) = t {
                    prop_assert!(s.is_idle(*ch));
                    prop_assert!(picks[user].channels().contains(ch));
                } else {
                    prop_assert!(picks[user].channels().iter().all(|&c| !s.is_idle(c)));
                }
            }
            for r in &o.rewards {
                prop_assert!([-1.0, 0.0, 2.0].contains(r));
            }
        }
    }
}
