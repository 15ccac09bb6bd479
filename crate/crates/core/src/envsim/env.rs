use rand_chacha::ChaCha8Rng;

use super::channels::{ChannelModel, ChannelStateVector};
use crate::error::{config, data, Result};
use crate::rng::RngSnapshot;

/// Source of per-slot channel states seen by the training and evaluation loops.
pub trait ChannelEnvironment {
    fn num_channels(&self) -> usize;

    /// Notifies the environment that epoch `epoch` (0-based) is starting.
    fn begin_epoch(&mut self, _epoch: usize) {}

    /// Prepares for an episode of `slots` consecutive slots.
    fn begin_episode(&mut self, slots: usize) -> Result<()>;

    /// True channel state of the next slot.
    fn next_slot(&mut self) -> Result<ChannelStateVector>;

    /// The model currently producing states.
    fn active_model(&self) -> &ChannelModel;

    fn snapshot(&self) -> EnvSnapshot;

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<()>;
}

/// Dynamic state of one [`Environment`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub current: Option<Vec<u8>>,
    /// Periodic: idle group. Correlated: leader states. Trace: cursor. Markov: empty.
    pub model_state: Vec<u64>,
    pub rng: RngSnapshot,
    /// Present for switching environments.
    pub switched: Option<(u64, Box<EnvSnapshot>)>,
}

/// A channel model driven slot by slot by its own random stream. The channel process
/// runs continuously across episodes.
#[derive(Debug, Clone)]
pub struct Environment {
    model: ChannelModel,
    current: Option<ChannelStateVector>,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(model: ChannelModel, rng: ChaCha8Rng) -> Self {
        Environment {
            model,
            current: None,
            rng,
        }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn current(&self) -> Option<&ChannelStateVector> {
        self.current.as_ref()
    }
}

impl ChannelEnvironment for Environment {
    fn num_channels(&self) -> usize {
        self.model.num_channels()
    }

    fn begin_episode(&mut self, slots: usize) -> Result<()> {
        if let ChannelModel::Trace(t) = &mut self.model {
            if t.num_slots() < slots {
                return data(format!(
                    "trace has {} slots, an episode needs {slots}",
                    t.num_slots()
                ));
            }
            // Whole episodes are replayed from the start once the trace runs out.
            if t.remaining() < slots {
                t.rewind();
                self.current = None;
            }
        }
        Ok(())
    }

    fn next_slot(&mut self) -> Result<ChannelStateVector> {
        let next = match &self.current {
            None => self.model.initial_state(&mut self.rng)?,
            Some(s) => self.model.step_channels(s, &mut self.rng)?,
        };
        self.current = Some(next.clone());
        Ok(next)
    }

    fn active_model(&self) -> &ChannelModel {
        &self.model
    }

    fn snapshot(&self) -> EnvSnapshot {
        let model_state = match &self.model {
            ChannelModel::Markov(_) => vec![],
            ChannelModel::Periodic(p) => vec![p.group() as u64],
            ChannelModel::Correlated(c) => c.leader_states().iter().map(|&l| l as u64).collect(),
            ChannelModel::Trace(t) => vec![t.cursor() as u64],
        };
        EnvSnapshot {
            current: self.current.as_ref().map(|s| s.as_slice().to_vec()),
            model_state,
            rng: RngSnapshot::of(&self.rng),
            switched: None,
        }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        let current = snap
            .current
            .as_ref()
            .map(|v| ChannelStateVector::new(v.clone()))
            .transpose()?;
        if current.as_ref().is_some_and(|c| c.len() != self.num_channels()) {
            return data("environment snapshot has the wrong channel count");
        }
        let ms = &snap.model_state;
        match &mut self.model {
            ChannelModel::Markov(_) => {}
            ChannelModel::Periodic(p) => p.set_group(*ms.first().unwrap_or(&0) as usize)?,
            ChannelModel::Correlated(c) => {
                let leaders: Vec<u8> = ms.iter().map(|&l| l as u8).collect();
                c.set_leader_states(&leaders)?
            }
            ChannelModel::Trace(t) => t.set_cursor(*ms.first().unwrap_or(&0) as usize)?,
        }
        self.current = current;
        self.rng = snap.rng.restore();
        Ok(())
    }
}

/// Runs `first` before `switch_epoch` and `second` from then on. Agents are not told.
#[derive(Debug, Clone)]
pub struct SwitchingEnvironment {
    first: Environment,
    second: Environment,
    switch_epoch: usize,
    epoch: usize,
}

pub fn make_switching_env(
    first: Environment,
    second: Environment,
    switch_epoch: usize,
) -> Result<SwitchingEnvironment> {
    if first.num_channels() != second.num_channels() {
        return config(format!(
            "switching environments need equal channel counts, got {} and {}",
            first.num_channels(),
            second.num_channels()
        ));
    }
    Ok(SwitchingEnvironment {
        first,
        second,
        switch_epoch,
        epoch: 0,
    })
}

impl SwitchingEnvironment {
    pub fn switch_epoch(&self) -> usize {
        self.switch_epoch
    }

    pub fn has_switched(&self) -> bool {
        self.epoch >= self.switch_epoch
    }

    fn active(&mut self) -> &mut Environment {
        if self.has_switched() {
            &mut self.second
        } else {
            &mut self.first
        }
    }
}

impl ChannelEnvironment for SwitchingEnvironment {
    fn num_channels(&self) -> usize {
        self.first.num_channels()
    }

    fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    fn begin_episode(&mut self, slots: usize) -> Result<()> {
        self.active().begin_episode(slots)
    }

    fn next_slot(&mut self) -> Result<ChannelStateVector> {
        self.active().next_slot()
    }

    fn active_model(&self) -> &ChannelModel {
        if self.has_switched() {
            self.second.model()
        } else {
            self.first.model()
        }
    }

    fn snapshot(&self) -> EnvSnapshot {
        let mut snap = self.first.snapshot();
        snap.switched = Some((self.epoch as u64, Box::new(self.second.snapshot())));
        snap
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        let Some((epoch, second)) = &snap.switched else {
            return data("snapshot is not from a switching environment");
        };
        self.first.restore(snap)?;
        self.second.restore(second)?;
        self.epoch = *epoch as usize;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{MarkovChannelSet, PeriodicPattern, TraceTable};
    use crate::rng::{stream, Stream};

    fn markov_env(k: usize, seed: u64) -> Environment {
        let m = MarkovChannelSet::random(k, seed, 0.05, 0.95).unwrap();
        Environment::new(ChannelModel::Markov(m), stream(seed, Stream::ChannelDynamics))
    }

    fn periodic_env(k: usize) -> Environment {
        let p = PeriodicPattern::new(k, 4, 0.75).unwrap();
        Environment::new(ChannelModel::Periodic(p), stream(1, Stream::SwitchedDynamics))
    }

    #[test]
    fn switch_happens_exactly_at_configured_epoch() {
        let mut env = make_switching_env(markov_env(16, 3), periodic_env(16), 150).unwrap();
        env.begin_epoch(149);
        assert!(matches!(env.active_model(), ChannelModel::Markov(_)));
        env.next_slot().unwrap();
        env.begin_epoch(150);
        assert!(matches!(env.active_model(), ChannelModel::Periodic(_)));
        for _ in 0..50 {
            assert_eq!(env.next_slot().unwrap().idle_count(), 4);
        }
    }

    #[test]
    fn mismatched_channel_counts_rejected() {
        let err = make_switching_env(markov_env(16, 3), periodic_env(8), 10).unwrap_err();
        assert_eq!(err.category(), crate::Category::Configuration);
    }

    #[test]
    fn identical_halves_give_identical_streams() {
        let a = markov_env(8, 5);
        let mut sw = make_switching_env(a.clone(), a.clone(), 2).unwrap();
        let mut plain = a;
        for epoch in 0..4 {
            sw.begin_epoch(epoch);
            for _ in 0..10 {
                let x = sw.next_slot().unwrap();
                if epoch < 2 {
                    assert_eq!(x, plain.next_slot().unwrap());
                }
            }
        }
    }

    #[test]
    fn snapshot_restores_stream_position() {
        let mut env = markov_env(6, 9);
        for _ in 0..17 {
            env.next_slot().unwrap();
        }
        let snap = env.snapshot();
        let expected: Vec<_> = (0..30).map(|_| env.next_slot().unwrap()).collect();
        let mut fresh = markov_env(6, 9);
        fresh.restore(&snap).unwrap();
        let got: Vec<_> = (0..30).map(|_| fresh.next_slot().unwrap()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn trace_replays_whole_episodes() {
        let rows = (0..5)
            .map(|t| ChannelStateVector::from_idle([t % 2 == 0, true]))
            .collect();
        let table = TraceTable::new(2, rows).unwrap();
        let mut env = Environment::new(ChannelModel::Trace(table), stream(0, Stream::ChannelDynamics));
        env.begin_episode(2).unwrap();
        let first = env.next_slot().unwrap();
        env.next_slot().unwrap();
        env.begin_episode(2).unwrap();
        env.next_slot().unwrap();
        env.next_slot().unwrap();
        // one row left, so the next episode restarts from row 1
        env.begin_episode(2).unwrap();
        assert_eq!(env.next_slot().unwrap(), first);
        assert!(env.begin_episode(6).is_err());
    }
}
