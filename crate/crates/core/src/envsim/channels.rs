use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::TraceTable;
use crate::error::{config, data, Result};

/// True occupancy of all channels in one slot: `1` idle, `0` busy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChannelStateVector(Vec<u8>);

impl ChannelStateVector {
    pub fn new(states: Vec<u8>) -> Result<Self> {
        if states.is_empty() {
            return config("channel state vector must not be empty");
        }
        if let Some(k) = states.iter().position(|&s| s > 1) {
            return data(format!("channel {k} has state {} (expected 0 or 1)", states[k]));
        }
        Ok(ChannelStateVector(states))
    }

    pub fn from_idle(idle: impl IntoIterator<Item = bool>) -> Self {
        ChannelStateVector(idle.into_iter().map(u8::from).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_idle(&self, k: usize) -> bool {
        self.0[k] == 1
    }

    pub fn idle_count(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&s| f64::from(s)).collect()
    }
}

/// Independent two-state Markov chains, one per channel.
///
/// `busy_to_idle[k]` is `P(0 -> 1)` and `idle_to_busy[k]` is `P(1 -> 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChannelSet {
    busy_to_idle: Vec<f64>,
    idle_to_busy: Vec<f64>,
}

impl MarkovChannelSet {
    pub fn new(busy_to_idle: Vec<f64>, idle_to_busy: Vec<f64>) -> Result<Self> {
        if busy_to_idle.is_empty() || busy_to_idle.len() != idle_to_busy.len() {
            return config("markov channel set needs equal, non-empty probability lists");
        }
        if busy_to_idle
            .iter()
            .chain(&idle_to_busy)
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return config("transition probabilities must lie in [0, 1]");
        }
        Ok(MarkovChannelSet {
            busy_to_idle,
            idle_to_busy,
        })
    }

    /// Draws every switching probability uniformly from `[lo, hi]`.
    pub fn random(num_channels: usize, seed: u64, lo: f64, hi: f64) -> Result<Self> {
        if num_channels == 0 {
            return config("number of channels must be positive");
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return config(format!("need 0 < lo < hi < 1, got lo={lo} hi={hi}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(num_channels);
        let mut y = Vec::with_capacity(num_channels);
        for _ in 0..num_channels {
            x.push(rng.random_range(lo..=hi));
            y.push(rng.random_range(lo..=hi));
        }
        Self::new(x, y)
    }

    pub fn num_channels(&self) -> usize {
        self.busy_to_idle.len()
    }

    pub fn busy_to_idle(&self, k: usize) -> f64 {
        self.busy_to_idle[k]
    }

    pub fn idle_to_busy(&self, k: usize) -> f64 {
        self.idle_to_busy[k]
    }

    /// `[[p00, p01], [p10, p11]]` with state 0 busy and 1 idle.
    pub fn transition_matrix(&self, k: usize) -> [[f64; 2]; 2] {
        let (x, y) = (self.busy_to_idle[k], self.idle_to_busy[k]);
        [[1.0 - x, x], [y, 1.0 - y]]
    }

    pub fn stationary_idle(&self, k: usize) -> f64 {
        let (x, y) = (self.busy_to_idle[k], self.idle_to_busy[k]);
        if x + y == 0.0 {
            0.5
        } else {
            x / (x + y)
        }
    }

    pub fn expected_idle_channels(&self) -> f64 {
        (0..self.num_channels()).map(|k| self.stationary_idle(k)).sum()
    }

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelStateVector {
        ChannelStateVector::from_idle(
            (0..self.num_channels()).map(|k| rng.random_bool(self.stationary_idle(k))),
        )
    }

    fn step<R: Rng + ?Sized>(&self, s: &ChannelStateVector, rng: &mut R) -> ChannelStateVector {
        ChannelStateVector::from_idle((0..self.num_channels()).map(|k| {
            let u: f64 = rng.random();
            if s.is_idle(k) {
                u >= self.idle_to_busy[k]
            } else {
                u < self.busy_to_idle[k]
            }
        }))
    }
}

/// Contiguous blocks of channels take turns being idle; exactly one block is idle per slot
/// and with probability `switch_prob` the idle block advances to the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPattern {
    num_channels: usize,
    group_size: usize,
    group: usize,
    switch_prob: f64,
}

impl PeriodicPattern {
    pub fn new(num_channels: usize, group_size: usize, switch_prob: f64) -> Result<Self> {
        if num_channels == 0 || group_size == 0 || !num_channels.is_multiple_of(group_size) {
            return config(format!(
                "periodic pattern needs group size dividing {num_channels}, got {group_size}"
            ));
        }
        if !(0.0..=1.0).contains(&switch_prob) {
            return config("switch probability must lie in [0, 1]");
        }
        Ok(PeriodicPattern {
            num_channels,
            group_size,
            group: 0,
            switch_prob,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.num_channels / self.group_size
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn switch_prob(&self) -> f64 {
        self.switch_prob
    }

    pub fn set_group(&mut self, group: usize) -> Result<()> {
        if group >= self.num_groups() {
            return config(format!("group {group} out of range"));
        }
        self.group = group;
        Ok(())
    }

    pub fn current_state(&self) -> ChannelStateVector {
        let lo = self.group * self.group_size;
        ChannelStateVector::from_idle(
            (0..self.num_channels).map(|k| k >= lo && k < lo + self.group_size),
        )
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ChannelStateVector {
        if rng.random_bool(self.switch_prob) {
            self.group = (self.group + 1) % self.num_groups();
        }
        self.current_state()
    }
}

/// Channels split into subsets; each subset has a leader following a symmetric two-state
/// chain and every other member equals the leader or its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedPattern {
    num_channels: usize,
    /// Channel indices per subset; the first entry is the leader.
    subsets: Vec<Vec<usize>>,
    /// Per channel: `true` if it is the complement of its leader.
    inverted: Vec<bool>,
    flip_prob: f64,
    leaders: Vec<u8>,
}

impl CorrelatedPattern {
    pub fn new(subsets: Vec<Vec<usize>>, inverted: Vec<bool>, flip_prob: f64) -> Result<Self> {
        let num_channels = inverted.len();
        let mut seen = vec![false; num_channels];
        for set in &subsets {
            if set.is_empty() {
                return config("correlated subsets must be non-empty");
            }
            for &k in set {
                if k >= num_channels || seen[k] {
                    return config("correlated subsets must partition the channels");
                }
                seen[k] = true;
            }
            if inverted[set[0]] {
                return config("a subset leader cannot be inverted");
            }
        }
        if seen.iter().any(|s| !s) {
            return config("correlated subsets must cover every channel");
        }
        if !(0.0..=1.0).contains(&flip_prob) {
            return config("leader flip probability must lie in [0, 1]");
        }
        let leaders = vec![0; subsets.len()];
        Ok(CorrelatedPattern {
            num_channels,
            subsets,
            inverted,
            flip_prob,
            leaders,
        })
    }

    /// Seeded random partition into subsets of the given sizes with random sign flags.
    pub fn random(sizes: &[usize], flip_prob: f64, seed: u64) -> Result<Self> {
        let num_channels: usize = sizes.iter().sum();
        if num_channels == 0 || sizes.contains(&0) {
            return config("subset sizes must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..num_channels).collect();
        order.shuffle(&mut rng);
        let mut subsets = Vec::with_capacity(sizes.len());
        let mut inverted = vec![false; num_channels];
        let mut offset = 0;
        for &size in sizes {
            let set: Vec<usize> = order[offset..offset + size].to_vec();
            for &k in &set[1..] {
                inverted[k] = rng.random_bool(0.5);
            }
            subsets.push(set);
            offset += size;
        }
        Self::new(subsets, inverted, flip_prob)
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn is_inverted(&self, k: usize) -> bool {
        self.inverted[k]
    }

    pub fn leader_of(&self, k: usize) -> usize {
        self.subsets
            .iter()
            .find(|s| s.contains(&k))
            .map(|s| s[0])
            .expect("partition covers every channel")
    }

    pub fn leader_states(&self) -> &[u8] {
        &self.leaders
    }

    pub fn set_leader_states(&mut self, leaders: &[u8]) -> Result<()> {
        if leaders.len() != self.subsets.len() || leaders.iter().any(|&l| l > 1) {
            return config("leader states must be one 0/1 entry per subset");
        }
        self.leaders.copy_from_slice(leaders);
        Ok(())
    }

    /// True if every follower equals its leader or the leader's complement per its flag.
    pub fn is_consistent(&self, s: &ChannelStateVector) -> bool {
        self.subsets.iter().all(|set| {
            let lead = s.as_slice()[set[0]];
            set.iter().all(|&k| s.as_slice()[k] == lead ^ u8::from(self.inverted[k]))
        })
    }

    pub fn current_state(&self) -> ChannelStateVector {
        let mut s = vec![0u8; self.num_channels];
        for (set, &lead) in self.subsets.iter().zip(&self.leaders) {
            for &k in set {
                s[k] = lead ^ u8::from(self.inverted[k]);
            }
        }
        ChannelStateVector(s)
    }

    fn initial<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ChannelStateVector {
        for l in &mut self.leaders {
            *l = u8::from(rng.random_bool(0.5));
        }
        self.current_state()
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ChannelStateVector {
        for l in &mut self.leaders {
            if rng.random_bool(self.flip_prob) {
                *l ^= 1;
            }
        }
        self.current_state()
    }
}

/// Any of the supported channel-occupancy processes.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelModel {
    Markov(MarkovChannelSet),
    Periodic(PeriodicPattern),
    Correlated(CorrelatedPattern),
    Trace(TraceTable),
}

impl ChannelModel {
    pub fn num_channels(&self) -> usize {
        match self {
            ChannelModel::Markov(m) => m.num_channels(),
            ChannelModel::Periodic(p) => p.num_channels,
            ChannelModel::Correlated(c) => c.num_channels,
            ChannelModel::Trace(t) => t.num_channels(),
        }
    }

    /// State of the first slot.
    pub fn initial_state<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<ChannelStateVector> {
        Ok(match self {
            ChannelModel::Markov(m) => m.initial(rng),
            ChannelModel::Periodic(p) => {
                p.group = rng.random_range(0..p.num_groups());
                p.current_state()
            }
            ChannelModel::Correlated(c) => c.initial(rng),
            ChannelModel::Trace(t) => t.next_row()?,
        })
    }

    /// Advances one slot from `s`.
    pub fn step_channels<R: Rng + ?Sized>(
        &mut self,
        s: &ChannelStateVector,
        rng: &mut R,
    ) -> Result<ChannelStateVector> {
        if s.len() != self.num_channels() {
            return config(format!(
                "state has {} channels, model has {}",
                s.len(),
                self.num_channels()
            ));
        }
        Ok(match self {
            ChannelModel::Markov(m) => m.step(s, rng),
            ChannelModel::Periodic(p) => p.step(rng),
            ChannelModel::Correlated(c) => c.step(rng),
            ChannelModel::Trace(t) => t.next_row()?,
        })
    }
}
