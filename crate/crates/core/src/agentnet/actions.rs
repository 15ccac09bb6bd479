use crate::error::{config, usage, Result};

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// One user's sensing choice: a strictly increasing set of `M` channel indices (0-based)
/// together with its lexicographic rank.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SenseAction {
    index: usize,
    channels: Vec<usize>,
}

impl SenseAction {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// All `C(K, M)` sensing actions in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    num_channels: usize,
    sensed: usize,
    table: Vec<SenseAction>,
}

/// Upper bound on the action count; beyond this the Q-head would be unreasonably wide.
pub const MAX_ACTIONS: u64 = 1 << 20;

impl ActionSpace {
    pub fn new(num_channels: usize, sensed: usize) -> Result<Self> {
        if sensed == 0 || sensed > num_channels {
            return config(format!(
                "sensed channels M={sensed} must satisfy 1 <= M <= K={num_channels}"
            ));
        }
        let count = binomial(num_channels, sensed)
            .filter(|&c| c <= MAX_ACTIONS)
            .ok_or_else(|| {
                crate::Error::Config(format!(
                    "C({num_channels}, {sensed}) exceeds the supported action count"
                ))
            })? as usize;
        let mut table = Vec::with_capacity(count);
        let mut current: Vec<usize> = (0..sensed).collect();
        loop {
            table.push(SenseAction {
                index: table.len(),
                channels: current.clone(),
            });
            // advance to the lexicographic successor
            let mut i = sensed;
            while i > 0 && current[i - 1] == num_channels - sensed + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            current[i - 1] += 1;
            for j in i..sensed {
                current[j] = current[j - 1] + 1;
            }
        }
        debug_assert_eq!(table.len(), count);
        Ok(ActionSpace {
            num_channels,
            sensed,
            table,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn sensed(&self) -> usize {
        self.sensed
    }

    pub fn count(&self) -> usize {
        self.table.len()
    }

    pub fn unrank(&self, index: usize) -> Result<&SenseAction> {
        self.table
            .get(index)
            .ok_or_else(|| crate::Error::Usage(format!("action {index} out of range {}", self.count())))
    }

    /// Lexicographic rank of an increasing subset, computed arithmetically.
    pub fn rank(&self, channels: &[usize]) -> Result<usize> {
        if channels.len() != self.sensed {
            return usage(format!("expected {} channels, got {}", self.sensed, channels.len()));
        }
        if channels.windows(2).any(|w| w[0] >= w[1])
            || channels.last().is_some_and(|&c| c >= self.num_channels)
        {
            return usage(format!("{channels:?} is not an increasing subset of 0..{}", self.num_channels));
        }
        let (n, m) = (self.num_channels, self.sensed);
        let mut rank = 0u64;
        let mut start = 0;
        for (i, &c) in channels.iter().enumerate() {
            for j in start..c {
                rank += binomial(n - 1 - j, m - 1 - i).expect("bounded by count");
            }
            start = c + 1;
        }
        Ok(rank as usize)
    }

    pub fn action(&self, channels: &[usize]) -> Result<SenseAction> {
        let i = self.rank(channels)?;
        Ok(self.table[i].clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = &SenseAction> {
        self.table.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(ActionSpace::new(16, 2).unwrap().count(), 120);
        assert_eq!(ActionSpace::new(16, 4).unwrap().count(), 1820);
        assert_eq!(ActionSpace::new(5, 5).unwrap().count(), 1);
        assert!(ActionSpace::new(4, 0).is_err());
        assert!(ActionSpace::new(4, 5).is_err());
        assert_eq!(binomial(60, 30), Some(118264581564861424));
    }

    #[test]
    fn first_action_is_lowest_channels() {
        let space = ActionSpace::new(4, 2).unwrap();
        assert_eq!(space.unrank(0).unwrap().channels(), &[0, 1]);
        assert_eq!(space.unrank(5).unwrap().channels(), &[2, 3]);
        assert!(space.unrank(6).is_err());
    }

    /// Enumerates subsets by brute force over bitmasks and orders them lexicographically.
    fn brute_force(n: usize, m: usize) -> Vec<Vec<usize>> {
        let mut all: Vec<Vec<usize>> = (0u32..(1 << n))
            .filter(|mask| mask.count_ones() as usize == m)
            .map(|mask| (0..n).filter(|&b| mask & (1 << b) != 0).collect())
            .collect();
        all.sort();
        all
    }

    #[test]
    fn rank_unrank_match_brute_force_enumeration() {
        for n in 1..=8 {
            for m in 1..=n {
                let space = ActionSpace::new(n, m).unwrap();
                let expected = brute_force(n, m);
                assert_eq!(space.count(), expected.len());
                for (i, subset) in expected.iter().enumerate() {
                    assert_eq!(space.unrank(i).unwrap().channels(), subset.as_slice());
                    assert_eq!(space.rank(subset).unwrap(), i);
                }
            }
        }
    }

    #[test]
    fn rank_rejects_malformed_subsets() {
        let space = ActionSpace::new(6, 3).unwrap();
        assert!(space.rank(&[0, 0, 1]).is_err());
        assert!(space.rank(&[2, 1, 0]).is_err());
        assert!(space.rank(&[0, 1, 6]).is_err());
        assert!(space.rank(&[0, 1]).is_err());
    }
}
