use std::collections::VecDeque;

/// Moving-average watchdog on per-episode success rates.
///
/// Fires when the mean over the last `window` episodes drops below `ratio` times the
/// best full-window mean seen since the last reset.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationDetector {
    window: usize,
    ratio: f64,
    recent: VecDeque<f64>,
    best: Option<f64>,
}

impl DegradationDetector {
    pub fn new(window: usize, ratio: f64) -> Self {
        DegradationDetector {
            window: window.max(1),
            ratio,
            recent: VecDeque::with_capacity(window),
            best: None,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn recent(&self) -> impl Iterator<Item = f64> + '_ {
        self.recent.iter().copied()
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Current moving average, once a full window has been seen.
    pub fn moving_average(&self) -> Option<f64> {
        (self.recent.len() == self.window).then(|| self.recent.iter().sum::<f64>() / self.window as f64)
    }

    /// Feeds one episode's success rate; true when degradation is detected.
    pub fn push(&mut self, success_rate: f64) -> bool {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(success_rate);
        let Some(avg) = self.moving_average() else {
            return false;
        };
        let best = self.best.map_or(avg, |b| b.max(avg));
        self.best = Some(best);
        avg < self.ratio * best
    }

    pub fn reset(&mut self) {
        self.recent.clear();
        self.best = None;
    }

    /// Rebuilds a detector from saved fields.
    pub fn from_parts(window: usize, ratio: f64, recent: Vec<f64>, best: Option<f64>) -> Self {
        let mut d = DegradationDetector::new(window, ratio);
        let skip = recent.len().saturating_sub(d.window);
        d.recent.extend(recent.into_iter().skip(skip));
        d.best = best;
        d
    }
}

/// Replays a success-rate series through a fresh detector; true if it fires anywhere.
pub fn detect_degradation(rates: &[f64], window: usize, ratio: f64) -> bool {
    let mut d = DegradationDetector::new(window, ratio);
    rates.iter().any(|&r| d.push(r))
}
