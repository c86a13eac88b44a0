/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping. A loss improves when it is below the
/// best seen so far by at least `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping { patience, min_delta, best: f64::INFINITY, best_epoch: 0, epoch: 0, stale: 0 }
    }

    /// Treats `loss` as the score before epoch 1, so a first epoch that does
    /// not beat it counts against patience.
    pub fn set_baseline(&mut self, loss: f64) {
        self.best = loss;
    }

    /// Records the loss of the next epoch (the first call is epoch 1).
    pub fn observe(&mut self, loss: f64) -> Verdict {
        self.epoch += 1;
        if loss < self.best - self.min_delta || (self.best.is_infinite() && loss.is_finite()) {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_seen(&self) -> usize {
        self.epoch
    }
}

/// Epoch at which training on `losses` stops, or `losses.len()` if it runs
/// out first.
pub fn stopping_epoch(losses: &[f64], patience: usize, min_delta: f64) -> usize {
    let mut es = EarlyStopping::new(patience, min_delta);
    for &l in losses {
        if es.observe(l) == Verdict::Stop {
            return es.epochs_seen();
        }
    }
    losses.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_losses_stop_after_six() {
        assert_eq!(stopping_epoch(&[3.0; 6], 5, 1e-5), 6);
        assert_eq!(stopping_epoch(&[3.0; 10], 5, 1e-5), 6);
        assert_eq!(stopping_epoch(&[3.0; 5], 5, 1e-5), 5);
    }

    #[test]
    fn tiny_gains_are_not_improvements() {
        let l = [3.0, 3.0 - 1e-6, 3.0 - 2e-6, 2.0];
        let mut es = EarlyStopping::new(2, 1e-5);
        assert_eq!(es.observe(l[0]), Verdict::Improved);
        assert_eq!(es.observe(l[1]), Verdict::Continue);
        assert_eq!(es.observe(l[2]), Verdict::Stop);
        assert_eq!(es.best_epoch(), 1);
    }

    // Independent restatement: stop at the first epoch e such that none of
    // the last `patience` losses beat the running minimum before them.
    fn oracle(losses: &[f64], patience: usize, min_delta: f64) -> usize {
        let mut best = f64::INFINITY;
        let mut last_gain = 0;
        for (i, &l) in losses.iter().enumerate() {
            let e = i + 1;
            if e == 1 || l < best - min_delta {
                best = l;
                last_gain = e;
            }
            if e - last_gain >= patience {
                return e;
            }
        }
        losses.len()
    }

    proptest! {
        #[test]
        fn matches_oracle(
            losses in prop::collection::vec(prop::sample::select(vec![1.0, 1.5, 2.0, 2.00001, 2.5, 3.0]), 1..30),
            patience in 1usize..=5,
        ) {
            prop_assert_eq!(stopping_epoch(&losses, patience, 1e-5), oracle(&losses, patience, 1e-5));
        }
    }
}
