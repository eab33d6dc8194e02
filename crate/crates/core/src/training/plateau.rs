use serde::{Deserialize, Serialize};

/// Reduce-on-plateau learning-rate rule with early stopping after a fixed
/// number of reductions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub max_reductions: usize,
    pub best: f64,
    pub since_improvement: usize,
    pub reductions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlateauStep {
    /// The loss was strictly below every earlier one.
    pub improved: bool,
    pub reduced: bool,
    /// Training ends after this epoch and the best parameters are restored.
    pub stop: bool,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, max_reductions: usize) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            max_reductions,
            best: f64::INFINITY,
            since_improvement: 0,
            reductions: 0,
        }
    }

    /// Feed one epoch's validation loss.
    pub fn observe(&mut self, loss: f64) -> PlateauStep {
        let improved = loss < self.best;
        let mut reduced = false;
        if improved {
            self.best = loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr *= self.factor;
                self.reductions += 1;
                self.since_improvement = 0;
                reduced = true;
            }
        }
        PlateauStep {
            improved,
            reduced,
            stop: self.reductions >= self.max_reductions,
        }
    }
}
