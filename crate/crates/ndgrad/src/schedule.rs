//! 1-cycle learning-rate schedule: linear warmup from zero to `max_lr`,
//! then cosine annealing down to `max_lr / final_div`.

use std::f64::consts::PI;

use crate::error::{NdError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycleSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub final_div: f64,
}

impl OneCycleSchedule {
    pub fn new(max_lr: f64, total_steps: usize, warmup_fraction: f64) -> Result<Self> {
        if !(max_lr > 0.0 && max_lr.is_finite()) {
            return Err(NdError::Invalid(format!("max_lr must be positive, got {max_lr}")));
        }
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            return Err(NdError::Invalid(format!(
                "warmup fraction must be in (0,1), got {warmup_fraction}"
            )));
        }
        if total_steps == 0 {
            return Err(NdError::Invalid("schedule needs at least one step".into()));
        }
        Ok(Self {
            max_lr,
            total_steps,
            warmup_fraction,
            final_div: 1000.0,
        })
    }

    pub fn warmup_steps(&self) -> f64 {
        self.warmup_fraction * self.total_steps as f64
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(NdError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let s = step as f64;
        let warm = self.warmup_steps();
        if s <= warm {
            return Ok(self.max_lr * s / warm);
        }
        let last = (self.total_steps - 1) as f64;
        let min_lr = self.max_lr / self.final_div;
        if last <= warm {
            return Ok(min_lr);
        }
        let progress = (s - warm) / (last - warm);
        Ok(min_lr + (self.max_lr - min_lr) * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_peak_and_endpoints() {
        let s = OneCycleSchedule::new(1e-3, 100, 0.1).unwrap();
        assert_eq!(s.lr(0).unwrap(), 0.0);
        assert!((s.lr(10).unwrap() - 1e-3).abs() < 1e-18);
        assert!((s.lr(5).unwrap() - 0.5e-3).abs() < 1e-18);
        let end = s.lr(99).unwrap();
        assert!((end - 1e-6).abs() / 1e-6 < 0.01);
        assert!(s.lr(100).is_err());
    }

    #[test]
    fn positive_after_start_and_monotone_decay() {
        let s = OneCycleSchedule::new(2e-3, 57, 0.1).unwrap();
        let lrs: Vec<f64> = (0..57).map(|i| s.lr(i).unwrap()).collect();
        assert!(lrs[1..].iter().all(|&l| l > 0.0));
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        assert!(peak <= 2e-3 + 1e-18);
        let peak_at = lrs.iter().position(|&l| l == peak).unwrap();
        assert!(lrs[peak_at..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[..=peak_at].windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OneCycleSchedule::new(0.0, 10, 0.1).is_err());
        assert!(OneCycleSchedule::new(1e-3, 10, 1.0).is_err());
        assert!(OneCycleSchedule::new(1e-3, 0, 0.1).is_err());
    }
}
