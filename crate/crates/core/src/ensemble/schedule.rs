use serde::{Deserialize, Serialize};

/// Step-decayed base rate, switching to cosine cyclic annealing from
/// `cyclic_start` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_factor: f64,
    pub decay_interval: u64,
    pub period: u64,
    /// First iteration of the first cycle; `None` disables cycling.
    pub cyclic_start: Option<u64>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            decay_factor: 1.0,
            decay_interval: u64::MAX,
            period: 1,
            cyclic_start: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base > 0.0) {
            return Err(format!("base learning rate must be positive, got {}", self.base));
        }
        if !(self.decay_factor > 0.0) {
            return Err(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        if self.decay_interval == 0 {
            return Err("decay_interval must be at least 1".into());
        }
        if self.period == 0 {
            return Err("period must be at least 1".into());
        }
        if self.cyclic_start == Some(0) {
            return Err("cyclic_start counts iterations from 1".into());
        }
        Ok(())
    }

    /// Base rate after step decay at iteration `t` (1-based).
    pub fn decayed_base(&self, t: u64) -> f64 {
        let k = (t.max(1) - 1) / self.decay_interval;
        self.base * self.decay_factor.powi(k.min(i32::MAX as u64) as i32)
    }

    /// Whether `t` starts a cycle (a natural snapshot boundary).
    pub fn is_cycle_start(&self, t: u64) -> bool {
        matches!(self.cyclic_start, Some(s) if t >= s && (t - s) % self.period == 0)
    }

    /// Whether `t` ends a cycle.
    pub fn is_cycle_end(&self, t: u64) -> bool {
        matches!(self.cyclic_start, Some(s) if t >= s && (t - s + 1) % self.period == 0)
    }
}

/// `α(t) = (α₀/2)(cos(π·mod(t − t_c, T)/T) + 1)` in the cyclic regime, where
/// `t_c` is the cyclic start (the paper's `mod(t−1, T)` for `t_c = 1`), and
/// the step-decayed `α₀` before it.
pub fn lr_at(t: u64, sched: &LrSchedule) -> f64 {
    assert!(t >= 1, "iterations count from 1");
    let a0 = sched.decayed_base(t);
    match sched.cyclic_start {
        Some(start) if t >= start => {
            let phase = ((t - start) % sched.period) as f64 / sched.period as f64;
            a0 / 2.0 * ((std::f64::consts::PI * phase).cos() + 1.0)
        }
        _ => a0,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cyclic(start: u64) -> LrSchedule {
        LrSchedule {
            base: 1e-3,
            decay_factor: 0.5,
            decay_interval: 10_000,
            period: 2000,
            cyclic_start: Some(start),
        }
    }

    #[test]
    fn cycle_landmarks() {
        let s = cyclic(1);
        assert_eq!(lr_at(1, &s), 1e-3);
        assert_eq!(lr_at(2001, &s), 1e-3);
        assert!((lr_at(1001, &s) - 5e-4).abs() < 1e-12 * 1e-3);
        let tail = 1e-3 / 2.0 * ((std::f64::consts::PI * 0.9995).cos() + 1.0);
        assert_eq!(lr_at(2000, &s), tail);
        assert!((tail - 6.1685e-10).abs() < 1e-13);
    }

    #[test]
    fn decay_before_cycling() {
        let s = cyclic(30_001);
        assert_eq!(lr_at(10_000, &s), 1e-3);
        assert_eq!(lr_at(10_001, &s), 5e-4);
        assert_eq!(lr_at(25_000, &s), 2.5e-4);
        assert_eq!(lr_at(30_001, &s), 1.25e-4);
        assert!(s.is_cycle_start(32_001) && s.is_cycle_end(32_000));
        assert_eq!(lr_at(7, &LrSchedule::constant(0.1)), 0.1);
    }

    proptest! {
        #[test]
        fn periodic_within_a_decay_level(t in 1u64..8000) {
            let s = LrSchedule { decay_interval: u64::MAX, ..cyclic(1) };
            prop_assert_eq!(lr_at(t, &s), lr_at(t + s.period, &s));
            let next = lr_at(t + 1, &s);
            if !s.is_cycle_start(t + 1) {
                prop_assert!(next <= lr_at(t, &s));
                prop_assert!((lr_at(t, &s) - next) < 1e-3 * std::f64::consts::PI / s.period as f64);
            }
        }
    }
}
