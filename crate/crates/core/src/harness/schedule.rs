use std::fmt;

/// Learning-rate schedule over a run of `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant,
    /// Cosine decay from the base rate at step 0 to `min_lr` at the last step.
    Cosine { min_lr: f64 },
    /// Linear warmup over `warmup` steps, constant, then a linear cooldown
    /// over the last `cooldown` steps.
    WarmupCooldown { warmup: u64, cooldown: u64 },
}

impl Schedule {
    pub fn lr(&self, base: f64, step: u64, total: u64) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::Cosine { min_lr } => {
                if total <= 1 {
                    return base;
                }
                let progress = step.min(total - 1) as f64 / (total - 1) as f64;
                // Written as a convex combination so both endpoints are exact.
                let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                w * base + (1.0 - w) * min_lr
            }
            Schedule::WarmupCooldown { warmup, cooldown } => {
                let mut factor = 1.0;
                if step < warmup {
                    factor = (step + 1) as f64 / warmup as f64;
                }
                let cool_start = total.saturating_sub(cooldown);
                if cooldown > 0 && step >= cool_start {
                    factor = factor.min(total.saturating_sub(step) as f64 / cooldown as f64);
                }
                base * factor
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Cosine { .. } => "cosine",
            Schedule::WarmupCooldown { .. } => "warmup-cooldown",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_are_exact() {
        for (base, min) in [(0.1, 0.03), (3e-4, 0.0), (0.7, 1e-5)] {
            let s = Schedule::Cosine { min_lr: min };
            assert_eq!(s.lr(base, 0, 500), base);
            assert_eq!(s.lr(base, 499, 500), min);
            let mid = s.lr(base, 250, 500);
            assert!(mid < base && mid > min);
        }
    }

    #[test]
    fn warmup_is_linear() {
        let s = Schedule::WarmupCooldown { warmup: 10, cooldown: 5 };
        for k in 0..10 {
            let want = 0.2 * (k + 1) as f64 / 10.0;
            assert!((s.lr(0.2, k, 100) - want).abs() <= 1e-16);
        }
        assert_eq!(s.lr(0.2, 50, 100), 0.2);
        assert!((s.lr(0.2, 99, 100) - 0.04).abs() <= 1e-16);
    }

    #[test]
    fn constant() {
        assert_eq!(Schedule::Constant.lr(0.5, 123, 10), 0.5);
    }
}
