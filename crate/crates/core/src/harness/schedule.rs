/// Cumulative environment steps the actor must have executed before learner step `t`
/// (1-based): `ceil(ratio * t)`.
///
/// A tiny tolerance keeps products that are integral in exact arithmetic from rounding up.
pub fn env_steps_due(ratio: f64, t: u64) -> u64 {
    let x = ratio * t as f64;
    (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as u64
}

/// Tracks how many environment steps have been run against the ratio budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheduler {
    ratio: f64,
    env_steps: u64,
}

impl Scheduler {
    pub fn new(ratio: f64) -> Self {
        assert!(ratio > 0.0, "ratio must be positive");
        Self { ratio, env_steps: 0 }
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Number of environment steps to run before learner step `t`; records them as done.
    pub fn steps_before(&mut self, t: u64) -> u64 {
        let due = env_steps_due(self.ratio, t);
        let n = due.saturating_sub(self.env_steps);
        self.env_steps = self.env_steps.max(due);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(ratio: f64, budget: u64) -> u64 {
        let mut s = Scheduler::new(ratio);
        (1..=budget).map(|t| s.steps_before(t)).sum()
    }

    #[test]
    fn by_hand_examples() {
        assert_eq!(env_steps_due(2.5, 3), 8);
        assert_eq!(total(1.0, 100), 100);
        assert_eq!(total(0.5, 100), 50);
        assert_eq!(env_steps_due(0.1, 30), 3);
        assert_eq!(env_steps_due(0.3, 10), 3);
    }

    #[test]
    fn one_to_one_interleaving() {
        let mut s = Scheduler::new(1.0);
        assert!((1..=100).all(|t| s.steps_before(t) == 1));
    }

    #[test]
    fn never_outruns_the_ratio() {
        for &ratio in &[0.1, 0.37, 1.0, 2.5, 7.0] {
            let mut s = Scheduler::new(ratio);
            for t in 1..=500u64 {
                s.steps_before(t);
                let exact = ratio * t as f64;
                assert!(s.env_steps() as f64 >= exact - 1e-6);
                assert!((s.env_steps() as f64) < exact + 1.0);
            }
        }
    }
}
