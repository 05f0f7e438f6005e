use crate::sim::SubtaskOutcome;

use super::BenchError;

/// Per-sub-task attempt and success counts. Attempts of sub-task `i > 0` are
/// the successes of sub-task `i - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuccessTable {
    pub names: Vec<String>,
    pub episodes: usize,
    pub successes: Vec<usize>,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reduce(num: u128, den: u128) -> (u128, u128) {
    if num == 0 {
        return (0, 1);
    }
    let g = gcd(num, den);
    (num / g, den / g)
}

impl SuccessTable {
    pub fn empty(names: Vec<String>) -> Self {
        let n = names.len();
        Self {
            names,
            episodes: 0,
            successes: vec![0; n],
        }
    }

    /// Builds the table from per-episode outcome lists.
    pub fn from_outcomes(names: Vec<String>, outcomes: &[Vec<SubtaskOutcome>]) -> Result<Self, BenchError> {
        let mut successes = vec![0; names.len()];
        for (e, o) in outcomes.iter().enumerate() {
            if o.len() != names.len() {
                return Err(BenchError::Invalid(format!(
                    "episode {e}: {} outcomes for {} sub-tasks",
                    o.len(),
                    names.len()
                )));
            }
            let done = o.iter().take_while(|x| **x == SubtaskOutcome::Success).count();
            let rest_ok = match o.get(done) {
                None => true,
                Some(SubtaskOutcome::Failure) => o[done + 1..].iter().all(|x| *x == SubtaskOutcome::NotAttempted),
                Some(_) => false,
            };
            if !rest_ok {
                return Err(BenchError::Invalid(format!("episode {e}: inconsistent outcomes")));
            }
            for s in successes.iter_mut().take(done) {
                *s += 1;
            }
        }
        Ok(Self {
            names,
            episodes: outcomes.len(),
            successes,
        })
    }

    /// Builds the table from success counts, which must not increase.
    pub fn from_counts(names: Vec<String>, episodes: usize, successes: &[usize]) -> Result<Self, BenchError> {
        if successes.len() != names.len() {
            return Err(BenchError::Invalid("one count per sub-task".into()));
        }
        let mut prev = episodes;
        for &s in successes {
            if s > prev {
                return Err(BenchError::Invalid("successes exceed attempts".into()));
            }
            prev = s;
        }
        Ok(Self {
            names,
            episodes,
            successes: successes.to_vec(),
        })
    }

    pub fn attempts(&self, i: usize) -> usize {
        if i == 0 {
            self.episodes
        } else {
            self.successes[i - 1]
        }
    }

    /// Conditional success of sub-task `i` in percent; `None` without attempts.
    pub fn conditional(&self, i: usize) -> Option<f64> {
        let a = self.attempts(i);
        (a > 0).then(|| 100.0 * self.successes[i] as f64 / a as f64)
    }

    /// Product of the conditional rates as a reduced fraction. A sub-task
    /// without attempts contributes a zero factor.
    pub fn product_fraction(&self) -> (u128, u128) {
        let mut frac = (1u128, 1u128);
        for i in 0..self.names.len() {
            let a = self.attempts(i) as u128;
            if a == 0 {
                return (0, 1);
            }
            frac = reduce(frac.0 * self.successes[i] as u128, frac.1 * a);
        }
        frac
    }

    /// Fully successful episodes over episodes, reduced.
    pub fn count_fraction(&self) -> (u128, u128) {
        if self.episodes == 0 {
            return (0, 1);
        }
        reduce(self.whole_count() as u128, self.episodes as u128)
    }

    pub fn whole_count(&self) -> usize {
        if self.names.is_empty() {
            self.episodes
        } else {
            self.successes[self.names.len() - 1]
        }
    }

    /// Whole-task success in percent, from the conditional-rate product.
    pub fn whole_rate(&self) -> f64 {
        let (n, d) = self.product_fraction();
        100.0 * n as f64 / d as f64
    }

    /// True when the conditional-rate product equals the direct count.
    pub fn product_identity_holds(&self) -> bool {
        self.product_fraction() == self.count_fraction()
    }

    /// Episodes that completed exactly `j` sub-tasks, for `j = 0..=n`.
    pub fn progress_histogram(&self) -> Vec<usize> {
        let n = self.names.len();
        (0..=n)
            .map(|j| {
                let reached = if j == 0 { self.episodes } else { self.successes[j - 1] };
                let next = if j == n { 0 } else { self.successes[j] };
                reached - next
            })
            .collect()
    }

    pub fn mean_progress(&self) -> f64 {
        if self.episodes == 0 {
            return 0.0;
        }
        self.successes.iter().sum::<usize>() as f64 / self.episodes as f64
    }

    /// Adds another table's counts (same sub-tasks).
    pub fn merge(&mut self, other: &SuccessTable) {
        self.episodes += other.episodes;
        for (a, b) in self.successes.iter_mut().zip(&other.successes) {
            *a += b;
        }
    }
}
