//! Pass/fail bookkeeping for the end-to-end acceptance run.

use std::fmt::Display;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Collects one line per check and prints it as soon as it is recorded.
#[derive(Debug, Default)]
pub struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, criterion: u8, name: &str, passed: bool, detail: impl Display) -> bool {
        let o = Outcome {
            criterion,
            name: name.to_string(),
            passed,
            detail: detail.to_string(),
        };
        println!(
            "{} [{}] {}: {}",
            if passed { "PASS" } else { "FAIL" },
            o.criterion,
            o.name,
            o.detail
        );
        self.outcomes.push(o);
        passed
    }

    /// Reported but never gated.
    pub fn info(&self, criterion: u8, name: &str, detail: impl Display) {
        println!("INFO [{criterion}] {name}: {detail}");
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failures(&self) -> Vec<&Outcome> {
        self.outcomes.iter().filter(|o| !o.passed).collect()
    }

    /// Prints the per-criterion summary; true when every check passed.
    pub fn summarize(&self) -> bool {
        let mut criteria: Vec<u8> = self.outcomes.iter().map(|o| o.criterion).collect();
        criteria.dedup();
        println!();
        for c in &criteria {
            let all = self.outcomes.iter().filter(|o| o.criterion == *c);
            let ok = all.clone().all(|o| o.passed);
            println!("criterion {c}: {}", if ok { "PASS" } else { "FAIL" });
        }
        let failed = self.failures();
        println!(
            "{} of {} checks passed",
            self.outcomes.len() - failed.len(),
            self.outcomes.len()
        );
        failed.is_empty()
    }
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}
