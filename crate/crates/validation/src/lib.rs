//! Shared reporting for the acceptance target.

use std::time::Instant;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub details: Vec<String>,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl Verdict {
    pub fn line(&self) -> String {
        let within = self.seconds <= self.budget_seconds;
        let status = if self.passed && within { "PASS" } else { "FAIL" };
        let timing = if within {
            format!("{:.1}s", self.seconds)
        } else {
            format!("{:.1}s, over the {:.0}s budget", self.seconds, self.budget_seconds)
        };
        format!("{status} criterion {}: {} [{timing}]\n    {}", self.id, self.title, self.details.join("\n    "))
    }

    pub fn ok(&self) -> bool {
        self.passed && self.seconds <= self.budget_seconds
    }
}

/// Collects named sub-checks for one criterion.
pub struct Criterion {
    id: u32,
    title: &'static str,
    budget_seconds: f64,
    start: Instant,
    passed: bool,
    details: Vec<String>,
}

impl Criterion {
    pub fn new(id: u32, title: &'static str, budget_seconds: f64) -> Self {
        Self { id, title, budget_seconds, start: Instant::now(), passed: true, details: Vec::new() }
    }

    /// Record a sub-check. The criterion passes only if every sub-check does.
    pub fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.passed &= ok;
        self.details.push(format!("[{}] {}", if ok { "ok" } else { "MISS" }, what.into()));
    }

    pub fn note(&mut self, what: impl Into<String>) {
        self.details.push(format!("      {}", what.into()));
    }

    /// Record a hard error that prevents evaluation.
    pub fn error(&mut self, what: impl std::fmt::Display) {
        self.check(false, format!("error: {what}"));
    }

    pub fn finish(self) -> Verdict {
        Verdict {
            id: self.id,
            title: self.title,
            passed: self.passed,
            details: self.details,
            seconds: self.start.elapsed().as_secs_f64(),
            budget_seconds: self.budget_seconds,
        }
    }
}

/// `|value - target| <= tol`
pub fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}
