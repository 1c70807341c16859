//! Named runtime checks accumulated over a run.

use std::collections::BTreeMap;

/// Tally of one named check.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckStat {
    pub count: u64,
    pub failures: u64,
    /// Largest observed `value - bound` (negative while every instance passed).
    pub worst: f64,
    pub first_failure: Option<String>,
}

/// Collects `value ≤ bound` checks by name. A disabled audit ignores
/// everything, so call sites need no guards beyond the cost of their inputs.
#[derive(Debug, Clone, Default)]
pub struct Audit {
    enabled: bool,
    checks: BTreeMap<String, CheckStat>,
}

impl Audit {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            checks: BTreeMap::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    /// Records `value ≤ bound`; `context` is only evaluated on the first failure.
    pub fn le(&mut self, name: &str, value: f64, bound: f64, context: impl FnOnce() -> String) {
        if !self.enabled {
            return;
        }
        let stat = self
            .checks
            .entry(name.to_string())
            .or_insert_with(|| CheckStat {
                worst: f64::NEG_INFINITY,
                ..CheckStat::default()
            });
        stat.count += 1;
        let margin = value - bound;
        if margin.is_nan() || margin > stat.worst {
            stat.worst = if margin.is_nan() {
                f64::INFINITY
            } else {
                margin
            };
        }
        if !(value <= bound) {
            stat.failures += 1;
            if stat.first_failure.is_none() {
                stat.first_failure = Some(format!("{value:.6e} > {bound:.6e}: {}", context()));
            }
        }
    }

    /// Records `lo ≤ value ≤ hi` as two checks sharing one name.
    pub fn within(
        &mut self,
        name: &str,
        value: f64,
        lo: f64,
        hi: f64,
        context: impl Fn() -> String,
    ) {
        self.le(name, value, hi, &context);
        self.le(name, lo, value, &context);
    }

    /// Folds another audit's tallies into this one.
    pub fn absorb(&mut self, other: &mut Audit) {
        for (name, s) in std::mem::take(&mut other.checks) {
            let stat = self.checks.entry(name).or_insert_with(|| CheckStat {
                worst: f64::NEG_INFINITY,
                ..CheckStat::default()
            });
            stat.count += s.count;
            stat.failures += s.failures;
            stat.worst = stat.worst.max(s.worst);
            if stat.first_failure.is_none() {
                stat.first_failure = s.first_failure;
            }
        }
    }

    pub fn checks(&self) -> impl Iterator<Item = (&str, &CheckStat)> {
        self.checks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&CheckStat> {
        self.checks.get(name)
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|s| s.failures == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_records_nothing() {
        let mut a = Audit::new(false);
        a.le("x", 2.0, 1.0, || "ctx".into());
        assert!(a.checks().next().is_none());
        assert!(a.passed());
    }

    #[test]
    fn tallies_and_merges() {
        let mut a = Audit::new(true);
        a.le("x", 0.5, 1.0, || unreachable!());
        a.le("x", 3.0, 1.0, || "first".into());
        a.le("x", 4.0, 1.0, || "second".into());
        let s = a.get("x").unwrap();
        assert_eq!((s.count, s.failures), (3, 2));
        assert_eq!(s.worst, 3.0);
        assert!(s.first_failure.as_deref().unwrap().ends_with("first"));

        let mut b = Audit::new(true);
        b.within("y", 0.3, 0.0, 1.0, || String::new());
        b.le("x", 0.0, 1.0, || String::new());
        a.absorb(&mut b);
        assert_eq!(a.get("x").unwrap().count, 4);
        assert_eq!(a.get("y").unwrap().count, 2);
        assert!(!a.passed());
    }

    #[test]
    fn nan_counts_as_failure() {
        let mut a = Audit::new(true);
        a.le("n", f64::NAN, 1.0, || "nan".into());
        assert_eq!(a.get("n").unwrap().failures, 1);
        assert_eq!(a.get("n").unwrap().worst, f64::INFINITY);
    }
}
