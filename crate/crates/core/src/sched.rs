//! Schedulers: policies that pick which enabled thread runs next.
//!
//! Threads are named by the left-to-right position of their redex in the
//! program's parallel structure at decision time. A policy sees only the
//! public history (the threads chosen so far and the `O` values they
//! produced), never the secret or the attacker's belief.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{format_ratio, from_count, parse_ratio, Rational};
use crate::error::Error;

/// One past scheduling decision as the policy sees it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryStep {
    pub thread: usize,
    /// Public value right after the step.
    pub o_value: u64,
}

pub type Decision = Vec<(Rational, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerPolicy {
    /// Every enabled thread equally likely.
    Uniform,
    /// Always the first enabled thread in `order`; threads not listed rank
    /// after those that are, by position.
    Priority(Vec<usize>),
    /// History-dependent weights read from a table.
    Table { name: String, table: PolicyTable },
}

pub fn uniform_scheduler() -> SchedulerPolicy {
    SchedulerPolicy::Uniform
}

pub fn priority_scheduler(order: Vec<usize>) -> SchedulerPolicy {
    SchedulerPolicy::Priority(order)
}

pub fn table_scheduler(table: PolicyTable) -> Result<SchedulerPolicy, Error> {
    table.validate()?;
    Ok(SchedulerPolicy::Table { name: "table".into(), table })
}

impl SchedulerPolicy {
    /// Parses the command-line form: `uniform`, `priority:L,R` (or any list
    /// of thread positions such as `priority:1,0`), or `table:PATH`.
    pub fn from_cli(text: &str) -> Result<Self, Error> {
        let text = text.trim();
        if text == "uniform" {
            return Ok(SchedulerPolicy::Uniform);
        }
        if let Some(order) = text.strip_prefix("priority:") {
            let mut seen = BTreeSet::new();
            let mut positions = Vec::new();
            for item in order.split(',') {
                let pos = match item.trim() {
                    "L" | "l" | "left" => 0,
                    "R" | "r" | "right" => 1,
                    n => n
                        .parse::<usize>()
                        .map_err(|_| Error::Scheduler(format!("bad thread position `{n}` in `{text}`")))?,
                };
                if !seen.insert(pos) {
                    return Err(Error::Scheduler(format!("thread position {pos} repeated in `{text}`")));
                }
                positions.push(pos);
            }
            return Ok(SchedulerPolicy::Priority(positions));
        }
        if let Some(path) = text.strip_prefix("table:") {
            let table = PolicyTable::load(Path::new(path))?;
            table.validate()?;
            return Ok(SchedulerPolicy::Table { name: text.to_string(), table });
        }
        Err(Error::Scheduler(format!("unknown scheduler `{text}` (expected uniform, priority:L,R or table:PATH)")))
    }

    pub fn name(&self) -> String {
        match self {
            SchedulerPolicy::Uniform => "uniform".into(),
            SchedulerPolicy::Priority(order) => {
                let items: Vec<String> = order.iter().map(usize::to_string).collect();
                format!("priority:{}", items.join(","))
            }
            SchedulerPolicy::Table { name, .. } => name.clone(),
        }
    }

    /// Distribution over the enabled threads given the public history.
    /// The result is checked: weights positive, summing to exactly 1, and
    /// naming only enabled threads.
    pub fn decide(&self, history: &[HistoryStep], enabled: &[usize]) -> Result<Decision, Error> {
        if enabled.is_empty() {
            return Ok(Vec::new());
        }
        let decision = match self {
            SchedulerPolicy::Uniform => {
                let p = Rational::one() / from_count(enabled.len());
                enabled.iter().map(|t| (p.clone(), *t)).collect()
            }
            SchedulerPolicy::Priority(order) => {
                let pick = order
                    .iter()
                    .find(|t| enabled.contains(t))
                    .or_else(|| enabled.iter().min())
                    .copied()
                    .expect("enabled is non-empty");
                vec![(Rational::one(), pick)]
            }
            SchedulerPolicy::Table { table, .. } => table.decide(history, enabled)?,
        };
        check_decision(&decision, enabled, history)?;
        Ok(decision.into_iter().filter(|(p, _)| !p.is_zero()).collect())
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn history_text(history: &[HistoryStep]) -> String {
    let items: Vec<String> = history.iter().map(|h| h.thread.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn check_decision(decision: &Decision, enabled: &[usize], history: &[HistoryStep]) -> Result<(), Error> {
    let mut seen = BTreeSet::new();
    for (p, t) in decision {
        if p.is_negative() {
            return Err(Error::Scheduler(format!("negative weight for thread {t} after {}", history_text(history))));
        }
        if !enabled.contains(t) {
            return Err(Error::Scheduler(format!(
                "thread {t} is not enabled after {} (enabled: {enabled:?})",
                history_text(history)
            )));
        }
        if !seen.insert(*t) {
            return Err(Error::Scheduler(format!("thread {t} listed twice")));
        }
    }
    let total: Rational = decision.iter().map(|(p, _)| p).sum();
    if !total.is_one() {
        return Err(Error::Scheduler(format!(
            "weights sum to {} after {}",
            format_ratio(&total),
            history_text(history)
        )));
    }
    Ok(())
}

/// Thread weights keyed by position. Serialized as `{"0": "3/4", "1": "1/4"}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights(pub BTreeMap<usize, Rational>);

impl Serialize for Weights {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<String, String> = self.0.iter().map(|(k, v)| (k.to_string(), format_ratio(v))).collect();
        m.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Weights {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = BTreeMap::<String, String>::deserialize(deserializer)?;
        let mut out = BTreeMap::new();
        for (k, v) in raw {
            let t: usize = k.parse().map_err(|_| D::Error::custom(format!("bad thread index `{k}`")))?;
            out.insert(t, parse_ratio(&v).map_err(D::Error::custom)?);
        }
        Ok(Weights(out))
    }
}

impl Weights {
    fn total(&self) -> Rational {
        self.0.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRule {
    /// Exact sequence of threads chosen so far at which this rule applies.
    pub prefix: Vec<usize>,
    pub weights: Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DefaultRule {
    /// The string `"uniform"`.
    Named(String),
    /// Fixed weights, restricted to the enabled threads and renormalized.
    Weighted { weights: Weights },
}

/// A table-driven policy. Rules match the history of chosen threads
/// exactly; decisions at histories with no rule use `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    #[serde(default)]
    pub rules: Vec<TableRule>,
    pub default: DefaultRule,
}

impl PolicyTable {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scheduler(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let table: PolicyTable =
            serde_json::from_str(text).map_err(|e| Error::Scheduler(format!("bad scheduler table: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut prefixes = BTreeSet::new();
        for rule in &self.rules {
            if !prefixes.insert(rule.prefix.clone()) {
                return Err(Error::Scheduler(format!("duplicate rule for prefix {:?}", rule.prefix)));
            }
            if rule.weights.0.values().any(Signed::is_negative) {
                return Err(Error::Scheduler(format!("negative weight in rule {:?}", rule.prefix)));
            }
            let total = rule.weights.total();
            if !total.is_one() {
                return Err(Error::Scheduler(format!(
                    "weights of rule {:?} sum to {}, not 1",
                    rule.prefix,
                    format_ratio(&total)
                )));
            }
        }
        match &self.default {
            DefaultRule::Named(n) if n == "uniform" => Ok(()),
            DefaultRule::Named(n) => Err(Error::Scheduler(format!("unknown default rule `{n}`"))),
            DefaultRule::Weighted { weights } => {
                if weights.0.values().any(Signed::is_negative) {
                    return Err(Error::Scheduler("negative weight in default rule".into()));
                }
                if !weights.total().is_one() {
                    return Err(Error::Scheduler(format!(
                        "default weights sum to {}, not 1",
                        format_ratio(&weights.total())
                    )));
                }
                Ok(())
            }
        }
    }

    fn decide(&self, history: &[HistoryStep], enabled: &[usize]) -> Result<Decision, Error> {
        let chosen: Vec<usize> = history.iter().map(|h| h.thread).collect();
        if let Some(rule) = self.rules.iter().find(|r| r.prefix == chosen) {
            // strict: a rule may only name threads enabled at its prefix
            return Ok(rule.weights.0.iter().map(|(t, p)| (p.clone(), *t)).collect());
        }
        match &self.default {
            DefaultRule::Named(_) => SchedulerPolicy::Uniform.decide(history, enabled),
            DefaultRule::Weighted { weights } => {
                let kept: Vec<(Rational, usize)> =
                    weights.0.iter().filter(|(t, _)| enabled.contains(t)).map(|(t, p)| (p.clone(), *t)).collect();
                let mass: Rational = kept.iter().map(|(p, _)| p).sum();
                if mass.is_zero() {
                    return Err(Error::Scheduler(format!(
                        "default weights give no mass to enabled threads {enabled:?} after {}",
                        history_text(history)
                    )));
                }
                Ok(kept.into_iter().map(|(p, t)| (p / &mass, t)).collect())
            }
        }
    }
}
