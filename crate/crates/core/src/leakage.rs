//! Trace and program leakage, plus the input/output and value-trace
//! comparison measures.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::dist::{ratio_string, ratio_to_f64, Rational, Secret};
use crate::error::Error;
use crate::measures::{
    conditional_min_smith, conditional_shannon, expected_min_entropy, min_entropy, shannon_entropy, Bits, Channel,
};
use crate::pks::{Pks, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyKind {
    Shannon,
    Min,
}

/// `H_min(initial) - H_min(final)` along one trace.
pub fn trace_leakage(trace: &Trace, pks: &Pks) -> Bits {
    min_entropy(pks.prior()) - min_entropy(pks.final_posterior(trace))
}

/// Expected trace leakage, computed as initial uncertainty minus the
/// expected min-entropy of the final beliefs.
pub fn program_leakage(pks: &Pks) -> Bits {
    let weighted: Vec<(Rational, _)> =
        pks.traces().into_iter().map(|t| (t.probability.clone(), pks.final_posterior(&t).clone())).collect();
    let remaining = expected_min_entropy(&weighted).expect("trace probabilities sum to 1");
    min_entropy(pks.prior()) - remaining
}

/// `sum p(T) L(T)`; agrees with [`program_leakage`] up to rounding.
pub fn program_leakage_by_traces(pks: &Pks) -> Bits {
    pks.traces().iter().map(|t| ratio_to_f64(&t.probability) * trace_leakage(t, pks)).sum()
}

/// Joint `p(key, s) = sum over traces with that key of p(T) p(s | T)`.
fn channel_by<K: Ord + Clone>(pks: &Pks, key: impl Fn(&Trace) -> K) -> Channel<K> {
    let mut joint: BTreeMap<K, BTreeMap<Secret, Rational>> = BTreeMap::new();
    for t in pks.traces() {
        let row = joint.entry(key(&t)).or_default();
        for (s, p) in pks.final_posterior(&t).iter() {
            *row.entry(s).or_insert_with(Rational::zero) += &t.probability * p;
        }
    }
    Channel::from_joint(joint).expect("trace masses sum to 1")
}

/// Channel from the secret to the final value of `O`.
pub fn io_channel(pks: &Pks) -> Channel<u64> {
    channel_by(pks, |t| *t.o_sequence.last().expect("traces are non-empty"))
}

/// Channel from the secret to the whole sequence of `O` values, for an
/// observer who does not see which thread or command ran.
pub fn trace_obs_channel(pks: &Pks) -> Channel<Vec<u64>> {
    channel_by(pks, |t| t.o_sequence.clone())
}

fn channel_leakage<K: Ord + Clone>(ch: &Channel<K>, kind: EntropyKind) -> Bits {
    match kind {
        EntropyKind::Shannon => shannon_entropy(ch.prior()) - conditional_shannon(ch),
        EntropyKind::Min => min_entropy(ch.prior()) - conditional_min_smith(ch),
    }
}

pub fn io_leakage(pks: &Pks, kind: EntropyKind) -> Bits {
    channel_leakage(&io_channel(pks), kind)
}

pub fn trace_obs_leakage(pks: &Pks, kind: EntropyKind) -> Bits {
    channel_leakage(&trace_obs_channel(pks), kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub id: usize,
    #[serde(with = "ratio_string")]
    pub probability: Rational,
    pub final_uncertainty: Bits,
    pub leakage: Bits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparisons {
    pub io_shannon: Bits,
    pub io_min: Bits,
    pub trace_obs_shannon: Bits,
    pub trace_obs_min: Bits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub program: String,
    pub scheduler: String,
    pub initial_uncertainty: Bits,
    pub traces: Vec<TraceRow>,
    pub expected_leakage: Bits,
    pub comparisons: Comparisons,
}

impl LeakageReport {
    pub fn new(pks: &Pks, program: &str, scheduler: &str) -> Result<Self, Error> {
        let initial = min_entropy(pks.prior());
        let traces: Vec<TraceRow> = pks
            .traces()
            .iter()
            .enumerate()
            .map(|(id, t)| {
                let fin = min_entropy(pks.final_posterior(t));
                TraceRow { id, probability: t.probability.clone(), final_uncertainty: fin, leakage: initial - fin }
            })
            .collect();
        let weighted: Vec<(Rational, _)> =
            pks.traces().into_iter().map(|t| (t.probability.clone(), pks.final_posterior(&t).clone())).collect();
        let expected_leakage = initial - expected_min_entropy(&weighted)?;
        let io = io_channel(pks);
        let obs = trace_obs_channel(pks);
        Ok(LeakageReport {
            program: program.to_string(),
            scheduler: scheduler.to_string(),
            initial_uncertainty: initial,
            traces,
            expected_leakage,
            comparisons: Comparisons {
                io_shannon: channel_leakage(&io, EntropyKind::Shannon),
                io_min: channel_leakage(&io, EntropyKind::Min),
                trace_obs_shannon: channel_leakage(&obs, EntropyKind::Shannon),
                trace_obs_min: channel_leakage(&obs, EntropyKind::Min),
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "program: {}", self.program);
        let _ = writeln!(out, "scheduler: {}", self.scheduler);
        let _ = writeln!(out, "initial_uncertainty: {:.6}", self.initial_uncertainty);
        let _ = writeln!(out, "traces: {}", self.traces.len());
        for t in &self.traces {
            let _ = writeln!(
                out,
                "  #{:<4} p={:<12} final_uncertainty={:.6} leakage={:.6}",
                t.id,
                crate::dist::format_ratio(&t.probability),
                t.final_uncertainty,
                t.leakage
            );
        }
        let _ = writeln!(out, "expected_leakage: {:.6}", self.expected_leakage);
        let c = &self.comparisons;
        let _ = writeln!(out, "comparisons:");
        let _ = writeln!(out, "  io_shannon: {:.6}", c.io_shannon);
        let _ = writeln!(out, "  io_min: {:.6}", c.io_min);
        let _ = writeln!(out, "  trace_obs_shannon: {:.6}", c.trace_obs_shannon);
        let _ = writeln!(out, "  trace_obs_min: {:.6}", c.trace_obs_min);
        out
    }
}
