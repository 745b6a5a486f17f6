//! Entropy measures in bits.
//!
//! Probability mass is carried as exact rationals up to the point where a
//! logarithm is taken. Callers comparing results should allow [`TOLERANCE`].

use std::collections::BTreeMap;

use num_traits::{One, Zero};

use crate::dist::{format_ratio, log2_ratio, ratio_to_f64, Rational, Secret, SecretDist};
use crate::error::Error;

/// An information quantity in bits.
pub type Bits = f64;

/// Comparison tolerance for values in bits.
pub const TOLERANCE: f64 = 1e-9;

/// `-log2 p`, with `-log2 1` reported as a clean `0.0`.
fn neg_log2(p: &Rational) -> Bits {
    if p.is_one() {
        0.0
    } else {
        -log2_ratio(p)
    }
}

/// Shannon entropy `-sum p log p`. Absent entries contribute nothing.
pub fn shannon_entropy(d: &SecretDist) -> Bits {
    d.iter().map(|(_, p)| ratio_to_f64(p) * neg_log2(p)).sum::<f64>().max(0.0)
}

/// Rényi min-entropy `-log2 max p`.
pub fn min_entropy(d: &SecretDist) -> Bits {
    neg_log2(&d.max_prob())
}

/// Expected min-entropy over weighted distributions, `sum w_i H_min(d_i)`.
/// The weights must sum to exactly 1.
pub fn expected_min_entropy(weighted: &[(Rational, SecretDist)]) -> Result<Bits, Error> {
    let total: Rational = weighted.iter().map(|(w, _)| w).sum();
    if !total.is_one() {
        return Err(Error::NotNormalized(format_ratio(&total)));
    }
    Ok(weighted.iter().map(|(w, d)| ratio_to_f64(w) * min_entropy(d)).sum())
}

/// A channel from the secret to observable outcomes, stored as the exact
/// joint distribution `p(o, s)`. Outcomes iterate in their `Ord` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel<O: Ord> {
    prior: SecretDist,
    joint: BTreeMap<O, BTreeMap<Secret, Rational>>,
}

impl<O: Ord + Clone> Channel<O> {
    /// Builds a channel from its prior and conditional rows `p(o | s)`.
    /// Every secret in the prior's support needs a row summing to 1.
    pub fn from_rows(prior: SecretDist, rows: &BTreeMap<O, BTreeMap<Secret, Rational>>) -> Result<Self, Error> {
        let mut row_sums: BTreeMap<Secret, Rational> = BTreeMap::new();
        let mut joint: BTreeMap<O, BTreeMap<Secret, Rational>> = BTreeMap::new();
        for (o, row) in rows {
            for (s, p) in row {
                if p.is_zero() {
                    continue;
                }
                *row_sums.entry(*s).or_insert_with(Rational::zero) += p;
                let ps = prior.prob(*s);
                if !ps.is_zero() {
                    joint.entry(o.clone()).or_default().insert(*s, ps * p);
                }
            }
        }
        for s in prior.support() {
            let sum = row_sums.get(&s).cloned().unwrap_or_else(Rational::zero);
            if !sum.is_one() {
                return Err(Error::NotNormalized(format!("{} (row of secret {s})", format_ratio(&sum))));
            }
        }
        Ok(Channel { prior, joint })
    }

    /// Builds a channel from a joint distribution `p(o, s)` summing to 1.
    /// The prior is its secret marginal.
    pub fn from_joint(joint: BTreeMap<O, BTreeMap<Secret, Rational>>) -> Result<Self, Error> {
        let mut marginal: BTreeMap<Secret, Rational> = BTreeMap::new();
        for row in joint.values() {
            for (s, p) in row {
                *marginal.entry(*s).or_insert_with(Rational::zero) += p;
            }
        }
        let prior = SecretDist::from_probs(marginal)?;
        let joint = joint
            .into_iter()
            .map(|(o, row)| (o, row.into_iter().filter(|(_, p)| !p.is_zero()).collect::<BTreeMap<_, _>>()))
            .filter(|(_, row)| !row.is_empty())
            .collect();
        Ok(Channel { prior, joint })
    }

    pub fn prior(&self) -> &SecretDist {
        &self.prior
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &O> {
        self.joint.keys()
    }

    pub fn outcome_prob(&self, o: &O) -> Rational {
        self.joint.get(o).map(|row| row.values().sum()).unwrap_or_else(Rational::zero)
    }

    /// `p(o | s)`, zero when `s` is outside the prior's support.
    pub fn conditional(&self, o: &O, s: Secret) -> Rational {
        let ps = self.prior.prob(s);
        if ps.is_zero() {
            return Rational::zero();
        }
        self.joint.get(o).and_then(|row| row.get(&s)).map(|j| j / ps).unwrap_or_else(Rational::zero)
    }

    /// Posterior `p(s | o)` for an outcome of positive probability.
    pub fn posterior(&self, o: &O) -> Result<SecretDist, Error> {
        let row = self.joint.get(o).ok_or(Error::ZeroMassEvent)?;
        SecretDist::from_weights(row.iter().map(|(s, p)| (*s, p.clone())))
    }

    /// Expected posterior vulnerability `sum_o max_s p(o, s)`, exactly.
    pub fn posterior_vulnerability(&self) -> Rational {
        self.joint.values().map(|row| row.values().max().cloned().unwrap_or_else(Rational::zero)).sum()
    }
}

/// `H(S | O) = sum_o p(o) H(S | O = o)`.
pub fn conditional_shannon<O: Ord + Clone>(ch: &Channel<O>) -> Bits {
    let mut h = 0.0;
    for row in ch.joint.values() {
        let po: Rational = row.values().sum();
        let post = SecretDist::from_weights(row.iter().map(|(s, p)| (*s, p.clone()))).expect("rows are non-empty");
        h += ratio_to_f64(&po) * shannon_entropy(&post);
    }
    h.max(0.0)
}

/// Conditional min-entropy in the vulnerability form:
/// `-log2 sum_o p(o) max_s p(s | o)`.
pub fn conditional_min_smith<O: Ord + Clone>(ch: &Channel<O>) -> Bits {
    neg_log2(&ch.posterior_vulnerability())
}
