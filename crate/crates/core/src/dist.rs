//! Exact finite distributions over secret values.
//!
//! Every probability in the pipeline is a [`Rational`] backed by big
//! integers; floating point only appears once an entropy is evaluated.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Reduced fraction over arbitrary-precision integers.
pub type Rational = BigRational;

/// Secret values are non-negative integers.
pub type Secret = u64;

pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn from_count(n: usize) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Renders a rational as `"num/den"`, or just `"num"` when the denominator is 1.
pub fn format_ratio(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"num/den"` or an integer literal. Rejects zero denominators.
pub fn parse_ratio(text: &str) -> Result<Rational, Error> {
    let bad = || Error::BadRational(text.to_string());
    let text = text.trim();
    match text.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Rational::new(n, d))
        }
        None => {
            let n: BigInt = text.parse().map_err(|_| bad())?;
            Ok(Rational::from_integer(n))
        }
    }
}

/// base-2 logarithm of a positive rational, accurate for huge numerators
/// and denominators where a plain `to_f64` would underflow.
pub fn log2_ratio(r: &Rational) -> f64 {
    debug_assert!(r.is_positive());
    log2_bigint(r.numer()) - log2_bigint(r.denom())
}

fn log2_bigint(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 60 {
        let v: i64 = n.try_into().expect("fits in i64");
        return (v as f64).log2();
    }
    let shift = bits - 60;
    let top: i64 = (n >> shift).try_into().expect("fits in i64");
    (top as f64).log2() + shift as f64
}

pub fn ratio_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// The attacker's belief about the secret: a normalized map from secret
/// value to strictly positive probability.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SecretDist {
    probs: BTreeMap<Secret, Rational>,
}

impl SecretDist {
    pub fn uniform<I: IntoIterator<Item = Secret>>(domain: I) -> Result<Self, Error> {
        let values: Vec<Secret> = domain.into_iter().collect();
        if values.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let mut probs = BTreeMap::new();
        for v in values {
            probs.insert(v, Rational::zero());
        }
        let p = Rational::one() / from_count(probs.len());
        for slot in probs.values_mut() {
            *slot = p.clone();
        }
        Ok(SecretDist { probs })
    }

    pub fn point(value: Secret) -> Self {
        let mut probs = BTreeMap::new();
        probs.insert(value, Rational::one());
        SecretDist { probs }
    }

    /// Builds a distribution from non-negative weights, normalizing them.
    /// Zero weights are dropped.
    pub fn from_weights<I: IntoIterator<Item = (Secret, Rational)>>(weights: I) -> Result<Self, Error> {
        let mut probs: BTreeMap<Secret, Rational> = BTreeMap::new();
        for (v, w) in weights {
            if w.is_negative() {
                return Err(Error::NegativeWeight(format_ratio(&w)));
            }
            if !w.is_zero() {
                *probs.entry(v).or_insert_with(Rational::zero) += w;
            }
        }
        let total: Rational = probs.values().sum();
        if total.is_zero() {
            return Err(Error::EmptyDomain);
        }
        for p in probs.values_mut() {
            *p = &*p / &total;
        }
        Ok(SecretDist { probs })
    }

    /// Like [`SecretDist::from_weights`] but requires the weights to already
    /// sum to exactly 1.
    pub fn from_probs<I: IntoIterator<Item = (Secret, Rational)>>(probs: I) -> Result<Self, Error> {
        let probs: Vec<(Secret, Rational)> = probs.into_iter().collect();
        let total: Rational = probs.iter().map(|(_, p)| p).sum();
        if !total.is_one() {
            return Err(Error::NotNormalized(format_ratio(&total)));
        }
        Self::from_weights(probs)
    }

    pub fn prob(&self, value: Secret) -> Rational {
        self.probs.get(&value).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn support(&self) -> impl Iterator<Item = Secret> + '_ {
        self.probs.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Secret, &Rational)> {
        self.probs.iter().map(|(v, p)| (*v, p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let mut it = self.probs.values();
        match it.next() {
            Some(first) => it.all(|p| p == first),
            None => false,
        }
    }

    pub fn total(&self) -> Rational {
        self.probs.values().sum()
    }

    /// Probability that `keep` holds under this distribution.
    pub fn mass<F: Fn(Secret) -> bool>(&self, keep: F) -> Rational {
        self.probs.iter().filter(|(v, _)| keep(**v)).map(|(_, p)| p).sum()
    }

    /// Bayesian conditioning on the event `keep`. Returns the renormalized
    /// restriction together with the event's mass.
    pub fn condition<F: Fn(Secret) -> bool>(&self, keep: F) -> Result<(SecretDist, Rational), Error> {
        let kept: BTreeMap<Secret, Rational> =
            self.probs.iter().filter(|(v, _)| keep(**v)).map(|(v, p)| (*v, p.clone())).collect();
        let mass: Rational = kept.values().sum();
        if mass.is_zero() {
            return Err(Error::ZeroMassEvent);
        }
        let probs = kept.into_iter().map(|(v, p)| (v, p / &mass)).collect();
        Ok((SecretDist { probs }, mass))
    }

    pub fn max_prob(&self) -> Rational {
        self.probs.values().max().cloned().unwrap_or_else(Rational::zero)
    }
}

impl fmt::Debug for SecretDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SecretDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, p)) in self.probs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", v, format_ratio(p))?;
        }
        f.write_str("}")
    }
}

impl Serialize for SecretDist {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.probs.len()))?;
        for (v, p) in &self.probs {
            map.serialize_entry(&v.to_string(), &format_ratio(p))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SecretDist {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct DistVisitor;

        impl<'de> Visitor<'de> for DistVisitor {
            type Value = SecretDist;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from secret values to \"num/den\" strings")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<SecretDist, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    let value: Secret = k.parse().map_err(de::Error::custom)?;
                    let p = parse_ratio(&v).map_err(de::Error::custom)?;
                    entries.push((value, p));
                }
                SecretDist::from_probs(entries).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_map(DistVisitor)
    }
}

/// Serde adapter for `Rational` fields encoded as `"num/den"` strings.
pub mod ratio_string {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_ratio(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_ratio(&text).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn u8dist() -> SecretDist {
        SecretDist::uniform(0..8).unwrap()
    }

    #[test]
    fn uniform_values() {
        let d = u8dist();
        assert!(d.iter().all(|(_, p)| *p == ratio(1, 8)));
        assert_eq!(SecretDist::uniform([5]).unwrap(), SecretDist::point(5));
        let d4 = SecretDist::uniform(0..4).unwrap();
        assert_eq!(d4.len(), 4);
        assert!(d4.iter().all(|(_, p)| *p == ratio(1, 4)));
        assert!(matches!(SecretDist::uniform(std::iter::empty()), Err(Error::EmptyDomain)));
    }

    #[test]
    fn condition_on_low_bit() {
        let (post, mass) = u8dist().condition(|s| s & 1 == 1).unwrap();
        assert_eq!(mass, ratio(1, 2));
        assert_eq!(post.support().collect::<Vec<_>>(), vec![1, 3, 5, 7]);
        assert!(post.iter().all(|(_, p)| *p == ratio(1, 4)));
    }

    #[test]
    fn condition_on_high_bit() {
        let (post, mass) = u8dist().condition(|s| s / 4 == 0).unwrap();
        assert_eq!(mass, ratio(1, 2));
        assert_eq!(post, SecretDist::uniform(0..4).unwrap());
    }

    #[test]
    fn condition_identity_and_zero_mass() {
        let d = SecretDist::from_weights([(1, ratio(1, 3)), (2, ratio(2, 3))]).unwrap();
        let (same, mass) = d.condition(|_| true).unwrap();
        assert_eq!(same, d);
        assert!(mass.is_one());
        assert!(matches!(d.condition(|s| s > 10), Err(Error::ZeroMassEvent)));
    }

    #[test]
    fn max_prob_examples() {
        assert_eq!(u8dist().max_prob(), ratio(1, 8));
        let half = SecretDist::from_probs([(3, ratio(1, 2)), (7, ratio(1, 2))]).unwrap();
        assert_eq!(half.max_prob(), ratio(1, 2));
        assert_eq!(SecretDist::point(7).max_prob(), Rational::one());
    }

    #[test]
    fn ratio_text() {
        assert_eq!(format_ratio(&ratio(2, 4)), "1/2");
        assert_eq!(format_ratio(&Rational::one()), "1");
        assert_eq!(parse_ratio("3/12").unwrap(), ratio(1, 4));
        assert_eq!(parse_ratio("1").unwrap(), Rational::one());
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn json_is_exact() {
        let d = SecretDist::from_probs([(1, ratio(1, 3)), (5, ratio(2, 3))]).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, r#"{"1":"1/3","5":"2/3"}"#);
        let back: SecretDist = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<SecretDist>(r#"{"1":"1/3"}"#).is_err());
    }

    #[test]
    fn log2_of_huge_ratio() {
        let tiny = Rational::new(BigInt::one(), BigInt::one() << 2000u32);
        assert!((log2_ratio(&tiny) + 2000.0).abs() < 1e-9);
        assert!((log2_ratio(&ratio(3, 4)) - 0.75f64.log2()).abs() < 1e-15);
    }

    fn arb_dist() -> impl Strategy<Value = SecretDist> {
        prop::collection::btree_map(0u64..32, 1i64..20, 1..12)
            .prop_map(|m| SecretDist::from_weights(m.into_iter().map(|(v, w)| (v, ratio(w, 1)))).unwrap())
    }

    proptest! {
        #[test]
        fn normalized_and_split(d in arb_dist(), modulus in 2u64..5) {
            prop_assert!(d.total().is_one());
            let keep = |s: Secret| s.is_multiple_of(modulus);
            let yes = d.condition(keep);
            let no = d.condition(|s| !keep(s));
            if let (Ok((dy, my)), Ok((dn, mn))) = (&yes, &no) {
                prop_assert!((my + mn).is_one());
                prop_assert!(dy.support().all(|s| d.prob(s) > Rational::zero()));
                prop_assert!(dn.total().is_one());
                let (twice, m2) = dy.condition(keep).unwrap();
                prop_assert_eq!(&twice, dy);
                prop_assert!(m2.is_one());
            }
        }
    }
}
