use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::f1::Z90;
use crate::corpus::ContextClass;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    A,
    B,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub context_id: String,
    pub model_a: String,
    pub model_b: String,
    pub vote: Vote,
    pub class: ContextClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub context_id: String,
    pub model: String,
    pub fluency: u8,
    pub relevancy: u8,
    pub rater: String,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("fluency", self.fluency), ("relevancy", self.relevancy)] {
            if v > 4 {
                return Err(Error::Invalid(format!("{what} {v} outside 0-4")));
            }
        }
        Ok(())
    }
}

/// A percentage with its 90% half-width, both in percentage points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub pct: f64,
    pub ci: f64,
}

impl Share {
    fn new(count: usize, n: usize) -> Self {
        let p = count as f64 / n as f64;
        Self { count, pct: 100.0 * p, ci: 100.0 * Z90 * (p * (1.0 - p) / n as f64).sqrt() }
    }

    fn disjoint(&self, other: &Share) -> bool {
        self.pct - self.ci > other.pct + other.ci || other.pct - other.ci > self.pct + self.ci
    }
}

/// Outcome of `subject` against `opponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceStats {
    pub subject: String,
    pub opponent: String,
    pub class: Option<ContextClass>,
    pub n: usize,
    pub wins: Share,
    pub losses: Share,
    pub ties: Share,
    /// Win and loss intervals do not overlap.
    pub significant: bool,
}

/// Wins/losses/ties of `pair.0` against `pair.1` over records comparing
/// those two models in either position.
pub fn preference_stats(
    records: &[PreferenceRecord],
    pair: (&str, &str),
    class: Option<ContextClass>,
) -> Result<PreferenceStats> {
    let (mut w, mut l, mut t) = (0, 0, 0);
    for r in records.iter().filter(|r| class.is_none_or(|c| r.class == c)) {
        let flipped = if (r.model_a.as_str(), r.model_b.as_str()) == pair {
            false
        } else if (r.model_b.as_str(), r.model_a.as_str()) == pair {
            true
        } else {
            continue;
        };
        match (r.vote, flipped) {
            (Vote::Neither, _) => t += 1,
            (Vote::A, false) | (Vote::B, true) => w += 1,
            _ => l += 1,
        }
    }
    let n = w + l + t;
    if n == 0 {
        return Err(Error::Invalid(format!("no preference records for {} vs {}", pair.0, pair.1)));
    }
    let (wins, losses, ties) = (Share::new(w, n), Share::new(l, n), Share::new(t, n));
    Ok(PreferenceStats {
        subject: pair.0.to_string(),
        opponent: pair.1.to_string(),
        class,
        n,
        significant: wins.disjoint(&losses),
        wins,
        losses,
        ties,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    pub n: usize,
    pub fluency: f64,
    pub relevancy: f64,
}

/// Mean fluency and relevancy per model.
pub fn rating_stats(records: &[RatingRecord]) -> Result<BTreeMap<String, RatingSummary>> {
    let mut sums: BTreeMap<String, (usize, u64, u64)> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let e = sums.entry(r.model.clone()).or_default();
        e.0 += 1;
        e.1 += r.fluency as u64;
        e.2 += r.relevancy as u64;
    }
    Ok(sums
        .into_iter()
        .map(|(m, (n, f, r))| (m, RatingSummary { n, fluency: f as f64 / n as f64, relevancy: r as f64 / n as f64 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(vote: Vote, a: &str, b: &str) -> PreferenceRecord {
        PreferenceRecord {
            context_id: "c".into(),
            model_a: a.into(),
            model_b: b.into(),
            vote,
            class: ContextClass::Short,
        }
    }

    #[test]
    fn half_wins_of_one_hundred() {
        let mut rs: Vec<_> = (0..50).map(|_| rec(Vote::A, "vhred", "hred")).collect();
        rs.extend((0..30).map(|_| rec(Vote::B, "vhred", "hred")));
        rs.extend((0..20).map(|_| rec(Vote::Neither, "vhred", "hred")));
        let s = preference_stats(&rs, ("vhred", "hred"), None).unwrap();
        assert_eq!(s.wins.pct, 50.0);
        assert!((s.wins.ci - 8.2).abs() < 0.05, "{}", s.wins.ci);
        assert_eq!(s.wins.count + s.losses.count + s.ties.count, s.n);
        let rev = preference_stats(&rs, ("hred", "vhred"), None).unwrap();
        assert_eq!((rev.wins.count, rev.losses.count), (30, 50));
    }

    #[test]
    fn all_ties() {
        let rs: Vec<_> = (0..7).map(|_| rec(Vote::Neither, "x", "y")).collect();
        let s = preference_stats(&rs, ("x", "y"), None).unwrap();
        assert_eq!((s.wins.pct, s.wins.ci, s.ties.pct), (0.0, 0.0, 100.0));
        assert!(!s.significant);
        assert!(preference_stats(&rs, ("x", "y"), Some(ContextClass::Long)).is_err());
    }

    #[test]
    fn position_swapped_records_count_for_the_subject() {
        let rs = vec![rec(Vote::B, "hred", "vhred"), rec(Vote::A, "vhred", "hred"), rec(Vote::A, "x", "y")];
        let s = preference_stats(&rs, ("vhred", "hred"), None).unwrap();
        assert_eq!((s.n, s.wins.count), (2, 2));
    }

    #[test]
    fn rating_means() {
        let r = |f, v, who: &str| RatingRecord {
            context_id: "c".into(),
            model: "hred".into(),
            fluency: f,
            relevancy: v,
            rater: who.into(),
        };
        let one = rating_stats(&[r(3, 1, "a")]).unwrap();
        assert_eq!((one["hred"].fluency, one["hred"].relevancy), (3.0, 1.0));
        let two = rating_stats(&[r(4, 2, "a"), r(2, 0, "b")]).unwrap();
        assert_eq!((two["hred"].fluency, two["hred"].relevancy), (3.0, 1.0));
        assert!(rating_stats(&[r(5, 0, "a")]).is_err());
    }
}
