use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iterations `first..=last` (open-ended when `last` is `None`) run `rounds` rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTier {
    pub first: usize,
    pub last: Option<usize>,
    pub rounds: usize,
}

/// Piecewise-constant rounds-per-iteration lookup, e.g. `1-5:5,7-10:10,11-15:15,16-:20`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RoundSchedule {
    tiers: Vec<RoundTier>,
}

impl RoundSchedule {
    pub fn new(mut tiers: Vec<RoundTier>) -> Result<Self> {
        if tiers.is_empty() {
            return Err(Error::invalid("round schedule needs at least one tier"));
        }
        tiers.sort_by_key(|t| t.first);
        for (i, t) in tiers.iter().enumerate() {
            if t.first == 0 || t.rounds == 0 || t.last.is_some_and(|l| l < t.first) {
                return Err(Error::invalid(format!("bad round tier {}", TierDisplay(t))));
            }
            if let Some(next) = tiers.get(i + 1) {
                if t.last.is_none_or(|l| l >= next.first) {
                    return Err(Error::invalid(format!(
                        "round tiers {} and {} overlap",
                        TierDisplay(t),
                        TierDisplay(next)
                    )));
                }
            }
        }
        Ok(Self { tiers })
    }

    /// Rounds used for large-scale image classification.
    pub fn imagenet() -> Self {
        "1-5:5,7-10:10,11-15:15,16-:20".parse().expect("valid preset")
    }

    /// Rounds used for the face-attribute task.
    pub fn celeba() -> Self {
        "1-5:2,6-10:5,11-15:8,16-:10".parse().expect("valid preset")
    }

    pub fn tiers(&self) -> &[RoundTier] {
        &self.tiers
    }

    pub fn max_rounds(&self) -> usize {
        self.tiers.iter().map(|t| t.rounds).max().expect("non-empty")
    }

    /// Lookup for iteration `t`. Iterations falling in a gap between tiers use
    /// the following tier; past the last tier the last tier applies.
    pub fn rounds_for(&self, t: usize) -> usize {
        self.tiers
            .iter()
            .find(|tier| tier.last.is_none_or(|l| t <= l))
            .or(self.tiers.last())
            .map(|tier| tier.rounds)
            .expect("non-empty")
    }
}

pub fn dynamic_round_number(t: usize, schedule: &RoundSchedule, enabled: bool) -> usize {
    if enabled {
        schedule.rounds_for(t)
    } else {
        schedule.max_rounds()
    }
}

struct TierDisplay<'a>(&'a RoundTier);

impl fmt::Display for TierDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0.last {
            Some(l) => write!(f, "{}-{}:{}", self.0.first, l, self.0.rounds),
            None => write!(f, "{}-:{}", self.0.first, self.0.rounds),
        }
    }
}

impl fmt::Display for RoundSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tiers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", TierDisplay(t))?;
        }
        Ok(())
    }
}

impl FromStr for RoundSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |part: &str| Error::invalid(format!("cannot parse round tier `{part}` (expected `a-b:n` or `a-:n`)"));
        let tiers = s
            .split(',')
            .map(str::trim)
            .map(|part| {
                let (range, rounds) = part.split_once(':').ok_or_else(|| bad(part))?;
                let (first, last) = range.split_once('-').ok_or_else(|| bad(part))?;
                let num = |x: &str| x.trim().parse::<usize>().map_err(|_| bad(part));
                Ok(RoundTier {
                    first: num(first)?,
                    last: if last.trim().is_empty() { None } else { Some(num(last)?) },
                    rounds: num(rounds)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tiers)
    }
}

impl TryFrom<String> for RoundSchedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RoundSchedule> for String {
    fn from(s: RoundSchedule) -> Self {
        s.to_string()
    }
}
