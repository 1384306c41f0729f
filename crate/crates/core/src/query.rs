//! Label space, size-`m` label subsets and the symmetric query mechanism.
//!
//! Labels are 1-based everywhere in the public surface: the label space of a
//! `k`-class problem is `{1, ..., k}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Subset families larger than this are refused by the enumeration routines.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// `C(n, r)`, exact. Saturates at `u128::MAX` on overflow.
pub fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) / (i + 1) is exact at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    k: usize,
}

impl LabelSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("label space needs k >= 2, got k = {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn check(&self, y: usize) -> Result<()> {
        if (1..=self.k).contains(&y) {
            Ok(())
        } else {
            Err(Error::Domain(format!("label {y} outside 1..={}", self.k)))
        }
    }
}

/// A label space together with the fixed query size `m`, `1 <= m <= k-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryConfig {
    space: LabelSpace,
    m: usize,
}

impl QueryConfig {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        let space = LabelSpace::new(k)?;
        if m < 1 || m >= k {
            return Err(Error::Config(format!(
                "query size must satisfy 1 <= m <= k-1, got m = {m} with k = {k}"
            )));
        }
        Ok(Self { space, m })
    }

    pub fn k(&self) -> usize {
        self.space.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    /// `|Q_m| = C(k, m)`.
    pub fn family_size(&self) -> u128 {
        binomial(self.k(), self.m)
    }

    fn check_cap(&self) -> Result<()> {
        let count = self.family_size();
        if count > ENUMERATION_CAP {
            return Err(Error::EnumerationTooLarge { k: self.k(), m: self.m, count, cap: ENUMERATION_CAP });
        }
        Ok(())
    }

    /// Position of `subset` in the lexicographic order produced by
    /// [`enumerate_subsets`].
    pub fn rank(&self, subset: &LabelSubset) -> Result<usize> {
        let k = self.k();
        let m = self.m;
        if subset.len() != m {
            return Err(Error::Domain(format!("subset has size {}, expected {m}", subset.len())));
        }
        let mut rank: u128 = 0;
        let mut prev = 0usize;
        for (i, &c) in subset.members().iter().enumerate() {
            self.space.check(c)?;
            for j in prev + 1..c {
                rank += binomial(k - j, m - i - 1);
            }
            prev = c;
        }
        Ok(rank as usize)
    }
}

/// A set of labels stored as a strictly increasing sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LabelSubset {
    members: Vec<usize>,
}

impl LabelSubset {
    /// Builds a subset from arbitrary labels in `1..=k`; duplicates are rejected.
    pub fn new(mut members: Vec<usize>, space: LabelSpace) -> Result<Self> {
        for &y in &members {
            space.check(y)?;
        }
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!("duplicate labels in subset {members:?}")));
        }
        Ok(Self { members })
    }

    /// Trusts that `members` is strictly increasing and 1-based.
    fn from_sorted(members: Vec<usize>) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        Self { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, y: usize) -> bool {
        self.members.binary_search(&y).is_ok()
    }

    /// Bit `y - 1` set for every member. Only meaningful for `k <= 64`.
    pub fn bitmask(&self) -> u64 {
        self.members.iter().fold(0u64, |acc, &y| acc | (1u64 << (y - 1)))
    }

    pub fn is_disjoint(&self, other: &LabelSubset) -> bool {
        !self.members.iter().any(|&y| other.contains(y))
    }

    /// Union of two subsets (used for the linearity property of subset losses).
    pub fn union(&self, other: &LabelSubset) -> LabelSubset {
        let mut all: Vec<usize> = self.members.iter().chain(other.members.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        LabelSubset::from_sorted(all)
    }
}

impl TryFrom<Vec<usize>> for LabelSubset {
    type Error = String;

    fn try_from(mut members: Vec<usize>) -> std::result::Result<Self, String> {
        if members.contains(&0) {
            return Err("labels are 1-based".into());
        }
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(format!("duplicate labels in subset {members:?}"));
        }
        Ok(Self { members })
    }
}

impl From<LabelSubset> for Vec<usize> {
    fn from(s: LabelSubset) -> Self {
        s.members
    }
}

impl fmt::Display for LabelSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, y) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{y}")?;
        }
        write!(f, "}}")
    }
}

/// Membership response `s = 1{y in L}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    Out = 0,
    In = 1,
}

impl Response {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Response::Out),
            1 => Ok(Response::In),
            b => Err(Error::Domain(format!("response must be 0 or 1, got {b}"))),
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_in(self) -> bool {
        self == Response::In
    }
}

/// Draws `L` uniformly from `Q_m`: partial Fisher-Yates over `1..=k`,
/// keeping the first `m` positions, then sorting.
pub fn sample_subset(cfg: &QueryConfig, rng: &mut SeededRng) -> LabelSubset {
    let k = cfg.k();
    let m = cfg.m();
    let mut labels: Vec<usize> = (1..=k).collect();
    for i in 0..m {
        let j = i + rng.below(k - i);
        labels.swap(i, j);
    }
    labels.truncate(m);
    labels.sort_unstable();
    LabelSubset::from_sorted(labels)
}

pub fn respond(space: LabelSpace, y: usize, subset: &LabelSubset) -> Result<Response> {
    space.check(y)?;
    Ok(if subset.contains(y) { Response::In } else { Response::Out })
}

/// All of `Q_m` in lexicographic order of the sorted members.
pub fn enumerate_subsets(cfg: &QueryConfig) -> Result<Vec<LabelSubset>> {
    cfg.check_cap()?;
    let k = cfg.k();
    let m = cfg.m();
    let mut out = Vec::with_capacity(cfg.family_size() as usize);
    let mut current: Vec<usize> = (1..=m).collect();
    loop {
        out.push(LabelSubset::from_sorted(current.clone()));
        // rightmost position that can still be advanced
        let Some(i) = (0..m).rev().find(|&i| current[i] < k - (m - 1 - i)) else {
            break;
        };
        current[i] += 1;
        for j in i + 1..m {
            current[j] = current[j - 1] + 1;
        }
    }
    Ok(out)
}

/// `(Q^in_y, Q^out_y)`: the members of `Q_m` containing `y`, and the rest.
pub fn enumerate_in_out(cfg: &QueryConfig, y: usize) -> Result<(Vec<LabelSubset>, Vec<LabelSubset>)> {
    cfg.space().check(y)?;
    Ok(enumerate_subsets(cfg)?.into_iter().partition(|l| l.contains(y)))
}

/// `P(s = 1) = m/k`, `P(s = 0) = (k - m)/k`, whatever the label distribution.
pub fn group_proportion(cfg: &QueryConfig, s: Response) -> f64 {
    let k = cfg.k() as f64;
    let m = cfg.m() as f64;
    match s {
        Response::In => m / k,
        Response::Out => (k - m) / k,
    }
}
