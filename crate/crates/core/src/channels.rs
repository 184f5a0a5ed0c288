//! Finite-alphabet binary-input memoryless symmetric (BMS) channels.
//!
//! A channel is stored as a list of output symbols, each carrying the pair
//! `(W(y|0), W(y|1))`. Channels are kept in canonical form: zero-probability
//! symbols dropped, symbols sorted by likelihood ratio and symbols with equal
//! ratio merged. For a symmetric channel the canonical list is a palindrome
//! under swapping the two entries of each pair.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;
const RATIO_TOL: f64 = 1e-12;

/// Which output of a single polarization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `u1 = x1 ^ x2` observed through `(y1, y2)`.
    Minus,
    /// `u2 = x2` observed through `(y1, y2, u1)`.
    Plus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmsChannel {
    transitions: Vec<(f64, f64)>,
    label: String,
}

/// Serialized channel description used in scheme files and configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelSpec {
    Bec { eps: f64 },
    Bsc { p: f64 },
    Explicit { transitions: Vec<(f64, f64)> },
}

impl ChannelSpec {
    pub fn build(&self) -> Result<BmsChannel> {
        match self {
            ChannelSpec::Bec { eps } => make_bec(*eps),
            ChannelSpec::Bsc { p } => make_bsc(*p),
            ChannelSpec::Explicit { transitions } => BmsChannel::explicit(transitions.clone()),
        }
    }
}

fn ratio_key(p0: f64, p1: f64) -> f64 {
    p0 / (p0 + p1)
}

fn plogp_term(a: f64, b: f64) -> f64 {
    // contribution of one output symbol to I(X;Y) with uniform input
    let s = a + b;
    let mut c = 0.0;
    if a > 0.0 {
        c += a * (2.0 * a / s).log2();
    }
    if b > 0.0 {
        c += b * (2.0 * b / s).log2();
    }
    0.5 * c
}

impl BmsChannel {
    /// Builds a channel from raw transition pairs, canonicalizes it and
    /// validates normalization and symmetry.
    pub fn explicit(transitions: Vec<(f64, f64)>) -> Result<Self> {
        let ch = Self::from_raw(transitions, "explicit".to_string());
        ch.validate()?;
        Ok(ch)
    }

    pub(crate) fn from_raw(transitions: Vec<(f64, f64)>, label: String) -> Self {
        let mut t: Vec<(f64, f64)> = transitions
            .into_iter()
            .filter(|&(a, b)| a + b > 0.0)
            .collect();
        t.sort_by(|x, y| ratio_key(x.0, x.1).total_cmp(&ratio_key(y.0, y.1)));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(t.len());
        for (a, b) in t {
            if let Some(last) = merged.last_mut() {
                if (ratio_key(last.0, last.1) - ratio_key(a, b)).abs() <= RATIO_TOL {
                    last.0 += a;
                    last.1 += b;
                    continue;
                }
            }
            merged.push((a, b));
        }
        BmsChannel {
            transitions: merged,
            label,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn transitions(&self) -> &[(f64, f64)] {
        &self.transitions
    }

    pub fn num_outputs(&self) -> usize {
        self.transitions.len()
    }

    /// Checks normalization, probability ranges and the output symmetry.
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::InvalidChannel("no output symbols".into()));
        }
        let (mut s0, mut s1) = (0.0, 0.0);
        for &(a, b) in &self.transitions {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidChannel(format!(
                    "probability pair ({a}, {b}) outside [0,1]"
                )));
            }
            s0 += a;
            s1 += b;
        }
        if (s0 - 1.0).abs() > SUM_TOL || (s1 - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidChannel(format!(
                "rows sum to {s0} and {s1}, expected 1"
            )));
        }
        if !self.is_symmetric(1e-9) {
            return Err(Error::InvalidChannel(
                "no output involution swaps the two inputs".into(),
            ));
        }
        Ok(())
    }

    /// Canonical form is sorted by ratio, so the involution pairs symbol `i`
    /// with symbol `len - 1 - i`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let t = &self.transitions;
        let n = t.len();
        (0..n).all(|i| {
            let (a, b) = t[i];
            let (c, d) = t[n - 1 - i];
            (a - d).abs() <= tol && (b - c).abs() <= tol
        })
    }

    pub fn bhattacharyya(&self) -> f64 {
        self.transitions
            .iter()
            .map(|&(a, b)| (a * b).sqrt())
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn capacity(&self) -> f64 {
        self.transitions
            .iter()
            .map(|&(a, b)| plogp_term(a, b))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Log-likelihood ratio `ln(W(y|0)/W(y|1))` of output symbol `y`.
    pub fn llr(&self, y: usize) -> Result<f64> {
        let &(a, b) = self.transitions.get(y).ok_or(Error::IndexOutOfRange {
            index: y,
            len: self.transitions.len(),
        })?;
        Ok(llr_of_pair(a, b))
    }

    /// Index of the erasure-like symbol (likelihood ratio one), if any.
    pub fn erasure_symbol(&self) -> Option<usize> {
        self.transitions
            .iter()
            .position(|&(a, b)| (ratio_key(a, b) - 0.5).abs() <= RATIO_TOL)
    }
}

pub(crate) fn llr_of_pair(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if b == 0.0 {
        f64::INFINITY
    } else if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        (a / b).ln()
    }
}

pub fn make_bec(eps: f64) -> Result<BmsChannel> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "erasure probability {eps} outside [0,1]"
        )));
    }
    Ok(BmsChannel::from_raw(
        vec![(0.0, 1.0 - eps), (eps, eps), (1.0 - eps, 0.0)],
        format!("BEC({eps})"),
    ))
}

pub fn make_bsc(p: f64) -> Result<BmsChannel> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "crossover probability {p} outside [0,0.5]"
        )));
    }
    Ok(BmsChannel::from_raw(
        vec![(p, 1.0 - p), (1.0 - p, p)],
        format!("BSC({p})"),
    ))
}

/// One polarization step between two (possibly distinct) BMS channels.
pub fn polar_combine(wa: &BmsChannel, wb: &BmsChannel, branch: Branch) -> BmsChannel {
    let na = wa.transitions.len();
    let nb = wb.transitions.len();
    let mut out = Vec::with_capacity(na * nb * if branch == Branch::Plus { 2 } else { 1 });
    for &(a0, a1) in &wa.transitions {
        for &(b0, b1) in &wb.transitions {
            match branch {
                Branch::Minus => out.push((0.5 * (a0 * b0 + a1 * b1), 0.5 * (a1 * b0 + a0 * b1))),
                Branch::Plus => {
                    out.push((0.5 * a0 * b0, 0.5 * a1 * b1));
                    out.push((0.5 * a1 * b0, 0.5 * a0 * b1));
                }
            }
        }
    }
    let tag = match branch {
        Branch::Minus => "-",
        Branch::Plus => "+",
    };
    BmsChannel::from_raw(out, format!("({}{}{})", wa.label, tag, wb.label))
}

#[derive(PartialEq)]
struct MergeCandidate {
    cost: f64,
    left: usize,
    stamp: (u64, u64),
}

impl Eq for MergeCandidate {}

impl Ord for MergeCandidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, left)
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for MergeCandidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn merge_loss(x: (f64, f64), y: (f64, f64)) -> f64 {
    plogp_term(x.0, x.1) + plogp_term(y.0, y.1) - plogp_term(x.0 + y.0, x.1 + y.1)
}

/// Greedily merges adjacent-ratio symbol pairs (mirrored on both halves of the
/// alphabet) until at most `mu` symbols remain. The result is degraded with
/// respect to `w`.
pub fn degrade_merge(w: &BmsChannel, mu: usize) -> Result<BmsChannel> {
    if mu < 2 || !mu.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "output alphabet bound mu={mu} must be even and at least 2"
        )));
    }
    if w.num_outputs() <= mu {
        return Ok(w.clone());
    }
    let mut erasure = 0.0;
    let mut pos: Vec<(f64, f64)> = Vec::new();
    for &(a, b) in &w.transitions {
        let k = ratio_key(a, b);
        if (k - 0.5).abs() <= RATIO_TOL {
            erasure += a + b;
        } else if k > 0.5 {
            pos.push((a, b));
        }
    }
    // pos is ascending in ratio: least reliable first
    let mut target = mu / 2 - usize::from(erasure > 0.0);
    let dissolve_erasure = target == 0;
    if dissolve_erasure {
        target = 1;
    }

    if pos.len() > target {
        let n = pos.len();
        let mut alive = vec![true; n];
        let mut next: Vec<Option<usize>> = (0..n).map(|i| (i + 1 < n).then_some(i + 1)).collect();
        let mut prev: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
        let mut version = vec![0u64; n];
        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            heap.push(MergeCandidate {
                cost: merge_loss(pos[i], pos[i + 1]),
                left: i,
                stamp: (0, 0),
            });
        }
        let mut count = n;
        while count > target {
            let Some(c) = heap.pop() else { break };
            let l = c.left;
            let Some(r) = next[l] else { continue };
            if !alive[l] || c.stamp != (version[l], version[r]) {
                continue;
            }
            pos[l].0 += pos[r].0;
            pos[l].1 += pos[r].1;
            alive[r] = false;
            next[l] = next[r];
            if let Some(rr) = next[r] {
                prev[rr] = Some(l);
            }
            version[l] += 1;
            count -= 1;
            if let Some(p) = prev[l] {
                heap.push(MergeCandidate {
                    cost: merge_loss(pos[p], pos[l]),
                    left: p,
                    stamp: (version[p], version[l]),
                });
            }
            if let Some(nx) = next[l] {
                heap.push(MergeCandidate {
                    cost: merge_loss(pos[l], pos[nx]),
                    left: l,
                    stamp: (version[l], version[nx]),
                });
            }
        }
        pos = (0..n).filter(|&i| alive[i]).map(|i| pos[i]).collect();
    }

    let mut out = Vec::with_capacity(2 * pos.len() + 1);
    if dissolve_erasure && erasure > 0.0 {
        let (a, b) = pos[0];
        let half = 0.25 * erasure;
        pos[0] = (a + half, b + half);
        erasure = 0.0;
    }
    for &(a, b) in &pos {
        out.push((a, b));
        out.push((b, a));
    }
    if erasure > 0.0 {
        out.push((0.5 * erasure, 0.5 * erasure));
    }
    Ok(BmsChannel::from_raw(out, format!("{}|mu={mu}", w.label)))
}
