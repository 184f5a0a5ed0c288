//! Reliability construction: upper bounds on the Bhattacharyya parameters of
//! the synthetic channels of a (possibly punctured) polar block, and the
//! index sets derived from them.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{degrade_merge, make_bec, polar_combine, BmsChannel, Branch};
use crate::error::{Error, Result};
use crate::polar::{bit_reversal_permutation, log2_exact};

pub const DEFAULT_DELTA: f64 = 1e-6;
pub const DEFAULT_MU: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityProfile {
    pub m: usize,
    pub channel_label: String,
    /// `z_bounds[i]` upper-bounds `Z(U_i | U_0..U_{i-1}, Y)`.
    pub z_bounds: Vec<f64>,
    pub delta: f64,
}

impl ReliabilityProfile {
    /// `min(1, sum of z over the set)`: the union bound on SC block error.
    pub fn fer_bound<'a>(&self, set: impl IntoIterator<Item = &'a usize>) -> f64 {
        union_bound(&self.z_bounds, set)
    }

    /// CSV with 1-based indices.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,z_bound\n");
        for (i, z) in self.z_bounds.iter().enumerate() {
            let _ = writeln!(s, "{},{:e}", i + 1, z);
        }
        s
    }
}

pub fn union_bound<'a>(z: &[f64], set: impl IntoIterator<Item = &'a usize>) -> f64 {
    set.into_iter().map(|&i| z[i]).sum::<f64>().min(1.0)
}

struct Arena {
    channels: Vec<BmsChannel>,
    memo: HashMap<(Branch, usize, usize), usize>,
    mu: usize,
}

impl Arena {
    fn combine(&mut self, a: usize, b: usize, branch: Branch) -> Result<usize> {
        if let Some(&id) = self.memo.get(&(branch, a, b)) {
            return Ok(id);
        }
        let raw = polar_combine(&self.channels[a], &self.channels[b], branch);
        let merged = degrade_merge(&raw, self.mu)?;
        self.channels.push(merged);
        let id = self.channels.len() - 1;
        self.memo.insert((branch, a, b), id);
        Ok(id)
    }
}

/// Evaluates the polarization tree with `W` at transmitted positions and
/// BEC(1) at punctured positions, degrading to at most `mu` outputs after
/// every combine.
pub fn evolve_reliability(
    w: &BmsChannel,
    m: usize,
    punctured: &BTreeSet<usize>,
    mu: usize,
    delta: f64,
) -> Result<ReliabilityProfile> {
    let n = log2_exact(m)?;
    if let Some(&bad) = punctured.iter().find(|&&i| i >= m) {
        return Err(Error::IndexOutOfRange { index: bad, len: m });
    }
    let leaf = degrade_merge(w, mu)?;
    let erased = make_bec(1.0)?;
    let mut arena = Arena {
        channels: vec![leaf, erased],
        memo: HashMap::new(),
        mu,
    };
    let perm = bit_reversal_permutation(m)?;
    // ids in v-order: v-position j is transmitted position perm[j]
    let mut ids: Vec<usize> = perm
        .iter()
        .map(|x| usize::from(punctured.contains(x)))
        .collect();
    let mut next = vec![0usize; m];
    for d in 0..n as usize {
        let size = m >> d;
        let half = size / 2;
        for node in 0..(1usize << d) {
            let base = node * size;
            for j in 0..half {
                let (a, b) = (ids[base + j], ids[base + j + half]);
                next[base + j] = arena.combine(a, b, Branch::Minus)?;
                next[base + half + j] = arena.combine(a, b, Branch::Plus)?;
            }
        }
        std::mem::swap(&mut ids, &mut next);
    }
    let z_bounds = ids
        .iter()
        .map(|&id| arena.channels[id].bhattacharyya())
        .collect();
    Ok(ReliabilityProfile {
        m,
        channel_label: w.label().to_string(),
        z_bounds,
        delta,
    })
}

/// `{i : z_i <= delta}`.
pub fn select_l(profile: &ReliabilityProfile) -> BTreeSet<usize> {
    threshold_set(&profile.z_bounds, profile.delta)
}

pub fn threshold_set(z: &[f64], threshold: f64) -> BTreeSet<usize> {
    z.iter()
        .enumerate()
        .filter(|(_, &v)| v <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Indices ordered by increasing z, ties by smaller index.
pub fn rank_order(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub set: BTreeSet<usize>,
    /// Selected indices whose bound exceeds the profile's delta.
    pub outside_good_set: Vec<usize>,
}

/// The `size` most reliable indices.
pub fn select_a(profile: &ReliabilityProfile, size: usize) -> Result<Selection> {
    if size > profile.m {
        return Err(Error::InvalidParameter(format!(
            "cannot select {size} indices from a block of length {}",
            profile.m
        )));
    }
    let set: BTreeSet<usize> = rank_order(&profile.z_bounds)
        .into_iter()
        .take(size)
        .collect();
    let outside_good_set = set
        .iter()
        .copied()
        .filter(|&i| profile.z_bounds[i] > profile.delta)
        .collect();
    Ok(Selection {
        set,
        outside_good_set,
    })
}

/// The `size` indices of `candidates` with smallest z (ties by index).
pub fn select_within(z: &[f64], candidates: &BTreeSet<usize>, size: usize) -> Option<BTreeSet<usize>> {
    if candidates.len() < size {
        return None;
    }
    let mut c: Vec<usize> = candidates.iter().copied().collect();
    c.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    Some(c.into_iter().take(size).collect())
}

/// Sum of the `info_size` smallest bounds: the puncturing-pattern score.
pub fn pattern_score(profile: &ReliabilityProfile, info_size: usize) -> f64 {
    let mut z = profile.z_bounds.clone();
    z.sort_by(f64::total_cmp);
    z.iter().take(info_size).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PunctureChoice {
    pub punctured: BTreeSet<usize>,
    pub profile: ReliabilityProfile,
    pub score: f64,
}

/// Draws `trials` uniformly random puncturing patterns and keeps the one
/// with the lowest score. The first minimum wins.
#[allow(clippy::too_many_arguments)]
pub fn choose_puncture(
    m: usize,
    n_target: usize,
    trials: usize,
    w: &BmsChannel,
    info_size: usize,
    seed: u64,
    mu: usize,
    delta: f64,
) -> Result<PunctureChoice> {
    log2_exact(m)?;
    if n_target > m || n_target == 0 {
        return Err(Error::InvalidParameter(format!(
            "cannot transmit {n_target} of {m} positions"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("puncture trials must be at least 1".into()));
    }
    if info_size > n_target {
        return Err(Error::InvalidParameter(format!(
            "info size {info_size} exceeds transmitted length {n_target}"
        )));
    }
    if n_target == m {
        let profile = evolve_reliability(w, m, &BTreeSet::new(), mu, delta)?;
        let score = pattern_score(&profile, info_size);
        return Ok(PunctureChoice {
            punctured: BTreeSet::new(),
            profile,
            score,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<PunctureChoice> = None;
    for _ in 0..trials {
        let punctured: BTreeSet<usize> = rand::seq::index::sample(&mut rng, m, m - n_target)
            .into_iter()
            .collect();
        let profile = evolve_reliability(w, m, &punctured, mu, delta)?;
        let score = pattern_score(&profile, info_size);
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(PunctureChoice {
                punctured,
                profile,
                score,
            });
        }
    }
    Ok(best.expect("at least one trial"))
}
