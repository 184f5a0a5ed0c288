//! Extra polarization steps that align the good-index sets of channels which
//! are not ordered by degradation.
//!
//! One step takes two i.i.d. copies `a`, `b` of a length-`n` u-vector and
//! emits a length-`2n` vector. Position `d_i` of copy `a` (good for the next
//! channel only) is paired with position `d'_i` of copy `b` (good for the
//! current channel only): the output carries `a[d_i] ^ b[d'_i]` followed by
//! `b[d'_i]`. Everything else passes through in order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::construction::{select_within, threshold_set};
use crate::error::{Error, Result};
use crate::polar::{boxplus, var_combine, Bit, ScDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSource {
    CopyA(usize),
    CopyB(usize),
    /// `a[d] ^ b[d']`
    Xor { d: usize, d_prime: usize },
    /// `b[d']`, always emitted right after the matching `Xor`.
    Repeat { d: usize, d_prime: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStep {
    pub n_in: usize,
    pub d_set: Vec<usize>,
    pub d_prime_set: Vec<usize>,
    pub position_map: Vec<OutputSource>,
}

/// Serialized form of a step: the map is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n_in: usize,
    pub d: Vec<usize>,
    pub d_prime: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSchedule {
    pub base_len: usize,
    pub steps: Vec<AlignmentStep>,
}

fn strictly_sorted(v: &[usize]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// `D = L_next \ L_cur`; `D'` = the `|D|` most reliable (under the current
/// channel) indices of `L_cur \ L_next`.
pub fn mismatch_sets(
    l_next: &BTreeSet<usize>,
    l_cur: &BTreeSet<usize>,
    z_cur: &[f64],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let d: Vec<usize> = l_next.difference(l_cur).copied().collect();
    let donors: BTreeSet<usize> = l_cur.difference(l_next).copied().collect();
    if donors.len() < d.len() {
        return Err(Error::BlockTooSmall {
            cur: 0,
            next: 1,
            available: donors.len(),
            needed: d.len(),
        });
    }
    let d_prime = select_within(z_cur, &donors, d.len())
        .expect("donor count checked")
        .into_iter()
        .collect();
    Ok((d, d_prime))
}

pub fn build_alignment_step(d: &[usize], d_prime: &[usize], n_in: usize) -> Result<AlignmentStep> {
    if d.len() != d_prime.len() {
        return Err(Error::InvalidParameter(format!(
            "|D|={} differs from |D'|={}",
            d.len(),
            d_prime.len()
        )));
    }
    if !strictly_sorted(d) || !strictly_sorted(d_prime) {
        return Err(Error::InvalidParameter("D and D' must be sorted and distinct".into()));
    }
    if let Some(&bad) = d.iter().chain(d_prime).find(|&&i| i >= n_in) {
        return Err(Error::IndexOutOfRange { index: bad, len: n_in });
    }
    let mut map = Vec::with_capacity(2 * n_in);
    let (mut next_a, mut next_b) = (0, 0);
    for (&di, &dpi) in d.iter().zip(d_prime) {
        map.extend((next_a..di).map(OutputSource::CopyA));
        map.extend((next_b..dpi).map(OutputSource::CopyB));
        map.push(OutputSource::Xor { d: di, d_prime: dpi });
        map.push(OutputSource::Repeat { d: di, d_prime: dpi });
        next_a = di + 1;
        next_b = dpi + 1;
    }
    map.extend((next_a..n_in).map(OutputSource::CopyA));
    map.extend((next_b..n_in).map(OutputSource::CopyB));
    Ok(AlignmentStep {
        n_in,
        d_set: d.to_vec(),
        d_prime_set: d_prime.to_vec(),
        position_map: map,
    })
}

/// Minus bound `za + zb - za*zb` at XOR positions, plus bound `za*zb` at
/// repeat positions; pass-through elsewhere.
pub fn propagate_reliability(step: &AlignmentStep, z_a: &[f64], z_b: &[f64]) -> Result<Vec<f64>> {
    if z_a.len() != step.n_in || z_b.len() != step.n_in {
        return Err(Error::InvalidParameter(format!(
            "reliability vectors of length {} and {} for a step on {}",
            z_a.len(),
            z_b.len(),
            step.n_in
        )));
    }
    Ok(step
        .position_map
        .iter()
        .map(|src| match *src {
            OutputSource::CopyA(i) => z_a[i],
            OutputSource::CopyB(i) => z_b[i],
            OutputSource::Xor { d, d_prime } => {
                let (x, y) = (z_a[d], z_b[d_prime]);
                (x + y - x * y).clamp(0.0, 1.0)
            }
            OutputSource::Repeat { d, d_prime } => z_a[d] * z_b[d_prime],
        })
        .collect())
}

impl AlignmentStep {
    pub fn record(&self) -> StepRecord {
        StepRecord {
            n_in: self.n_in,
            d: self.d_set.clone(),
            d_prime: self.d_prime_set.clone(),
        }
    }

    pub fn from_record(r: &StepRecord) -> Result<Self> {
        build_alignment_step(&r.d, &r.d_prime, r.n_in)
    }

    pub fn combine_bits(&self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        self.position_map
            .iter()
            .map(|src| match *src {
                OutputSource::CopyA(i) => a[i],
                OutputSource::CopyB(i) => b[i],
                OutputSource::Xor { d, d_prime } => a[d] ^ b[d_prime],
                OutputSource::Repeat { d_prime, .. } => b[d_prime],
            })
            .collect()
    }

    pub fn split_bits(&self, out: &[Bit]) -> (Vec<Bit>, Vec<Bit>) {
        let mut a = vec![0; self.n_in];
        let mut b = vec![0; self.n_in];
        let mut xor = 0;
        for (p, src) in self.position_map.iter().enumerate() {
            match *src {
                OutputSource::CopyA(i) => a[i] = out[p],
                OutputSource::CopyB(i) => b[i] = out[p],
                OutputSource::Xor { .. } => xor = out[p],
                OutputSource::Repeat { d, d_prime } => {
                    b[d_prime] = out[p];
                    a[d] = xor ^ out[p];
                }
            }
        }
        (a, b)
    }
}

impl AlignmentSchedule {
    pub fn identity(base_len: usize) -> Self {
        AlignmentSchedule {
            base_len,
            steps: Vec::new(),
        }
    }

    pub fn t(&self) -> u32 {
        self.steps.len() as u32
    }

    pub fn expansion(&self) -> usize {
        1 << self.steps.len()
    }

    pub fn output_len(&self) -> usize {
        self.base_len << self.steps.len()
    }

    /// Appends a step with empty `D`: plain concatenation of two copies.
    pub fn push_passthrough(&mut self) {
        let n_in = self.output_len();
        self.steps
            .push(build_alignment_step(&[], &[], n_in).expect("empty step is valid"));
    }

    /// Splits an extended u-vector into its `2^t` base u-vectors, in copy order.
    pub fn split_to_base(&self, u: &[Bit]) -> Vec<Vec<Bit>> {
        let mut level = vec![u.to_vec()];
        for step in self.steps.iter().rev() {
            level = level
                .iter()
                .flat_map(|v| {
                    let (a, b) = step.split_bits(v);
                    [a, b]
                })
                .collect();
        }
        level
    }

    /// Inverse of [`split_to_base`](Self::split_to_base).
    pub fn combine_from_base(&self, base: &[Vec<Bit>]) -> Vec<Bit> {
        let mut level = base.to_vec();
        for step in &self.steps {
            level = level
                .chunks(2)
                .map(|pair| step.combine_bits(&pair[0], &pair[1]))
                .collect();
        }
        level.pop().unwrap_or_default()
    }

    /// Incremental SC decoder over the extended block. `copy_llrs[c]` are the
    /// channel LLRs of base copy `c` (length `base_len`).
    pub fn decoder(&self, copy_llrs: &[Vec<f64>]) -> Result<AlignedDecoder<'_>> {
        if copy_llrs.len() != self.expansion() {
            return Err(Error::InvalidParameter(format!(
                "{} base copies supplied, schedule expects {}",
                copy_llrs.len(),
                self.expansion()
            )));
        }
        fn build<'s>(
            steps: &'s [AlignmentStep],
            copies: &[Vec<f64>],
        ) -> Result<AlignedDecoder<'s>> {
            match steps.split_last() {
                None => Ok(AlignedDecoder::Base(ScDecoder::new(&copies[0])?)),
                Some((last, rest)) => {
                    let half = copies.len() / 2;
                    Ok(AlignedDecoder::Aligned {
                        map: &last.position_map,
                        a: Box::new(build(rest, &copies[..half])?),
                        b: Box::new(build(rest, &copies[half..])?),
                        pos: 0,
                        llr_a: 0.0,
                        llr_b: 0.0,
                        xor_bit: 0,
                    })
                }
            }
        }
        build(&self.steps, copy_llrs)
    }
}

/// SC decoding through alignment layers. XOR positions use a check-node
/// combine of the paired metrics; the following repeat position uses a
/// variable-node combine given the decided XOR bit.
pub enum AlignedDecoder<'s> {
    Base(ScDecoder),
    Aligned {
        map: &'s [OutputSource],
        a: Box<AlignedDecoder<'s>>,
        b: Box<AlignedDecoder<'s>>,
        pos: usize,
        llr_a: f64,
        llr_b: f64,
        xor_bit: Bit,
    },
}

impl AlignedDecoder<'_> {
    pub fn next_llr(&mut self) -> f64 {
        match self {
            AlignedDecoder::Base(dec) => dec.next_llr(),
            AlignedDecoder::Aligned {
                map,
                a,
                b,
                pos,
                llr_a,
                llr_b,
                xor_bit,
            } => match map[*pos] {
                OutputSource::CopyA(_) => a.next_llr(),
                OutputSource::CopyB(_) => b.next_llr(),
                OutputSource::Xor { .. } => {
                    *llr_a = a.next_llr();
                    *llr_b = b.next_llr();
                    boxplus(*llr_a, *llr_b)
                }
                OutputSource::Repeat { .. } => var_combine(*llr_a, *llr_b, *xor_bit),
            },
        }
    }

    pub fn commit(&mut self, bit: Bit) {
        match self {
            AlignedDecoder::Base(dec) => dec.commit(bit),
            AlignedDecoder::Aligned {
                map,
                a,
                b,
                pos,
                xor_bit,
                ..
            } => {
                match map[*pos] {
                    OutputSource::CopyA(_) => a.commit(bit),
                    OutputSource::CopyB(_) => b.commit(bit),
                    OutputSource::Xor { .. } => *xor_bit = bit,
                    OutputSource::Repeat { .. } => {
                        b.commit(bit);
                        a.commit(*xor_bit ^ bit);
                    }
                }
                *pos += 1;
            }
        }
    }
}

/// Per adjacent-pair bookkeeping of an alignment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    /// 1-based channel numbers.
    pub cur: usize,
    pub next: usize,
    pub initial_mismatch: usize,
    pub initial_fraction: f64,
    pub steps: u32,
    pub final_mismatch: usize,
    pub final_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentOutcome {
    pub schedule: AlignmentSchedule,
    /// Reliabilities per channel on the extended block.
    pub z: Vec<Vec<f64>>,
    pub good_sets: Vec<BTreeSet<usize>>,
    pub a_sets: Vec<BTreeSet<usize>>,
    pub pairs: Vec<PairReport>,
}

impl AlignmentOutcome {
    /// Sum over pairs of the residual fraction of positions good for a later
    /// channel but not for all earlier ones.
    pub fn rate_loss(&self) -> f64 {
        self.pairs.iter().map(|p| p.final_fraction).fold(0.0, |a, b| a + b)
    }
}

/// Result of a nested selection attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum NestedSelection {
    Nested(Vec<BTreeSet<usize>>),
    /// First channel position whose candidate pool is too small.
    Deficient { position: usize, pool: usize },
}

/// Chooses `A_0 ⊇ A_1 ⊇ ...` with `A_i` drawn from `C_i = L_0 ∩ ... ∩ L_i`,
/// filling each set by smallest reliability bound under its own channel.
pub fn nested_select(
    z: &[Vec<f64>],
    good_sets: &[BTreeSet<usize>],
    sizes: &[usize],
) -> NestedSelection {
    let k = sizes.len();
    let mut pools: Vec<BTreeSet<usize>> = Vec::with_capacity(k);
    for i in 0..k {
        let pool = match pools.last() {
            None => good_sets[0].clone(),
            Some(prev) => prev.intersection(&good_sets[i]).copied().collect(),
        };
        if pool.len() < sizes[i] {
            return NestedSelection::Deficient {
                position: i,
                pool: pool.len(),
            };
        }
        pools.push(pool);
    }
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    let mut carried = BTreeSet::new();
    for i in (0..k).rev() {
        let extra = sizes[i].saturating_sub(carried.len());
        let pool: BTreeSet<usize> = pools[i].difference(&carried).copied().collect();
        let add = select_within(&z[i], &pool, extra).expect("pool size checked");
        carried.extend(add);
        sets[i] = carried.clone();
    }
    NestedSelection::Nested(sets)
}

/// Applies alignment steps until nested sets of the required sizes exist.
///
/// `z[j]` are the reliabilities of the block under the j-th channel of the
/// chain (better channels first), `sizes[j]` the required set sizes on the
/// unexpanded block, `threshold` the common goodness threshold, and
/// `first_channel` the 1-based number of `z[0]`'s channel for reports.
pub fn align_until_nested(
    z: Vec<Vec<f64>>,
    sizes: &[usize],
    threshold: f64,
    t_max: u32,
    stage: usize,
    first_channel: usize,
) -> Result<AlignmentOutcome> {
    let k = z.len();
    if k == 0 || sizes.len() != k {
        return Err(Error::InvalidParameter(
            "one required size per channel is needed".into(),
        ));
    }
    if sizes.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "required sizes must be non-increasing".into(),
        ));
    }
    let base_len = z[0].len();
    let mut z = z;
    let mut sizes = sizes.to_vec();
    let mut schedule = AlignmentSchedule::identity(base_len);
    let mut pairs: Vec<PairReport> = (1..k)
        .map(|i| PairReport {
            cur: first_channel + i - 1,
            next: first_channel + i,
            initial_mismatch: 0,
            initial_fraction: 0.0,
            steps: 0,
            final_mismatch: 0,
            final_fraction: 0.0,
        })
        .collect();
    let mut first_pass = true;
    loop {
        let n = schedule.output_len();
        let good: Vec<BTreeSet<usize>> = z.iter().map(|zj| threshold_set(zj, threshold)).collect();
        // residual mismatch of each pair against the pool of all earlier channels
        let mut pool = good[0].clone();
        for i in 1..k {
            let mism = good[i].difference(&pool).count();
            let p = &mut pairs[i - 1];
            p.final_mismatch = mism;
            p.final_fraction = mism as f64 / n as f64;
            if first_pass {
                p.initial_mismatch = mism;
                p.initial_fraction = p.final_fraction;
            }
            pool = pool.intersection(&good[i]).copied().collect();
        }
        first_pass = false;
        let (position, pool_size) = match nested_select(&z, &good, &sizes) {
            NestedSelection::Nested(a_sets) => {
                return Ok(AlignmentOutcome {
                    schedule,
                    z,
                    good_sets: good,
                    a_sets,
                    pairs,
                });
            }
            NestedSelection::Deficient { position, pool } => (position, pool),
        };
        if position == 0 || good[position].len() < sizes[position] {
            return Err(Error::InsufficientReliable {
                channel: first_channel + position,
                available: if position == 0 { pool_size } else { good[position].len() },
                needed: sizes[position],
            });
        }
        let pair = &pairs[position - 1];
        if pair.steps >= t_max {
            return Err(Error::AlignmentFailed {
                stage,
                cur: pair.cur,
                next: pair.next,
                t_max,
                residual: pair.final_fraction,
            });
        }
        let earlier: BTreeSet<usize> = good[..position]
            .iter()
            .skip(1)
            .fold(good[0].clone(), |acc, g| acc.intersection(g).copied().collect());
        let (d, d_prime) = mismatch_sets(&good[position], &earlier, &z[position - 1]).map_err(
            |e| match e {
                Error::BlockTooSmall {
                    available, needed, ..
                } => Error::BlockTooSmall {
                    cur: pair.cur,
                    next: pair.next,
                    available,
                    needed,
                },
                other => other,
            },
        )?;
        let step = build_alignment_step(&d, &d_prime, n)?;
        for zj in z.iter_mut() {
            *zj = propagate_reliability(&step, zj, zj)?;
        }
        for s in sizes.iter_mut() {
            *s *= 2;
        }
        pairs[position - 1].steps += 1;
        schedule.steps.push(step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use OutputSource::*;

    #[test]
    fn mismatch_examples() {
        let l_cur: BTreeSet<usize> = [1, 2, 3].into();
        let l_next: BTreeSet<usize> = [2, 3].into();
        assert_eq!(
            mismatch_sets(&l_next, &l_cur, &[0.0; 4]).unwrap(),
            (vec![], vec![])
        );
        // 1-based {2,4} vs {3,4}
        let (d, dp) = mismatch_sets(&[1, 3].into(), &[2, 3].into(), &[0.5; 4]).unwrap();
        assert_eq!((d, dp), (vec![1], vec![2]));
        // 1-based L_next={1,2,6}, L_cur={2,3,5,6}, z(3)=0.01, z(5)=0.001
        let mut z = vec![0.5; 6];
        z[2] = 0.01;
        z[4] = 0.001;
        let (d, dp) = mismatch_sets(&[0, 1, 5].into(), &[1, 2, 4, 5].into(), &z).unwrap();
        assert_eq!((d, dp), (vec![0], vec![4]));
        assert!(matches!(
            mismatch_sets(&[0, 1].into(), &[2].into(), &[0.1; 3]),
            Err(Error::BlockTooSmall { .. })
        ));
    }

    #[test]
    fn step_layout_examples() {
        let s = build_alignment_step(&[], &[], 2).unwrap();
        assert_eq!(s.position_map, vec![CopyA(0), CopyA(1), CopyB(0), CopyB(1)]);
        // 1-based D={2}, D'={3}, n_in=4
        let s = build_alignment_step(&[1], &[2], 4).unwrap();
        assert_eq!(
            s.position_map,
            vec![
                CopyA(0),
                CopyB(0),
                CopyB(1),
                Xor { d: 1, d_prime: 2 },
                Repeat { d: 1, d_prime: 2 },
                CopyA(2),
                CopyA(3),
                CopyB(3)
            ]
        );
        let s = build_alignment_step(&[0], &[0], 2).unwrap();
        assert_eq!(
            s.position_map,
            vec![
                Xor { d: 0, d_prime: 0 },
                Repeat { d: 0, d_prime: 0 },
                CopyA(1),
                CopyB(1)
            ]
        );
        assert!(build_alignment_step(&[0, 1], &[0], 2).is_err());
        assert!(build_alignment_step(&[1, 0], &[0, 1], 2).is_err());
        assert!(build_alignment_step(&[2], &[0], 2).is_err());
    }

    #[test]
    fn propagate_examples() {
        let s = build_alignment_step(&[], &[], 2).unwrap();
        assert_eq!(
            propagate_reliability(&s, &[0.1, 0.2], &[0.1, 0.2]).unwrap(),
            vec![0.1, 0.2, 0.1, 0.2]
        );
        let s = build_alignment_step(&[0], &[1], 2).unwrap();
        let out = propagate_reliability(&s, &[0.2, 0.2], &[0.2, 0.2]).unwrap();
        assert!((out[1] - 0.36).abs() < 1e-15);
        assert!((out[2] - 0.04).abs() < 1e-15);
        let out = propagate_reliability(&s, &[1.0; 2], &[1.0; 2]).unwrap();
        assert_eq!(out, vec![1.0; 4]);
        assert!(propagate_reliability(&s, &[1.0; 3], &[1.0; 2]).is_err());
    }

    #[test]
    fn split_inverts_combine() {
        let s = build_alignment_step(&[0, 2], &[1, 3], 4).unwrap();
        let a = vec![1, 0, 1, 1];
        let b = vec![0, 1, 1, 0];
        let out = s.combine_bits(&a, &b);
        assert_eq!(s.split_bits(&out), (a, b));
        let mut seen_a = vec![0; 4];
        let mut seen_b = vec![0; 4];
        for src in &s.position_map {
            match *src {
                CopyA(i) => seen_a[i] += 1,
                CopyB(i) => seen_b[i] += 1,
                Xor { d, d_prime } => {
                    seen_a[d] += 1;
                    seen_b[d_prime] += 1;
                }
                Repeat { .. } => {}
            }
        }
        assert_eq!(seen_a, vec![1; 4]);
        assert_eq!(seen_b, vec![1; 4]);
    }

    #[test]
    fn nested_pair_needs_no_steps() {
        let z = vec![vec![0.9, 0.01, 0.02, 0.001], vec![0.95, 0.3, 0.05, 0.01]];
        let out = align_until_nested(z, &[3, 2], 0.1, 8, 1, 1).unwrap();
        assert_eq!(out.schedule.t(), 0);
        assert_eq!(out.a_sets[0], [1, 2, 3].into());
        assert_eq!(out.a_sets[1], [2, 3].into());
    }

    #[test]
    fn single_mismatch_is_aligned() {
        // good for channel 1: {0..=4}; good for channel 2: {3..=6}; |A2|=3 needs slack
        let z = vec![
            vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.5, 0.6, 0.9],
            vec![0.5, 0.6, 0.7, 0.01, 0.02, 0.03, 0.04, 0.9],
        ];
        let out = align_until_nested(z, &[4, 3], 0.1, 8, 1, 1).unwrap();
        assert_eq!(out.schedule.t(), 1);
        assert_eq!(out.schedule.steps[0].d_set, vec![5, 6]);
        assert_eq!(out.schedule.steps[0].d_prime_set, vec![0, 1]);
        assert_eq!(out.pairs[0].initial_mismatch, 2);
        assert_eq!(out.pairs[0].final_mismatch, 2);
        assert!(out.a_sets[0].is_superset(&out.a_sets[1]));
        assert_eq!(out.a_sets[0].len(), 4usize << out.schedule.t());
        for (j, set) in out.a_sets.iter().enumerate() {
            assert!(set.iter().all(|&i| out.z[j][i] <= 0.1));
        }
        assert!(out.rate_loss() <= 2f64.powi(-(out.schedule.t() as i32)));
    }

    #[test]
    fn hopeless_alignment_fails_at_t_max() {
        // channel 2 needs all of its good set, and half of it is bad for channel 1
        let z = vec![vec![0.01, 0.01, 0.9, 0.9], vec![0.9, 0.01, 0.01, 0.9]];
        let err = align_until_nested(z, &[2, 2], 0.1, 3, 1, 1).unwrap_err();
        assert!(matches!(err, Error::AlignmentFailed { t_max: 3, .. }), "{err:?}");
    }
}
