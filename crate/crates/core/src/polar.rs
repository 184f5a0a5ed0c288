//! Arıkan transform `G_m = B_m F^{⊗log m}` and successive cancellation
//! decoding for one polar block.
//!
//! Indices are 0-based here. The decoder is incremental: [`ScDecoder`] hands
//! out the LLR of the next u-index and waits for the caller to commit a bit,
//! which lets several blocks be decoded in an interleaved order.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Bit values are stored as `u8` holding 0 or 1.
pub type Bit = u8;

pub fn log2_exact(m: usize) -> Result<u32> {
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(m));
    }
    Ok(m.trailing_zeros())
}

fn reverse_bits(i: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        i.reverse_bits() >> (usize::BITS - bits)
    }
}

/// `perm[i]` is the bit-reversal of `i` over `log2 m` bits.
pub fn bit_reversal_permutation(m: usize) -> Result<Vec<usize>> {
    let bits = log2_exact(m)?;
    Ok((0..m).map(|i| reverse_bits(i, bits)).collect())
}

/// Computes `x = u G_m` over GF(2) with butterflies.
pub fn polar_encode(u: &[Bit]) -> Result<Vec<Bit>> {
    let m = u.len();
    let bits = log2_exact(m)?;
    let mut v = u.to_vec();
    let mut s = 1;
    while s < m {
        for block in (0..m).step_by(2 * s) {
            for j in block..block + s {
                v[j] ^= v[j + s];
            }
        }
        s *= 2;
    }
    Ok((0..m).map(|j| v[reverse_bits(j, bits)]).collect())
}

/// Transmit-side description of one polar block.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarBlockSpec {
    pub m: usize,
    pub punctured: BTreeSet<usize>,
    pub info_set: BTreeSet<usize>,
}

impl PolarBlockSpec {
    pub fn new(m: usize, punctured: BTreeSet<usize>, info_set: BTreeSet<usize>) -> Result<Self> {
        log2_exact(m)?;
        for &i in punctured.iter().chain(info_set.iter()) {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, len: m });
            }
        }
        Ok(PolarBlockSpec {
            m,
            punctured,
            info_set,
        })
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        !self.info_set.contains(&i)
    }
}

/// Check-node combine `2 atanh(tanh(a/2) tanh(b/2))`, written in the
/// numerically stable Jacobian form.
pub fn boxplus(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 || a.is_nan() || b.is_nan() {
        return 0.0;
    }
    let sign = if (a < 0.0) != (b < 0.0) { -1.0 } else { 1.0 };
    let (aa, ab) = (a.abs(), b.abs());
    if aa.is_infinite() && ab.is_infinite() {
        return sign * f64::INFINITY;
    }
    if aa.is_infinite() {
        return sign * ab;
    }
    if ab.is_infinite() {
        return sign * aa;
    }
    let r = sign * aa.min(ab) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p();
    if r.is_nan() {
        0.0
    } else {
        r
    }
}

/// Variable-node combine given the decoded partner bit.
pub fn var_combine(left: f64, right: f64, partner: Bit) -> f64 {
    let r = if partner == 0 { right + left } else { right - left };
    if r.is_nan() {
        0.0
    } else {
        r
    }
}

/// Hard decision; an LLR of exactly zero resolves to 0.
pub fn hard_decision(llr: f64) -> Bit {
    Bit::from(llr < 0.0)
}

/// Incremental SC decoder for one block of length `m`.
#[derive(Debug, Clone)]
pub struct ScDecoder {
    n: u32,
    m: usize,
    // llr[d] holds the LLRs of the current node at depth d (length m >> d)
    llr: Vec<Vec<f64>>,
    // left_cw[d] holds the codeword of the completed left child at depth d
    left_cw: Vec<Vec<Bit>>,
    phase: usize,
    decided: Vec<Bit>,
}

impl ScDecoder {
    /// `channel_llrs` are indexed by transmitted position; punctured positions
    /// should carry 0.
    pub fn new(channel_llrs: &[f64]) -> Result<Self> {
        let m = channel_llrs.len();
        let n = log2_exact(m)?;
        let mut llr: Vec<Vec<f64>> = (0..=n).map(|d| vec![0.0; m >> d]).collect();
        for (j, slot) in llr[0].iter_mut().enumerate() {
            *slot = channel_llrs[reverse_bits(j, n)];
        }
        let left_cw = (0..=n).map(|d| vec![0; m >> d]).collect();
        Ok(ScDecoder {
            n,
            m,
            llr,
            left_cw,
            phase: 0,
            decided: Vec::with_capacity(m),
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn is_done(&self) -> bool {
        self.phase == self.m
    }

    /// LLR of `u[phase]` given the channel and all committed bits.
    pub fn next_llr(&mut self) -> f64 {
        let phi = self.phase;
        assert!(phi < self.m, "decoder already finished");
        let n = self.n as usize;
        let start = if phi == 0 {
            1
        } else {
            let d = n - phi.trailing_zeros() as usize;
            let half = self.m >> d;
            let (upper, lower) = self.llr.split_at_mut(d);
            let parent = &upper[d - 1];
            let cw = &self.left_cw[d];
            for j in 0..half {
                lower[0][j] = var_combine(parent[j], parent[j + half], cw[j]);
            }
            d + 1
        };
        for d in start..=n {
            let half = self.m >> d;
            let (upper, lower) = self.llr.split_at_mut(d);
            let parent = &upper[d - 1];
            for j in 0..half {
                lower[0][j] = boxplus(parent[j], parent[j + half]);
            }
        }
        self.llr[n][0]
    }

    pub fn commit(&mut self, bit: Bit) {
        let phi = self.phase;
        assert!(phi < self.m, "decoder already finished");
        let n = self.n as usize;
        let mut cw = vec![bit];
        let mut d = n;
        while d >= 1 {
            if (phi >> (n - d)) & 1 == 0 {
                self.left_cw[d].copy_from_slice(&cw);
                break;
            }
            let left = &self.left_cw[d];
            let mut parent = Vec::with_capacity(2 * cw.len());
            parent.extend(left.iter().zip(&cw).map(|(a, b)| a ^ b));
            parent.extend_from_slice(&cw);
            cw = parent;
            d -= 1;
        }
        self.decided.push(bit);
        self.phase += 1;
    }

    pub fn decided(&self) -> &[Bit] {
        &self.decided
    }
}

/// Full SC decoding of one block. `known` must give a value for every index
/// outside `spec.info_set`.
pub fn sc_decode(
    llrs: &[f64],
    spec: &PolarBlockSpec,
    known: &std::collections::BTreeMap<usize, Bit>,
) -> Result<Vec<Bit>> {
    if llrs.len() != spec.m {
        return Err(Error::InvalidParameter(format!(
            "{} LLRs for block length {}",
            llrs.len(),
            spec.m
        )));
    }
    let mut dec = ScDecoder::new(llrs)?;
    for i in 0..spec.m {
        let llr = dec.next_llr();
        let bit = if spec.is_frozen(i) {
            *known
                .get(&i)
                .ok_or_else(|| Error::MissingInput(format!("known value for frozen index {i}")))?
        } else {
            hard_decision(llr)
        };
        dec.commit(bit);
    }
    Ok(dec.decided().to_vec())
}
