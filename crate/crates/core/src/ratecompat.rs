//! Rate-compatible chains of polar blocks: rate profiles, scheme
//! construction, incremental encoding and backward decoding.
//!
//! Stage `ℓ` sends a block whose u-vector carries, in `A_ℓ^{(ℓ)}`, either the
//! information bits (`ℓ = 1`) or copies of earlier u-values that a receiver
//! on the worse channel `W_ℓ` cannot decode from the earlier blocks alone.
//! Decoding runs from the newest block back to the first.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_until_nested, AlignmentSchedule, AlignmentStep, PairReport, StepRecord,
};
use crate::channels::{BmsChannel, ChannelSpec};
use crate::construction::{choose_puncture, evolve_reliability, DEFAULT_DELTA, DEFAULT_MU};
use crate::error::{Error, Result};
use crate::polar::{hard_decision, polar_encode, Bit};
use crate::seeding::derive_seed;

pub type Rate = Ratio<u64>;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Parses `"a/b"`, an integer, or a finite decimal such as `"0.55"` exactly.
pub fn parse_rate(s: &str) -> Result<Rate> {
    let s = s.trim();
    let bad = || Error::InvalidParameter(format!("cannot parse rate {s:?}"));
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ratio::new(n, d)
    } else if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let f: u64 = frac.parse().map_err(|_| bad())?;
        Ratio::new(int * den + f, den)
    } else {
        Ratio::from_integer(s.parse().map_err(|_| bad())?)
    };
    Ok(r)
}

pub fn format_rate(r: &Rate) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    pub k: u64,
    pub rates: Vec<Rate>,
    pub incremental_lengths: Vec<u64>,
    pub cumulative_lengths: Vec<u64>,
}

impl RateProfile {
    pub fn num_stages(&self) -> usize {
        self.rates.len()
    }

    pub fn rate_f64(&self, stage: usize) -> f64 {
        let r = self.rates[stage];
        *r.numer() as f64 / *r.denom() as f64
    }

    /// `n_stage · R_channel` (0-based), which must be an integer.
    pub fn size(&self, stage: usize, channel: usize) -> Result<usize> {
        let v = Ratio::from_integer(self.incremental_lengths[stage]) * self.rates[channel];
        if !v.is_integer() {
            return Err(Error::NonIntegralSize {
                stage: stage + 1,
                channel: channel + 1,
                numerator: *v.numer(),
                denominator: *v.denom(),
            });
        }
        Ok(v.to_integer() as usize)
    }
}

pub fn rate_profile(k: u64, rates: &[Rate]) -> Result<RateProfile> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if rates.is_empty() {
        return Err(Error::InvalidParameter("at least one rate is required".into()));
    }
    let one = Ratio::from_integer(1);
    if let Some(r) = rates.iter().find(|r| *r.numer() == 0 || **r > one) {
        return Err(Error::InvalidParameter(format!(
            "rate {} is outside (0, 1]",
            format_rate(r)
        )));
    }
    if rates.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidParameter(
            "rates must be strictly decreasing".into(),
        ));
    }
    let k_r = Ratio::from_integer(k);
    if rates.iter().any(|r| !(k_r / r).is_integer()) {
        let suggested_k = rates.iter().fold(1, |acc, r| lcm(acc, *r.numer()));
        return Err(Error::NonIntegralLengths { k, suggested_k });
    }
    let cumulative_lengths: Vec<u64> = rates.iter().map(|r| (k_r / r).to_integer()).collect();
    let incremental_lengths = cumulative_lengths
        .iter()
        .scan(0, |prev, &c| {
            let n = c - *prev;
            *prev = c;
            Some(n)
        })
        .collect();
    Ok(RateProfile {
        k,
        rates: rates.to_vec(),
        incremental_lengths,
        cumulative_lengths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub delta: f64,
    pub mu: usize,
    pub t_max: u32,
    pub puncture_trials: usize,
    pub seed: u64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            delta: DEFAULT_DELTA,
            mu: DEFAULT_MU,
            t_max: 8,
            puncture_trials: 16,
            seed: 0,
        }
    }
}

/// `u_{target}` of a stage repeats `u_{source_index}` of block `source_block`
/// (0-based stage number).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepeatEntry {
    pub source_block: usize,
    pub source_index: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageBlock {
    /// Base block length (power of two) and transmitted positions per copy.
    pub m: usize,
    pub transmitted: usize,
    pub punctured: BTreeSet<usize>,
    pub puncture_seed: u64,
    pub puncture_score: f64,
    /// Goodness threshold shared by all channels during alignment.
    pub threshold: f64,
    /// Steps this stage needed; the schedule is padded to the global count.
    pub aligned_steps: u32,
    pub schedule: AlignmentSchedule,
    /// `a_sets[i]` is `A_{ℓ+i}^{(ℓ)}` on the effective block.
    pub a_sets: Vec<BTreeSet<usize>>,
    pub repeat_map: Vec<RepeatEntry>,
    pub pairs: Vec<PairReport>,
    pub rate_loss: f64,
    /// `unfrozen_bounds[i]`: sum of bounds of `A_{ℓ+i}^{(ℓ)}` under `W_{ℓ+i}`.
    pub unfrozen_bounds: Vec<f64>,
}

impl StageBlock {
    pub fn effective_len(&self) -> usize {
        self.schedule.output_len()
    }

    pub fn transmitted_len(&self) -> usize {
        self.transmitted * self.schedule.expansion()
    }

    /// `Σ_pairs 2^{-steps}`: what the halving law allows for `rate_loss`.
    pub fn rate_loss_allowance(&self) -> f64 {
        self.pairs.iter().map(|p| 0.5f64.powi(p.steps as i32)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainScheme {
    pub profile: RateProfile,
    pub channel_specs: Vec<ChannelSpec>,
    pub channels: Vec<BmsChannel>,
    pub params: SchemeParams,
    /// Global number of alignment steps `T`; every block is expanded by `2^T`.
    pub expansion_t: u32,
    pub stages: Vec<StageBlock>,
    /// Union bound on the SC error of backward decoding after each stage
    /// under the matching channel.
    pub eq6_bounds: Vec<f64>,
}

impl ChainScheme {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn expansion_factor(&self) -> u64 {
        1 << self.expansion_t
    }

    /// Information bits per session, `k · 2^T`.
    pub fn info_len(&self) -> usize {
        self.profile.k as usize * self.expansion_factor() as usize
    }

    pub fn info_set(&self) -> &BTreeSet<usize> {
        &self.stages[0].a_sets[0]
    }

    pub fn max_rate_loss(&self) -> f64 {
        self.stages.iter().map(|s| s.rate_loss).fold(0.0, f64::max)
    }

    /// Builds the u-vector of `stage` (1-based).
    pub fn stage_u(&self, stage: usize, info: Option<&[Bit]>, prior_u: &[Vec<Bit>]) -> Result<Vec<Bit>> {
        let l = self.check_stage(stage)?;
        let block = &self.stages[l];
        let mut u = vec![0; block.effective_len()];
        if l == 0 {
            let info = info.ok_or_else(|| Error::MissingInput("stage 1 needs the information bits".into()))?;
            if info.len() != self.info_len() {
                return Err(Error::InvalidParameter(format!(
                    "{} information bits supplied, scheme carries {}",
                    info.len(),
                    self.info_len()
                )));
            }
            for (&i, &b) in block.a_sets[0].iter().zip(info) {
                u[i] = b & 1;
            }
        } else {
            if prior_u.len() < l {
                return Err(Error::MissingInput(format!(
                    "stage {stage} needs the u-vectors of stages 1..{l}, got {}",
                    prior_u.len()
                )));
            }
            for e in &block.repeat_map {
                let src = &prior_u[e.source_block];
                if src.len() != self.stages[e.source_block].effective_len() {
                    return Err(Error::InvalidParameter(format!(
                        "u-vector of stage {} has wrong length",
                        e.source_block + 1
                    )));
                }
                u[e.target] = src[e.source_index];
            }
        }
        Ok(u)
    }

    /// Transmitted bits of `stage` for the given u-vector: each base copy is
    /// polar encoded, punctured positions removed, copies concatenated.
    pub fn encode_u(&self, stage: usize, u: &[Bit]) -> Result<Vec<Bit>> {
        let block = &self.stages[self.check_stage(stage)?];
        if u.len() != block.effective_len() {
            return Err(Error::InvalidParameter(format!(
                "u-vector length {} does not match effective length {}",
                u.len(),
                block.effective_len()
            )));
        }
        let mut out = Vec::with_capacity(block.transmitted_len());
        for copy in block.schedule.split_to_base(u) {
            let x = polar_encode(&copy)?;
            out.extend(
                x.into_iter()
                    .enumerate()
                    .filter(|(i, _)| !block.punctured.contains(i))
                    .map(|(_, b)| b),
            );
        }
        Ok(out)
    }

    /// Encodes all stages of a session.
    pub fn encode_session(&self, info: &[Bit]) -> Result<Vec<(Vec<Bit>, Vec<Bit>)>> {
        let mut us: Vec<Vec<Bit>> = Vec::with_capacity(self.num_stages());
        let mut out = Vec::with_capacity(self.num_stages());
        for stage in 1..=self.num_stages() {
            let u = self.stage_u(stage, Some(info), &us)?;
            let x = self.encode_u(stage, &u)?;
            us.push(u.clone());
            out.push((u, x));
        }
        Ok(out)
    }

    fn check_stage(&self, stage: usize) -> Result<usize> {
        if stage == 0 || stage > self.num_stages() {
            return Err(Error::InvalidParameter(format!(
                "stage {stage} outside 1..={}",
                self.num_stages()
            )));
        }
        Ok(stage - 1)
    }

    /// SC-decodes block `l` (0-based). `llrs` covers the transmitted bits.
    fn decode_block(
        &self,
        l: usize,
        llrs: &[f64],
        unfrozen: &BTreeSet<usize>,
        known: &BTreeMap<usize, Bit>,
    ) -> Result<Vec<Bit>> {
        let block = &self.stages[l];
        if llrs.len() != block.transmitted_len() {
            return Err(Error::InvalidParameter(format!(
                "stage {} expects {} channel outputs, got {}",
                l + 1,
                block.transmitted_len(),
                llrs.len()
            )));
        }
        let copies: Vec<Vec<f64>> = llrs
            .chunks(block.transmitted)
            .map(|chunk| {
                let mut full = vec![0.0; block.m];
                let slots = (0..block.m).filter(|i| !block.punctured.contains(i));
                for (slot, &v) in slots.zip(chunk) {
                    full[slot] = v;
                }
                full
            })
            .collect();
        let mut dec = block.schedule.decoder(&copies)?;
        let mut u = Vec::with_capacity(block.effective_len());
        for i in 0..block.effective_len() {
            let llr = dec.next_llr();
            let bit = if unfrozen.contains(&i) {
                hard_decision(llr)
            } else {
                known.get(&i).copied().unwrap_or(0)
            };
            dec.commit(bit);
            u.push(bit);
        }
        Ok(u)
    }
}

/// Ordered bijection from the repeated coordinates `I^{(ℓ)}` to
/// `A_ℓ^{(ℓ)}` (`stage` 1-based, at least 2).
pub fn chain_repeat_map(scheme: &ChainScheme, stage: usize) -> Result<Vec<RepeatEntry>> {
    let a: Vec<&[BTreeSet<usize>]> = scheme.stages.iter().map(|s| s.a_sets.as_slice()).collect();
    repeat_map_from(&a, stage.checked_sub(1).filter(|&l| l >= 1 && l < a.len()).ok_or_else(
        || Error::InvalidParameter(format!("repeat maps exist for stages 2..={}", a.len())),
    )?)
}

fn repeat_map_from(a: &[&[BTreeSet<usize>]], l: usize) -> Result<Vec<RepeatEntry>> {
    let sources: Vec<(usize, usize)> = (0..l)
        .flat_map(|j| {
            let before = &a[j][l - 1 - j];
            let after = &a[j][l - j];
            before.difference(after).map(move |&i| (j, i))
        })
        .collect();
    let targets = &a[l][0];
    if sources.len() != targets.len() {
        return Err(Error::Inconsistent(format!(
            "stage {}: {} repeated values for {} target positions",
            l + 1,
            sources.len(),
            targets.len()
        )));
    }
    Ok(sources
        .into_iter()
        .zip(targets)
        .map(|((source_block, source_index), &target)| RepeatEntry {
            source_block,
            source_index,
            target,
        })
        .collect())
}

/// Record of one HARQ session: stages sent until the receiver decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarqTranscript {
    /// 1-based index of the scheme channel modelling the link, if any.
    pub true_channel: Option<usize>,
    pub stages_attempted: usize,
    pub success_stage: Option<usize>,
    /// New bits sent at each attempted stage.
    pub bits_transmitted: Vec<usize>,
    /// Whether decoding after each attempted stage recovered the information.
    pub decode_outcomes: Vec<bool>,
    pub info_correct: bool,
}

impl HarqTranscript {
    pub fn total_bits(&self) -> usize {
        self.bits_transmitted.iter().sum()
    }
}

/// Stage-`ℓ` encoding: returns `(u_ℓ, x_ℓ)`.
pub fn encode_transmission(
    scheme: &ChainScheme,
    stage: usize,
    info: Option<&[Bit]>,
    prior_u: &[Vec<Bit>],
) -> Result<(Vec<Bit>, Vec<Bit>)> {
    let u = scheme.stage_u(stage, info, prior_u)?;
    let x = scheme.encode_u(stage, &u)?;
    Ok((u, x))
}

/// Decodes the information bits after `stage_bar` (1-based) stages.
/// `llrs[j]` are the channel LLRs of the transmitted bits of stage `j + 1`.
pub fn backward_decode(scheme: &ChainScheme, stage_bar: usize, llrs: &[Vec<f64>]) -> Result<Vec<Bit>> {
    let lb = scheme.check_stage(stage_bar)?;
    if llrs.len() < stage_bar {
        return Err(Error::MissingInput(format!(
            "decoding after stage {stage_bar} needs outputs of {stage_bar} stages, got {}",
            llrs.len()
        )));
    }
    let mut decoded: Vec<Option<Vec<Bit>>> = vec![None; stage_bar];
    for l in (0..=lb).rev() {
        let mut known = BTreeMap::new();
        for later in decoded.iter().enumerate().skip(l + 1) {
            let (j, u) = later;
            let u = u.as_ref().expect("later blocks decoded first");
            for e in scheme.stages[j].repeat_map.iter().filter(|e| e.source_block == l) {
                known.insert(e.source_index, u[e.target]);
            }
        }
        let unfrozen = &scheme.stages[l].a_sets[lb - l];
        if let Some(&i) = known.keys().find(|i| unfrozen.contains(i)) {
            return Err(Error::Inconsistent(format!(
                "stage {} index {} is both repeated later and unfrozen",
                l + 1,
                i + 1
            )));
        }
        decoded[l] = Some(scheme.decode_block(l, &llrs[l], unfrozen, &known)?);
    }
    let u1 = decoded[0].as_ref().expect("first block decoded");
    Ok(scheme.info_set().iter().map(|&i| u1[i]).collect())
}

/// Goodness threshold for a stage. `delta` itself when every channel has
/// at least one good index beyond its required size (alignment then always
/// terminates); otherwise the smallest value leaving each channel half the
/// gap between its capacity share and its size, at least one index.
fn stage_threshold(z: &[Vec<f64>], sizes: &[usize], n: usize, caps: &[f64], delta: f64) -> f64 {
    let enough = z
        .iter()
        .zip(sizes)
        .all(|(zj, &s)| zj.iter().filter(|&&v| v <= delta).count() > s.min(zj.len() - 1));
    if enough {
        return delta;
    }
    let mut tau = delta;
    for (j, zj) in z.iter().enumerate() {
        let gap = ((n as f64 * caps[j] - sizes[j] as f64) / 2.0).floor().max(1.0) as usize;
        let target = (sizes[j] + gap).min(zj.len());
        if target == 0 {
            continue;
        }
        let mut sorted = zj.clone();
        sorted.sort_by(f64::total_cmp);
        tau = tau.max(sorted[target - 1]);
    }
    tau
}

pub fn build_scheme(
    specs: &[ChannelSpec],
    profile: &RateProfile,
    params: &SchemeParams,
) -> Result<ChainScheme> {
    let kk = profile.num_stages();
    if specs.len() != kk {
        return Err(Error::InvalidParameter(format!(
            "{} channels for {kk} stages",
            specs.len()
        )));
    }
    if !(0.0..1.0).contains(&params.delta) {
        return Err(Error::InvalidParameter(format!(
            "delta {} outside [0, 1)",
            params.delta
        )));
    }
    let channels: Vec<BmsChannel> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(s.build()?.with_label(format!("W{}", i + 1))))
        .collect::<Result<_>>()?;
    let caps: Vec<f64> = channels.iter().map(BmsChannel::capacity).collect();
    if caps.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "channel capacities must be strictly decreasing, got {caps:?}"
        )));
    }
    for (l, &cap) in caps.iter().enumerate() {
        let rate = profile.rate_f64(l);
        if rate >= cap {
            return Err(Error::RateAboveCapacity {
                stage: l + 1,
                rate,
                capacity: cap,
            });
        }
    }
    let sizes: Vec<Vec<usize>> = (0..kk)
        .map(|l| (l..kk).map(|j| profile.size(l, j)).collect())
        .collect::<Result<_>>()?;

    struct Raw {
        m: usize,
        transmitted: usize,
        punctured: BTreeSet<usize>,
        puncture_seed: u64,
        puncture_score: f64,
        threshold: f64,
        schedule: AlignmentSchedule,
        z: Vec<Vec<f64>>,
        a_sets: Vec<BTreeSet<usize>>,
        pairs: Vec<PairReport>,
        rate_loss: f64,
    }
    let mut raw = Vec::with_capacity(kk);
    for l in 0..kk {
        let n = profile.incremental_lengths[l] as usize;
        let m = n.next_power_of_two();
        let puncture_seed = derive_seed(params.seed, l as u64 + 1);
        let choice = choose_puncture(
            m,
            n,
            params.puncture_trials,
            &channels[l],
            sizes[l][0],
            puncture_seed,
            params.mu,
            params.delta,
        )?;
        let mut z = vec![choice.profile.z_bounds];
        for w in &channels[l + 1..] {
            z.push(evolve_reliability(w, m, &choice.punctured, params.mu, params.delta)?.z_bounds);
        }
        let threshold = stage_threshold(&z, &sizes[l], n, &caps[l..], params.delta);
        let outcome = align_until_nested(z, &sizes[l], threshold, params.t_max, l + 1, l + 1)?;
        let rate_loss = outcome.rate_loss();
        raw.push(Raw {
            m,
            transmitted: n,
            punctured: choice.punctured,
            puncture_seed,
            puncture_score: choice.score,
            threshold,
            schedule: outcome.schedule,
            z: outcome.z,
            a_sets: outcome.a_sets,
            pairs: outcome.pairs,
            rate_loss,
        });
    }

    // uniform expansion: pad every stage to the same number of steps
    let expansion_t = raw.iter().map(|r| r.schedule.t()).max().unwrap_or(0);
    let mut stages: Vec<StageBlock> = Vec::with_capacity(kk);
    for r in raw {
        let aligned_steps = r.schedule.t();
        let mut schedule = r.schedule;
        let mut z = r.z;
        let mut a_sets = r.a_sets;
        for _ in aligned_steps..expansion_t {
            let n = schedule.output_len();
            schedule.push_passthrough();
            for zj in z.iter_mut() {
                zj.extend_from_within(..);
            }
            for a in a_sets.iter_mut() {
                let shifted: Vec<usize> = a.iter().map(|&i| i + n).collect();
                a.extend(shifted);
            }
        }
        let unfrozen_bounds = a_sets
            .iter()
            .zip(&z)
            .map(|(a, zj)| a.iter().map(|&i| zj[i]).sum())
            .collect();
        stages.push(StageBlock {
            m: r.m,
            transmitted: r.transmitted,
            punctured: r.punctured,
            puncture_seed: r.puncture_seed,
            puncture_score: r.puncture_score,
            threshold: r.threshold,
            aligned_steps,
            schedule,
            a_sets,
            repeat_map: Vec::new(),
            pairs: r.pairs,
            rate_loss: r.rate_loss,
            unfrozen_bounds,
        });
    }
    for l in 1..kk {
        let a: Vec<&[BTreeSet<usize>]> = stages.iter().map(|s| s.a_sets.as_slice()).collect();
        stages[l].repeat_map = repeat_map_from(&a, l)?;
    }
    let eq6_bounds = eq6_from(&stages);
    Ok(ChainScheme {
        profile: profile.clone(),
        channel_specs: specs.to_vec(),
        channels,
        params: params.clone(),
        expansion_t,
        stages,
        eq6_bounds,
    })
}

fn eq6_from(stages: &[StageBlock]) -> Vec<f64> {
    (0..stages.len())
        .map(|lb| {
            (0..=lb)
                .map(|j| stages[j].unfrozen_bounds[lb - j])
                .sum::<f64>()
                .min(1.0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// scheme file (1-based indices)

const FORMAT: &str = "rcpolar-scheme/1";

#[derive(Debug, Serialize, Deserialize)]
struct ProfileDto {
    k: u64,
    rates: Vec<String>,
    incremental_lengths: Vec<u64>,
    cumulative_lengths: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ASetDto {
    channel: usize,
    indices: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RepeatDto {
    source_block: usize,
    source_index: usize,
    target: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageDto {
    stage: usize,
    m: usize,
    transmitted: usize,
    effective_length: usize,
    puncture_seed: u64,
    puncture_score: f64,
    punctured: Vec<usize>,
    threshold: f64,
    aligned_steps: u32,
    alignment: Vec<StepRecord>,
    a_sets: Vec<ASetDto>,
    repeat_map: Vec<RepeatDto>,
    pairs: Vec<PairReport>,
    rate_loss: f64,
    unfrozen_bounds: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemeFile {
    format: String,
    profile: ProfileDto,
    channels: Vec<ChannelSpec>,
    params: SchemeParams,
    expansion_t: u32,
    expansion_factor: u64,
    stages: Vec<StageDto>,
    eq6_bounds: Vec<f64>,
}

fn one_based(set: &BTreeSet<usize>) -> Vec<usize> {
    set.iter().map(|i| i + 1).collect()
}

fn zero_based(v: &[usize], len: usize) -> Result<BTreeSet<usize>> {
    v.iter()
        .map(|&i| {
            if i == 0 || i > len {
                Err(Error::IndexOutOfRange { index: i, len })
            } else {
                Ok(i - 1)
            }
        })
        .collect()
}

impl ChainScheme {
    pub fn to_json(&self) -> Result<String> {
        let file = SchemeFile {
            format: FORMAT.into(),
            profile: ProfileDto {
                k: self.profile.k,
                rates: self.profile.rates.iter().map(format_rate).collect(),
                incremental_lengths: self.profile.incremental_lengths.clone(),
                cumulative_lengths: self.profile.cumulative_lengths.clone(),
            },
            channels: self.channel_specs.clone(),
            params: self.params.clone(),
            expansion_t: self.expansion_t,
            expansion_factor: self.expansion_factor(),
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(l, s)| StageDto {
                    stage: l + 1,
                    m: s.m,
                    transmitted: s.transmitted,
                    effective_length: s.effective_len(),
                    puncture_seed: s.puncture_seed,
                    puncture_score: s.puncture_score,
                    punctured: one_based(&s.punctured),
                    threshold: s.threshold,
                    aligned_steps: s.aligned_steps,
                    alignment: s
                        .schedule
                        .steps
                        .iter()
                        .map(|st| {
                            let r = st.record();
                            StepRecord {
                                n_in: r.n_in,
                                d: r.d.iter().map(|i| i + 1).collect(),
                                d_prime: r.d_prime.iter().map(|i| i + 1).collect(),
                            }
                        })
                        .collect(),
                    a_sets: s
                        .a_sets
                        .iter()
                        .enumerate()
                        .map(|(i, a)| ASetDto {
                            channel: l + i + 1,
                            indices: one_based(a),
                        })
                        .collect(),
                    repeat_map: s
                        .repeat_map
                        .iter()
                        .map(|e| RepeatDto {
                            source_block: e.source_block + 1,
                            source_index: e.source_index + 1,
                            target: e.target + 1,
                        })
                        .collect(),
                    pairs: s.pairs.clone(),
                    rate_loss: s.rate_loss,
                    unfrozen_bounds: s.unfrozen_bounds.clone(),
                })
                .collect(),
            eq6_bounds: self.eq6_bounds.clone(),
        };
        serde_json::to_string_pretty(&file)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Inconsistent(format!("serialization failed: {e}")))
    }

    /// Parses and cross-checks a scheme file.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("malformed scheme file: {e}")))?;
        if file.format != FORMAT {
            return Err(Error::InvalidParameter(format!(
                "unsupported scheme format {:?}",
                file.format
            )));
        }
        let rates: Vec<Rate> = file
            .profile
            .rates
            .iter()
            .map(|s| parse_rate(s))
            .collect::<Result<_>>()?;
        let profile = rate_profile(file.profile.k, &rates)?;
        if profile.incremental_lengths != file.profile.incremental_lengths
            || profile.cumulative_lengths != file.profile.cumulative_lengths
        {
            return Err(Error::Inconsistent("profile lengths disagree with k and rates".into()));
        }
        let kk = profile.num_stages();
        if file.channels.len() != kk || file.stages.len() != kk || file.eq6_bounds.len() != kk {
            return Err(Error::Inconsistent("stage count mismatch".into()));
        }
        let channels: Vec<BmsChannel> = file
            .channels
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(s.build()?.with_label(format!("W{}", i + 1))))
            .collect::<Result<_>>()?;
        let factor = 1usize << file.expansion_t;
        let mut stages = Vec::with_capacity(kk);
        for (l, s) in file.stages.iter().enumerate() {
            if s.stage != l + 1 || s.transmitted != profile.incremental_lengths[l] as usize {
                return Err(Error::Inconsistent(format!("stage {} header mismatch", l + 1)));
            }
            let punctured = zero_based(&s.punctured, s.m)?;
            if s.m - punctured.len() != s.transmitted {
                return Err(Error::Inconsistent(format!(
                    "stage {} punctures {} of {} positions but transmits {}",
                    l + 1,
                    punctured.len(),
                    s.m,
                    s.transmitted
                )));
            }
            let mut schedule = AlignmentSchedule::identity(s.m);
            for r in &s.alignment {
                let rec = StepRecord {
                    n_in: r.n_in,
                    d: zero_based(&r.d, r.n_in)?.into_iter().collect(),
                    d_prime: zero_based(&r.d_prime, r.n_in)?.into_iter().collect(),
                };
                if rec.n_in != schedule.output_len() {
                    return Err(Error::Inconsistent(format!(
                        "stage {} alignment step input length mismatch",
                        l + 1
                    )));
                }
                schedule.steps.push(AlignmentStep::from_record(&rec)?);
            }
            if schedule.t() != file.expansion_t || schedule.output_len() != s.effective_length {
                return Err(Error::Inconsistent(format!(
                    "stage {} schedule does not match the expansion",
                    l + 1
                )));
            }
            if s.a_sets.len() != kk - l {
                return Err(Error::Inconsistent(format!("stage {} A-set count", l + 1)));
            }
            let mut a_sets = Vec::with_capacity(kk - l);
            for (i, a) in s.a_sets.iter().enumerate() {
                let set = zero_based(&a.indices, s.effective_length)?;
                if a.channel != l + i + 1 || set.len() != profile.size(l, l + i)? * factor {
                    return Err(Error::Inconsistent(format!(
                        "stage {} A set for channel {} has wrong size",
                        l + 1,
                        a.channel
                    )));
                }
                a_sets.push(set);
            }
            if a_sets.windows(2).any(|w| !w[1].is_subset(&w[0])) {
                return Err(Error::Inconsistent(format!("stage {} A sets are not nested", l + 1)));
            }
            let repeat_map = s
                .repeat_map
                .iter()
                .map(|e| RepeatEntry {
                    source_block: e.source_block.wrapping_sub(1),
                    source_index: e.source_index.wrapping_sub(1),
                    target: e.target.wrapping_sub(1),
                })
                .collect();
            stages.push(StageBlock {
                m: s.m,
                transmitted: s.transmitted,
                punctured,
                puncture_seed: s.puncture_seed,
                puncture_score: s.puncture_score,
                threshold: s.threshold,
                aligned_steps: s.aligned_steps,
                schedule,
                a_sets,
                repeat_map,
                pairs: s.pairs.clone(),
                rate_loss: s.rate_loss,
                unfrozen_bounds: s.unfrozen_bounds.clone(),
            });
        }
        for l in 1..kk {
            let a: Vec<&[BTreeSet<usize>]> = stages.iter().map(|s| s.a_sets.as_slice()).collect();
            if repeat_map_from(&a, l)? != stages[l].repeat_map {
                return Err(Error::Inconsistent(format!(
                    "stage {} repeat map disagrees with its A sets",
                    l + 1
                )));
            }
        }
        Ok(ChainScheme {
            profile,
            channel_specs: file.channels,
            channels,
            params: file.params,
            expansion_t: file.expansion_t,
            stages,
            eq6_bounds: file.eq6_bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Rate {
        Ratio::new(n, d)
    }

    fn bec(eps: f64) -> ChannelSpec {
        ChannelSpec::Bec { eps }
    }

    fn noiseless_llrs(x: &[Bit]) -> Vec<f64> {
        x.iter()
            .map(|&b| if b == 0 { f64::INFINITY } else { f64::NEG_INFINITY })
            .collect()
    }

    #[test]
    fn profile_examples() {
        let p = rate_profile(8, &[r(1, 2), r(1, 3), r(1, 4)]).unwrap();
        assert_eq!(p.incremental_lengths, vec![16, 8, 8]);
        assert_eq!(p.cumulative_lengths, vec![16, 24, 32]);
        assert_eq!(rate_profile(8, &[r(1, 2)]).unwrap().incremental_lengths, vec![16]);
        let p = rate_profile(10, &[r(1, 2), r(1, 3)]).unwrap();
        assert_eq!(p.cumulative_lengths, vec![20, 30]);
        assert_eq!(p.incremental_lengths, vec![20, 10]);
    }

    #[test]
    fn profile_errors() {
        assert_eq!(
            rate_profile(7, &[r(2, 3), r(2, 5)]),
            Err(Error::NonIntegralLengths { k: 7, suggested_k: 2 })
        );
        assert_eq!(
            rate_profile(5, &[r(11, 20), r(7, 20)]),
            Err(Error::NonIntegralLengths { k: 5, suggested_k: 77 })
        );
        assert!(rate_profile(8, &[r(1, 3), r(1, 2)]).is_err());
        assert!(rate_profile(8, &[r(1, 2), r(1, 2)]).is_err());
        assert!(rate_profile(8, &[r(3, 2)]).is_err());
        assert!(rate_profile(8, &[]).is_err());
    }

    #[test]
    fn parse_rates() {
        assert_eq!(parse_rate("0.55").unwrap(), r(11, 20));
        assert_eq!(parse_rate(" 7/20 ").unwrap(), r(7, 20));
        assert_eq!(parse_rate(".5").unwrap(), r(1, 2));
        assert_eq!(parse_rate("1").unwrap(), r(1, 1));
        assert!(parse_rate("1/0").is_err());
        assert!(parse_rate("x").is_err());
        assert!(parse_rate("0.").is_err());
    }

    #[test]
    fn non_integral_sizes_rejected() {
        // n = (20, 10); n_2 · R_1 = 10/2 fine, but n_1 · R_2 = 20/3
        let p = rate_profile(10, &[r(1, 2), r(1, 3)]).unwrap();
        let e = build_scheme(&[bec(0.1), bec(0.2)], &p, &SchemeParams::default()).unwrap_err();
        assert!(matches!(e, Error::NonIntegralSize { stage: 1, channel: 2, .. }));
    }

    #[test]
    fn rate_above_capacity_names_stage() {
        let p = rate_profile(8, &[r(1, 2), r(1, 4)]).unwrap();
        let e = build_scheme(&[bec(0.3), bec(0.8)], &p, &SchemeParams::default()).unwrap_err();
        assert!(matches!(e, Error::RateAboveCapacity { stage: 2, .. }));
    }

    #[test]
    fn eq12_example() {
        let p = rate_profile(8, &[r(1, 2), r(1, 4)]).unwrap();
        let s = build_scheme(&[bec(0.05), bec(0.2)], &p, &SchemeParams::default()).unwrap();
        assert_eq!(s.expansion_t, 0);
        assert_eq!(s.stages[0].a_sets[0].len(), 8);
        assert_eq!(s.stages[0].a_sets[1].len(), 4);
        assert_eq!(s.stages[1].a_sets[0].len(), 4);
        let map = chain_repeat_map(&s, 2).unwrap();
        assert_eq!(map.len(), 4);
        let sources: Vec<usize> = s.stages[0].a_sets[0]
            .difference(&s.stages[0].a_sets[1])
            .copied()
            .collect();
        let targets: Vec<usize> = s.stages[1].a_sets[0].iter().copied().collect();
        for (e, (src, tgt)) in map.iter().zip(sources.iter().zip(&targets)) {
            assert_eq!((e.source_block, e.source_index, e.target), (0, *src, *tgt));
        }
        assert!(chain_repeat_map(&s, 1).is_err());
    }

    #[test]
    fn degraded_family_needs_no_alignment() {
        let p = rate_profile(48, &[r(3, 5), r(2, 5)]).unwrap();
        let s = build_scheme(&[bec(0.3), bec(0.5)], &p, &SchemeParams::default()).unwrap();
        assert_eq!(s.expansion_t, 0);
        assert!(s.stages.iter().all(|b| b.schedule.steps.is_empty()));
        assert!(s.stages[0].a_sets[1].is_subset(&s.stages[0].a_sets[0]));
    }

    #[test]
    fn three_stage_noiseless_round_trip() {
        let p = rate_profile(12, &[r(1, 2), r(1, 3), r(1, 4)]).unwrap();
        let specs = [bec(0.05), bec(0.15), bec(0.3)];
        let s = build_scheme(&specs, &p, &SchemeParams::default()).unwrap();
        let info: Vec<Bit> = (0..s.info_len()).map(|i| ((i * 7 + 3) % 5 % 2) as Bit).collect();
        let session = s.encode_session(&info).unwrap();
        for (l, (_, x)) in session.iter().enumerate() {
            assert_eq!(x.len(), p.incremental_lengths[l] as usize);
        }
        let llrs: Vec<Vec<f64>> = session.iter().map(|(_, x)| noiseless_llrs(x)).collect();
        for stage in 1..=3 {
            assert_eq!(backward_decode(&s, stage, &llrs).unwrap(), info);
        }
    }

    #[test]
    fn single_stage_is_plain_polar_code() {
        let p = rate_profile(4, &[r(1, 2)]).unwrap();
        let s = build_scheme(&[bec(0.2)], &p, &SchemeParams::default()).unwrap();
        let info: Vec<Bit> = vec![1, 0, 1, 1];
        let (u, x) = encode_transmission(&s, 1, Some(&info), &[]).unwrap();
        let mut expect_u = vec![0; 8];
        for (&i, &b) in s.info_set().iter().zip(&info) {
            expect_u[i] = b;
        }
        assert_eq!(u, expect_u);
        assert_eq!(x, polar_encode(&expect_u).unwrap());
        let zero = encode_transmission(&s, 1, Some(&[0; 4]), &[]).unwrap().1;
        assert!(zero.iter().all(|&b| b == 0));
    }

    #[test]
    fn encode_argument_errors() {
        let p = rate_profile(8, &[r(1, 2), r(1, 4)]).unwrap();
        let s = build_scheme(&[bec(0.05), bec(0.2)], &p, &SchemeParams::default()).unwrap();
        assert!(matches!(
            encode_transmission(&s, 1, None, &[]),
            Err(Error::MissingInput(_))
        ));
        assert!(matches!(
            encode_transmission(&s, 2, None, &[]),
            Err(Error::MissingInput(_))
        ));
        assert!(encode_transmission(&s, 3, None, &[]).is_err());
        assert!(matches!(backward_decode(&s, 2, &[vec![]]), Err(Error::MissingInput(_))));
    }

    #[test]
    fn scheme_json_round_trip() {
        let p = rate_profile(12, &[r(1, 2), r(1, 3), r(1, 4)]).unwrap();
        let specs = [bec(0.05), bec(0.15), bec(0.3)];
        let s = build_scheme(&specs, &p, &SchemeParams::default()).unwrap();
        let text = s.to_json().unwrap();
        let back = ChainScheme::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json().unwrap(), text);
        let broken = text.replacen("\"format\": \"rcpolar-scheme/1\"", "\"format\": \"x\"", 1);
        assert!(ChainScheme::from_json(&broken).is_err());
    }
}
