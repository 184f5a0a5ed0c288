//! HARQ with incremental redundancy over simulated links, and a Monte Carlo
//! harness measuring per-stage error rates against the scheme's bounds.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::ratecompat::HarqTranscript;
use crate::channels::BmsChannel;
use crate::error::{Error, Result};
use crate::polar::Bit;
use crate::ratecompat::{backward_decode, encode_transmission, ChainScheme};
use crate::seeding::substream;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Samples channel outputs and returns their LLRs.
#[derive(Debug, Clone)]
pub struct LinkSampler {
    given: [WeightedIndex<f64>; 2],
    llrs: Vec<f64>,
}

impl LinkSampler {
    pub fn new(w: &BmsChannel) -> Result<Self> {
        let t = w.transitions();
        let dist = |col: fn(&(f64, f64)) -> f64| {
            WeightedIndex::new(t.iter().map(col))
                .map_err(|e| Error::InvalidChannel(format!("cannot sample from channel: {e}")))
        };
        Ok(LinkSampler {
            given: [dist(|p| p.0)?, dist(|p| p.1)?],
            llrs: (0..t.len()).map(|y| w.llr(y)).collect::<Result<_>>()?,
        })
    }

    pub fn sample_llr<R: Rng + ?Sized>(&self, x: Bit, rng: &mut R) -> f64 {
        self.llrs[self.given[usize::from(x & 1)].sample(rng)]
    }

    pub fn transmit<R: Rng + ?Sized>(&self, x: &[Bit], rng: &mut R) -> Vec<f64> {
        x.iter().map(|&b| self.sample_llr(b, rng)).collect()
    }
}

pub fn random_info<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<Bit> {
    (0..len).map(|_| Bit::from(rng.gen::<bool>())).collect()
}

/// One session over scheme channel `true_channel_index` (1-based).
pub fn run_session<R: Rng + ?Sized>(
    scheme: &ChainScheme,
    true_channel_index: usize,
    info: &[Bit],
    rng: &mut R,
) -> Result<HarqTranscript> {
    let w = scheme
        .channels
        .get(true_channel_index.wrapping_sub(1))
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "true channel {true_channel_index} outside 1..={}",
                scheme.channels.len()
            ))
        })?;
    let mut t = run_session_on(scheme, &LinkSampler::new(w)?, info, rng)?;
    t.true_channel = Some(true_channel_index);
    Ok(t)
}

/// One session over an arbitrary link. Success is judged by comparing the
/// decoded bits with `info` (ideal error detection).
pub fn run_session_on<R: Rng + ?Sized>(
    scheme: &ChainScheme,
    link: &LinkSampler,
    info: &[Bit],
    rng: &mut R,
) -> Result<HarqTranscript> {
    let mut us: Vec<Vec<Bit>> = Vec::new();
    let mut llrs: Vec<Vec<f64>> = Vec::new();
    let mut t = HarqTranscript {
        true_channel: None,
        stages_attempted: 0,
        success_stage: None,
        bits_transmitted: Vec::new(),
        decode_outcomes: Vec::new(),
        info_correct: false,
    };
    for stage in 1..=scheme.num_stages() {
        let (u, x) = encode_transmission(scheme, stage, Some(info), &us)?;
        us.push(u);
        t.bits_transmitted.push(x.len());
        llrs.push(link.transmit(&x, rng));
        t.stages_attempted = stage;
        let ok = backward_decode(scheme, stage, &llrs)? == info;
        t.decode_outcomes.push(ok);
        if ok {
            t.success_stage = Some(stage);
            t.info_correct = true;
            break;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// 1-based index of the scheme channel used as the physical link.
    pub true_channel_index: usize,
    pub trials: usize,
    pub seed: u64,
    /// Report-only per-stage FER targets.
    #[serde(default)]
    pub fer_targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: usize,
    pub trials_reaching: usize,
    pub failures: usize,
    pub fer: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub eq6_bound: f64,
    /// The bound is not contradicted: `ci_low <= eq6_bound`.
    pub bound_respected: bool,
    pub fer_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub true_channel_index: usize,
    pub trials: usize,
    pub seed: u64,
    pub info_bits: usize,
    pub successes: usize,
    pub mean_bits_per_success: Option<f64>,
    /// Information bits per transmitted bit over successful sessions.
    pub throughput: Option<f64>,
    pub stages: Vec<StageStats>,
}

/// Wilson score interval for `failures` out of `n` at normal quantile `z`.
pub fn wilson_interval(failures: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = failures as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Runs `config.trials` independent sessions. Trial `i` draws its info bits
/// and noise from a substream keyed by `(seed, i)`, so the result does not
/// depend on the number of worker threads.
pub fn monte_carlo(scheme: &ChainScheme, config: &SimulationConfig) -> Result<SimulationStats> {
    if config.trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let kk = scheme.num_stages();
    if config.true_channel_index == 0 || config.true_channel_index > kk {
        return Err(Error::InvalidParameter(format!(
            "true channel {} outside 1..={kk}",
            config.true_channel_index
        )));
    }
    let link = LinkSampler::new(&scheme.channels[config.true_channel_index - 1])?;
    let transcripts: Vec<HarqTranscript> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = substream(config.seed, trial as u64);
            let info = random_info(scheme.info_len(), &mut rng);
            run_session_on(scheme, &link, &info, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(scheme, config, &transcripts))
}

pub fn summarize(
    scheme: &ChainScheme,
    config: &SimulationConfig,
    transcripts: &[HarqTranscript],
) -> SimulationStats {
    let kk = scheme.num_stages();
    let mut reaching = vec![0usize; kk];
    let mut failures = vec![0usize; kk];
    let mut successes = 0usize;
    let mut success_bits = 0usize;
    for t in transcripts {
        for (l, &ok) in t.decode_outcomes.iter().enumerate() {
            reaching[l] += 1;
            failures[l] += usize::from(!ok);
        }
        if t.info_correct {
            successes += 1;
            success_bits += t.total_bits();
        }
    }
    let mean_bits_per_success = (successes > 0).then(|| success_bits as f64 / successes as f64);
    let stages = (0..kk)
        .map(|l| {
            let n = reaching[l];
            let (ci_low, ci_high) = wilson_interval(failures[l], n, Z95);
            let eq6_bound = scheme.eq6_bounds[l];
            StageStats {
                stage: l + 1,
                trials_reaching: n,
                failures: failures[l],
                fer: if n > 0 { failures[l] as f64 / n as f64 } else { 0.0 },
                ci_low,
                ci_high,
                eq6_bound,
                bound_respected: ci_low <= eq6_bound,
                fer_target: config.fer_targets.get(l).copied(),
            }
        })
        .collect();
    SimulationStats {
        true_channel_index: config.true_channel_index,
        trials: transcripts.len(),
        seed: config.seed,
        info_bits: scheme.info_len(),
        successes,
        mean_bits_per_success,
        throughput: mean_bits_per_success.map(|b| scheme.info_len() as f64 / b),
        stages,
    }
}

impl SimulationStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,trials_reaching,failures,fer,ci_low,ci_high,eq6_bound\n");
        for r in &self.stages {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.stage, r.trials_reaching, r.failures, r.fer, r.ci_low, r.ci_high, r.eq6_bound
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("stats serialize");
        s.push('\n');
        s
    }
}
