#![allow(dead_code)]

use std::collections::BTreeSet;

use num_rational::Ratio;
use rand::Rng;
use rcpolar::channels::ChannelSpec;
use rcpolar::polar::polar_encode;
use rcpolar::ratecompat::{build_scheme, rate_profile, ChainScheme, RateProfile, SchemeParams};

/// Erasure probabilities of the synthetic channels of BEC(eps). The most
/// significant bit of the u-index selects the first transform applied, so
/// the first half is the recursion on BEC(2ε−ε²) and the second on BEC(ε²).
pub fn bec_exact(eps: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![eps];
    }
    let mut out = bec_exact(2.0 * eps - eps * eps, m / 2);
    out.extend(bec_exact(eps * eps, m / 2));
    out
}

/// Exact Bhattacharyya parameters of all synthetic channels by enumerating
/// the joint distribution. `transitions[y] = (W(y|0), W(y|1))`; punctured
/// positions carry no output.
pub fn brute_force_z(transitions: &[(f64, f64)], m: usize, punctured: &BTreeSet<usize>) -> Vec<f64> {
    let codewords: Vec<Vec<u8>> = (0..1usize << m)
        .map(|u| polar_encode(&(0..m).map(|j| ((u >> j) & 1) as u8).collect::<Vec<_>>()).unwrap())
        .collect();
    let outs: Vec<usize> = (0..m)
        .map(|j| if punctured.contains(&j) { 1 } else { transitions.len() })
        .collect();
    let total: usize = outs.iter().product();
    let mut z = vec![0.0; m];
    let mut y = vec![0usize; m];
    let mut joint = vec![0.0; 1 << m];
    for _ in 0..total {
        for (u, x) in codewords.iter().enumerate() {
            joint[u] = (0..m)
                .map(|j| {
                    if punctured.contains(&j) {
                        1.0
                    } else if x[j] == 0 {
                        transitions[y[j]].0
                    } else {
                        transitions[y[j]].1
                    }
                })
                .product();
        }
        for (i, zi) in z.iter_mut().enumerate() {
            for prefix in 0..1usize << i {
                let (mut s0, mut s1) = (0.0, 0.0);
                for suffix in 0..1usize << (m - i - 1) {
                    let base = prefix | (suffix << (i + 1));
                    s0 += joint[base];
                    s1 += joint[base | (1 << i)];
                }
                *zi += (s0 * s1).sqrt();
            }
        }
        // odometer over output symbols
        for j in 0..m {
            y[j] += 1;
            if y[j] < outs[j] {
                break;
            }
            y[j] = 0;
        }
    }
    let scale = 0.5f64.powi(m as i32 - 1);
    z.iter().map(|v| v * scale).collect()
}

/// A random profile whose block sizes are all integral: rates `a/d_i` with
/// `d_i` increasing divisors of 48 and `k = a · 48 / gcd`-style scaling.
pub fn random_profile<R: Rng>(rng: &mut R, max_stages: usize) -> RateProfile {
    const D: [u64; 8] = [2, 3, 4, 6, 8, 12, 16, 24];
    let kk = rng.gen_range(1..=max_stages);
    let mut picks: Vec<u64> = rand::seq::index::sample(rng, D.len(), kk)
        .into_iter()
        .map(|i| D[i])
        .collect();
    picks.sort_unstable();
    let lcm = picks.iter().fold(1u64, |a, &b| a / gcd(a, b) * b);
    let a = rng.gen_range(1..=(picks[0] - 1).clamp(1, 3));
    let k = a * lcm;
    let rates: Vec<Ratio<u64>> = picks.iter().map(|&d| Ratio::new(a, d)).collect();
    rate_profile(k, &rates).expect("generated profile is valid")
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Degraded BEC family with capacities well above any generated rate.
pub fn bec_family(kk: usize) -> Vec<ChannelSpec> {
    (0..kk)
        .map(|j| ChannelSpec::Bec { eps: 0.02 + 0.04 * j as f64 })
        .collect()
}

pub fn quick_params(seed: u64) -> SchemeParams {
    SchemeParams {
        puncture_trials: 2,
        seed,
        ..SchemeParams::default()
    }
}

/// A pair whose good sets cross: stage 1 needs one alignment step.
pub fn crossing_scheme() -> ChainScheme {
    let profile = rate_profile(264, &[Ratio::new(33, 128), Ratio::new(1, 4)]).unwrap();
    build_scheme(
        &[ChannelSpec::Bsc { p: 0.08 }, ChannelSpec::Bec { eps: 0.5 }],
        &profile,
        &SchemeParams::default(),
    )
    .unwrap()
}

pub fn noiseless_llrs(x: &[u8]) -> Vec<f64> {
    x.iter()
        .map(|&b| if b == 0 { f64::INFINITY } else { f64::NEG_INFINITY })
        .collect()
}
