mod common;

use num_rational::Ratio;
use rayon::ThreadPoolBuilder;
use rcpolar::channels::{make_bec, ChannelSpec};
use rcpolar::harq::{monte_carlo, random_info, run_session, LinkSampler, SimulationConfig};
use rcpolar::ratecompat::{
    backward_decode, build_scheme, encode_transmission, rate_profile, ChainScheme, SchemeParams,
};
use rcpolar::seeding::substream;

fn config(true_channel_index: usize, trials: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        true_channel_index,
        trials,
        seed,
        fer_targets: vec![],
    }
}

#[test]
fn crossing_pair_is_aligned_once() {
    let s = common::crossing_scheme();
    assert_eq!(s.expansion_t, 1);
    assert_eq!(s.stages[0].aligned_steps, 1);
    assert_eq!(s.stages[1].aligned_steps, 0);
    assert_eq!(s.stages[1].schedule.t(), 1, "padded to the global step count");
    let p = &s.stages[0].pairs[0];
    assert!(p.initial_mismatch > 0);
    assert_eq!(p.final_fraction * 2.0, p.initial_fraction);
    assert!(s.stages[0].rate_loss <= s.stages[0].rate_loss_allowance());
    assert_eq!(s.info_len(), 2 * 264);
    assert!(s.stages[0].a_sets[1].is_subset(&s.stages[0].a_sets[0]));
}

#[test]
fn crossing_pair_round_trips_and_meets_bounds() {
    let s = common::crossing_scheme();
    let mut rng = substream(5, 0);
    let info = random_info(s.info_len(), &mut rng);
    let llrs: Vec<Vec<f64>> = s
        .encode_session(&info)
        .unwrap()
        .iter()
        .map(|(_, x)| common::noiseless_llrs(x))
        .collect();
    assert_eq!(backward_decode(&s, 1, &llrs).unwrap(), info);
    assert_eq!(backward_decode(&s, 2, &llrs).unwrap(), info);

    let on_w1 = monte_carlo(&s, &config(1, 2000, 11)).unwrap();
    assert!(on_w1.stages[0].bound_respected, "{:?}", on_w1.stages[0]);
    let on_w2 = monte_carlo(&s, &config(2, 2000, 12)).unwrap();
    assert!(on_w2.stages[1].bound_respected, "{:?}", on_w2.stages[1]);
}

#[test]
fn two_stage_bec_meets_union_bound() {
    // rates (0.55, 0.30): n = (660, 550), second block at m = 1024
    let profile = rate_profile(363, &[Ratio::new(11, 20), Ratio::new(3, 10)]).unwrap();
    let s = build_scheme(
        &[ChannelSpec::Bec { eps: 0.4 }, ChannelSpec::Bec { eps: 0.5 }],
        &profile,
        &SchemeParams::default(),
    )
    .unwrap();
    assert_eq!(s.stages[1].m, 1024);
    let stats = monte_carlo(&s, &config(2, 10_000, 2)).unwrap();
    let st = &stats.stages[1];
    assert!(st.trials_reaching > 9_000);
    assert!(st.ci_low <= st.eq6_bound, "{st:?}");
}

#[test]
fn sessions_replay_against_direct_decoding() {
    let s = common::crossing_scheme();
    for trial in 0..30u64 {
        let mut rng = substream(77, trial);
        let info = random_info(s.info_len(), &mut rng);
        let t = run_session(&s, 2, &info, &mut rng).unwrap();

        let mut rng = substream(77, trial);
        let info2 = random_info(s.info_len(), &mut rng);
        assert_eq!(info, info2);
        let link = LinkSampler::new(&s.channels[1]).unwrap();
        let mut us = Vec::new();
        let mut llrs = Vec::new();
        for stage in 1..=t.stages_attempted {
            let (u, x) = encode_transmission(&s, stage, Some(&info), &us).unwrap();
            us.push(u);
            assert_eq!(x.len(), t.bits_transmitted[stage - 1]);
            llrs.push(link.transmit(&x, &mut rng));
            let ok = backward_decode(&s, stage, &llrs).unwrap() == info;
            assert_eq!(ok, t.decode_outcomes[stage - 1]);
        }
    }
}

#[test]
fn statistics_do_not_depend_on_worker_count() {
    let s = common::crossing_scheme();
    let run = |threads| {
        ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo(&s, &config(2, 300, 4)).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn session_accounting() {
    let s = common::crossing_scheme();
    let stats = monte_carlo(&s, &config(2, 200, 8)).unwrap();
    let mean = stats.mean_bits_per_success.unwrap();
    let n_bar: Vec<f64> = s
        .profile
        .cumulative_lengths
        .iter()
        .map(|&c| (c * s.expansion_factor()) as f64)
        .collect();
    assert!(mean >= n_bar[0] && mean <= n_bar[1]);
    assert!((stats.throughput.unwrap() - s.info_len() as f64 / mean).abs() < 1e-12);
}

#[test]
fn better_links_do_not_fail_more() {
    let profile = rate_profile(128, &[Ratio::new(1, 2)]).unwrap();
    let s: ChainScheme = build_scheme(
        &[ChannelSpec::Bec { eps: 0.4 }],
        &profile,
        &SchemeParams::default(),
    )
    .unwrap();
    let fails = |eps: f64| {
        let link = LinkSampler::new(&make_bec(eps).unwrap()).unwrap();
        (0..1000u64)
            .filter(|&t| {
                let mut rng = substream(3, t);
                let info = random_info(s.info_len(), &mut rng);
                !rcpolar::harq::run_session_on(&s, &link, &info, &mut rng)
                    .unwrap()
                    .info_correct
            })
            .count()
    };
    let (good, bad) = (fails(0.35), fails(0.45));
    let (_, good_hi) = rcpolar::harq::wilson_interval(good, 1000, rcpolar::harq::Z95);
    let (bad_lo, _) = rcpolar::harq::wilson_interval(bad, 1000, rcpolar::harq::Z95);
    assert!(good <= bad || good_hi >= bad_lo);
}
