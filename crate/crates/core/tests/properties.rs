use photonforge::correlator::{correlate, CorrelationConfig, CorrelationHistogram};
use photonforge::emitsim::{analytic_g2_from_rates, simulate_scene, DetectorModel, SceneConfig, ThreeLevelParams};
use photonforge::fitting::{fit_g2, G2Model};
use photonforge::timetag::{read_from, split_channels, write_to, TimeTagStream};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

/// Sorted stream from arbitrary gaps (zero gaps give ties) and channels.
fn stream_from(gaps: &[(u64, u16)], channel_count: u16) -> TimeTagStream {
    let mut t = 0u64;
    let (mut ts, mut ch) = (Vec::new(), Vec::new());
    for &(gap, c) in gaps {
        t += gap;
        ts.push(t);
        ch.push(c % channel_count);
    }
    TimeTagStream::new(1, channel_count, ts, ch).unwrap()
}

fn poisson_pair(rate: f64, duration_s: f64, seed: u64) -> TimeTagStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rate).unwrap();
    let mut tags = Vec::new();
    for ch in 0..2u16 {
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t >= duration_s {
                break;
            }
            tags.push(((t * 1e12) as u64, ch));
        }
    }
    tags.sort_unstable();
    let (ts, ch) = tags.into_iter().unzip();
    TimeTagStream::new(1, 2, ts, ch).unwrap()
}

fn scene(background: f64, duration_s: f64, seed: u64) -> SceneConfig {
    SceneConfig {
        emitter: ThreeLevelParams {
            k_pump: 2e8,
            k_rad: 5e8,
            k_isc: 1e7,
            k_meta: 5e6,
        },
        background_rate: background,
        collection_efficiency: 0.008,
        duration_s,
        splitter_ratio: 0.5,
        rng_seed: seed,
        resolution_ps: 1,
        sampler: Default::default(),
        detector_a: DetectorModel::ideal(1.0),
        detector_b: DetectorModel::ideal(1.0),
    }
}

proptest! {
    #[test]
    fn ptag_round_trip_is_identity(
        gaps in prop::collection::vec((0u64..1_000_000, 0u16..4), 0..300),
        channel_count in 1u16..5,
    ) {
        let s = stream_from(&gaps, channel_count);
        let mut buf = Vec::new();
        write_to(&s, &mut buf).unwrap();
        let back = read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn split_conserves_records(gaps in prop::collection::vec((0u64..1000, 0u16..4), 0..300)) {
        let s = stream_from(&gaps, 4);
        let parts = split_channels(&s, &[0, 1, 2, 3]).unwrap();
        prop_assert_eq!(parts.values().map(|p| p.len()).sum::<usize>(), s.len());
        for (c, p) in &parts {
            prop_assert!(p.channels().iter().all(|x| x == c));
            let expect: Vec<u64> = s.records().filter(|r| r.channel == *c).map(|r| r.timestamp).collect();
            prop_assert_eq!(p.timestamps(), expect.as_slice());
        }
    }

    #[test]
    fn swapping_channels_mirrors_histogram(
        gaps in prop::collection::vec((0u64..400, 0u16..2), 0..400),
        bin in 1u64..20,
        bins_per_side in 1u64..30,
    ) {
        let counts = stream_from(&gaps, 2).channel_counts();
        prop_assume!(counts.iter().all(|&c| c > 0));
        let s = stream_from(&gaps, 2);
        let ab = CorrelationConfig::new(bin, bin * bins_per_side, 0, 1).unwrap();
        let ba = CorrelationConfig::new(bin, bin * bins_per_side, 1, 0).unwrap();
        match (correlate(&s, &ab), correlate(&s, &ba)) {
            (Ok(h_ab), Ok(h_ba)) => {
                let mirrored: Vec<u64> = h_ba.raw_counts.iter().rev().copied().collect();
                prop_assert_eq!(h_ab.raw_counts, mirrored);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.err(), b.err()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_streams_pass_read_validation(
        seed in 0u64..10_000,
        background in 0.0f64..5e4,
        eff in 0.1f64..1.0,
        jitter in 0.0f64..100.0,
        dead_ns in 0.0f64..50.0,
    ) {
        let mut cfg = scene(background, 0.05, seed);
        cfg.detector_a = DetectorModel { efficiency: eff, dark_rate: 500.0, jitter_sigma_ps: jitter, dead_time_ps: dead_ns * 1e3 };
        cfg.detector_b = cfg.detector_a;
        let s = simulate_scene(&cfg).unwrap();
        let mut buf = Vec::new();
        write_to(&s, &mut buf).unwrap();
        prop_assert_eq!(read_from(buf.as_slice()).unwrap(), s);
    }
}

#[test]
fn doubling_duration_shrinks_errors_by_root_two() {
    let cfg = CorrelationConfig::from_physical(1, 1000, 100.0, 0, 1).unwrap();
    let mean_err = |duration: f64| {
        let h = correlate(&poisson_pair(2e5, duration, 17), &cfg).unwrap();
        h.g2_err.iter().sum::<f64>() / h.len() as f64
    };
    let ratio = mean_err(5.0) / mean_err(10.0);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn background_fills_the_dip_as_rho_squared() {
    let cfg = scene(2.5e5, 20.0, 23);
    let rates = cfg.predicted_rates();
    let a = analytic_g2_from_rates(&cfg.emitter).unwrap();
    let s = simulate_scene(&cfg).unwrap();
    let h = correlate(&s, &CorrelationConfig::from_physical(1, 400, 200.0, 0, 1).unwrap()).unwrap();
    let k = h.zero_bin();
    // source curve averaged over the zero-delay bin
    let src = (0..64).map(|j| a.g2(((j as f64 + 0.5) / 64.0 - 0.5) * 400e-12)).sum::<f64>() / 64.0;
    let expect = rates.degrade(src);
    let sigma = (expect * h.normalization).sqrt() / h.normalization;
    assert!(rates.contrast() < 0.7, "background too weak to test: {}", rates.contrast());
    assert!(
        (h.g2[k] - expect).abs() <= 3.0 * sigma,
        "g2(0) {} vs {expect} +- {sigma}",
        h.g2[k]
    );
}

/// Poisson-noised histogram of the binned model at `norm` counts per bin.
fn noisy_histogram(p: &[f64], norm: f64, seed: u64) -> CorrelationHistogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = G2Model::binned(40.0);
    let tau_ticks: Vec<i64> = (-12_500..=12_500).map(|k| 40 * k).collect();
    let raw_counts: Vec<u64> = tau_ticks
        .iter()
        .map(|&t| Poisson::new(norm * model.value(t as f64, p)).map_or(0.0, |d| d.sample(&mut rng)) as u64)
        .collect();
    CorrelationHistogram {
        resolution_ps: 1,
        bin_width_ticks: 40,
        g2: raw_counts.iter().map(|&c| c as f64 / norm).collect(),
        g2_err: raw_counts.iter().map(|&c| (c.max(1) as f64).sqrt() / norm).collect(),
        tau_ticks,
        raw_counts,
        normalization: norm,
        rates: None,
        duration_s: 1.0,
        signal_fraction: None,
    }
}

/// Calibrated errors cover the truth in 68.3% of fits; 100 repetitions
/// carry a binomial spread of 4.7 points, so the check allows two of those
/// on either side.
#[test]
fn g2_standard_errors_cover_truth() {
    let truth = [1.15, 0.21, 230.0, 18_700.0];
    let mut inside = [0usize; 4];
    for seed in 0..100 {
        let f = fit_g2(&noisy_histogram(&truth, 40.0, 3000 + seed)).unwrap();
        for i in 0..4 {
            if (f.fit.values[i] - truth[i]).abs() <= f.fit.standard_errors[i] {
                inside[i] += 1;
            }
        }
    }
    eprintln!("within one standard error, of 100: {inside:?}");
    assert!(inside.iter().all(|n| (59..=78).contains(n)), "{inside:?}");
}
