//! Statistical and algebraic invariants across module boundaries.

use isac_sim::adversary::{spoof_inject, KnowledgeLevel, SpoofAttempt};
use isac_sim::channel::{apply_channel, BeamConfig, Scene, Target};
use isac_sim::control::{decide, AnomalyFlags, ControlPolicy, LoopState, ProbeSchedule, QualityTarget};
use isac_sim::fronthaul::{compress_bfp, decompress_bfp};
use isac_sim::processing::{estimate_channel, range_doppler_map, snr_db, RangeDopplerMap};
use isac_sim::rng::derive;
use isac_sim::waveform::{build_signal_plan, generate_grid, papr, ReMask, ResourceGrid, SignalType};
use isac_sim::{resolutions, Complex64, Numerology};
use proptest::prelude::*;

fn small() -> Numerology {
    Numerology::nr_30khz(64, 16)
}

fn target(range: f64, velocity: f64) -> Target {
    Target { range, radial_velocity: velocity, rcs: 1.0, azimuth: 0.5 }
}

fn noise_free(targets: Vec<Target>) -> Scene {
    Scene { targets, leakage_gain: 1e-3, ..Scene::empty(0) }
}

fn grid(signal: SignalType, num: &Numerology, seed: u64) -> ResourceGrid {
    let plan = build_signal_plan(num, signal, 0.0, seed).unwrap();
    generate_grid(&plan, num).unwrap()
}

fn max_abs_diff(a: &ResourceGrid, b: &ResourceGrid) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channel_is_linear_in_tx(
        seed in any::<u64>(),
        re in -3.0f64..3.0,
        im in -3.0f64..3.0,
        range in 1.0f64..4000.0,
        velocity in -300.0f64..300.0,
    ) {
        let num = small();
        let x = grid(SignalType::StochasticData, &num, seed);
        let alpha = Complex64::new(re, im);
        let scene = noise_free(vec![target(range, velocity)]);
        let beam = BeamConfig::default();
        let lhs = apply_channel(&x.scaled(alpha), &scene, &beam).unwrap();
        let rhs = apply_channel(&x, &scene, &beam).unwrap().scaled(alpha);
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12 * (1.0 + alpha.norm()));
    }

    #[test]
    fn single_target_scenes_superpose(
        seed in any::<u64>(),
        r1 in 1.0f64..4000.0,
        r2 in 1.0f64..4000.0,
        v1 in -300.0f64..300.0,
        v2 in -300.0f64..300.0,
    ) {
        let num = small();
        let x = grid(SignalType::StochasticData, &num, seed);
        let beam = BeamConfig::default();
        let only = |t: Target| Scene { leakage_gain: 0.0, ..noise_free(vec![t]) };
        let a = apply_channel(&x, &only(target(r1, v1)), &beam).unwrap();
        let b = apply_channel(&x, &only(target(r2, v2)), &beam).unwrap();
        let both = apply_channel(&x, &Scene { leakage_gain: 0.0, ..noise_free(vec![target(r1, v1), target(r2, v2)]) }, &beam)
            .unwrap();
        let mut sum = a.clone();
        sum.add_assign(&b);
        prop_assert!(max_abs_diff(&sum, &both) < 1e-12);
    }

    #[test]
    fn decisions_are_pure(bitmap in 1u64.., below in any::<bool>(), spoof in any::<bool>(), tamper in any::<bool>()) {
        let num = small();
        let h = isac_sim::processing::ChannelGrid::new(ResourceGrid::zeros(num), ReMask::new(64, 16, true)).unwrap();
        let map = range_doppler_map(&h, 1).unwrap();
        let report = isac_sim::control::assess_quality(4, &[], &map, &num, &QualityTarget::default());
        let flags = AnomalyFlags { suspected_spoof: spoof, quality_below_target: below, integrity_failure: tamper, details: String::new() };
        let state = LoopState {
            beam_bitmap: bitmap, bwp_start_rb: 0, bwp_n_rb: 5, dl_slots: 1, ul_slots: 4, tdd_period: 5,
            schedule: ProbeSchedule::Alternating, rotations: 0,
        };
        let policy = ControlPolicy::default();
        let a = decide(&report, &flags, &policy, &state);
        let b = decide(&report, &flags, &policy, &state);
        prop_assert_eq!(&a, &b);
        for c in &a.commands {
            if let isac_sim::control::CommandKind::BeamSelect { bitmap } = c.kind {
                prop_assert!(bitmap != 0);
            }
        }
    }
}

#[test]
fn pilot_papr_below_stochastic_over_100_seeds() {
    let num = Numerology::nr_30khz(240, 4);
    let mean = |s: SignalType| (0..100).map(|seed| papr(&grid(s, &num, seed)).unwrap()).sum::<f64>() / 100.0;
    let (pilot, data) = (mean(SignalType::Pilot), mean(SignalType::StochasticData));
    assert!(pilot < data, "pilot {pilot:.2} dB vs data {data:.2} dB");
}

/// Peak of the map within ±1 bin of `bin`, over the map's noise floor.
fn peak_snr_near(map: &RangeDopplerMap, bin: (usize, usize)) -> f64 {
    let (nr, nd) = map.dims();
    let mut peak: f64 = 0.0;
    for dk in [nr - 1, 0, 1] {
        for dl in [nd - 1, 0, 1] {
            peak = peak.max(map.power((bin.0 + dk) % nr, (bin.1 + dl) % nd));
        }
    }
    snr_db(peak, map.noise_floor())
}

fn noisy_scene(seed: u64, num: &Numerology) -> (Scene, (usize, usize)) {
    let res = resolutions(num, 1);
    let t = Target { range: 9.0 * res.range, radial_velocity: 3.0 * res.velocity, rcs: 1.0, azimuth: 0.5 };
    let scene = Scene {
        targets: vec![t],
        noise_power: 1e-2,
        leakage_gain: 1e-3,
        rng_seed: seed,
        reference_range: 100.0,
        reference_amplitude: 0.05,
    };
    (scene, (9, num.n_symbols / 2 + 3))
}

/// Mean peak SNR over 60 seeds for each entry of `levels`, where `front`
/// turns the received grid into a channel estimate.
fn sweep_means<L: Copy>(
    levels: &[L],
    noise_power: f64,
    front: impl Fn(&ResourceGrid, &ResourceGrid, L) -> isac_sim::processing::ChannelGrid,
) -> Vec<f64> {
    let num = Numerology::nr_30khz(128, 32);
    let mut sums = vec![0.0; levels.len()];
    for seed in 0..60 {
        let x = grid(SignalType::StochasticData, &num, derive(seed, 1));
        let (mut scene, bin) = noisy_scene(derive(seed, 2), &num);
        scene.noise_power = noise_power;
        let rx = apply_channel(&x, &scene, &BeamConfig::default()).unwrap();
        for (sum, &level) in sums.iter_mut().zip(levels) {
            *sum += peak_snr_near(&range_doppler_map(&front(&rx, &x, level), 1).unwrap(), bin);
        }
    }
    sums.iter().map(|s| s / 60.0).collect()
}

fn non_increasing(means: &[f64]) -> bool {
    means.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn thinning_the_mask_lowers_mean_peak_snr() {
    let means = sweep_means(&[1, 2, 4, 12], 1e-2, |rx, x, period| {
        let mask = ReMask::from_fn(128, 32, |n, m| (n + m) % period == 0);
        estimate_channel(rx, x, &mask).unwrap()
    });
    assert!(non_increasing(&means), "{means:?}");
}

#[test]
fn coarser_mantissas_lower_mean_peak_snr() {
    let means = sweep_means(&[12u8, 9, 6, 4], 1e-5, |rx, x, bits| {
        let rx_hat = decompress_bfp(&compress_bfp(rx, bits, 12).unwrap()).unwrap();
        estimate_channel(&rx_hat, x, &ReMask::new(128, 32, true)).unwrap()
    });
    assert!(non_increasing(&means), "{means:?}");
}

#[test]
fn fake_peak_snr_rises_with_knowledge() {
    // Victim: stochastic data with an embedded reference lattice.
    let num = Numerology::nr_30khz(128, 32);
    let res = resolutions(&num, 1);
    let fake = Target { range: 20.0 * res.range, radial_velocity: -4.0 * res.velocity, rcs: 1.0, azimuth: 0.5 };
    let bin = (20, 16 - 4);
    let mut means = Vec::new();
    for level in KnowledgeLevel::ALL {
        let mut total = 0.0;
        for seed in 0..100u64 {
            let plan = build_signal_plan(&num, SignalType::StochasticData, 1.0 / 12.0, derive(seed, 1)).unwrap();
            let x = generate_grid(&plan, &num).unwrap();
            let scene = Scene { noise_power: 1e-3, leakage_gain: 1e-3, rng_seed: derive(seed, 2), ..Scene::empty(0) };
            let mut rx = apply_channel(&x, &scene, &BeamConfig::default()).unwrap();
            let attempt = SpoofAttempt { fake_target: fake, tx_power_ratio: 1.0, knowledge: level };
            rx.add_assign(&spoof_inject(&plan, &attempt, &num, 1e-2, derive(seed, 3)).unwrap());
            let h = estimate_channel(&rx, &x, &plan.occupied_mask()).unwrap();
            total += peak_snr_near(&range_doppler_map(&h, 1).unwrap(), bin);
        }
        means.push(total / 100.0);
    }
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}
