mod common;

use common::normal;
use kcusum::data::{generate_multi, Segment};
use kcusum::kcusum::{kcusum_run_with_reset, Kcusum, ReferencePool};
use kcusum::kernel_mmd::GaussianKernel;
use kcusum::rng::{derive_seed, rng_from_seed};
use kcusum::simeval::simulate_c1;
use kcusum::Detector;
use rayon::prelude::*;

fn event_counts(segments: &[Segment], runs: u64, base: u64) -> Vec<usize> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let stream = generate_multi(segments, derive_seed(base, 1, i)).unwrap();
            let pool = ReferencePool::from_distribution(
                &normal(0.0, 1.0),
                500,
                derive_seed(base, 2, i),
                derive_seed(base, 3, i),
            )
            .unwrap();
            let k = GaussianKernel::new(1).unwrap();
            kcusum_run_with_reset(&stream, 10.0, 0.1, k, pool, 64).unwrap().len()
        })
        .collect()
}

fn seg(mean: f64, run_length: u64) -> Segment {
    Segment { distribution: normal(mean, 1.0), run_length }
}

#[test]
fn one_change_gives_one_event() {
    let counts = event_counts(&[seg(0.0, 500), seg(3.0, 1000)], 1000, 11);
    let exactly_one = counts.iter().filter(|&&c| c == 1).count();
    assert!(exactly_one >= 900, "{exactly_one} of 1000 runs had exactly one event");
}

#[test]
fn two_changes_give_two_events() {
    let counts = event_counts(&[seg(0.0, 500), seg(3.0, 500), seg(6.0, 500)], 1000, 12);
    let two = counts.iter().filter(|&&c| c == 2).count();
    assert!(two > 500, "{two} of 1000 runs had exactly two events");
}

#[test]
fn alarm_times_follow_the_changes() {
    let stream = generate_multi(&[seg(0.0, 500), seg(3.0, 500), seg(6.0, 500)], 5).unwrap();
    let pool = ReferencePool::from_distribution(&normal(0.0, 1.0), 500, 6, 7).unwrap();
    let events = kcusum_run_with_reset(&stream, 10.0, 0.1, GaussianKernel::new(1).unwrap(), pool, 64).unwrap();
    for e in &events {
        assert_eq!(e.time % 2, 0, "alarms only at even steps of each detector run: {events:?}");
    }
    assert!(events.windows(2).all(|w| w[1].time > w[0].time + 64));
}

#[test]
fn reflected_statistic_dominates_the_block_walk() {
    // Change at the first observation: Z_k >= S_k at every block, so the
    // detector stops no later than twice the walk's first crossing block.
    let h = 4.0;
    let delta = 0.05;
    let k = GaussianKernel::new(1).unwrap();
    for seed in 0..50 {
        let pool = ReferencePool::from_distribution(&normal(0.0, 1.0), 1000, seed, seed + 100).unwrap();
        let mut det = Kcusum::new(h, delta, k, pool).unwrap();
        let mut rng = rng_from_seed(seed + 200);
        let post = normal(1.5, 1.0);
        let (mut s, mut c1, mut stop) = (0.0, None, None);
        let mut x = [0.0];
        for n in 1..=100_000u64 {
            post.sample_into(&mut rng, &mut x);
            let alarm = det.observe(&x).unwrap();
            if let Some(v) = det.last_increment() {
                s += v;
                assert!(det.statistic() >= s - 1e-12);
                if c1.is_none() && s > h {
                    c1 = Some(n / 2);
                }
            }
            if let Some(a) = alarm {
                stop = Some(a.time);
                break;
            }
        }
        let stop = stop.expect("detector alarms after a large shift");
        if let Some(c1) = c1 {
            assert!(stop <= 2 * c1);
        }
    }
}

#[test]
fn block_walk_crossing_matches_detector_delay_scale() {
    // The mean crossing block of the walk and half the detector's stopping
    // time on the same change agree to within a few blocks.
    let k = GaussianKernel::new(1).unwrap();
    let (pre, post) = (normal(0.0, 1.0), normal(2.0, 1.0));
    let est = simulate_c1(&k, 0.05, &pre, &post, 5.0, 2000, 100_000, 9).unwrap();
    assert_eq!(est.crossing_fraction, 1.0);
    let stops: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|i| {
            let pool =
                ReferencePool::from_distribution(&pre, 5000, derive_seed(9, 2, i), derive_seed(9, 3, i)).unwrap();
            let mut det = Kcusum::new(5.0, 0.05, k, pool).unwrap();
            let mut rng = rng_from_seed(derive_seed(9, 1, i));
            let mut x = [0.0];
            loop {
                post.sample_into(&mut rng, &mut x);
                if let Some(a) = det.observe(&x).unwrap() {
                    return a.time as f64 / 2.0;
                }
            }
        })
        .collect();
    let (m, se) = common::mean_se(&stops);
    let c1 = est.mean_crossing_blocks.unwrap();
    // Reflection at zero only shortens the detector's run.
    assert!(m <= c1 + 3.0 * (se * se + est.mean_crossing_se.unwrap().powi(2)).sqrt(), "detector {m} vs walk {c1}");
    assert!(m > 0.5 * c1, "detector {m} vs walk {c1}");
}
