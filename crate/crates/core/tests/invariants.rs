use proptest::prelude::*;

use ptgc_core::bev::{rasterize, BevParams};
use ptgc_core::delay::{DelayChannel, TimestampedMessage};
use ptgc_core::geometry::Pose2;
use ptgc_core::lidar::{CloudPoint, PointCloud};
use ptgc_core::predictor::ctra::ctra_position;
use ptgc_core::predictor::loss::{total_loss, trajectory_distance, winner_index};
use ptgc_core::predictor::loss::softmax;
use ptgc_core::predictor::{CandidateSet, MotionHistory};
use ptgc_core::tracker::{stanley_wheel_angle, TrackerParams};
use ptgc_core::vehicle::{ControlCommand, VehicleState};

fn small_bev() -> BevParams {
    BevParams {
        grid: 16,
        extent: 8.0,
        height: 2.0,
        ground_z_max: 0.2,
    }
}

fn point() -> impl Strategy<Value = CloudPoint> {
    (-6.0..6.0f64, -6.0..6.0f64, -0.5..2.5f64).prop_map(|(x, y, z)| CloudPoint {
        x,
        y,
        z,
        ground: z < 0.2,
    })
}

proptest! {
    #[test]
    fn raster_ignores_duplicates_and_order(pts in prop::collection::vec(point(), 0..60), seed in any::<u64>()) {
        let p = small_bev();
        let base = rasterize(&PointCloud { points: pts.clone() }, &p).image;

        let mut doubled = pts.clone();
        doubled.extend(pts.iter().copied());
        prop_assert_eq!(&rasterize(&PointCloud { points: doubled }, &p).image, &base);

        let mut shuffled = pts.clone();
        // deterministic permutation from the seed
        let n = shuffled.len();
        for i in (1..n).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        prop_assert_eq!(&rasterize(&PointCloud { points: shuffled }, &p).image, &base);
    }

    #[test]
    fn every_occupied_cell_holds_a_point(pts in prop::collection::vec(point(), 0..60)) {
        let p = small_bev();
        let img = rasterize(&PointCloud { points: pts.clone() }, &p).image;
        let inside = pts.iter().filter(|q| p.cell_of(q.x, q.y, q.z).is_some()).count();
        prop_assert!(img.ground.count() + img.nonground.count() <= inside);
        for (plane, is_ground) in [(&img.ground, true), (&img.nonground, false)] {
            for (r, c) in plane.occupied() {
                let (x0, x1, y0, y1) = p.cell_bounds(r, c);
                let hit = pts.iter().any(|q| {
                    (q.z < p.ground_z_max) == is_ground
                        && p.cell_of(q.x, q.y, q.z) == Some((r, c))
                        && q.x >= x0 - 1e-12 && q.x <= x1 + 1e-12
                        && q.y >= y0 - 1e-12 && q.y <= y1 + 1e-12
                });
                prop_assert!(hit, "cell ({}, {}) set without a point", r, c);
            }
        }
    }

    #[test]
    fn channel_never_delivers_early_or_out_of_order(
        delay in 0u64..8,
        gaps in prop::collection::vec(0u64..3, 1..40),
    ) {
        let mut ch = DelayChannel::new(delay);
        let mut now = 0;
        let mut sent = Vec::new();
        let mut got = Vec::new();
        for g in gaps {
            now += g;
            ch.send(TimestampedMessage::new(sent.len(), now), now).unwrap();
            sent.push(now);
            for m in ch.deliver_due(now) {
                got.push((m.payload, m.origin_tick, now));
            }
        }
        for t in now + 1..=now + delay {
            for m in ch.deliver_due(t) {
                got.push((m.payload, m.origin_tick, t));
            }
        }
        prop_assert_eq!(got.len(), sent.len());
        for (i, &(id, origin, at)) in got.iter().enumerate() {
            prop_assert_eq!(id, i);
            prop_assert_eq!(origin, sent[i]);
            prop_assert!(at >= origin + delay);
        }
    }

    #[test]
    fn stanley_is_odd_and_monotone(
        e in -5.0..5.0f64,
        de in 0.0..2.0f64,
        th in -0.5..0.5f64,
        v in 0.0..20.0f64,
        k in 0.1..3.0f64,
    ) {
        let params = TrackerParams { k, ..Default::default() };
        let wmax = 0.6;
        let a = stanley_wheel_angle(e, th, v, &params, wmax);
        let b = stanley_wheel_angle(-e, -th, v, &params, wmax);
        prop_assert!((a + b).abs() < 1e-12);
        prop_assert!(stanley_wheel_angle(e + de, th, v, &params, wmax) >= a - 1e-12);
        prop_assert!(a.abs() <= wmax);
    }

    #[test]
    fn ctra_matches_numerical_integration(
        v in 0.0..20.0f64,
        a in -3.0..3.0f64,
        w in prop_oneof![-0.8..0.8f64, -1e-3..1e-3f64, Just(0.0)],
        t in 0.0..2.0f64,
    ) {
        let exact = ctra_position(v, a, w, t);
        let rk = rk4(v, a, w, t, 400);
        prop_assert!((exact[0] - rk[0]).abs() < 1e-6 && (exact[1] - rk[1]).abs() < 1e-6,
            "closed form {:?} vs integration {:?}", exact, rk);
    }

    #[test]
    fn history_is_frame_invariant(
        xs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, 0.0..15.0f64, -3.0..3.0f64), 2..8),
        dx in -100.0..100.0f64,
        dy in -100.0..100.0f64,
        rot in -3.1..3.1f64,
    ) {
        let states: Vec<VehicleState> = xs.iter().map(|&(x, y, v, theta)| VehicleState { x, y, v, theta, wheel_angle: 0.0 }).collect();
        let cmds = vec![ControlCommand::new(0.1, 0.2, 0.0); states.len()];
        let frame = Pose2::new(dx, dy, rot);
        let moved: Vec<VehicleState> = states.iter().map(|s| {
            let (x, y) = frame.to_world(s.x, s.y);
            VehicleState { x, y, theta: s.theta + rot, ..*s }
        }).collect();
        let (h0, _) = MotionHistory::from_world(&states, &cmds);
        let (h1, _) = MotionHistory::from_world(&moved, &cmds);
        for (a, b) in h0.states.iter().zip(&h1.states) {
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).abs() < 1e-9, "{:?} vs {:?}", a, b);
            }
        }
        prop_assert_eq!(h0.commands, h1.commands);
    }
}

/// RK4 on x' = (v + a s) cos(ω s), y' = (v + a s) sin(ω s).
fn rk4(v: f64, a: f64, w: f64, t: f64, n: usize) -> [f64; 2] {
    let f = |s: f64| {
        let sp = v + a * s;
        [sp * (w * s).cos(), sp * (w * s).sin()]
    };
    let h = t / n as f64;
    let mut p = [0.0, 0.0];
    for i in 0..n {
        let s = i as f64 * h;
        let (k1, k2, k4) = (f(s), f(s + h / 2.0), f(s + h));
        for d in 0..2 {
            p[d] += h / 6.0 * (k1[d] + 4.0 * k2[d] + k4[d]);
        }
    }
    p
}

fn random_instance(rng: &mut impl rand::Rng) -> (CandidateSet, Vec<[f64; 2]>) {
    let modes = rng.gen_range(1..5);
    let horizon = rng.gen_range(1..6);
    let mut pt = || [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    let trajectories: Vec<Vec<[f64; 2]>> = (0..modes).map(|_| (0..horizon).map(|_| pt()).collect()).collect();
    let gt: Vec<[f64; 2]> = (0..horizon).map(|_| pt()).collect();
    let logits: Vec<f64> = (0..modes).map(|_| rng.gen_range(-30.0..30.0)).collect();
    (
        CandidateSet {
            trajectories,
            probs: softmax(&logits),
        },
        gt,
    )
}

#[test]
fn loss_and_probability_invariants_on_random_instances() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let (cands, gt) = random_instance(&mut rng);
        let sum: f64 = cands.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(cands.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(total_loss(&cands, &gt, 1.0) >= 0.0);

        // brute force: first index achieving the minimum distance
        let d: Vec<f64> = cands.trajectories.iter().map(|t| trajectory_distance(t, &gt)).collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let brute = d.iter().position(|&x| x == min).unwrap();
        assert_eq!(winner_index(&cands, &gt), brute);
    }
}
