//! Analytic value-network gradients against a central-difference oracle.

use crowdnav::domain::{HumanFeatures, RobotFeatures, RotatedState};
use crowdnav::rng::{rng_for, Stream};
use crowdnav::valuenet::{build_local_maps, LocalMapConfig, NetworkConfig, ValueNetParams};
use rand::Rng;

const H: f64 = 1e-5;

fn tiny(global_score: bool) -> NetworkConfig {
    NetworkConfig {
        embedding: vec![7, 5],
        attention: vec![4, 1],
        head: vec![6, 1],
        global_score,
        local_map: LocalMapConfig {
            grid_side: 2,
            cell_size: 1.5,
        },
    }
}

fn state(rng: &mut impl Rng, n: usize) -> RotatedState {
    RotatedState {
        robot: RobotFeatures {
            d_goal: rng.gen_range(0.5..8.0),
            v_pref: 1.0,
            theta: rng.gen_range(-3.0..3.0),
            radius: 0.3,
        },
        humans: (0..n)
            .map(|_| {
                let (px, py) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                HumanFeatures {
                    px,
                    py,
                    vx: rng.gen_range(-1.0..1.0),
                    vy: rng.gen_range(-1.0..1.0),
                    radius: 0.3,
                    distance: px.hypot(py),
                    radius_sum: 0.6,
                }
            })
            .collect(),
    }
}

fn loss(net: &ValueNetParams, s: &RotatedState, maps: &[Vec<f64>], target: f64) -> f64 {
    let v = net.forward(s, maps).unwrap().0;
    (v - target) * (v - target)
}

/// Worst relative error over every parameter.
fn worst_error(net: &ValueNetParams, s: &RotatedState, target: f64) -> f64 {
    let maps = build_local_maps(s, &net.config().local_map);
    let analytic = net.gradient(s, &maps, target).unwrap();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.len() {
        let x = net.params()[i];
        probe.params_mut()[i] = x + H;
        let up = loss(&probe, s, &maps, target);
        probe.params_mut()[i] = x - H;
        let down = loss(&probe, s, &maps, target);
        probe.params_mut()[i] = x;
        let fd = (up - down) / (2.0 * H);
        let a = analytic[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for global in [true, false] {
        for point in 0..4u64 {
            let mut rng = rng_for(11, Stream::Init, point);
            let net = ValueNetParams::init(tiny(global), &mut rng).unwrap();
            for k in 0..4 {
                let s = state(&mut rng, k + 1);
                let target = rng.gen_range(-1.0..1.0);
                let e = worst_error(&net, &s, target);
                assert!(e < 1e-4, "point {point} state {k} global {global}: {e}");
            }
        }
    }
}

#[test]
fn gradient_without_humans_matches_too() {
    let mut rng = rng_for(12, Stream::Init, 0);
    let net = ValueNetParams::init(tiny(true), &mut rng).unwrap();
    let s = state(&mut rng, 0);
    assert!(worst_error(&net, &s, 0.3) < 1e-4);
}
