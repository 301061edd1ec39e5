//! Scene fixtures shared by the integration tests.
#![allow(dead_code)]

use evseg_core::motion::{FourParamMotion, Point2};
use evseg_core::synth::{BackgroundSpec, ObjectSpec, SceneSpec, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BG_DENSITY: f64 = 0.05;
pub const OBJ_DENSITY: f64 = 0.05;

fn random_velocity(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (f64, f64) {
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = rng.gen_range(lo..hi);
    (s * a.cos(), s * a.sin())
}

/// Background plus two objects, 240x180, 30 ms. Every pair of layers differs
/// in velocity by at least 100 px/s, so endpoints separate by at least 3 px.
pub fn three_layer_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let bg = random_velocity(&mut rng, 40.0, 100.0);
    let mut vels = vec![bg];
    while vels.len() < 3 {
        let v = random_velocity(&mut rng, 150.0, 300.0);
        if vels.iter().all(|u| ((u.0 - v.0).powi(2) + (u.1 - v.1).powi(2)).sqrt() >= 120.0) {
            vels.push(v);
        }
    }
    // Objects on opposite halves of the sensor so they never overlap.
    let centers = [
        Point2::new(rng.gen_range(45.0..75.0), rng.gen_range(45.0..135.0)),
        Point2::new(rng.gen_range(165.0..195.0), rng.gen_range(45.0..135.0)),
    ];
    let objects = (0..2)
        .map(|k| {
            let shape = if rng.gen_bool(0.5) {
                Shape::Rect {
                    width: rng.gen_range(40.0..60.0),
                    height: rng.gen_range(40.0..60.0),
                }
            } else {
                Shape::Disk {
                    radius: rng.gen_range(22.0..30.0),
                }
            };
            let (u, v) = vels[k + 1];
            ObjectSpec {
                shape,
                center: centers[k],
                density: OBJ_DENSITY,
                motion: FourParamMotion::new(u, v, rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)),
            }
        })
        .collect();
    SceneSpec {
        background: BackgroundSpec {
            density: BG_DENSITY,
            motion: FourParamMotion::new(bg.0, bg.1, 0.0, rng.gen_range(-0.1..0.1)),
        },
        objects,
        seed,
        ..SceneSpec::default()
    }
}

pub fn single_motion_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let (u, v) = random_velocity(&mut rng, 80.0, 200.0);
    SceneSpec {
        background: BackgroundSpec {
            density: BG_DENSITY,
            motion: FourParamMotion::new(u, v, 0.0, 0.0),
        },
        seed,
        ..SceneSpec::default()
    }
}
