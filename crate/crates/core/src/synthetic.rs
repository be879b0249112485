//! Procedural clips on a small eight-joint biped, used by tests, the smoke
//! benchmark and the CLI's `--synthetic` inputs.

use std::f64::consts::{PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};

use crate::motion::{SkeletonMotion, SkeletonTopology};

pub const FRAME_RATE: f64 = 30.0;

/// Hips, Spine, LeftUpLeg, LeftLeg, LeftFoot, RightUpLeg, RightLeg, RightFoot.
pub fn biped_topology() -> SkeletonTopology {
    let names = [
        "Hips",
        "Spine",
        "LeftUpLeg",
        "LeftLeg",
        "LeftFoot",
        "RightUpLeg",
        "RightLeg",
        "RightFoot",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let parents = vec![None, Some(0), Some(0), Some(2), Some(3), Some(0), Some(5), Some(6)];
    let offsets = vec![
        [0.0, 0.0, 0.0],
        [0.0, 0.3, 0.0],
        [0.1, -0.05, 0.0],
        [0.0, -0.42, 0.0],
        [0.0, -0.42, 0.0],
        [-0.1, -0.05, 0.0],
        [0.0, -0.42, 0.0],
        [0.0, -0.42, 0.0],
    ];
    let mut topo = SkeletonTopology::new(names, parents, offsets, vec![4, 7]).expect("static biped is valid");
    topo.end_sites[4] = Some([0.0, -0.05, 0.12]);
    topo.end_sites[7] = Some([0.0, -0.05, 0.12]);
    topo.end_sites[1] = Some([0.0, 0.45, 0.0]);
    topo
}

/// Shape of a procedural walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitParams {
    /// Frames per full stride (two steps).
    pub period: f64,
    /// Hip swing amplitude, radians.
    pub hip_amplitude: f64,
    /// Peak knee flexion during swing, radians.
    pub knee_amplitude: f64,
    /// Side-to-side spine twist, radians.
    pub spine_amplitude: f64,
    /// Heading change per frame, radians.
    pub turn_rate: f64,
    /// Multiplier on the stance-matched forward speed.
    pub speed_scale: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            period: 32.0,
            hip_amplitude: 0.45,
            knee_amplitude: 0.9,
            spine_amplitude: 0.2,
            turn_rate: 0.0,
            speed_scale: 1.0,
        }
    }
}

fn rx(a: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a)
}

fn ry(a: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a)
}

fn rz(a: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a)
}

/// A looping walk along the heading direction with alternating foot plants.
///
/// The root is driven by the stance leg (the one whose knee is straight), so
/// the planted ankle stays fixed in place and at constant height.
pub fn walk_cycle(p: &GaitParams, frames: usize) -> SkeletonMotion {
    let topo = biped_topology();
    let omega = TAU / p.period;
    let leg_len = 0.84;
    let hip_angle = |phi: f64| p.hip_amplitude * phi.sin();
    // Phase of whichever leg is in stance at `phase`.
    let stance = |phase: f64| if phase.cos() >= 0.0 { phase } else { phase + PI };
    let mut rotations = Vec::with_capacity(frames);
    let mut root = Vec::with_capacity(frames);
    let mut pos = Vector3::new(0.0, 0.0, 0.0);
    for t in 0..frames {
        let phase = omega * t as f64;
        let heading = p.turn_rate * t as f64;
        let leg = |phi: f64| {
            let hip = hip_angle(phi);
            let swing = (-phi.cos()).max(0.0);
            let knee = p.knee_amplitude * swing * swing;
            (rx(hip - 0.3 * knee), rx(knee), rx(-0.5 * hip))
        };
        let (lh, lk, lf) = leg(phase);
        let (rh, rk, rf) = leg(phase + PI);
        let hips = ry(heading);
        let spine = ry(p.spine_amplitude * phase.sin()) * rx(0.1);
        rotations.push(vec![hips, spine, lh, lk, lf, rh, rk, rf]);
        let s = stance(phase);
        if t > 0 {
            let prev = s - omega;
            let step = leg_len * (hip_angle(s).sin() - hip_angle(prev).sin()) * p.speed_scale;
            pos += Vector3::new(heading.sin(), 0.0, heading.cos()) * step;
        }
        root.push(Vector3::new(pos.x, 0.07 + leg_len * hip_angle(s).cos(), pos.z));
    }
    SkeletonMotion::new(topo, rotations, root, FRAME_RATE).expect("procedural walk is valid")
}

/// An in-place pirouette: the hips turn a full circle every `period` frames,
/// the spine leans and one leg stays raised.
pub fn spin_clip(frames: usize, period: f64) -> SkeletonMotion {
    let topo = biped_topology();
    let mut rotations = Vec::with_capacity(frames);
    let mut root = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = TAU * t as f64 / period;
        let hips = ry(a);
        let spine = rz(0.35 * (2.0 * a).sin()) * rx(-0.25);
        let lh = rx(-1.1);
        let lk = rx(1.6);
        let lf = rx(0.2);
        let rh = rx(0.05 * a.sin());
        let rk = rx(0.1);
        let rf = rx(0.0);
        rotations.push(vec![hips, spine, lh, lk, lf, rh, rk, rf]);
        root.push(Vector3::new(0.0, 0.88, 0.0));
    }
    SkeletonMotion::new(topo, rotations, root, FRAME_RATE).expect("procedural spin is valid")
}

/// Stationary sway: hips and spine rock, feet stay planted.
pub fn sway_clip(frames: usize, period: f64) -> SkeletonMotion {
    let topo = biped_topology();
    let mut rotations = Vec::with_capacity(frames);
    let mut root = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = TAU * t as f64 / period;
        let hips = rz(0.12 * a.sin());
        let spine = rz(-0.3 * a.sin()) * rx(0.15 * (2.0 * a).cos());
        let l = rx(0.0) * rz(-0.12 * a.sin());
        let r = rz(-0.12 * a.sin());
        rotations.push(vec![hips, spine, l, rx(0.05), rx(0.0), r, rx(0.05), rx(0.0)]);
        root.push(Vector3::new(0.04 * a.sin(), 0.89, 0.0));
    }
    SkeletonMotion::new(topo, rotations, root, FRAME_RATE).expect("procedural sway is valid")
}
