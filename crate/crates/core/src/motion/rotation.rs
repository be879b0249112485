//! Rotation conversions: Euler channels, unit quaternions and the continuous
//! 6D representation (first two columns of the rotation matrix).

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

const DEGENERATE_EPS: f64 = 1e-9;

/// Coordinate axis of a single Euler channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }
}

/// Tait-Bryan channel order as listed in a BVH `CHANNELS` line.
///
/// `EulerOrder([Z, X, Y])` composes `Rz(a) * Rx(b) * Ry(c)`, with the angles
/// in the order the channels appear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EulerOrder(pub [Axis; 3]);

impl EulerOrder {
    pub const ZYX: EulerOrder = EulerOrder([Axis::Z, Axis::Y, Axis::X]);
    pub const ZXY: EulerOrder = EulerOrder([Axis::Z, Axis::X, Axis::Y]);
    pub const XYZ: EulerOrder = EulerOrder([Axis::X, Axis::Y, Axis::Z]);

    pub fn new(axes: [Axis; 3]) -> Result<Self, Error> {
        let [a, b, c] = axes;
        if a == b || b == c || a == c {
            return Err(Error::Structural(format!(
                "euler order must use three distinct axes, got {}{}{}",
                a.letter(),
                b.letter(),
                c.letter()
            )));
        }
        Ok(EulerOrder(axes))
    }

    /// Compose a rotation from angles in radians, given in channel order.
    pub fn to_quaternion(self, angles: [f64; 3]) -> UnitQuaternion<f64> {
        self.0
            .iter()
            .zip(angles)
            .fold(UnitQuaternion::identity(), |acc, (axis, angle)| {
                acc * UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis.unit()), angle)
            })
    }

    /// Decompose a rotation into angles (radians) in channel order.
    pub fn from_quaternion(self, q: &UnitQuaternion<f64>) -> [f64; 3] {
        let m = q.to_rotation_matrix().into_inner();
        let [i, j, k] = self.0.map(Axis::index);
        // +1 for cyclic permutations of XYZ, -1 otherwise.
        let s = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
        let sb = (s * m[(i, k)]).clamp(-1.0, 1.0);
        let b = sb.asin();
        if sb.abs() < 1.0 - 1e-12 {
            let a = (-s * m[(j, k)]).atan2(m[(k, k)]);
            let c = (-s * m[(i, j)]).atan2(m[(i, i)]);
            [a, b, c]
        } else {
            // Gimbal lock: only a +/- c is defined; put everything in a.
            let a = (s * m[(k, j)]).atan2(m[(j, j)]);
            [a, b, 0.0]
        }
    }
}

impl fmt::Display for EulerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.0 {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

impl FromStr for EulerOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let axes: Vec<Axis> = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'X' => Ok(Axis::X),
                'Y' => Ok(Axis::Y),
                'Z' => Ok(Axis::Z),
                other => Err(Error::Structural(format!("unknown rotation axis '{other}'"))),
            })
            .collect::<Result<_, _>>()?;
        let axes: [Axis; 3] = axes
            .try_into()
            .map_err(|_| Error::Structural(format!("euler order '{s}' must have 3 axes")))?;
        EulerOrder::new(axes)
    }
}

impl TryFrom<String> for EulerOrder {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<EulerOrder> for String {
    fn from(o: EulerOrder) -> String {
        o.to_string()
    }
}

/// First two rotation-matrix columns, column-major: `[c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]`.
pub fn rotation_to_6d(q: &UnitQuaternion<f64>) -> [f64; 6] {
    let m = q.to_rotation_matrix().into_inner();
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Result of Gram-Schmidt reconstruction from a 6D vector.
#[derive(Debug, Clone, Copy)]
pub struct SixdRotation {
    pub matrix: Matrix3<f64>,
    /// Set when a column was (near) zero or the two columns were parallel and
    /// the basis had to be completed from the identity.
    pub degenerate: bool,
}

pub fn sixd_to_rotation(v: &[f64]) -> SixdRotation {
    debug_assert!(v.len() >= 6);
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let mut degenerate = false;

    let na = a.norm();
    let e1 = if na > DEGENERATE_EPS {
        a / na
    } else {
        degenerate = true;
        Vector3::x()
    };
    let u = b - e1 * e1.dot(&b);
    let nu = u.norm();
    let e2 = if nu > DEGENERATE_EPS * b.norm().max(1.0) {
        u / nu
    } else {
        degenerate = true;
        // Complete with the identity axis least aligned with e1.
        let candidates = [Vector3::y(), Vector3::z(), Vector3::x()];
        let pick = candidates
            .iter()
            .min_by(|p, q| e1.dot(p).abs().total_cmp(&e1.dot(q).abs()))
            .copied()
            .unwrap_or_else(Vector3::y);
        let w = pick - e1 * e1.dot(&pick);
        w.normalize()
    };
    let e3 = e1.cross(&e2);
    SixdRotation {
        matrix: Matrix3::from_columns(&[e1, e2, e3]),
        degenerate,
    }
}

pub fn sixd_to_quaternion(v: &[f64]) -> UnitQuaternion<f64> {
    let r = sixd_to_rotation(v);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r.matrix))
}

/// Geodesic angle (radians) between two rotations.
pub fn geodesic_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Heading (yaw about +Y) of a rotation, measured from its rotated +Z axis.
pub fn heading_angle(m: &Matrix3<f64>) -> f64 {
    let f = m.column(2);
    if f[0].abs() < 1e-12 && f[2].abs() < 1e-12 {
        0.0
    } else {
        f[0].atan2(f[2])
    }
}
