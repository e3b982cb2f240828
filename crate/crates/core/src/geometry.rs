//! Distances, angles and E(3) transforms. Everything is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem_io::Structure;
use crate::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

pub fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Euclidean distance in Å.
#[inline]
pub fn distance(p: Vec3, q: Vec3) -> f64 {
    norm(sub(p, q))
}

/// Angle ∠(j, i, k) at vertex `i`, in `[0, π]`.
pub fn angle(p_j: Vec3, p_i: Vec3, p_k: Vec3) -> Result<f64> {
    let a = sub(p_j, p_i);
    let b = sub(p_k, p_i);
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateGeometry(
            "zero-length leg in angle computation".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Orthogonal transform `r ↦ R·r + t` with `det R = ±1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E3Transform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl E3Transform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Checks `RᵀR = I` and `|det R| = 1` to within `tol`.
    pub fn new(rotation: Mat3, translation: Vec3, tol: f64) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if t.orthogonality_error() > tol || (t.determinant().abs() - 1.0).abs() > tol {
            return Err(Error::Domain("rotation matrix is not orthogonal".into()));
        }
        Ok(t)
    }

    /// max |(RᵀR − I)_ij|
    pub fn orthogonality_error(&self) -> f64 {
        let rtr = mat_mul(&transpose(&self.rotation), &self.rotation);
        let mut err: f64 = 0.0;
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((v - target).abs());
            }
        }
        err
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.rotation)
    }

    pub fn is_reflection(&self) -> bool {
        self.determinant() < 0.0
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Rotates a free vector (no translation).
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.rotation, v)
    }
}

/// Maps positions through `t`; atoms, bonds and label are untouched.
pub fn apply_transform(s: &Structure, t: &E3Transform) -> Structure {
    let mut out = s.clone();
    for p in out.positions.iter_mut() {
        *p = t.apply_point(*p);
    }
    out
}

/// Random rigid motion: rotation uniform over SO(3) from a unit quaternion
/// (Shoemake's subgroup algorithm), translation uniform in [−10, 10] Å per
/// axis. With `include_reflection` the rotation is composed with the mirror
/// `z ↦ −z`, giving `det = −1`.
pub fn random_e3(seed: u64, include_reflection: bool) -> E3Transform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    );
    let mut r = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    if include_reflection {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
    }
    let translation = [
        rng.gen_range(-10.0..=10.0),
        rng.gen_range(-10.0..=10.0),
        rng.gen_range(-10.0..=10.0),
    ];
    E3Transform {
        rotation: r,
        translation,
    }
}
