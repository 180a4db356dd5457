//! Triclinic lattice math: parameter/matrix conversions, fractional and
//! Cartesian coordinate transforms, periodic minimum-image distances, and
//! Niggli cell reduction.
//!
//! Conventions used throughout the crate:
//! - Lattice matrices store the three lattice vectors as **rows** (`l1`, `l2`,
//!   `l3`) and must be right-handed (`det > 0`).
//! - Coordinates are row vectors, so Cartesian positions are `x = f · L` and
//!   fractional positions are `f = x · L⁻¹`.
//! - `params_to_matrix` fixes orientation with `l1` along `+x` and `l2` in the
//!   `xy` plane with a positive `y` component.

use nalgebra::{Matrix3, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Numerical floor below which a lattice vector norm counts as degenerate.
const DEGENERATE_NORM_EPS: f64 = 1e-12;

/// Relative tolerance factor for Niggli reduction comparisons.
const NIGGLI_TOL: f64 = 1e-5;

/// Iteration cap for the Niggli reduction loop.
const NIGGLI_MAX_ITERATIONS: usize = 100;

/// Errors raised by lattice construction, conversion, and reduction.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LatticeError {
    /// A cell length was zero, negative, or non-finite.
    #[error("lattice length must be positive and finite, got {0}")]
    NonPositiveLength(f64),
    /// A cell angle was outside the open interval (0°, 180°) or non-finite.
    #[error("lattice angle must lie in (0, 180) degrees, got {0}")]
    AngleOutOfRange(f64),
    /// The three angles cannot form a positive-volume cell.
    #[error("lattice angles ({0}, {1}, {2}) deg do not span a positive-volume cell")]
    DegenerateAngles(f64, f64, f64),
    /// A matrix row had (near-)zero length.
    #[error("lattice matrix row {0} has near-zero norm")]
    DegenerateRow(usize),
    /// The matrix determinant was not strictly positive.
    #[error("lattice matrix must be right-handed with positive determinant, got det={0}")]
    NonPositiveDeterminant(f64),
    /// A matrix entry was NaN or infinite.
    #[error("lattice matrix entries must be finite")]
    NonFiniteEntry,
    /// The matrix could not be inverted.
    #[error("lattice matrix is numerically singular")]
    SingularMatrix,
    /// Niggli reduction failed to converge within the iteration cap.
    #[error("Niggli reduction did not converge within {NIGGLI_MAX_ITERATIONS} iterations")]
    ReductionDidNotConverge,
}

/// Cell parameters: lengths in Å, angles in degrees.
///
/// `alpha` is the angle between `l2` and `l3`, `beta` between `l1` and `l3`,
/// `gamma` between `l1` and `l2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LatticeParams {
    /// Validating constructor; see [`LatticeParams::validate`] for the rules.
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self, LatticeError> {
        let p = Self { a, b, c, alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    /// Checks lengths positive and finite, angles in (0°, 180°), and the
    /// angle combination spanning a positive volume.
    pub fn validate(&self) -> Result<(), LatticeError> {
        for len in [self.a, self.b, self.c] {
            if !len.is_finite() || len <= 0.0 {
                return Err(LatticeError::NonPositiveLength(len));
            }
        }
        for ang in [self.alpha, self.beta, self.gamma] {
            if !ang.is_finite() || ang <= 0.0 || ang >= 180.0 {
                return Err(LatticeError::AngleOutOfRange(ang));
            }
        }
        if self.angle_discriminant() <= 0.0 {
            return Err(LatticeError::DegenerateAngles(self.alpha, self.beta, self.gamma));
        }
        Ok(())
    }

    /// `1 - cos²α - cos²β - cos²γ + 2 cosα cosβ cosγ`; positive exactly when
    /// the three angles span a cell of positive volume.
    pub fn angle_discriminant(&self) -> f64 {
        let ca = self.alpha.to_radians().cos();
        let cb = self.beta.to_radians().cos();
        let cg = self.gamma.to_radians().cos();
        1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg
    }

    /// Cell volume in Å³.
    pub fn volume(&self) -> f64 {
        self.a * self.b * self.c * self.angle_discriminant().max(0.0).sqrt()
    }
}

/// Row-major lattice matrix with rows `l1`, `l2`, `l3` and positive determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeMatrix(Matrix3<f64>);

impl LatticeMatrix {
    /// Builds a lattice matrix from three row vectors, validating finiteness,
    /// non-degenerate rows, and right-handedness.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, LatticeError> {
        let m = Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2],
            rows[1][0], rows[1][1], rows[1][2],
            rows[2][0], rows[2][1], rows[2][2],
        );
        Self::from_matrix(m)
    }

    /// Builds from an `nalgebra` matrix whose rows are the lattice vectors.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, LatticeError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LatticeError::NonFiniteEntry);
        }
        for i in 0..3 {
            if m.row(i).norm() < DEGENERATE_NORM_EPS {
                return Err(LatticeError::DegenerateRow(i));
            }
        }
        let det = m.determinant();
        if det <= 0.0 {
            return Err(LatticeError::NonPositiveDeterminant(det));
        }
        Ok(Self(m))
    }

    /// The underlying matrix (rows are lattice vectors).
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Lattice vector `i` (0-based) as a row.
    pub fn row(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.0[(i, 0)], self.0[(i, 1)], self.0[(i, 2)])
    }

    /// Rows as plain arrays, in `l1, l2, l3` order.
    pub fn rows(&self) -> [[f64; 3]; 3] {
        [
            [self.0[(0, 0)], self.0[(0, 1)], self.0[(0, 2)]],
            [self.0[(1, 0)], self.0[(1, 1)], self.0[(1, 2)]],
            [self.0[(2, 0)], self.0[(2, 1)], self.0[(2, 2)]],
        ]
    }

    /// Cell volume (`det`, guaranteed positive).
    pub fn volume(&self) -> f64 {
        self.0.determinant()
    }

    fn inverse(&self) -> Result<Matrix3<f64>, LatticeError> {
        self.0.try_inverse().ok_or(LatticeError::SingularMatrix)
    }
}

impl Serialize for LatticeMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticeMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        LatticeMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}

macro_rules! vec3_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub Vector3<f64>);

        impl $name {
            pub fn new(x: f64, y: f64, z: f64) -> Self {
                Self(Vector3::new(x, y, z))
            }

            pub fn to_array(self) -> [f64; 3] {
                [self.0.x, self.0.y, self.0.z]
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<[f64; 3]> for $name {
            fn from(v: [f64; 3]) -> Self {
                Self(Vector3::new(v[0], v[1], v[2]))
            }
        }

        impl From<Vector3<f64>> for $name {
            fn from(v: Vector3<f64>) -> Self {
                Self(v)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                self.to_array().serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                Ok(<[f64; 3]>::deserialize(d)?.into())
            }
        }
    };
}

vec3_newtype!(
    /// Fractional (lattice-relative) coordinate.
    FracCoord
);
vec3_newtype!(
    /// Cartesian coordinate in Å.
    CartCoord
);

/// Small integer matrix used for unimodular basis changes (row convention,
/// applied as `L' = P · L`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix(pub [[i64; 3]; 3]);

impl IntMatrix {
    pub fn identity() -> Self {
        Self([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    }

    pub fn det(&self) -> i64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul(&self, other: &IntMatrix) -> IntMatrix {
        let mut out = [[0i64; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        IntMatrix(out)
    }

    /// Exact inverse for unimodular matrices (`det = ±1`); `None` otherwise.
    pub fn inverse_unimodular(&self) -> Option<IntMatrix> {
        let det = self.det();
        if det != 1 && det != -1 {
            return None;
        }
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        // Adjugate (transposed cofactors) divided by det (±1).
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut out = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = det * adj[i][j];
            }
        }
        Some(IntMatrix(out))
    }

    pub fn to_f64(&self) -> Matrix3<f64> {
        let m = &self.0;
        Matrix3::new(
            m[0][0] as f64, m[0][1] as f64, m[0][2] as f64,
            m[1][0] as f64, m[1][1] as f64, m[1][2] as f64,
            m[2][0] as f64, m[2][1] as f64, m[2][2] as f64,
        )
    }

    /// Applies this basis change to a lattice: `L' = P · L`.
    pub fn apply_to_lattice(&self, l: &LatticeMatrix) -> Result<LatticeMatrix, LatticeError> {
        LatticeMatrix::from_matrix(self.to_f64() * l.matrix())
    }

    /// Applies this matrix to a row vector: `f' = f · P`.
    pub fn apply_to_row(&self, f: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            f.x * self.0[0][0] as f64 + f.y * self.0[1][0] as f64 + f.z * self.0[2][0] as f64,
            f.x * self.0[0][1] as f64 + f.y * self.0[1][1] as f64 + f.z * self.0[2][1] as f64,
            f.x * self.0[0][2] as f64 + f.y * self.0[1][2] as f64 + f.z * self.0[2][2] as f64,
        )
    }
}

/// Builds the canonical orientation matrix for a parameter set: `l1` along
/// `+x`, `l2` in the `xy` plane with positive `y`, `l3` completing a
/// right-handed cell.
pub fn params_to_matrix(p: &LatticeParams) -> Result<LatticeMatrix, LatticeError> {
    p.validate()?;
    let ca = p.alpha.to_radians().cos();
    let cb = p.beta.to_radians().cos();
    let cg = p.gamma.to_radians().cos();
    let sg = p.gamma.to_radians().sin();
    let disc = p.angle_discriminant();
    let rows = [
        [p.a, 0.0, 0.0],
        [p.b * cg, p.b * sg, 0.0],
        [p.c * cb, p.c * (ca - cb * cg) / sg, p.c * disc.sqrt() / sg],
    ];
    LatticeMatrix::from_rows(rows)
}

/// Recovers cell parameters (lengths from row norms, angles from pairwise
/// dot products) from any right-handed lattice matrix.
pub fn matrix_to_params(l: &LatticeMatrix) -> Result<LatticeParams, LatticeError> {
    let rows = [l.row(0), l.row(1), l.row(2)];
    let norms = [rows[0].norm(), rows[1].norm(), rows[2].norm()];
    for (i, n) in norms.iter().enumerate() {
        if *n < DEGENERATE_NORM_EPS {
            return Err(LatticeError::DegenerateRow(i));
        }
    }
    let angle = |u: &Vector3<f64>, v: &Vector3<f64>, nu: f64, nv: f64| {
        (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees()
    };
    LatticeParams::new(
        norms[0],
        norms[1],
        norms[2],
        angle(&rows[1], &rows[2], norms[1], norms[2]),
        angle(&rows[0], &rows[2], norms[0], norms[2]),
        angle(&rows[0], &rows[1], norms[0], norms[1]),
    )
}

/// `x = f · L`.
pub fn frac_to_cart(f: &FracCoord, l: &LatticeMatrix) -> CartCoord {
    CartCoord(l.matrix().transpose() * f.0)
}

/// `f = x · L⁻¹`; errors only if the matrix is numerically singular.
pub fn cart_to_frac(x: &CartCoord, l: &LatticeMatrix) -> Result<FracCoord, LatticeError> {
    let inv = l.inverse()?;
    Ok(FracCoord(inv.transpose() * x.0))
}

/// Wraps each fractional component into `[0, 1)`.
pub fn wrap_frac(f: &FracCoord) -> FracCoord {
    FracCoord(f.0.map(|v| {
        let mut r = v.rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
        if r >= 1.0 {
            r = 0.0;
        }
        r
    }))
}

/// Minimum-image displacement between two fractional positions: the shortest
/// Cartesian vector from `f2` to `f1` over image offsets in `[-range, range]³`.
///
/// `range = 1` is exact for Niggli-reduced (or near-orthogonal) cells; callers
/// with unreduced cells should widen the search.
pub fn min_image_vector(
    f1: &FracCoord,
    f2: &FracCoord,
    l: &LatticeMatrix,
    range: i32,
) -> Vector3<f64> {
    let d = min_image_frac_displacement(f1, f2, l, range);
    frac_to_cart(&FracCoord(d), l).0
}

/// Fractional form of [`min_image_vector`]: the displacement `d` with
/// `f2 + d ≡ f1 (mod 1)` whose Cartesian image is shortest over image
/// offsets in `[-range, range]³`.
pub fn min_image_frac_displacement(
    f1: &FracCoord,
    f2: &FracCoord,
    l: &LatticeMatrix,
    range: i32,
) -> Vector3<f64> {
    // Pre-wrap the difference so the image search is centered.
    let d = (f1.0 - f2.0).map(|v| v - v.round());
    let mut best = d;
    let mut best_norm2 = f64::INFINITY;
    for ka in -range..=range {
        for kb in -range..=range {
            for kc in -range..=range {
                let shifted = Vector3::new(d.x + ka as f64, d.y + kb as f64, d.z + kc as f64);
                let n2 = frac_to_cart(&FracCoord(shifted), l).0.norm_squared();
                if n2 < best_norm2 {
                    best_norm2 = n2;
                    best = shifted;
                }
            }
        }
    }
    best
}

/// Minimum-image distance with the standard `[-1, 1]³` image search.
pub fn min_image_distance(f1: &FracCoord, f2: &FracCoord, l: &LatticeMatrix) -> f64 {
    min_image_vector(f1, f2, l, 1).norm()
}

/// Minimum-image distance with a widened `[-2, 2]³` search; slower but safe
/// for skewed, unreduced cells. Useful as a cross-check.
pub fn min_image_distance_wide(f1: &FracCoord, f2: &FracCoord, l: &LatticeMatrix) -> f64 {
    min_image_vector(f1, f2, l, 2).norm()
}

/// Niggli reduction (Krivý–Gruber iteration on the metric tensor).
///
/// Returns the reduced cell and the unimodular change of basis `P` with
/// `L_reduced = P · L`. The reduced cell preserves volume and orientation
/// (`det P = +1`), and reducing an already-reduced cell returns it unchanged
/// with `P = I`.
pub fn niggli_reduce(l: &LatticeMatrix) -> Result<(LatticeMatrix, IntMatrix), LatticeError> {
    let eps = NIGGLI_TOL * l.volume().cbrt();
    let mut g = l.matrix() * l.matrix().transpose();
    let mut p = IntMatrix::identity();

    // One Krivý–Gruber step: G ← Mᵀ G M in column convention, which is
    // L' = Mᵀ L on row-vector lattices.
    let apply = |g: &mut Matrix3<f64>, p: &mut IntMatrix, m: [[i64; 3]; 3]| {
        let mt = IntMatrix(m);
        let mf = mt.to_f64();
        *g = mf.transpose() * *g * mf;
        let step = IntMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ]);
        *p = step.mul(p);
    };

    let mut converged = false;
    for _ in 0..NIGGLI_MAX_ITERATIONS {
        let (a, b, c) = (g[(0, 0)], g[(1, 1)], g[(2, 2)]);
        let (xi, eta, zeta) = (2.0 * g[(1, 2)], 2.0 * g[(0, 2)], 2.0 * g[(0, 1)]);

        // Step 1: sort so A ≤ B.
        if a > b + eps || ((a - b).abs() < eps && xi.abs() > eta.abs() + eps) {
            apply(&mut g, &mut p, [[0, -1, 0], [-1, 0, 0], [0, 0, -1]]);
            continue;
        }
        // Step 2: sort so B ≤ C.
        if b > c + eps || ((b - c).abs() < eps && eta.abs() > zeta.abs() + eps) {
            apply(&mut g, &mut p, [[-1, 0, 0], [0, 0, -1], [0, -1, 0]]);
            continue;
        }

        let sign_of = |v: f64| {
            if v.abs() < eps {
                0i64
            } else if v < 0.0 {
                -1
            } else {
                1
            }
        };
        let (sx, se, sz) = (sign_of(xi), sign_of(eta), sign_of(zeta));

        // Steps 3/4: fix the signs of the off-diagonal terms (all positive,
        // or all non-positive), keeping det = +1.
        if sx * se * sz == 1 {
            let d = |s: i64| if s == -1 { -1 } else { 1 };
            let (i, j, k) = (d(sx), d(se), d(sz));
            if (i, j, k) != (1, 1, 1) {
                apply(&mut g, &mut p, [[i, 0, 0], [0, j, 0], [0, 0, k]]);
                continue;
            }
        } else {
            let d = |s: i64| if s == 1 { -1 } else { 1 };
            let (mut i, mut j, mut k) = (d(sx), d(se), d(sz));
            if i * j * k == -1 {
                if sz == 0 {
                    k = -1;
                } else if se == 0 {
                    j = -1;
                } else if sx == 0 {
                    i = -1;
                }
            }
            if (i, j, k) != (1, 1, 1) {
                apply(&mut g, &mut p, [[i, 0, 0], [0, j, 0], [0, 0, k]]);
                continue;
            }
        }

        let shear = |v: f64| if v > 0.0 { -1i64 } else { 1 };
        // Step 5: shrink ξ against B.
        if xi.abs() > b + eps
            || ((xi - b).abs() < eps && 2.0 * eta < zeta - eps)
            || ((xi + b).abs() < eps && zeta < -eps)
        {
            apply(&mut g, &mut p, [[1, 0, 0], [0, 1, shear(xi)], [0, 0, 1]]);
            continue;
        }
        // Step 6: shrink η against A.
        if eta.abs() > a + eps
            || ((eta - a).abs() < eps && 2.0 * xi < zeta - eps)
            || ((eta + a).abs() < eps && zeta < -eps)
        {
            apply(&mut g, &mut p, [[1, 0, shear(eta)], [0, 1, 0], [0, 0, 1]]);
            continue;
        }
        // Step 7: shrink ζ against A.
        if zeta.abs() > a + eps
            || ((zeta - a).abs() < eps && 2.0 * xi < eta - eps)
            || ((zeta + a).abs() < eps && eta < -eps)
        {
            apply(&mut g, &mut p, [[1, shear(zeta), 0], [0, 1, 0], [0, 0, 1]]);
            continue;
        }
        // Step 8: final body-diagonal correction.
        let total = xi + eta + zeta + a + b;
        if total < -eps || (total.abs() < eps && 2.0 * (a + eta) + zeta > eps) {
            apply(&mut g, &mut p, [[1, 0, 1], [0, 1, 1], [0, 0, 1]]);
            continue;
        }

        converged = true;
        break;
    }

    if !converged {
        return Err(LatticeError::ReductionDidNotConverge);
    }
    debug_assert_eq!(p.det(), 1);
    let reduced = p.apply_to_lattice(l)?;
    Ok((reduced, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Draws valid cell parameters away from degenerate angle combinations.
    fn random_params(rng: &mut StdRng) -> LatticeParams {
        loop {
            let p = LatticeParams {
                a: rng.gen_range(2.0..20.0),
                b: rng.gen_range(2.0..20.0),
                c: rng.gen_range(2.0..20.0),
                alpha: rng.gen_range(50.0..130.0),
                beta: rng.gen_range(50.0..130.0),
                gamma: rng.gen_range(50.0..130.0),
            };
            if p.angle_discriminant() > 0.05 {
                return p;
            }
        }
    }

    /// Random unimodular matrix with det = +1, built from a few elementary
    /// shears and handedness-preserving swaps so entries stay moderate.
    fn random_unimodular(rng: &mut StdRng) -> IntMatrix {
        let mut m = IntMatrix::identity();
        for _ in 0..4 {
            let op = match rng.gen_range(0..3) {
                0 => {
                    // Row shear: row_i += k * row_j.
                    let i = rng.gen_range(0..3usize);
                    let mut j = rng.gen_range(0..3usize);
                    while j == i {
                        j = rng.gen_range(0..3usize);
                    }
                    let k = *[-2i64, -1, 1, 2].get(rng.gen_range(0..4)).unwrap();
                    let mut s = IntMatrix::identity();
                    s.0[i][j] = k;
                    s
                }
                1 => {
                    // Swap two rows and negate one to keep det = +1.
                    let pairs = [
                        IntMatrix([[0, -1, 0], [-1, 0, 0], [0, 0, -1]]),
                        IntMatrix([[-1, 0, 0], [0, 0, -1], [0, -1, 0]]),
                        IntMatrix([[0, 0, -1], [0, -1, 0], [-1, 0, 0]]),
                    ];
                    pairs[rng.gen_range(0..3)]
                }
                _ => {
                    // Flip the sign of two rows.
                    let flips = [
                        IntMatrix([[-1, 0, 0], [0, -1, 0], [0, 0, 1]]),
                        IntMatrix([[-1, 0, 0], [0, 1, 0], [0, 0, -1]]),
                        IntMatrix([[1, 0, 0], [0, -1, 0], [0, 0, -1]]),
                    ];
                    flips[rng.gen_range(0..3)]
                }
            };
            m = op.mul(&m);
        }
        assert_eq!(m.det(), 1);
        m
    }

    /// Independent statement of the main (Buerger + sign) reduction
    /// conditions, used to check `niggli_reduce` output.
    fn satisfies_reduction_conditions(l: &LatticeMatrix, tol: f64) -> bool {
        let g = l.matrix() * l.matrix().transpose();
        let (a, b, c) = (g[(0, 0)], g[(1, 1)], g[(2, 2)]);
        let (xi, eta, zeta) = (2.0 * g[(1, 2)], 2.0 * g[(0, 2)], 2.0 * g[(0, 1)]);
        let sorted = a <= b + tol && b <= c + tol;
        let bounded = xi.abs() <= b + tol && eta.abs() <= a + tol && zeta.abs() <= a + tol;
        let all_pos = xi > -tol && eta > -tol && zeta > -tol;
        let all_nonpos = xi < tol && eta < tol && zeta < tol;
        sorted && bounded && (all_pos || all_nonpos)
    }

    #[test]
    fn hexagonal_cell_matrix() {
        let p = LatticeParams::new(1.0, 1.0, 2.0, 90.0, 90.0, 120.0).unwrap();
        let l = params_to_matrix(&p).unwrap();
        let rows = l.rows();
        assert_relative_eq!(rows[0][0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(rows[1][0], -0.5, epsilon = 1e-12);
        assert_relative_eq!(rows[1][1], 3f64.sqrt() / 2.0, epsilon = 1e-12);
        assert!(rows[1][2].abs() < 1e-12);
        assert!(rows[2][0].abs() < 1e-12 && rows[2][1].abs() < 1e-12);
        assert_relative_eq!(rows[2][2], 2.0, epsilon = 1e-12);
        assert_relative_eq!(l.volume(), 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn orthorhombic_volume_and_params() {
        let p = LatticeParams::new(3.0, 4.0, 5.0, 90.0, 90.0, 90.0).unwrap();
        let l = params_to_matrix(&p).unwrap();
        assert_relative_eq!(l.volume(), 60.0, epsilon = 1e-10);
        let back = matrix_to_params(&l).unwrap();
        assert_relative_eq!(back.a, 3.0, epsilon = 1e-12);
        assert_relative_eq!(back.gamma, 90.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(matches!(
            LatticeParams::new(-1.0, 1.0, 1.0, 90.0, 90.0, 90.0),
            Err(LatticeError::NonPositiveLength(_))
        ));
        assert!(matches!(
            LatticeParams::new(1.0, 1.0, 1.0, 180.0, 90.0, 90.0),
            Err(LatticeError::AngleOutOfRange(_))
        ));
        // Angles summing so the volume discriminant is non-positive.
        assert!(matches!(
            LatticeParams::new(1.0, 1.0, 1.0, 60.0, 60.0, 120.0),
            Err(LatticeError::DegenerateAngles(..))
        ));
    }

    #[test]
    fn params_matrix_round_trip_random() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_params(&mut rng);
            let l = params_to_matrix(&p).unwrap();
            let back = matrix_to_params(&l).unwrap();
            assert_relative_eq!(back.a, p.a, epsilon = 1e-9);
            assert_relative_eq!(back.b, p.b, epsilon = 1e-9);
            assert_relative_eq!(back.c, p.c, epsilon = 1e-9);
            assert_relative_eq!(back.alpha, p.alpha, epsilon = 1e-9);
            assert_relative_eq!(back.beta, p.beta, epsilon = 1e-9);
            assert_relative_eq!(back.gamma, p.gamma, epsilon = 1e-9);
        }
    }

    #[test]
    fn frac_cart_round_trip_random() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..500 {
            let l = params_to_matrix(&random_params(&mut rng)).unwrap();
            let f = FracCoord::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let x = frac_to_cart(&f, &l);
            let back = cart_to_frac(&x, &l).unwrap();
            assert!((back.0 - f.0).norm() < 1e-10);
        }
    }

    #[test]
    fn frac_to_cart_is_row_vector_convention() {
        // f = (1, 0, 0) must map onto the first lattice row, not column.
        let p = LatticeParams::new(2.0, 3.0, 4.0, 80.0, 95.0, 100.0).unwrap();
        let l = params_to_matrix(&p).unwrap();
        let x = frac_to_cart(&FracCoord::new(1.0, 0.0, 0.0), &l);
        assert!((x.0 - l.row(0)).norm() < 1e-12);
        let y = frac_to_cart(&FracCoord::new(0.0, 1.0, 0.0), &l);
        assert!((y.0 - l.row(1)).norm() < 1e-12);
    }

    #[test]
    fn wrap_frac_edge_cases() {
        let w = wrap_frac(&FracCoord::new(-0.25, 1.25, 1.0));
        assert_relative_eq!(w.0.x, 0.75, epsilon = 1e-12);
        assert_relative_eq!(w.0.y, 0.25, epsilon = 1e-12);
        assert_eq!(w.0.z, 0.0);
        // Tiny negative values must not wrap to exactly 1.0.
        let w = wrap_frac(&FracCoord::new(-1e-18, -0.0, 0.9999999999999999));
        assert!(w.0.x < 1.0 && w.0.x >= 0.0);
        assert_eq!(w.0.y, 0.0);
        assert!(w.0.z < 1.0);
    }

    #[test]
    fn min_image_crosses_cell_boundary() {
        let l = params_to_matrix(&LatticeParams::new(10.0, 10.0, 10.0, 90.0, 90.0, 90.0).unwrap())
            .unwrap();
        let d = min_image_distance(
            &FracCoord::new(0.05, 0.0, 0.0),
            &FracCoord::new(0.95, 0.0, 0.0),
            &l,
        );
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn min_image_matches_wide_search_on_reduced_cells() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let l = params_to_matrix(&random_params(&mut rng)).unwrap();
            let (reduced, _) = niggli_reduce(&l).unwrap();
            let f1 = FracCoord::new(rng.gen(), rng.gen(), rng.gen());
            let f2 = FracCoord::new(rng.gen(), rng.gen(), rng.gen());
            let narrow = min_image_distance(&f1, &f2, &reduced);
            let wide = min_image_distance_wide(&f1, &f2, &reduced);
            assert_relative_eq!(narrow, wide, epsilon = 1e-9);
        }
    }

    #[test]
    fn min_image_symmetric_and_nonnegative() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..100 {
            let l = params_to_matrix(&random_params(&mut rng)).unwrap();
            let f1 = FracCoord::new(rng.gen(), rng.gen(), rng.gen());
            let f2 = FracCoord::new(rng.gen(), rng.gen(), rng.gen());
            let d12 = min_image_distance_wide(&f1, &f2, &l);
            let d21 = min_image_distance_wide(&f2, &f1, &l);
            assert!(d12 >= 0.0);
            assert_relative_eq!(d12, d21, epsilon = 1e-10);
        }
    }

    #[test]
    fn niggli_identity_on_reduced_cubic() {
        let l = params_to_matrix(&LatticeParams::new(4.0, 4.0, 4.0, 90.0, 90.0, 90.0).unwrap())
            .unwrap();
        let (reduced, p) = niggli_reduce(&l).unwrap();
        assert_eq!(p, IntMatrix::identity());
        assert!((reduced.matrix() - l.matrix()).norm() < 1e-12);
    }

    #[test]
    fn niggli_undoes_single_shear() {
        let base = params_to_matrix(&LatticeParams::new(3.0, 4.0, 5.0, 90.0, 90.0, 90.0).unwrap())
            .unwrap();
        // Replace l2 with l2 + l1: same lattice, skewed basis.
        let shear = IntMatrix([[1, 0, 0], [1, 1, 0], [0, 0, 1]]);
        let skewed = shear.apply_to_lattice(&base).unwrap();
        let (reduced, p) = niggli_reduce(&skewed).unwrap();
        let params = matrix_to_params(&reduced).unwrap();
        assert_relative_eq!(params.a, 3.0, epsilon = 1e-9);
        assert_relative_eq!(params.b, 4.0, epsilon = 1e-9);
        assert_relative_eq!(params.c, 5.0, epsilon = 1e-9);
        assert_relative_eq!(params.alpha, 90.0, epsilon = 1e-7);
        assert_relative_eq!(params.beta, 90.0, epsilon = 1e-7);
        assert_relative_eq!(params.gamma, 90.0, epsilon = 1e-7);
        // The change of basis is tracked exactly.
        let rebuilt = p.apply_to_lattice(&skewed).unwrap();
        assert!((rebuilt.matrix() - reduced.matrix()).norm() < 1e-12);
    }

    #[test]
    fn niggli_recovers_params_under_unimodular_transforms() {
        let mut rng = StdRng::seed_from_u64(23);
        let base = params_to_matrix(&LatticeParams::new(3.2, 4.1, 5.3, 84.0, 96.0, 78.0).unwrap())
            .unwrap();
        let (reduced_base, _) = niggli_reduce(&base).unwrap();
        let want = matrix_to_params(&reduced_base).unwrap();
        for _ in 0..1000 {
            let u = random_unimodular(&mut rng);
            let transformed = u.apply_to_lattice(&base).unwrap();
            let (reduced, p) = niggli_reduce(&transformed).unwrap();
            assert_eq!(p.det(), 1, "change of basis must stay unimodular");
            let got = matrix_to_params(&reduced).unwrap();
            assert_relative_eq!(got.a, want.a, epsilon = 1e-6);
            assert_relative_eq!(got.b, want.b, epsilon = 1e-6);
            assert_relative_eq!(got.c, want.c, epsilon = 1e-6);
            assert_relative_eq!(got.alpha, want.alpha, epsilon = 1e-6);
            assert_relative_eq!(got.beta, want.beta, epsilon = 1e-6);
            assert_relative_eq!(got.gamma, want.gamma, epsilon = 1e-6);
        }
    }

    #[test]
    fn niggli_output_is_reduced_idempotent_and_volume_preserving() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..300 {
            let l = params_to_matrix(&random_params(&mut rng)).unwrap();
            let u = random_unimodular(&mut rng);
            let skewed = u.apply_to_lattice(&l).unwrap();
            let (reduced, _) = niggli_reduce(&skewed).unwrap();
            assert_relative_eq!(reduced.volume(), skewed.volume(), max_relative = 1e-9);
            let tol = 10.0 * NIGGLI_TOL * reduced.volume().cbrt() * reduced.volume().cbrt();
            assert!(
                satisfies_reduction_conditions(&reduced, tol),
                "cell not reduced: {:?}",
                matrix_to_params(&reduced)
            );
            // Reducing again is a no-op.
            let (again, p2) = niggli_reduce(&reduced).unwrap();
            assert_eq!(p2, IntMatrix::identity());
            assert!((again.matrix() - reduced.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn int_matrix_inverse_round_trip() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..200 {
            let u = random_unimodular(&mut rng);
            let inv = u.inverse_unimodular().unwrap();
            assert_eq!(u.mul(&inv), IntMatrix::identity());
            assert_eq!(inv.mul(&u), IntMatrix::identity());
        }
    }

    #[test]
    fn lattice_matrix_serde_round_trip() {
        let l = params_to_matrix(&LatticeParams::new(3.0, 4.0, 5.0, 80.0, 95.0, 100.0).unwrap())
            .unwrap();
        let json = serde_json::to_string(&l).unwrap();
        let back: LatticeMatrix = serde_json::from_str(&json).unwrap();
        assert!((back.matrix() - l.matrix()).norm() < 1e-12);
        // Left-handed matrices are rejected at deserialization time.
        let bad = "[[1,0,0],[0,1,0],[0,0,-1]]";
        assert!(serde_json::from_str::<LatticeMatrix>(bad).is_err());
    }

    proptest! {
        #[test]
        fn wrap_frac_always_in_unit_interval(
            x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6,
        ) {
            let w = wrap_frac(&FracCoord::new(x, y, z));
            for v in w.to_array() {
                prop_assert!((0.0..1.0).contains(&v));
            }
        }

        #[test]
        fn wrap_frac_preserves_lattice_residue(x in -50.0f64..50.0) {
            let w = wrap_frac(&FracCoord::new(x, 0.0, 0.0));
            let diff = x - w.0.x;
            prop_assert!((diff - diff.round()).abs() < 1e-9);
        }

        #[test]
        fn volume_positive_for_valid_params(
            a in 0.5f64..30.0, b in 0.5f64..30.0, c in 0.5f64..30.0,
            alpha in 40.0f64..140.0, beta in 40.0f64..140.0, gamma in 40.0f64..140.0,
        ) {
            if let Ok(p) = LatticeParams::new(a, b, c, alpha, beta, gamma) {
                let l = params_to_matrix(&p).unwrap();
                prop_assert!(l.volume() > 0.0);
                prop_assert!((l.volume() - p.volume()).abs() < 1e-6 * p.volume());
            }
        }
    }
}
