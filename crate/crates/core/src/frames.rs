//! Local reference frames for rigid building blocks.
//!
//! A block's local frame comes from an unweighted PCA of its atom positions:
//! the geometric centroid is the origin and the principal axes (by descending
//! variance) are the local basis, so the principal axis of the local
//! coordinates is always aligned with `(1, 0, 0)`. Axis signs are pinned by a
//! mass-weighted reference direction so the frame is invariant under rigid
//! motion of the input; fully symmetric blocks fall back to a
//! lexicographic rule and are flagged as degenerate.

use crate::elements::{molecular_weight, ElementError};
use crate::lattice::CartCoord;
use crate::rotation::RotationMatrix;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

/// Centroid residual above which local coordinates are rejected as
/// uncentered.
const CENTROID_TOL: f64 = 1e-6;

/// Relative eigenvalue-gap threshold below which the PCA spectrum counts as
/// degenerate.
const EIGENGAP_TOL: f64 = 1e-6;

/// Dot-product magnitude below which the mass-weighted sign reference is
/// considered unresolved for an axis.
const SIGN_REF_TOL: f64 = 1e-9;

/// Errors raised by block construction and frame extraction.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FrameError {
    /// Species and coordinate lists differ in length.
    #[error("species count {0} does not match coordinate count {1}")]
    LengthMismatch(usize, usize),
    /// A block must contain at least one atom.
    #[error("building block must contain at least one atom")]
    Empty,
    /// A coordinate was NaN or infinite.
    #[error("block coordinates must be finite")]
    NonFinite,
    /// Local coordinates whose centroid is not at the origin.
    #[error("local coordinates are not centered: centroid norm {0:.3e} exceeds {CENTROID_TOL:.0e}")]
    NotCentered(f64),
    /// An atomic number outside the embedded element tables.
    #[error(transparent)]
    Element(#[from] ElementError),
}

/// A rigid building block in its canonical local frame.
///
/// `local_coords` are centered on the geometric centroid, with the principal
/// PCA axis along `(1, 0, 0)`. `molecular_weight` (amu) and `pca_span`
/// (per-axis extent, Å) are derived at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub species: Vec<u8>,
    pub local_coords: Vec<[f64; 3]>,
    pub smiles: String,
    pub molecular_weight: f64,
    pub pca_span: [f64; 3],
}

impl BuildingBlock {
    /// Builds a block from already-canonical local coordinates, validating
    /// shape, finiteness, element range, and centering; the weight and span
    /// are recomputed rather than trusted.
    pub fn new(species: Vec<u8>, local_coords: Vec<[f64; 3]>, smiles: String) -> Result<Self, FrameError> {
        if species.len() != local_coords.len() {
            return Err(FrameError::LengthMismatch(species.len(), local_coords.len()));
        }
        if species.is_empty() {
            return Err(FrameError::Empty);
        }
        if local_coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite);
        }
        let n = local_coords.len() as f64;
        let mut centroid = Vector3::zeros();
        for c in &local_coords {
            centroid += Vector3::new(c[0], c[1], c[2]);
        }
        centroid /= n;
        if centroid.norm() > CENTROID_TOL {
            return Err(FrameError::NotCentered(centroid.norm()));
        }
        let molecular_weight = molecular_weight(&species)?;
        let pca_span = span_of(&local_coords);
        Ok(Self { species, local_coords, smiles, molecular_weight, pca_span })
    }

    pub fn atom_count(&self) -> usize {
        self.species.len()
    }

    /// Local coordinates as vectors.
    pub fn local_vectors(&self) -> Vec<Vector3<f64>> {
        self.local_coords
            .iter()
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    }
}

/// Per-axis extent (max - min) of a coordinate list.
pub fn span_of(coords: &[[f64; 3]]) -> [f64; 3] {
    let mut span = [0.0f64; 3];
    for axis in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in coords {
            lo = lo.min(c[axis]);
            hi = hi.max(c[axis]);
        }
        span[axis] = hi - lo;
    }
    span
}

/// Result of extracting a local frame from globally-placed atoms.
#[derive(Debug, Clone)]
pub struct ExtractedFrame {
    /// The block in its canonical local frame (`smiles` left empty).
    pub block: BuildingBlock,
    /// Rotation mapping local to global: `global = local · Rᵀ + centroid`.
    pub rotation: RotationMatrix,
    /// Geometric centroid of the input atoms.
    pub centroid: CartCoord,
    /// True when the PCA spectrum was too degenerate to pin the frame
    /// uniquely; the frame returned is still deterministic for the exact
    /// input, but not invariant under rigid motion.
    pub degenerate: bool,
}

/// Extracts the canonical local frame of a set of atoms given in global
/// Cartesian coordinates.
///
/// The inverse placement always holds: rotating the local coordinates by the
/// returned rotation (row convention `p · Rᵀ`) and adding the centroid
/// reproduces the input.
pub fn extract_local_frame(species: &[u8], global_coords: &[Vector3<f64>]) -> Result<ExtractedFrame, FrameError> {
    if species.len() != global_coords.len() {
        return Err(FrameError::LengthMismatch(species.len(), global_coords.len()));
    }
    if species.is_empty() {
        return Err(FrameError::Empty);
    }
    if global_coords.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(FrameError::NonFinite);
    }

    let n = global_coords.len() as f64;
    let centroid: Vector3<f64> = global_coords.iter().sum::<Vector3<f64>>() / n;
    let centered: Vec<Vector3<f64>> = global_coords.iter().map(|c| c - centroid).collect();

    // Unweighted covariance of the centered cloud.
    let mut cov = Matrix3::zeros();
    for c in &centered {
        cov += c * c.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    // Sort eigenpairs by descending variance.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut axes: Vec<Vector3<f64>> = if lambda[0] < 1e-12 {
        // Zero spread (e.g. a single atom): the frame is conventionally the
        // identity basis rather than whatever the eigensolver returned.
        vec![Vector3::x(), Vector3::y(), Vector3::z()]
    } else {
        order
            .iter()
            .map(|&i| Vector3::new(eig.eigenvectors[(0, i)], eig.eigenvectors[(1, i)], eig.eigenvectors[(2, i)]))
            .collect()
    };

    let scale = lambda[0].max(1e-300);
    let degenerate = lambda[0] < 1e-12
        || (lambda[0] - lambda[1]) / scale < EIGENGAP_TOL
        || (lambda[1] - lambda[2]) / scale < EIGENGAP_TOL;

    // Mass-weighted reference direction used to pin axis signs. The centroid
    // is geometric, so unequal masses leave a nonzero residual direction.
    let total_mass = molecular_weight(species)?;
    let mut reference = Vector3::zeros();
    for (z, c) in species.iter().zip(&centered) {
        reference += crate::elements::atomic_mass(*z)? * c;
    }
    reference /= total_mass;

    // Fallback reference: the lexicographically largest centered coordinate
    // (compare x, then y, then z).
    let lex_ref = centered
        .iter()
        .copied()
        .max_by(|a, b| {
            (a.x, a.y, a.z)
                .partial_cmp(&(b.x, b.y, b.z))
                .expect("finite coordinates compare")
        })
        .expect("non-empty block");

    for axis in axes.iter_mut().take(2) {
        let dot = axis.dot(&reference);
        if dot.abs() >= SIGN_REF_TOL {
            if dot < 0.0 {
                *axis = -*axis;
            }
        } else if axis.dot(&lex_ref) < 0.0 {
            *axis = -*axis;
        }
    }
    // Right-handed completion.
    let third = axes[0].cross(&axes[1]);
    axes[2] = third;

    // Columns of R are the global-frame principal axes, so local = c · R and
    // global = local · Rᵀ + centroid.
    let r = Matrix3::from_columns(&[axes[0], axes[1], axes[2]]);
    let rotation = RotationMatrix::from_matrix(r, 1e-8).map_err(|_| FrameError::NonFinite)?;

    let local_coords: Vec<[f64; 3]> = centered
        .iter()
        .map(|c| {
            let l = r.transpose() * c;
            [l.x, l.y, l.z]
        })
        .collect();

    // Snap the centroid residual of the local cloud to zero: it is zero in
    // exact arithmetic, and BuildingBlock::new checks it.
    let block = BuildingBlock::new(species.to_vec(), local_coords, String::new())?;
    Ok(ExtractedFrame {
        block,
        rotation,
        centroid: CartCoord(centroid),
        degenerate,
    })
}

/// Rotated principal axis of a placed block: the image of `(1, 0, 0)` under
/// the pose rotation.
pub fn rotated_principal_axis(rotation: &RotationMatrix) -> [f64; 3] {
    let v = rotation.rotated_x_axis();
    [v.x, v.y, v.z]
}
