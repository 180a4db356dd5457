//! Assembling placed building blocks into periodic structures, and the
//! inverse decomposition of a structure back into blocks and poses.
//!
//! A pose is a fractional translation plus extrinsic x-y-z Euler angles; a
//! placed atom sits at `R · p + t · L` where `p` is the atom's local
//! coordinate, `R` the pose rotation, `t` the fractional translation, and `L`
//! the canonical lattice matrix built from the cell parameters. Because the
//! lattice is always rebuilt from parameters, assembly output is independent
//! of how the input cell happened to be oriented in Cartesian space.

use crate::elements::{element_symbol, ElementError};
use crate::frames::{extract_local_frame, BuildingBlock, FrameError};
use crate::lattice::{
    cart_to_frac, frac_to_cart, matrix_to_params, min_image_distance, min_image_frac_displacement,
    niggli_reduce, params_to_matrix, wrap_frac, CartCoord, FracCoord, LatticeError, LatticeMatrix,
    LatticeParams,
};
use crate::rotation::{euler_to_matrix, matrix_to_euler, EulerAngles};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Errors raised while assembling or decomposing structures.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AssemblyError {
    /// Block and pose lists differ in length.
    #[error("block count {0} does not match pose count {1}")]
    PoseCountMismatch(usize, usize),
    /// Species and coordinate lists differ in length.
    #[error("species count {0} does not match coordinate count {1}")]
    LengthMismatch(usize, usize),
    /// A structure must contain at least one atom.
    #[error("structure must contain at least one atom")]
    Empty,
    /// A coordinate or pose entry was NaN or infinite.
    #[error("coordinates and poses must be finite")]
    NonFinite,
    /// Block sizes do not partition the structure's atoms.
    #[error("block sizes sum to {0} but the structure has {1} atoms")]
    SizesMismatch(usize, usize),
    /// A decomposition block of zero atoms.
    #[error("block sizes must be positive")]
    ZeroBlockSize,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Element(#[from] ElementError),
}

/// Placement of one block: fractional translation of its centroid plus the
/// extrinsic x-y-z Euler angles of its rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: [f64; 3],
    pub euler: EulerAngles,
}

impl Pose {
    pub fn new(translation: [f64; 3], euler: EulerAngles) -> Result<Self, AssemblyError> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(AssemblyError::NonFinite);
        }
        Ok(Self { translation, euler })
    }

    /// Translation with each component wrapped to `[0, 1)`.
    pub fn wrapped_translation(&self) -> [f64; 3] {
        wrap_frac(&FracCoord::from(self.translation)).to_array()
    }
}

/// A periodic structure: a lattice and wrapped fractional sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub lattice: LatticeMatrix,
    pub species: Vec<u8>,
    pub frac_coords: Vec<FracCoord>,
}

impl Structure {
    /// Validating constructor; fractional coordinates are wrapped to `[0, 1)`.
    pub fn new(
        lattice: LatticeMatrix,
        species: Vec<u8>,
        frac_coords: Vec<FracCoord>,
    ) -> Result<Self, AssemblyError> {
        if species.len() != frac_coords.len() {
            return Err(AssemblyError::LengthMismatch(species.len(), frac_coords.len()));
        }
        if species.is_empty() {
            return Err(AssemblyError::Empty);
        }
        for z in &species {
            element_symbol(*z)?;
        }
        if frac_coords.iter().any(|f| !f.is_finite()) {
            return Err(AssemblyError::NonFinite);
        }
        let frac_coords = frac_coords.iter().map(wrap_frac).collect();
        Ok(Self { lattice, species, frac_coords })
    }

    pub fn atom_count(&self) -> usize {
        self.species.len()
    }

    /// Cartesian positions of all sites.
    pub fn cart_coords(&self) -> Vec<CartCoord> {
        self.frac_coords
            .iter()
            .map(|f| frac_to_cart(f, &self.lattice))
            .collect()
    }
}

/// Places each block by its pose and collects the atoms into one periodic
/// structure. The lattice matrix is the canonical one for `params`, so the
/// result does not depend on any prior Cartesian orientation of the cell.
pub fn assemble(
    params: &LatticeParams,
    blocks: &[BuildingBlock],
    poses: &[Pose],
) -> Result<Structure, AssemblyError> {
    if blocks.len() != poses.len() {
        return Err(AssemblyError::PoseCountMismatch(blocks.len(), poses.len()));
    }
    if blocks.is_empty() {
        return Err(AssemblyError::Empty);
    }
    let lattice = params_to_matrix(params)?;
    let mut species = Vec::new();
    let mut frac_coords = Vec::new();
    for (block, pose) in blocks.iter().zip(poses) {
        if pose.translation.iter().any(|v| !v.is_finite()) {
            return Err(AssemblyError::NonFinite);
        }
        let r = euler_to_matrix(&pose.euler);
        let centroid = frac_to_cart(&FracCoord::from(pose.translation), &lattice).0;
        for p in block.local_vectors() {
            let cart = CartCoord(r.matrix() * p + centroid);
            let frac = cart_to_frac(&cart, &lattice)?;
            frac_coords.push(wrap_frac(&frac));
        }
        species.extend_from_slice(&block.species);
    }
    Structure::new(lattice, species, frac_coords)
}

/// Result of decomposing a structure into blocks and poses.
#[derive(Debug, Clone)]
pub struct Disassembly {
    pub params: LatticeParams,
    pub blocks: Vec<BuildingBlock>,
    pub poses: Vec<Pose>,
    /// True when any block's PCA frame was degenerate; the poses are still
    /// consistent (reassembly reproduces the structure) but not unique.
    pub degenerate: bool,
}

/// Decomposes a structure into canonical blocks and poses, given how many
/// consecutive atoms belong to each block.
///
/// Each block is unwrapped across periodic boundaries relative to its first
/// atom (a minimum-image star), its local frame extracted, and its pose read
/// off as the wrapped fractional centroid plus the frame's Euler angles.
/// Reassembling the result reproduces the input sites up to wrapping.
pub fn disassemble(
    structure: &Structure,
    block_sizes: &[usize],
) -> Result<Disassembly, AssemblyError> {
    if block_sizes.iter().any(|&s| s == 0) {
        return Err(AssemblyError::ZeroBlockSize);
    }
    let total: usize = block_sizes.iter().sum();
    if total != structure.atom_count() {
        return Err(AssemblyError::SizesMismatch(total, structure.atom_count()));
    }
    // Work in the canonical orientation for this cell; fractional coordinates
    // are unchanged by the re-orientation.
    let params = matrix_to_params(&structure.lattice)?;
    let lattice = params_to_matrix(&params)?;

    let mut blocks = Vec::with_capacity(block_sizes.len());
    let mut poses = Vec::with_capacity(block_sizes.len());
    let mut degenerate = false;
    let mut start = 0;
    for &size in block_sizes {
        let range = start..start + size;
        let anchor = structure.frac_coords[start];
        // Unwrap the block into one connected cloud around its first atom.
        let carts: Vec<Vector3<f64>> = structure.frac_coords[range.clone()]
            .iter()
            .map(|f| {
                let d = min_image_frac_displacement(f, &anchor, &lattice, 2);
                frac_to_cart(&FracCoord(anchor.0 + d), &lattice).0
            })
            .collect();
        let frame = extract_local_frame(&structure.species[range], &carts)?;
        let translation = wrap_frac(&cart_to_frac(&frame.centroid, &lattice)?);
        blocks.push(frame.block);
        poses.push(Pose {
            translation: translation.to_array(),
            euler: matrix_to_euler(&frame.rotation),
        });
        degenerate |= frame.degenerate;
        start += size;
    }
    Ok(Disassembly { params, blocks, poses, degenerate })
}

/// Shortest distance between any two atoms under periodic boundary
/// conditions, including each atom's distance to its own nearest periodic
/// image. Defined for any structure with at least one atom.
pub fn min_interatomic_distance(structure: &Structure) -> Result<f64, AssemblyError> {
    let (reduced, p) = niggli_reduce(&structure.lattice)?;
    let p_inv = p
        .inverse_unimodular()
        .expect("reduction transform is unimodular");
    let coords: Vec<FracCoord> = structure
        .frac_coords
        .iter()
        .map(|f| wrap_frac(&FracCoord(p_inv.apply_to_row(&f.0))))
        .collect();

    // Every atom is at the shortest reduced lattice vector from its own
    // image, so that length bounds the result even for a single atom.
    let mut best = f64::INFINITY;
    for ka in -1i32..=1 {
        for kb in -1i32..=1 {
            for kc in -1i32..=1 {
                if (ka, kb, kc) == (0, 0, 0) {
                    continue;
                }
                let v = frac_to_cart(
                    &FracCoord(Vector3::new(ka as f64, kb as f64, kc as f64)),
                    &reduced,
                )
                .0;
                best = best.min(v.norm());
            }
        }
    }
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            best = best.min(min_image_distance(&coords[i], &coords[j], &reduced));
        }
    }
    Ok(best)
}

/// Renders a structure as a minimal P1 CIF document.
pub fn write_cif(structure: &Structure, data_name: &str) -> Result<String, AssemblyError> {
    let p = matrix_to_params(&structure.lattice)?;
    let mut out = String::new();
    out.push_str(&format!("data_{data_name}\n"));
    out.push_str(&format!("_cell_length_a {:.6}\n", p.a));
    out.push_str(&format!("_cell_length_b {:.6}\n", p.b));
    out.push_str(&format!("_cell_length_c {:.6}\n", p.c));
    out.push_str(&format!("_cell_angle_alpha {:.6}\n", p.alpha));
    out.push_str(&format!("_cell_angle_beta {:.6}\n", p.beta));
    out.push_str(&format!("_cell_angle_gamma {:.6}\n", p.gamma));
    out.push_str("_symmetry_space_group_name_H-M 'P 1'\n");
    out.push_str("_symmetry_Int_Tables_number 1\n");
    out.push_str("loop_\n");
    out.push_str("_atom_site_type_symbol\n");
    out.push_str("_atom_site_label\n");
    out.push_str("_atom_site_fract_x\n");
    out.push_str("_atom_site_fract_y\n");
    out.push_str("_atom_site_fract_z\n");
    let mut counts = std::collections::BTreeMap::new();
    for (z, f) in structure.species.iter().zip(&structure.frac_coords) {
        let symbol = element_symbol(*z)?;
        let n = counts.entry(*z).or_insert(0usize);
        *n += 1;
        out.push_str(&format!(
            "{symbol} {symbol}{n} {:.6} {:.6} {:.6}\n",
            f.0.x, f.0.y, f.0.z
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{random_rotation, RotationMatrix};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cubic(a: f64) -> LatticeParams {
        LatticeParams::new(a, a, a, 90.0, 90.0, 90.0).unwrap()
    }

    /// Distance between two fractional translations on the unit 3-torus.
    fn torus_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
        a.iter()
            .zip(&b)
            .map(|(x, y)| {
                let d = (x - y).rem_euclid(1.0);
                d.min(1.0 - d)
            })
            .fold(0.0, f64::max)
    }

    /// A random non-degenerate canonical block: a random cloud run through
    /// frame extraction so its own PCA frame is the identity.
    fn canonical_block(rng: &mut StdRng, atoms: usize) -> BuildingBlock {
        let palette = [6u8, 8, 30];
        loop {
            let species: Vec<u8> = (0..atoms).map(|_| palette[rng.gen_range(0..palette.len())]).collect();
            let coords: Vec<Vector3<f64>> = (0..atoms)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.6..0.6),
                    )
                })
                .collect();
            if let Ok(f) = extract_local_frame(&species, &coords) {
                if !f.degenerate {
                    return f.block;
                }
            }
        }
    }

    fn random_pose(rng: &mut StdRng) -> Pose {
        // Stay away from the Euler gimbal lock so recovered angles compare
        // directly.
        let euler = EulerAngles::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.4..1.4),
            rng.gen_range(-3.0..3.0),
        )
        .unwrap();
        Pose {
            translation: [rng.gen(), rng.gen(), rng.gen()],
            euler,
        }
    }

    #[test]
    fn single_atom_block_lands_at_its_translation() {
        let block = BuildingBlock::new(vec![30], vec![[0.0; 3]], String::new()).unwrap();
        let pose = Pose {
            translation: [0.25, 0.5, 0.75],
            euler: EulerAngles::new(0.3, 0.2, 0.1).unwrap(),
        };
        let s = assemble(&cubic(10.0), &[block], &[pose]).unwrap();
        assert_eq!(s.species, vec![30]);
        let f = s.frac_coords[0].to_array();
        assert_relative_eq!(f[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(f[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(f[2], 0.75, epsilon = 1e-12);
        let cart = s.cart_coords()[0].to_array();
        assert_relative_eq!(cart[0], 2.5, epsilon = 1e-12);
        assert_relative_eq!(cart[2], 7.5, epsilon = 1e-12);
    }

    #[test]
    fn assemble_rejects_mismatched_and_empty_inputs() {
        let block = BuildingBlock::new(vec![6], vec![[0.0; 3]], String::new()).unwrap();
        let pose = Pose { translation: [0.0; 3], euler: EulerAngles::new(0.0, 0.0, 0.0).unwrap() };
        assert!(matches!(
            assemble(&cubic(10.0), &[block], &[]),
            Err(AssemblyError::PoseCountMismatch(1, 0))
        ));
        assert!(matches!(assemble(&cubic(10.0), &[], &[]), Err(AssemblyError::Empty)));
        let bad = Pose { translation: [f64::NAN, 0.0, 0.0], euler: pose.euler };
        let block2 = BuildingBlock::new(vec![6], vec![[0.0; 3]], String::new()).unwrap();
        assert!(matches!(
            assemble(&cubic(10.0), &[block2], &[bad]),
            Err(AssemblyError::NonFinite)
        ));
    }

    #[test]
    fn round_trip_recovers_blocks_and_poses() {
        let mut rng = StdRng::seed_from_u64(401);
        let params = LatticeParams::new(12.0, 13.0, 11.0, 85.0, 95.0, 100.0).unwrap();
        for _ in 0..20 {
            let blocks = vec![canonical_block(&mut rng, 6), canonical_block(&mut rng, 5)];
            let poses = vec![random_pose(&mut rng), random_pose(&mut rng)];
            let s = assemble(&params, &blocks, &poses).unwrap();
            let d = disassemble(&s, &[6, 5]).unwrap();
            assert!(!d.degenerate);

            assert_relative_eq!(d.params.a, params.a, epsilon = 1e-9);
            assert_relative_eq!(d.params.gamma, params.gamma, epsilon = 1e-9);
            for (orig, rec) in blocks.iter().zip(&d.blocks) {
                assert_eq!(orig.species, rec.species);
                for (a, b) in orig.local_coords.iter().zip(&rec.local_coords) {
                    for k in 0..3 {
                        assert!((a[k] - b[k]).abs() < 1e-7, "local coords differ: {a:?} vs {b:?}");
                    }
                }
            }
            for (orig, rec) in poses.iter().zip(&d.poses) {
                assert!(torus_distance(orig.wrapped_translation(), rec.translation) < 1e-9);
                let r_orig = euler_to_matrix(&orig.euler);
                let r_rec = euler_to_matrix(&rec.euler);
                let dev = (r_orig.matrix() - r_rec.matrix()).abs().max();
                assert!(dev < 1e-7, "pose rotations differ by {dev:.3e}");
            }
        }
    }

    #[test]
    fn reassembly_reproduces_sites_even_when_degenerate() {
        // Single atoms and a linear block: frames are degenerate, but
        // disassemble → assemble must still reproduce the structure.
        let params = LatticeParams::new(9.0, 10.0, 11.0, 90.0, 104.0, 90.0).unwrap();
        let lattice = params_to_matrix(&params).unwrap();
        let coords = vec![
            FracCoord::new(0.1, 0.2, 0.3),
            FracCoord::new(0.6, 0.7, 0.8),
            FracCoord::new(0.65, 0.7, 0.8),
        ];
        let s = Structure::new(lattice, vec![30, 6, 6], coords).unwrap();
        let d = disassemble(&s, &[1, 2]).unwrap();
        assert!(d.degenerate);
        let rebuilt = assemble(&d.params, &d.blocks, &d.poses).unwrap();
        for (a, b) in s.frac_coords.iter().zip(&rebuilt.frac_coords) {
            assert!(torus_distance(a.to_array(), b.to_array()) < 1e-9);
        }
    }

    #[test]
    fn block_straddling_a_cell_boundary_unwraps() {
        let mut rng = StdRng::seed_from_u64(409);
        let block = canonical_block(&mut rng, 5);
        let pose = Pose {
            translation: [0.995, 0.002, 0.5],
            euler: EulerAngles::new(0.4, -0.3, 1.2).unwrap(),
        };
        let s = assemble(&cubic(14.0), &[block.clone()], &[pose]).unwrap();
        // The assembled sites really do straddle the boundary.
        let xs: Vec<f64> = s.frac_coords.iter().map(|f| f.0.x).collect();
        assert!(xs.iter().any(|&x| x > 0.9) && xs.iter().any(|&x| x < 0.1), "sites: {xs:?}");
        let d = disassemble(&s, &[5]).unwrap();
        assert!(torus_distance(pose.translation, d.poses[0].translation) < 1e-9);
        for (a, b) in block.local_coords.iter().zip(&d.blocks[0].local_coords) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn assembly_is_invariant_to_global_frame_rotation() {
        // Hand-build the same physical structure in a rotated Cartesian
        // frame: lattice rows L' = L·Q and poses R' = Qᵀ·R give identical
        // fractional coordinates, which is what assemble (always using the
        // canonical frame) produces.
        let mut rng = StdRng::seed_from_u64(419);
        let params = LatticeParams::new(10.0, 12.0, 9.0, 80.0, 92.0, 107.0).unwrap();
        let lattice = params_to_matrix(&params).unwrap();
        let q = random_rotation(7);
        let blocks = vec![canonical_block(&mut rng, 6)];
        let poses = vec![random_pose(&mut rng)];
        let assembled = assemble(&params, &blocks, &poses).unwrap();

        let l_rot = LatticeMatrix::from_matrix(lattice.matrix() * q.matrix()).unwrap();
        let r_rot = RotationMatrix::from_matrix(q.matrix().transpose() * euler_to_matrix(&poses[0].euler).matrix(), 1e-9).unwrap();
        let centroid = frac_to_cart(&FracCoord::from(poses[0].translation), &l_rot).0;
        for (p, expected) in blocks[0].local_vectors().iter().zip(&assembled.frac_coords) {
            let cart = CartCoord(r_rot.matrix() * p + centroid);
            let frac = wrap_frac(&cart_to_frac(&cart, &l_rot).unwrap());
            assert!(torus_distance(frac.to_array(), expected.to_array()) < 1e-10);
        }
    }

    #[test]
    fn min_distance_basic_pairs() {
        let lattice = params_to_matrix(&cubic(10.0)).unwrap();
        let s = Structure::new(
            lattice.clone(),
            vec![6, 8],
            vec![FracCoord::new(0.0, 0.0, 0.0), FracCoord::new(0.3, 0.0, 0.0)],
        )
        .unwrap();
        assert_relative_eq!(min_interatomic_distance(&s).unwrap(), 3.0, epsilon = 1e-12);

        let s = Structure::new(
            lattice,
            vec![6, 8],
            vec![FracCoord::new(0.05, 0.0, 0.0), FracCoord::new(0.95, 0.0, 0.0)],
        )
        .unwrap();
        assert_relative_eq!(min_interatomic_distance(&s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn min_distance_single_atom_is_self_image() {
        let s = Structure::new(
            params_to_matrix(&cubic(10.0)).unwrap(),
            vec![30],
            vec![FracCoord::new(0.4, 0.4, 0.4)],
        )
        .unwrap();
        assert_relative_eq!(min_interatomic_distance(&s).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn min_distance_sees_short_vector_of_skewed_cell() {
        // Row lengths are 10, ~10.05, 8, but l2 - l1 = (0, 1, 0): the true
        // self-image distance is 1, visible only after reduction.
        let l = LatticeMatrix::from_rows([[10.0, 0.0, 0.0], [10.0, 1.0, 0.0], [0.0, 0.0, 8.0]])
            .unwrap();
        let s = Structure::new(l, vec![6], vec![FracCoord::new(0.0, 0.0, 0.0)]).unwrap();
        assert_relative_eq!(min_interatomic_distance(&s).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn disassemble_validates_partition() {
        let s = Structure::new(
            params_to_matrix(&cubic(10.0)).unwrap(),
            vec![6, 6],
            vec![FracCoord::new(0.1, 0.1, 0.1), FracCoord::new(0.2, 0.1, 0.1)],
        )
        .unwrap();
        assert!(matches!(disassemble(&s, &[3]), Err(AssemblyError::SizesMismatch(3, 2))));
        assert!(matches!(disassemble(&s, &[2, 0]), Err(AssemblyError::ZeroBlockSize)));
    }

    #[test]
    fn structure_constructor_wraps_and_validates() {
        let lattice = params_to_matrix(&cubic(10.0)).unwrap();
        let s = Structure::new(lattice.clone(), vec![6], vec![FracCoord::new(1.25, -0.25, 3.0)]).unwrap();
        let f = s.frac_coords[0].to_array();
        assert_relative_eq!(f[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(f[1], 0.75, epsilon = 1e-12);
        assert_relative_eq!(f[2], 0.0, epsilon = 1e-12);
        assert!(matches!(
            Structure::new(lattice.clone(), vec![6], vec![]),
            Err(AssemblyError::LengthMismatch(1, 0))
        ));
        assert!(matches!(
            Structure::new(lattice.clone(), vec![], vec![]),
            Err(AssemblyError::Empty)
        ));
        assert!(matches!(
            Structure::new(lattice, vec![120], vec![FracCoord::new(0.0, 0.0, 0.0)]),
            Err(AssemblyError::Element(_))
        ));
    }

    #[test]
    fn cif_output_matches_expected_text() {
        let s = Structure::new(
            params_to_matrix(&cubic(10.0)).unwrap(),
            vec![30, 8, 8],
            vec![
                FracCoord::new(0.0, 0.0, 0.0),
                FracCoord::new(0.5, 0.25, 0.125),
                FracCoord::new(0.75, 0.75, 0.75),
            ],
        )
        .unwrap();
        let expected = "\
data_test
_cell_length_a 10.000000
_cell_length_b 10.000000
_cell_length_c 10.000000
_cell_angle_alpha 90.000000
_cell_angle_beta 90.000000
_cell_angle_gamma 90.000000
_symmetry_space_group_name_H-M 'P 1'
_symmetry_Int_Tables_number 1
loop_
_atom_site_type_symbol
_atom_site_label
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
Zn Zn1 0.000000 0.000000 0.000000
O O1 0.500000 0.250000 0.125000
O O2 0.750000 0.750000 0.750000
";
        assert_eq!(write_cif(&s, "test").unwrap(), expected);
    }
}
