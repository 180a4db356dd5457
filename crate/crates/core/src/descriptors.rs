//! Geometric descriptors of assembled structures: unit-cell volume, mass
//! density, and grid estimates of void fraction and largest cavity diameter.
//!
//! The two grid quantities sample a corner-aligned `n³` fractional grid and
//! classify each point by its minimum-image distance to the atoms, inflated
//! by per-element van der Waals radii. They are deliberately labeled as grid
//! estimates in the report: a uniform grid with tabulated radii approximates
//! what dedicated porosity codes compute from Voronoi networks, and carries
//! no channel-connectivity information.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::Structure;
use crate::elements::{atomic_mass, vdw_radius, ElementError};
use crate::lattice::{frac_to_cart, FracCoord, LatticeMatrix};
use crate::matching::{reduce_structure, MatchError};

/// Grams per cubic centimeter of one atomic mass unit per cubic ångström.
pub const AMU_PER_CUBIC_ANGSTROM: f64 = 1.66054;
/// Coarsest permitted sampling grid.
pub const MIN_GRID_RESOLUTION: usize = 8;
/// Default per-axis sampling resolution.
pub const DEFAULT_GRID_RESOLUTION: usize = 64;
/// Default probe radius: a bare geometric void fraction.
pub const DEFAULT_PROBE_RADIUS: f64 = 0.0;

/// Errors from descriptor evaluation.
#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error("grid resolution {0} is below the minimum of {MIN_GRID_RESOLUTION} per axis")]
    GridTooCoarse(usize),
    #[error("probe radius must be finite and non-negative, got {0}")]
    InvalidProbe(f64),
    #[error(transparent)]
    Reduction(#[from] MatchError),
}

/// The descriptor set for one structure. The grid-derived fields serialize
/// as `vf_grid` and `lcd_grid` to flag them as grid estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorReport {
    /// Unit-cell volume, Å³.
    pub ucv: f64,
    /// Mass density, g/cm³.
    pub density: f64,
    /// Fraction of grid points outside every inflated atom sphere.
    #[serde(rename = "vf_grid")]
    pub void_fraction: f64,
    /// Twice the largest grid-point clearance past the van der Waals
    /// surfaces, Å.
    #[serde(rename = "lcd_grid")]
    pub lcd: f64,
    pub grid_resolution: usize,
    pub probe_radius: f64,
}

/// Unit-cell volume `|det L|` in Å³.
pub fn unit_cell_volume(lattice: &LatticeMatrix) -> f64 {
    lattice.volume().abs()
}

/// Mass density in g/cm³: total atomic mass over the cell volume.
pub fn density(structure: &Structure) -> Result<f64, DescriptorError> {
    let mut mass = 0.0;
    for &z in &structure.species {
        mass += atomic_mass(z)?;
    }
    Ok(mass * AMU_PER_CUBIC_ANGSTROM / unit_cell_volume(&structure.lattice))
}

/// Fraction of a corner-aligned `n³` fractional grid whose minimum-image
/// distance to every atom exceeds that atom's van der Waals radius plus
/// `probe_radius`.
pub fn void_fraction_grid(
    structure: &Structure,
    probe_radius: f64,
    n_per_axis: usize,
) -> Result<f64, DescriptorError> {
    let (void_points, _) = grid_scan(structure, probe_radius, n_per_axis)?;
    Ok(void_points as f64 / (n_per_axis * n_per_axis * n_per_axis) as f64)
}

/// Grid estimate of the largest cavity diameter: twice the largest
/// grid-point clearance `min over atoms (distance − vdW radius)`, floored
/// at zero.
pub fn lcd_grid(structure: &Structure, n_per_axis: usize) -> Result<f64, DescriptorError> {
    let (_, max_clearance) = grid_scan(structure, 0.0, n_per_axis)?;
    Ok(2.0 * max_clearance.max(0.0))
}

/// All four descriptors in one report (one shared grid pass).
pub fn descriptor_report(
    structure: &Structure,
    probe_radius: f64,
    n_per_axis: usize,
) -> Result<DescriptorReport, DescriptorError> {
    let ucv = unit_cell_volume(&structure.lattice);
    let density = density(structure)?;
    let (void_points, max_clearance) = grid_scan(structure, probe_radius, n_per_axis)?;
    Ok(DescriptorReport {
        ucv,
        density,
        void_fraction: void_points as f64 / (n_per_axis * n_per_axis * n_per_axis) as f64,
        lcd: 2.0 * max_clearance.max(0.0),
        grid_resolution: n_per_axis,
        probe_radius,
    })
}

/// Shared grid pass over the reduced cell.
///
/// Returns the count of points whose clearance exceeds `probe_radius` and
/// the largest clearance seen, where a point's clearance is the minimum over
/// atoms of (minimum-image distance − vdW radius). Parallel over grid slabs;
/// the count is an exact integer sum and the maximum is order-independent,
/// so the aggregation is deterministic.
fn grid_scan(
    structure: &Structure,
    probe_radius: f64,
    n_per_axis: usize,
) -> Result<(usize, f64), DescriptorError> {
    if n_per_axis < MIN_GRID_RESOLUTION {
        return Err(DescriptorError::GridTooCoarse(n_per_axis));
    }
    if !probe_radius.is_finite() || probe_radius < 0.0 {
        return Err(DescriptorError::InvalidProbe(probe_radius));
    }
    // The reduced cell keeps the single-shell image search exact.
    let (lattice, coords) = reduce_structure(structure)?;
    let radii: Vec<f64> = structure
        .species
        .iter()
        .map(|&z| vdw_radius(z))
        .collect::<Result<_, _>>()?;
    // Lattice translations of the 27-image shell, hoisted out of the loop so
    // each point/atom pair costs one fractional-to-cartesian map.
    let shifts: Vec<Vector3<f64>> = (-1..=1)
        .flat_map(|ka| (-1..=1).flat_map(move |kb| (-1..=1).map(move |kc| (ka, kb, kc))))
        .map(|(ka, kb, kc)| {
            frac_to_cart(&FracCoord(Vector3::new(ka as f64, kb as f64, kc as f64)), &lattice).0
        })
        .collect();
    let n = n_per_axis;
    let inv_n = 1.0 / n as f64;
    let (void_points, max_clearance) = (0..n)
        .into_par_iter()
        .map(|i| {
            let fx = i as f64 * inv_n;
            let mut count = 0usize;
            let mut best = f64::NEG_INFINITY;
            for j in 0..n {
                let fy = j as f64 * inv_n;
                for k in 0..n {
                    let point = Vector3::new(fx, fy, k as f64 * inv_n);
                    let mut clearance = f64::INFINITY;
                    for (coord, radius) in coords.iter().zip(&radii) {
                        let wrapped = (point - coord.0).map(|v| v - v.round());
                        let base = frac_to_cart(&FracCoord(wrapped), &lattice).0;
                        let d2 = shifts
                            .iter()
                            .map(|s| (base + s).norm_squared())
                            .fold(f64::INFINITY, f64::min);
                        clearance = clearance.min(d2.sqrt() - radius);
                    }
                    if clearance > probe_radius {
                        count += 1;
                    }
                    best = best.max(clearance);
                }
            }
            (count, best)
        })
        .reduce(|| (0, f64::NEG_INFINITY), |a, b| (a.0 + b.0, a.1.max(b.1)));
    Ok((void_points, max_clearance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::AssemblyError;
    use crate::lattice::{niggli_reduce, params_to_matrix, LatticeParams};
    use crate::rotation::{euler_to_matrix, EulerAngles};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cell(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> LatticeMatrix {
        params_to_matrix(&LatticeParams::new(a, b, c, alpha, beta, gamma).unwrap()).unwrap()
    }

    fn single_atom(z: u8, frac: [f64; 3], lattice: LatticeMatrix) -> Structure {
        Structure::new(lattice, vec![z], vec![frac.into()]).unwrap()
    }

    #[test]
    fn volume_of_reference_cells() {
        assert_relative_eq!(unit_cell_volume(&cell(2.0, 2.0, 2.0, 90.0, 90.0, 90.0)), 8.0, epsilon = 1e-12);
        // Hexagonal cell: base area sin(120°), height 2.
        assert_relative_eq!(
            unit_cell_volume(&cell(1.0, 1.0, 2.0, 90.0, 90.0, 120.0)),
            3.0f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn volume_is_invariant_under_reduction() {
        let mut rng = StdRng::seed_from_u64(3001);
        for _ in 0..30 {
            let l = cell(
                rng.gen_range(4.0..12.0),
                rng.gen_range(4.0..12.0),
                rng.gen_range(4.0..12.0),
                rng.gen_range(70.0..110.0),
                rng.gen_range(70.0..110.0),
                rng.gen_range(70.0..110.0),
            );
            let (reduced, _) = niggli_reduce(&l).unwrap();
            assert_relative_eq!(unit_cell_volume(&reduced), unit_cell_volume(&l), epsilon = 1e-9);
        }
    }

    #[test]
    fn density_of_one_carbon_in_a_ten_angstrom_cube() {
        let s = single_atom(6, [0.5, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        let expected = 12.011 * AMU_PER_CUBIC_ANGSTROM / 1000.0;
        assert_relative_eq!(density(&s).unwrap(), expected, max_relative = 1e-12);
        assert!((density(&s).unwrap() - 0.01994).abs() < 1e-5);
    }

    #[test]
    fn doubling_an_axis_halves_density() {
        let base = single_atom(30, [0.25, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        let tall = single_atom(30, [0.25, 0.5, 0.25], cell(10.0, 10.0, 20.0, 90.0, 90.0, 90.0));
        assert_relative_eq!(
            density(&tall).unwrap(),
            density(&base).unwrap() / 2.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn density_error_paths() {
        // The structure type already rejects emptiness and unknown elements;
        // a hand-built record with a bogus species still errors cleanly.
        let err = Structure::new(cell(5.0, 5.0, 5.0, 90.0, 90.0, 90.0), vec![], vec![]);
        assert!(matches!(err, Err(AssemblyError::Empty)));
        let bogus = Structure {
            lattice: cell(5.0, 5.0, 5.0, 90.0, 90.0, 90.0),
            species: vec![0],
            frac_coords: vec![[0.5, 0.5, 0.5].into()],
        };
        assert!(matches!(density(&bogus), Err(DescriptorError::Element(_))));
        assert!(matches!(
            void_fraction_grid(&bogus, 0.0, 16),
            Err(DescriptorError::Element(_))
        ));
    }

    #[test]
    fn void_fraction_of_a_single_sphere_matches_the_analytic_volume() {
        let s = single_atom(6, [0.5, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        let r = vdw_radius(6).unwrap();
        let expected = 1.0 - (4.0 / 3.0) * std::f64::consts::PI * r.powi(3) / 1000.0;
        let vf = void_fraction_grid(&s, 0.0, 64).unwrap();
        assert!((vf - expected).abs() < 0.01, "vf {vf} vs analytic {expected}");
    }

    #[test]
    fn overwhelming_probe_radius_leaves_no_void() {
        let s = single_atom(6, [0.5, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        assert_eq!(void_fraction_grid(&s, 10.0, 16).unwrap(), 0.0);
    }

    #[test]
    fn void_fraction_is_monotone_in_probe_radius() {
        let lattice = cell(9.0, 10.0, 11.0, 90.0, 90.0, 90.0);
        let s = Structure::new(
            lattice,
            vec![30, 8, 6],
            vec![
                [0.2, 0.3, 0.4].into(),
                [0.7, 0.6, 0.1].into(),
                [0.5, 0.9, 0.8].into(),
            ],
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for probe in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let vf = void_fraction_grid(&s, probe, 32).unwrap();
            assert!(vf <= last, "void fraction must not grow with the probe");
            last = vf;
        }
    }

    #[test]
    fn cavity_diameter_of_a_centered_atom_reaches_the_cell_corner() {
        let s = single_atom(6, [0.5, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        let r = vdw_radius(6).unwrap();
        // Farthest point from a centered atom under periodicity is the cell
        // corner at half the body diagonal, and the corner-aligned grid
        // contains it exactly.
        let expected = 2.0 * (75.0f64.sqrt() - r);
        let coarse = lcd_grid(&s, 64).unwrap();
        assert!((coarse - expected).abs() / expected < 0.05);
        let dense = lcd_grid(&s, 256).unwrap();
        assert!((dense - expected).abs() / expected < 0.05);
        assert!((coarse - dense).abs() / dense < 0.02);
    }

    #[test]
    fn overlapping_spheres_close_the_cavity() {
        let s = single_atom(6, [0.0, 0.0, 0.0], cell(1.5, 1.5, 1.5, 90.0, 90.0, 90.0));
        assert_eq!(lcd_grid(&s, 16).unwrap(), 0.0);
        assert_eq!(void_fraction_grid(&s, 0.0, 16).unwrap(), 0.0);
    }

    #[test]
    fn grid_ladders_converge() {
        let lattice = cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0);
        let s = Structure::new(
            lattice,
            vec![30, 8],
            vec![[0.28125, 0.28125, 0.28125].into(), [0.78125, 0.78125, 0.78125].into()],
        )
        .unwrap();
        // Corner-aligned grids nest under doubling, so the cavity estimate
        // grows monotonically toward its plateau.
        let mut last_lcd = 0.0;
        for n in [8, 16, 32, 64] {
            let lcd = lcd_grid(&s, n).unwrap();
            assert!(lcd >= last_lcd - 1e-12, "lcd ladder dipped at n = {n}");
            last_lcd = lcd;
        }
        let vf64 = void_fraction_grid(&s, 0.0, 64).unwrap();
        let vf128 = void_fraction_grid(&s, 0.0, 128).unwrap();
        assert!((vf128 - vf64).abs() < 0.005, "VF halving step too large");
        let lcd64 = lcd_grid(&s, 64).unwrap();
        let lcd128 = lcd_grid(&s, 128).unwrap();
        assert!((lcd128 - lcd64).abs() / lcd128 < 0.02, "LCD halving step too large");
    }

    #[test]
    fn descriptors_are_rotation_invariant() {
        let lattice = cell(9.0, 10.0, 11.0, 85.0, 95.0, 100.0);
        let s = Structure::new(
            lattice,
            vec![30, 8, 6, 7],
            vec![
                [0.1, 0.2, 0.3].into(),
                [0.6, 0.5, 0.8].into(),
                [0.4, 0.9, 0.2].into(),
                [0.8, 0.1, 0.6].into(),
            ],
        )
        .unwrap();
        let rot = euler_to_matrix(&EulerAngles::new(0.7, 0.4, -1.1).unwrap());
        let mut rotated_rows = [[0.0; 3]; 3];
        for (i, out) in rotated_rows.iter_mut().enumerate() {
            let v = rot.matrix() * s.lattice.row(i);
            *out = [v.x, v.y, v.z];
        }
        let rotated = Structure::new(
            LatticeMatrix::from_rows(rotated_rows).unwrap(),
            s.species.clone(),
            s.frac_coords.clone(),
        )
        .unwrap();
        let a = descriptor_report(&s, 0.5, 32).unwrap();
        let b = descriptor_report(&rotated, 0.5, 32).unwrap();
        assert_relative_eq!(a.ucv, b.ucv, epsilon = 1e-9);
        assert_relative_eq!(a.density, b.density, epsilon = 1e-12);
        assert_relative_eq!(a.void_fraction, b.void_fraction, epsilon = 1e-12);
        assert_relative_eq!(a.lcd, b.lcd, epsilon = 1e-9);
    }

    #[test]
    fn report_matches_piecewise_calls_and_labels_grid_fields() {
        let s = single_atom(6, [0.5, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        let report = descriptor_report(&s, 0.25, 32).unwrap();
        assert_eq!(report.ucv, unit_cell_volume(&s.lattice));
        assert_eq!(report.density, density(&s).unwrap());
        assert_eq!(report.void_fraction, void_fraction_grid(&s, 0.25, 32).unwrap());
        assert_eq!(report.lcd, lcd_grid(&s, 32).unwrap());
        assert!(report.void_fraction > 0.9 && report.void_fraction <= 1.0);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"vf_grid\""));
        assert!(json.contains("\"lcd_grid\""));
        let back: DescriptorReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn grid_validation_rejects_bad_parameters() {
        let s = single_atom(6, [0.5, 0.5, 0.5], cell(10.0, 10.0, 10.0, 90.0, 90.0, 90.0));
        assert!(matches!(
            void_fraction_grid(&s, 0.0, 7),
            Err(DescriptorError::GridTooCoarse(7))
        ));
        assert!(matches!(
            void_fraction_grid(&s, -0.1, 16),
            Err(DescriptorError::InvalidProbe(_))
        ));
        assert!(matches!(lcd_grid(&s, 4), Err(DescriptorError::GridTooCoarse(4))));
    }
}
