//! Structure equivalence testing between a predicted and a reference crystal.
//!
//! Two structures match when some change of basis brings their reduced cells
//! into agreement (within length and angle tolerances) and a per-species
//! assignment of sites, after aligning an anchor atom, keeps every normalized
//! displacement below the site tolerance. Displacements are measured under
//! periodic boundary conditions and normalized by `(V / N)^(1/3)` so that the
//! tolerances are dimensionless and transfer across cell sizes.
//!
//! The translation candidates are the exact alignments of the first atom of
//! the least-frequent species in the first structure onto every atom of that
//! species in the second; no further translation refinement is applied, so a
//! reported displacement is exactly the residual under the best such
//! alignment.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::Structure;
use crate::assignment::{solve_assignment, AssignmentSolver};
use crate::lattice::{
    min_image_distance, niggli_reduce, params_to_matrix, wrap_frac, FracCoord, IntMatrix,
    LatticeError, LatticeMatrix, LatticeParams,
};

/// Integer coefficient range for candidate basis vectors of the second cell.
const MAPPING_COEFF_RANGE: i64 = 2;
/// Widened coefficient range used when the normal range finds nothing but the
/// row lengths are within twice the length tolerance.
const MAPPING_COEFF_RANGE_WIDE: i64 = 3;
/// The site-tolerance ladder used for tier classification.
pub const TIER_STOLS: [f64; 3] = [0.5, 0.75, 1.0];
/// Lattice length tolerance shared by the standard tolerance sets.
pub const STANDARD_LTOL: f64 = 0.3;
/// Lattice angle tolerance (degrees) shared by the standard tolerance sets.
pub const STANDARD_ATOL: f64 = 1.0;

/// Errors from structure matching.
#[derive(Debug, Error)]
pub enum MatchError {
    /// The two site lists carry different species multisets.
    #[error("species multisets differ between the two structures")]
    SpeciesMismatch,
    /// Parallel slices disagree in length.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    /// A tolerance was not strictly positive and finite.
    #[error("tolerance {name} must be positive and finite, got {value}")]
    InvalidTolerance { name: &'static str, value: f64 },
    /// Lattice reduction or reconstruction failed.
    #[error("lattice error: {0}")]
    Lattice(#[from] LatticeError),
}

/// Tolerances for one matching pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerances {
    /// Site tolerance: cap on the normalized max displacement.
    pub stol: f64,
    /// Relative tolerance on reduced-cell row lengths.
    pub ltol: f64,
    /// Absolute tolerance on reduced-cell angles, degrees.
    pub atol: f64,
}

impl MatchTolerances {
    pub fn new(stol: f64, ltol: f64, atol: f64) -> Result<Self, MatchError> {
        let t = Self { stol, ltol, atol };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        for (name, value) in [("stol", self.stol), ("ltol", self.ltol), ("atol", self.atol)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(MatchError::InvalidTolerance { name, value });
            }
        }
        Ok(())
    }

    /// The tight standard set: stol 0.5, ltol 0.3, atol 1.0.
    pub fn tight() -> Self {
        Self { stol: 0.5, ltol: STANDARD_LTOL, atol: STANDARD_ATOL }
    }

    /// The loose standard set: stol 1.0, ltol 0.3, atol 1.0.
    pub fn loose() -> Self {
        Self { stol: 1.0, ltol: STANDARD_LTOL, atol: STANDARD_ATOL }
    }
}

/// The smallest site tolerance of the standard ladder at which a pair matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchTier {
    /// Matched with normalized max displacement ≤ 0.5.
    Half,
    /// Matched at 0.75 but not 0.5.
    ThreeQuarter,
    /// Matched at 1.0 but not 0.75.
    Full,
}

impl MatchTier {
    /// The site tolerance this tier corresponds to.
    pub fn stol(self) -> f64 {
        match self {
            MatchTier::Half => TIER_STOLS[0],
            MatchTier::ThreeQuarter => TIER_STOLS[1],
            MatchTier::Full => TIER_STOLS[2],
        }
    }

    /// Classifies a normalized max displacement against the standard ladder.
    pub fn from_max_disp(max_disp: f64) -> Option<MatchTier> {
        if max_disp <= TIER_STOLS[0] {
            Some(MatchTier::Half)
        } else if max_disp <= TIER_STOLS[1] {
            Some(MatchTier::ThreeQuarter)
        } else if max_disp <= TIER_STOLS[2] {
            Some(MatchTier::Full)
        } else {
            None
        }
    }
}

/// Outcome of one structure comparison.
///
/// When `matched`, `rmse` and `max_disp` describe the lowest-RMS candidate
/// alignment among those within the site tolerance, so `rmse <= max_disp`
/// always holds. When unmatched, `max_disp` still reports the smallest max
/// displacement over all candidate alignments as a diagnostic (absent when no
/// lattice mapping exists or compositions differ). `tier` classifies that
/// same global minimum against the standard tolerance ladder regardless of
/// the stol used for this call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched: bool,
    pub rmse: Option<f64>,
    pub max_disp: Option<f64>,
    pub tier: Option<MatchTier>,
    pub solver: AssignmentSolver,
}

impl MatchReport {
    fn unmatched() -> Self {
        Self {
            matched: false,
            rmse: None,
            max_disp: None,
            tier: None,
            solver: AssignmentSolver::Exact,
        }
    }
}

/// Result of testing one site alignment set at a given tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteMatchResult {
    pub matched: bool,
    /// Normalized RMS displacement of the reported alignment.
    pub rmse: f64,
    /// Normalized max displacement of the reported alignment.
    pub max_disp: f64,
}

/// Lengths and angles of three basis rows, without orientation or handedness
/// constraints (candidate bases may be left-handed; the metric is the same).
fn row_lengths_and_angles(rows: &[Vector3<f64>; 3]) -> [f64; 6] {
    let angle = |u: &Vector3<f64>, v: &Vector3<f64>| -> f64 {
        (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos().to_degrees()
    };
    [
        rows[0].norm(),
        rows[1].norm(),
        rows[2].norm(),
        angle(&rows[1], &rows[2]),
        angle(&rows[0], &rows[2]),
        angle(&rows[0], &rows[1]),
    ]
}

/// Enumerates unimodular mappings `U` (|det| = 1, coefficients within
/// `range`) such that `U · l2` agrees with `l1` row by row: lengths within
/// `ltol` relative, angles within `atol` degrees. Both inputs are expected to
/// be reduced cells.
fn enumerate_mappings_with_range(
    l1: &LatticeMatrix,
    l2: &LatticeMatrix,
    ltol: f64,
    atol: f64,
    range: i64,
) -> Vec<IntMatrix> {
    let target = row_lengths_and_angles(&[l1.row(0), l1.row(1), l1.row(2)]);
    // Candidate integer vectors per target row, filtered by length.
    let mut per_row: [Vec<[i64; 3]>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut vectors: Vec<([i64; 3], Vector3<f64>)> = Vec::new();
    for ka in -range..=range {
        for kb in -range..=range {
            for kc in -range..=range {
                if ka == 0 && kb == 0 && kc == 0 {
                    continue;
                }
                let v =
                    l2.row(0) * ka as f64 + l2.row(1) * kb as f64 + l2.row(2) * kc as f64;
                vectors.push(([ka, kb, kc], v));
            }
        }
    }
    for (row, candidates) in per_row.iter_mut().enumerate() {
        for (k, v) in &vectors {
            if (v.norm() - target[row]).abs() <= ltol * target[row] {
                candidates.push(*k);
            }
        }
    }
    let lookup: BTreeMap<[i64; 3], Vector3<f64>> = vectors.into_iter().collect();
    let mut mappings = Vec::new();
    for ka in &per_row[0] {
        for kb in &per_row[1] {
            for kc in &per_row[2] {
                let u = IntMatrix([*ka, *kb, *kc]);
                if u.det().abs() != 1 {
                    continue;
                }
                let rows = [lookup[ka], lookup[kb], lookup[kc]];
                let got = row_lengths_and_angles(&rows);
                if (got[3] - target[3]).abs() <= atol
                    && (got[4] - target[4]).abs() <= atol
                    && (got[5] - target[5]).abs() <= atol
                {
                    mappings.push(u);
                }
            }
        }
    }
    mappings
}

/// True when every target row length has at least one candidate vector within
/// `2 × ltol`, the condition under which the search range is widened.
fn lengths_nearly_match(l1: &LatticeMatrix, l2: &LatticeMatrix, ltol: f64) -> bool {
    let target = row_lengths_and_angles(&[l1.row(0), l1.row(1), l1.row(2)]);
    let range = MAPPING_COEFF_RANGE;
    for row in 0..3 {
        let mut found = false;
        'search: for ka in -range..=range {
            for kb in -range..=range {
                for kc in -range..=range {
                    if ka == 0 && kb == 0 && kc == 0 {
                        continue;
                    }
                    let v = l2.row(0) * ka as f64 + l2.row(1) * kb as f64 + l2.row(2) * kc as f64;
                    if (v.norm() - target[row]).abs() <= 2.0 * ltol * target[row] {
                        found = true;
                        break 'search;
                    }
                }
            }
        }
        if !found {
            return false;
        }
    }
    true
}

/// Mapping enumeration on already-reduced cells, with the automatic range
/// widening fallback.
fn enumerate_mappings(
    l1: &LatticeMatrix,
    l2: &LatticeMatrix,
    ltol: f64,
    atol: f64,
) -> Vec<IntMatrix> {
    let mappings = enumerate_mappings_with_range(l1, l2, ltol, atol, MAPPING_COEFF_RANGE);
    if mappings.is_empty() && lengths_nearly_match(l1, l2, ltol) {
        return enumerate_mappings_with_range(l1, l2, ltol, atol, MAPPING_COEFF_RANGE_WIDE);
    }
    mappings
}

/// Finds unimodular basis mappings that bring the reduced cell of `l2` into
/// agreement with the reduced cell of `l1` within the given tolerances.
///
/// Both lattices are Niggli-reduced first; the returned matrices map the
/// reduced basis of `l2` (rows transform as `L → U · L`). An empty list means
/// the cells are not equivalent at these tolerances.
pub fn lattices_match(
    l1: &LatticeMatrix,
    l2: &LatticeMatrix,
    ltol: f64,
    atol: f64,
) -> Result<Vec<IntMatrix>, MatchError> {
    MatchTolerances::new(1.0, ltol, atol)?;
    let (r1, _) = niggli_reduce(l1)?;
    let (r2, _) = niggli_reduce(l2)?;
    Ok(enumerate_mappings(&r1, &r2, ltol, atol))
}

/// Species index classes shared by two site lists, or `None` when the
/// multisets differ.
fn species_classes(
    species1: &[u8],
    species2: &[u8],
) -> Option<BTreeMap<u8, (Vec<usize>, Vec<usize>)>> {
    if species1.len() != species2.len() {
        return None;
    }
    let mut classes: BTreeMap<u8, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, &z) in species1.iter().enumerate() {
        classes.entry(z).or_default().0.push(i);
    }
    for (i, &z) in species2.iter().enumerate() {
        classes.entry(z).or_default().1.push(i);
    }
    if classes.values().any(|(a, b)| a.len() != b.len()) {
        return None;
    }
    Some(classes)
}

/// One candidate alignment outcome: normalized RMS and max displacement.
#[derive(Debug, Clone, Copy)]
struct AlignmentOutcome {
    rms: f64,
    max: f64,
}

/// Evaluates every anchor alignment of two site lists living in a common
/// metric lattice. The anchor is the first atom of the least-frequent species
/// (ties broken toward the smallest atomic number) in the first list; it is
/// aligned exactly onto each same-species atom of the second list, and each
/// species class is paired by a minimum-cost assignment on squared min-image
/// distances.
fn alignment_outcomes(
    species1: &[u8],
    frac1: &[FracCoord],
    species2: &[u8],
    frac2: &[FracCoord],
    lattice: &LatticeMatrix,
    solver_used: &mut AssignmentSolver,
) -> Result<Vec<AlignmentOutcome>, MatchError> {
    if species1.len() != frac1.len() {
        return Err(MatchError::LengthMismatch { left: species1.len(), right: frac1.len() });
    }
    if species2.len() != frac2.len() {
        return Err(MatchError::LengthMismatch { left: species2.len(), right: frac2.len() });
    }
    let classes = species_classes(species1, species2).ok_or(MatchError::SpeciesMismatch)?;
    let n = species1.len();
    if n == 0 {
        return Err(MatchError::LengthMismatch { left: 0, right: 0 });
    }
    let normalization = (lattice.volume() / n as f64).cbrt();
    let (_, (anchor_class_1, anchor_class_2)) = classes
        .iter()
        .min_by_key(|(z, (members, _))| (members.len(), **z))
        .map(|(z, c)| (*z, c.clone()))
        .expect("at least one species class");
    let anchor = anchor_class_1[0];
    let mut outcomes = Vec::with_capacity(anchor_class_2.len());
    for &partner in &anchor_class_2 {
        let shift = frac1[anchor].0 - frac2[partner].0;
        let mut sum_sq = 0.0;
        let mut max_d = 0.0f64;
        for (class1, class2) in classes.values() {
            let cost: Vec<Vec<f64>> = class1
                .iter()
                .map(|&i| {
                    class2
                        .iter()
                        .map(|&k| {
                            let shifted = wrap_frac(&FracCoord(frac2[k].0 + shift));
                            let d = min_image_distance(&frac1[i], &shifted, lattice);
                            d * d
                        })
                        .collect()
                })
                .collect();
            let (assignment, solver) = solve_assignment(&cost);
            if solver == AssignmentSolver::Greedy {
                *solver_used = AssignmentSolver::Greedy;
            }
            for (row, &col) in assignment.iter().enumerate() {
                let d_sq = cost[row][col];
                sum_sq += d_sq;
                max_d = max_d.max(d_sq.sqrt());
            }
        }
        outcomes.push(AlignmentOutcome {
            rms: (sum_sq / n as f64).sqrt() / normalization,
            max: max_d / normalization,
        });
    }
    Ok(outcomes)
}

/// Aggregates candidate alignments at a site tolerance: the reported
/// alignment is the lowest-RMS one among those within tolerance, or the
/// lowest-max one as a diagnostic when none qualifies.
fn aggregate_outcomes(outcomes: &[AlignmentOutcome], stol: f64) -> Option<SiteMatchResult> {
    let best_matched = outcomes
        .iter()
        .filter(|o| o.max <= stol)
        .min_by(|a, b| a.rms.total_cmp(&b.rms));
    if let Some(best) = best_matched {
        return Some(SiteMatchResult { matched: true, rmse: best.rms, max_disp: best.max });
    }
    outcomes
        .iter()
        .min_by(|a, b| a.max.total_cmp(&b.max))
        .map(|best| SiteMatchResult { matched: false, rmse: best.rms, max_disp: best.max })
}

/// Tests whether two site lists in a common lattice frame agree within the
/// site tolerance. Both lists must carry the same species multiset.
///
/// On a match, `rmse`/`max_disp` describe the lowest-RMS qualifying anchor
/// alignment; otherwise they describe the alignment with the smallest max
/// displacement, as a diagnostic.
pub fn sites_match(
    species1: &[u8],
    frac1: &[FracCoord],
    species2: &[u8],
    frac2: &[FracCoord],
    lattice: &LatticeMatrix,
    stol: f64,
) -> Result<SiteMatchResult, MatchError> {
    if !stol.is_finite() || stol <= 0.0 {
        return Err(MatchError::InvalidTolerance { name: "stol", value: stol });
    }
    let mut solver = AssignmentSolver::Exact;
    let outcomes =
        alignment_outcomes(species1, frac1, species2, frac2, lattice, &mut solver)?;
    Ok(aggregate_outcomes(&outcomes, stol).expect("anchor class is non-empty"))
}

/// Componentwise average of two parameter sets, used to build the shared
/// metric in which displacements are measured.
fn average_params(a: &[f64; 6], b: &[f64; 6]) -> Result<LatticeMatrix, MatchError> {
    let p = LatticeParams::new(
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
        0.5 * (a[3] + b[3]),
        0.5 * (a[4] + b[4]),
        0.5 * (a[5] + b[5]),
    )?;
    Ok(params_to_matrix(&p)?)
}

/// Reduced form of a structure: the Niggli cell plus re-expressed, wrapped
/// fractional coordinates. Working in the reduced cell keeps the single-shell
/// minimum-image search exact.
pub fn reduce_structure(s: &Structure) -> Result<(LatticeMatrix, Vec<FracCoord>), MatchError> {
    let (reduced, transform) = niggli_reduce(&s.lattice)?;
    let inv = transform
        .inverse_unimodular()
        .expect("reduction transform is unimodular");
    let coords = s
        .frac_coords
        .iter()
        .map(|f| wrap_frac(&FracCoord(inv.apply_to_row(&f.0))))
        .collect();
    Ok((reduced, coords))
}

/// Compares a predicted structure against a reference.
///
/// The reduced cells are brought into agreement by every qualifying basis
/// mapping; for each, sites are compared in the averaged-parameter metric
/// lattice. Composition disagreement yields an unmatched report rather than
/// an error. See [`MatchReport`] for how the fields are chosen.
pub fn structures_match(
    pred: &Structure,
    gt: &Structure,
    tol: &MatchTolerances,
) -> Result<MatchReport, MatchError> {
    tol.validate()?;
    if species_classes(&pred.species, &gt.species).is_none() {
        return Ok(MatchReport::unmatched());
    }
    let (r1, f1) = reduce_structure(pred)?;
    let (r2, f2) = reduce_structure(gt)?;
    let mappings = enumerate_mappings(&r1, &r2, tol.ltol, tol.atol);
    let mut outcomes: Vec<AlignmentOutcome> = Vec::new();
    let mut solver = AssignmentSolver::Exact;
    for u in &mappings {
        let mapped_rows = [
            r2.row(0) * u.0[0][0] as f64 + r2.row(1) * u.0[0][1] as f64 + r2.row(2) * u.0[0][2] as f64,
            r2.row(0) * u.0[1][0] as f64 + r2.row(1) * u.0[1][1] as f64 + r2.row(2) * u.0[1][2] as f64,
            r2.row(0) * u.0[2][0] as f64 + r2.row(1) * u.0[2][1] as f64 + r2.row(2) * u.0[2][2] as f64,
        ];
        let metric = average_params(
            &row_lengths_and_angles(&[r1.row(0), r1.row(1), r1.row(2)]),
            &row_lengths_and_angles(&mapped_rows),
        )?;
        let u_inv = u.inverse_unimodular().expect("mapping is unimodular");
        let g2: Vec<FracCoord> = f2
            .iter()
            .map(|f| wrap_frac(&FracCoord(u_inv.apply_to_row(&f.0))))
            .collect();
        outcomes.extend(alignment_outcomes(
            &pred.species,
            &f1,
            &gt.species,
            &g2,
            &metric,
            &mut solver,
        )?);
    }
    if outcomes.is_empty() {
        return Ok(MatchReport { solver, ..MatchReport::unmatched() });
    }
    let global_min_max = outcomes
        .iter()
        .map(|o| o.max)
        .min_by(f64::total_cmp)
        .expect("outcomes non-empty");
    let tier = MatchTier::from_max_disp(global_min_max);
    let result = aggregate_outcomes(&outcomes, tol.stol).expect("outcomes non-empty");
    if result.matched {
        Ok(MatchReport {
            matched: true,
            rmse: Some(result.rmse),
            max_disp: Some(result.max_disp),
            tier,
            solver,
        })
    } else {
        Ok(MatchReport { matched: false, rmse: None, max_disp: Some(global_min_max), tier, solver })
    }
}

/// The smallest standard site tolerance at which the pair matches, with the
/// standard lattice tolerances fixed; `None` when even stol 1.0 fails.
pub fn minimal_match_tier(pred: &Structure, gt: &Structure) -> Result<Option<MatchTier>, MatchError> {
    Ok(structures_match(pred, gt, &MatchTolerances::loose())?.tier)
}

/// Fraction (as a percentage) of reference structures matched by at least one
/// of their candidates.
pub fn match_rate(
    candidate_sets: &[Vec<Structure>],
    gts: &[Structure],
    tol: &MatchTolerances,
) -> Result<f64, MatchError> {
    let per_case = per_case_best_rmse(candidate_sets, gts, tol)?;
    let matched = per_case.iter().filter(|c| c.is_some()).count();
    Ok(100.0 * matched as f64 / gts.len().max(1) as f64)
}

/// Mean over matched cases of the lowest candidate RMSE; `None` when no case
/// matched.
pub fn best_rmse(
    candidate_sets: &[Vec<Structure>],
    gts: &[Structure],
    tol: &MatchTolerances,
) -> Result<Option<f64>, MatchError> {
    let per_case = per_case_best_rmse(candidate_sets, gts, tol)?;
    let matched: Vec<f64> = per_case.into_iter().flatten().collect();
    if matched.is_empty() {
        return Ok(None);
    }
    Ok(Some(matched.iter().sum::<f64>() / matched.len() as f64))
}

/// Best (lowest) matched-candidate RMSE per case, `None` where no candidate
/// matches. Shared by [`match_rate`] and [`best_rmse`].
pub fn per_case_best_rmse(
    candidate_sets: &[Vec<Structure>],
    gts: &[Structure],
    tol: &MatchTolerances,
) -> Result<Vec<Option<f64>>, MatchError> {
    if candidate_sets.len() != gts.len() {
        return Err(MatchError::LengthMismatch {
            left: candidate_sets.len(),
            right: gts.len(),
        });
    }
    let mut per_case = Vec::with_capacity(gts.len());
    for (candidates, gt) in candidate_sets.iter().zip(gts) {
        let mut best: Option<f64> = None;
        for candidate in candidates {
            let report = structures_match(candidate, gt, tol)?;
            if let (true, Some(rmse)) = (report.matched, report.rmse) {
                best = Some(match best {
                    Some(b) if b <= rmse => b,
                    _ => rmse,
                });
            }
        }
        per_case.push(best);
    }
    Ok(per_case)
}
