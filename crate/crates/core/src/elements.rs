//! Embedded per-element data: standard atomic weights, element symbols, and
//! van der Waals radii for elements 1..=96.
//!
//! Weights follow the IUPAC standard atomic weights (conventional single
//! values, rounded to five decimals at most). Radii use the Bondi set where
//! Bondi defined one and commonly used crystallographic extensions elsewhere,
//! so every supported element has a usable radius.

/// Highest atomic number with embedded data.
pub const MAX_ATOMIC_NUMBER: u8 = 96;

/// Errors raised by element-data lookups.
#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ElementError {
    /// The atomic number is zero or beyond the embedded tables.
    #[error("unknown element Z={0}; supported range is 1..={MAX_ATOMIC_NUMBER}")]
    UnknownElement(u8),
}

/// Standard atomic weight (amu), indexed by `Z - 1`.
const ATOMIC_MASS: [f64; 96] = [
    1.008,     // H
    4.00260,   // He
    6.94,      // Li
    9.01218,   // Be
    10.81,     // B
    12.011,    // C
    14.007,    // N
    15.999,    // O
    18.99840,  // F
    20.1797,   // Ne
    22.98977,  // Na
    24.305,    // Mg
    26.98154,  // Al
    28.085,    // Si
    30.97376,  // P
    32.06,     // S
    35.45,     // Cl
    39.95,     // Ar
    39.0983,   // K
    40.078,    // Ca
    44.95591,  // Sc
    47.867,    // Ti
    50.9415,   // V
    51.9961,   // Cr
    54.93804,  // Mn
    55.845,    // Fe
    58.93319,  // Co
    58.6934,   // Ni
    63.546,    // Cu
    65.38,     // Zn
    69.723,    // Ga
    72.630,    // Ge
    74.92159,  // As
    78.971,    // Se
    79.904,    // Br
    83.798,    // Kr
    85.4678,   // Rb
    87.62,     // Sr
    88.90584,  // Y
    91.224,    // Zr
    92.90637,  // Nb
    95.95,     // Mo
    97.0,      // Tc
    101.07,    // Ru
    102.90549, // Rh
    106.42,    // Pd
    107.8682,  // Ag
    112.414,   // Cd
    114.818,   // In
    118.710,   // Sn
    121.760,   // Sb
    127.60,    // Te
    126.90447, // I
    131.293,   // Xe
    132.90545, // Cs
    137.327,   // Ba
    138.90547, // La
    140.116,   // Ce
    140.90766, // Pr
    144.242,   // Nd
    145.0,     // Pm
    150.36,    // Sm
    151.964,   // Eu
    157.25,    // Gd
    158.92535, // Tb
    162.500,   // Dy
    164.93033, // Ho
    167.259,   // Er
    168.93422, // Tm
    173.045,   // Yb
    174.9668,  // Lu
    178.486,   // Hf
    180.94788, // Ta
    183.84,    // W
    186.207,   // Re
    190.23,    // Os
    192.217,   // Ir
    195.084,   // Pt
    196.96657, // Au
    200.592,   // Hg
    204.38,    // Tl
    207.2,     // Pb
    208.98040, // Bi
    209.0,     // Po
    210.0,     // At
    222.0,     // Rn
    223.0,     // Fr
    226.0,     // Ra
    227.0,     // Ac
    232.0377,  // Th
    231.03588, // Pa
    238.02891, // U
    237.0,     // Np
    244.0,     // Pu
    243.0,     // Am
    247.0,     // Cm
];

/// Element symbol, indexed by `Z - 1`.
const SYMBOL: [&str; 96] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
];

/// Van der Waals radius (Å), indexed by `Z - 1`.
const VDW_RADIUS: [f64; 96] = [
    1.20, // H
    1.40, // He
    1.82, // Li
    1.53, // Be
    1.92, // B
    1.70, // C
    1.55, // N
    1.52, // O
    1.47, // F
    1.54, // Ne
    2.27, // Na
    1.73, // Mg
    1.84, // Al
    2.10, // Si
    1.80, // P
    1.80, // S
    1.75, // Cl
    1.88, // Ar
    2.75, // K
    2.31, // Ca
    2.58, // Sc
    2.46, // Ti
    2.42, // V
    2.45, // Cr
    2.45, // Mn
    2.44, // Fe
    2.40, // Co
    1.63, // Ni
    1.40, // Cu
    1.39, // Zn
    1.87, // Ga
    2.11, // Ge
    1.85, // As
    1.90, // Se
    1.85, // Br
    2.02, // Kr
    3.03, // Rb
    2.49, // Sr
    2.75, // Y
    2.52, // Zr
    2.56, // Nb
    2.45, // Mo
    2.44, // Tc
    2.46, // Ru
    2.44, // Rh
    1.63, // Pd
    1.72, // Ag
    1.58, // Cd
    1.93, // In
    2.17, // Sn
    2.06, // Sb
    2.06, // Te
    1.98, // I
    2.16, // Xe
    3.43, // Cs
    2.68, // Ba
    2.43, // La
    2.42, // Ce
    2.40, // Pr
    2.39, // Nd
    2.38, // Pm
    2.36, // Sm
    2.35, // Eu
    2.34, // Gd
    2.33, // Tb
    2.31, // Dy
    2.30, // Ho
    2.29, // Er
    2.27, // Tm
    2.26, // Yb
    2.24, // Lu
    2.63, // Hf
    2.53, // Ta
    2.57, // W
    2.49, // Re
    2.48, // Os
    2.41, // Ir
    1.75, // Pt
    1.66, // Au
    1.55, // Hg
    1.96, // Tl
    2.02, // Pb
    2.07, // Bi
    1.97, // Po
    2.02, // At
    2.20, // Rn
    3.48, // Fr
    2.83, // Ra
    2.47, // Ac
    2.45, // Th
    2.43, // Pa
    1.86, // U
    2.39, // Np
    2.43, // Pu
    2.44, // Am
    2.45, // Cm
];

fn index(z: u8) -> Result<usize, ElementError> {
    if z == 0 || z > MAX_ATOMIC_NUMBER {
        Err(ElementError::UnknownElement(z))
    } else {
        Ok(usize::from(z) - 1)
    }
}

/// Standard atomic weight in amu for atomic number `z`.
pub fn atomic_mass(z: u8) -> Result<f64, ElementError> {
    Ok(ATOMIC_MASS[index(z)?])
}

/// Element symbol for atomic number `z`.
pub fn element_symbol(z: u8) -> Result<&'static str, ElementError> {
    Ok(SYMBOL[index(z)?])
}

/// Van der Waals radius in Å for atomic number `z`.
pub fn vdw_radius(z: u8) -> Result<f64, ElementError> {
    Ok(VDW_RADIUS[index(z)?])
}

/// Sum of atomic weights over a species list (amu).
///
/// Errors on the first unknown atomic number.
pub fn molecular_weight(species: &[u8]) -> Result<f64, ElementError> {
    let mut total = 0.0;
    for &z in species {
        total += atomic_mass(z)?;
    }
    Ok(total)
}
