//! Wheel yaw installation angles and the symmetry couplings used to shrink
//! the search space.
//!
//! Angles are radians internally. Each one is the deviation of a wheel's
//! rolling axis from the body x-axis, bounded to `[-pi/2, pi/2]` since a
//! wheel at `psi` and `psi + pi` rolls along the same line.
//!
//! Leg order everywhere in this crate is FR, FL, RR, RL.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DesignError;

pub const ANGLE_MIN: f64 = -FRAC_PI_2;
pub const ANGLE_MAX: f64 = FRAC_PI_2;

/// How the four wheel angles are tied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplingMode {
    /// `(-psi, psi, psi, -psi)`.
    Coupled1D,
    /// Left/right mirror: `psi_fr = -psi_fl`, `psi_rr = -psi_rl`.
    /// Free coordinates are `(psi_front, psi_rear) := (psi_fl, psi_rr)`, so
    /// the expansion is `(-front, front, rear, -rear)` and the 1D design `psi`
    /// sits at `(psi, psi)`.
    Symmetric2D,
    /// All four angles independent.
    Full4D,
}

impl CouplingMode {
    pub fn free_dims(self) -> usize {
        match self {
            CouplingMode::Coupled1D => 1,
            CouplingMode::Symmetric2D => 2,
            CouplingMode::Full4D => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CouplingMode::Coupled1D => "Coupled1D",
            CouplingMode::Symmetric2D => "Symmetric2D",
            CouplingMode::Full4D => "Full4D",
        }
    }
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Yaw installation angles of the four wheels, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignVector {
    pub psi_fr: f64,
    pub psi_fl: f64,
    pub psi_rr: f64,
    pub psi_rl: f64,
}

impl DesignVector {
    pub fn new(psi_fr: f64, psi_fl: f64, psi_rr: f64, psi_rl: f64) -> Self {
        Self { psi_fr, psi_fl, psi_rr, psi_rl }
    }

    /// All wheels rolling along the body x-axis.
    pub fn parallel() -> Self {
        Self::default()
    }

    /// Angles in leg order FR, FL, RR, RL.
    pub fn angles(&self) -> [f64; 4] {
        [self.psi_fr, self.psi_fl, self.psi_rr, self.psi_rl]
    }

    pub fn from_angles(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Reflection about the sagittal plane: left and right legs swap and
    /// every angle changes sign.
    pub fn mirrored(&self) -> Self {
        Self::new(-self.psi_fl, -self.psi_fr, -self.psi_rl, -self.psi_rr)
    }

    pub fn check_bounds(&self) -> Result<(), DesignError> {
        const NAMES: [&str; 4] = ["psi_fr", "psi_fl", "psi_rr", "psi_rl"];
        for (name, value) in NAMES.iter().zip(self.angles()) {
            check_angle(name, value)?;
        }
        Ok(())
    }

    /// Reads back the free coordinates of `mode`. Inverse of [`expand_design`]
    /// on designs that satisfy the coupling.
    pub fn reduce(&self, mode: CouplingMode) -> Vec<f64> {
        match mode {
            CouplingMode::Coupled1D => vec![self.psi_fl],
            CouplingMode::Symmetric2D => vec![self.psi_fl, self.psi_rr],
            CouplingMode::Full4D => self.angles().to_vec(),
        }
    }

    /// Whether the design satisfies the coupling of `mode` to within `tol`.
    pub fn satisfies(&self, mode: CouplingMode, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol;
        match mode {
            CouplingMode::Coupled1D => {
                let psi = self.psi_fl;
                close(self.psi_fr, -psi) && close(self.psi_rr, psi) && close(self.psi_rl, -psi)
            }
            CouplingMode::Symmetric2D => {
                close(self.psi_fr, -self.psi_fl) && close(self.psi_rr, -self.psi_rl)
            }
            CouplingMode::Full4D => true,
        }
    }
}

fn check_angle(name: &str, value: f64) -> Result<(), DesignError> {
    if !value.is_finite() || !(ANGLE_MIN..=ANGLE_MAX).contains(&value) {
        return Err(DesignError::OutOfBounds { component: name.to_string(), value });
    }
    Ok(())
}

fn reduced_name(mode: CouplingMode, i: usize) -> String {
    match mode {
        CouplingMode::Coupled1D => "psi".to_string(),
        CouplingMode::Symmetric2D => ["psi_front", "psi_rear"][i].to_string(),
        CouplingMode::Full4D => ["psi_fr", "psi_fl", "psi_rr", "psi_rl"][i].to_string(),
    }
}

fn check_reduced(reduced: &[f64], mode: CouplingMode) -> Result<(), DesignError> {
    if reduced.len() != mode.free_dims() {
        return Err(DesignError::Dimension { expected: mode.free_dims(), got: reduced.len() });
    }
    for (i, &v) in reduced.iter().enumerate() {
        check_angle(&reduced_name(mode, i), v)?;
    }
    Ok(())
}

/// Builds the full four-angle design from the free coordinates of `mode`.
pub fn expand_design(reduced: &[f64], mode: CouplingMode) -> Result<DesignVector, DesignError> {
    check_reduced(reduced, mode)?;
    Ok(match mode {
        CouplingMode::Coupled1D => {
            let psi = reduced[0];
            DesignVector::new(-psi, psi, psi, -psi)
        }
        CouplingMode::Symmetric2D => {
            let (front, rear) = (reduced[0], reduced[1]);
            DesignVector::new(-front, front, rear, -rear)
        }
        CouplingMode::Full4D => DesignVector::new(reduced[0], reduced[1], reduced[2], reduced[3]),
    })
}

/// Affine map of each angle from `[-pi/2, pi/2]` onto `[0, 1]`.
pub fn to_unit_cube(reduced: &[f64], mode: CouplingMode) -> Result<Vec<f64>, DesignError> {
    check_reduced(reduced, mode)?;
    Ok(reduced.iter().map(|&a| (a - ANGLE_MIN) / (ANGLE_MAX - ANGLE_MIN)).collect())
}

/// Inverse of [`to_unit_cube`].
pub fn from_unit_cube(unit: &[f64], mode: CouplingMode) -> Result<Vec<f64>, DesignError> {
    if unit.len() != mode.free_dims() {
        return Err(DesignError::Dimension { expected: mode.free_dims(), got: unit.len() });
    }
    for (i, &u) in unit.iter().enumerate() {
        if !u.is_finite() || !(0.0..=1.0).contains(&u) {
            return Err(DesignError::OutOfBounds { component: reduced_name(mode, i), value: u });
        }
    }
    // Clamp guards against the last-ulp overshoot of the affine map.
    Ok(unit
        .iter()
        .map(|&u| (ANGLE_MIN + u * (ANGLE_MAX - ANGLE_MIN)).clamp(ANGLE_MIN, ANGLE_MAX))
        .collect())
}

/// Flat on-disk form of a design: coupling mode plus the free angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRecord {
    pub mode: CouplingMode,
    pub angles_deg: Vec<f64>,
}

impl DesignRecord {
    pub fn from_reduced(reduced: &[f64], mode: CouplingMode) -> Self {
        Self { mode, angles_deg: reduced.iter().map(|a| a.to_degrees()).collect() }
    }

    pub fn reduced_radians(&self) -> Vec<f64> {
        self.angles_deg.iter().map(|d| d.to_radians()).collect()
    }

    pub fn to_design(&self) -> Result<DesignVector, DesignError> {
        expand_design(&self.reduced_radians(), self.mode)
    }
}
