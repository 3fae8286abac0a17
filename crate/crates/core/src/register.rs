//! Physical parameter model of the electron-nuclear spin register.
//!
//! Holds per-spin precession frequencies, hyperfine couplings, coherence
//! times and gate parameters, plus the secular-approximation formulas that
//! relate them. Frequencies are ordinary frequencies (omega/2pi) in Hz
//! throughout; angular conversion happens inside the dynamics only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance (Hz^2) below which a negative hyperfine radicand is clamped to
/// zero instead of reported as inconsistent input.
const RADICAND_TOLERANCE: f64 = 100.0; // (10 Hz)^2

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("negative radicand {0} Hz^2 in perpendicular hyperfine extraction")]
    NegativeRadicand(f64),
    #[error("unknown spin label {0:?}")]
    UnknownSpin(String),
    #[error("duplicate spin label {0:?}")]
    DuplicateLabel(String),
    #[error("invalid parameter for spin {label:?}: {reason}")]
    InvalidSpin { label: String, reason: String },
    #[error("field/Larmor mismatch for spin {label:?}: gamma*B = {product:.1} Hz vs omega0 = {omega0:.1} Hz")]
    FieldMismatch {
        label: String,
        product: f64,
        omega0: f64,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Electron spin projection selecting a nuclear precession branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElectronProjection {
    Ms0,
    MsMinus1,
    MsPlus1,
}

/// One nuclear spin of the register (Tables I-III row).
///
/// `label` ending in `*` marks an alternative gate-parameter regime for the
/// same physical spin (amplifier vs AWG drive).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuclearSpinParams {
    pub label: String,
    pub omega0_hz: f64,
    pub omega_m1_hz: f64,
    pub omega_p1_hz: f64,
    pub a_par_hz: f64,
    pub a_perp_hz: f64,
    pub t2_star_ms0_ms: f64,
    pub t2_star_ms1_ms: f64,
    pub t2_echo_s: f64,
    pub n_pulses: u32,
    pub tau_us: f64,
    pub rabi_hz: f64,
    pub rf_pi_us: f64,
    pub init_fidelity: f64,
}

impl NuclearSpinParams {
    /// Label with any trailing `*` stripped: identifies the physical spin.
    pub fn physical_label(&self) -> &str {
        self.label.trim_end_matches('*')
    }

    pub fn is_nitrogen(&self) -> bool {
        self.physical_label() == "N14"
    }

    /// T2* in seconds for the m_s = -1 projection (used for dephasing draws).
    pub fn t2_star_ms1_s(&self) -> f64 {
        self.t2_star_ms1_ms * 1e-3
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_us * 1e-6
    }

    fn validate(&self) -> Result<(), RegisterError> {
        let err = |reason: &str| RegisterError::InvalidSpin {
            label: self.label.clone(),
            reason: reason.to_string(),
        };
        if self.omega0_hz <= 0.0 || self.omega_m1_hz <= 0.0 || self.omega_p1_hz <= 0.0 {
            return Err(err("precession frequencies must be positive"));
        }
        if self.a_perp_hz < 0.0 {
            return Err(err("a_perp must be non-negative"));
        }
        if !self.n_pulses.is_multiple_of(2) || self.n_pulses == 0 {
            return Err(err("n_pulses must be a positive even integer"));
        }
        if self.t2_star_ms0_ms <= 0.0 || self.t2_star_ms1_ms <= 0.0 || self.t2_echo_s <= 0.0 {
            return Err(err("coherence times must be positive"));
        }
        if !(0.0..=1.0).contains(&self.init_fidelity) {
            return Err(err("init_fidelity must lie in [0, 1]"));
        }
        // the nitrogen row stores (omega_p1 - omega_m1)/2 by convention and is
        // exempt from the secular consistency check
        if !self.is_nitrogen() {
            let (a_par, a_perp) =
                hyperfine_from_frequencies(self.omega0_hz, self.omega_m1_hz, self.omega_p1_hz)?;
            if (a_par - self.a_par_hz).abs() > 2.0 || (a_perp - self.a_perp_hz).abs() > 2.0 {
                return Err(err("stored hyperfine values inconsistent with frequencies"));
            }
        }
        Ok(())
    }
}

/// Full register configuration (the bundled default covers Tables I-III,
/// the measured initialization fidelities and the electron Bell-fidelity row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterConfig {
    pub b_field_gauss: f64,
    pub gamma_c13_hz_per_gauss: f64,
    pub electron_init_fidelity: f64,
    pub readout_fidelity_bright: f64,
    pub readout_fidelity_dark: f64,
    pub spins: Vec<NuclearSpinParams>,
    #[serde(default)]
    pub bell_fidelity_electron: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub ghz_spin_order: Vec<String>,
}

impl RegisterConfig {
    /// The register shipped with the crate (Tables I-III).
    pub fn bundled() -> Self {
        let cfg: Self =
            serde_json::from_str(include_str!("../data/register.json")).expect("bundled config");
        cfg.validate().expect("bundled config invariants");
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self, RegisterError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, RegisterError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn spin(&self, label: &str) -> Result<&NuclearSpinParams, RegisterError> {
        self.spins
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| RegisterError::UnknownSpin(label.to_string()))
    }

    pub fn validate(&self) -> Result<(), RegisterError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.spins {
            if !seen.insert(s.label.clone()) {
                return Err(RegisterError::DuplicateLabel(s.label.clone()));
            }
            s.validate()?;
            // 13C Larmor frequencies must agree with gamma * B
            if !s.is_nitrogen() {
                let product = self.gamma_c13_hz_per_gauss * self.b_field_gauss;
                if (product - s.omega0_hz).abs() > 30.0 {
                    return Err(RegisterError::FieldMismatch {
                        label: s.label.clone(),
                        product,
                        omega0: s.omega0_hz,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Secular-approximation hyperfine extraction from the three measured
/// precession frequencies:
/// A_par = (omega_p1^2 - omega_m1^2) / (4 omega_0),
/// A_perp = sqrt((omega_p1^2 + omega_m1^2 - 2 omega_0^2 - 2 A_par^2) / 2).
pub fn hyperfine_from_frequencies(
    omega0: f64,
    omega_m1: f64,
    omega_p1: f64,
) -> Result<(f64, f64), RegisterError> {
    assert!(omega0 > 0.0, "omega0 must be positive");
    let a_par = (omega_p1 * omega_p1 - omega_m1 * omega_m1) / (4.0 * omega0);
    let radicand =
        (omega_p1 * omega_p1 + omega_m1 * omega_m1 - 2.0 * omega0 * omega0 - 2.0 * a_par * a_par)
            / 2.0;
    let a_perp = if radicand >= 0.0 {
        radicand.sqrt()
    } else if radicand > -RADICAND_TOLERANCE {
        0.0
    } else {
        return Err(RegisterError::NegativeRadicand(radicand));
    };
    Ok((a_par, a_perp))
}

/// Tilt angle between the nuclear quantization axes for the two electron
/// projections: beta = atan2(A_perp, omega_L - A_par).
pub fn quantization_axis_angle(spin: &NuclearSpinParams) -> f64 {
    libm::atan2(spin.a_perp_hz, spin.omega0_hz - spin.a_par_hz)
}

/// Nuclear precession frequency for the given electron projection.
pub fn precession_frequency(spin: &NuclearSpinParams, ms: ElectronProjection) -> f64 {
    match ms {
        ElectronProjection::Ms0 => spin.omega0_hz,
        ElectronProjection::MsMinus1 => {
            let d = spin.omega0_hz - spin.a_par_hz;
            (spin.a_perp_hz * spin.a_perp_hz + d * d).sqrt()
        }
        ElectronProjection::MsPlus1 => {
            let d = spin.omega0_hz + spin.a_par_hz;
            (spin.a_perp_hz * spin.a_perp_hz + d * d).sqrt()
        }
    }
}
