//! DDRF spectroscopy sweeps, off-resonance interaction conditions, and the
//! AC-Stark shift.
//!
//! A sweep prepares the electron in |+>, runs the DDRF sequence at each RF
//! frequency over all included spins (nuclei start mixed), and projects the
//! electron along a grid of equatorial angles. Fitting a + A cos(phi + phi0)
//! separates deterministic phase shifts (phi0) from loss of coherence (A).

use crate::dynamics::{ddrf_branch_propagators, GateParams, PulseFill, SpinFrequencies};
use crate::linalg::dagger;
use crate::register::NuclearSpinParams;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectroscopyError {
    #[error("phase grid is collinear in (cos, sin) space; need >= 3 distinct phases")]
    DegenerateDesign,
    #[error("RF frequency coincides with the spin precession frequency")]
    ZeroDetuning,
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
}

/// One fitted spectrum sample.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumPoint {
    pub rf_freq_hz: f64,
    pub amplitude: f64,
    pub phase_offset_rad: f64,
}

/// Sequence parameters of a spectroscopy sweep; the RF frequency is supplied
/// per grid point and each spin is driven at its own measured Rabi frequency.
#[derive(Debug, Clone)]
pub struct SweepParams {
    pub n_pulses: u32,
    pub tau_s: f64,
    /// Nominal bulk Larmor frequency used by the pulse-phase schedule.
    pub schedule_larmor_hz: f64,
}

/// Default readout phase grid: 19 points covering 0..360 degrees.
pub fn default_phase_grid() -> Vec<f64> {
    (0..19).map(|k| k as f64 * TAU / 18.0).collect()
}

/// Simulates the sweep over `freqs_hz` for the included spins and fits the
/// electron phase response at each point.
///
/// RF pulses hold an integer number of RF periods inside each decoupling
/// window (the experimental waveform constraint); this is what makes the
/// off-resonance conditions visible at all.
pub fn simulate_spectrum(
    spins: &[&NuclearSpinParams],
    sweep: &SweepParams,
    freqs_hz: &[f64],
    phase_grid: &[f64],
) -> Result<Vec<SpectrumPoint>, SpectroscopyError> {
    let mut out = Vec::with_capacity(freqs_hz.len());
    for &f_rf in freqs_hz {
        let gate = GateParams {
            n_pulses: sweep.n_pulses,
            tau_s: sweep.tau_s,
            rabi_hz: 0.0, // per spin below
            rf_freq_hz: f_rf,
            axis_phase: 0.0,
            conditional: true,
        };
        let phi_tau = TAU * (sweep.schedule_larmor_hz - f_rf) * sweep.tau_s;
        let phases = crate::dynamics::rf_phase_schedule(&gate, phi_tau);
        // electron coherence after the sequence with the nuclei fully mixed:
        // z = 1/2 prod_j Tr(V0_j V1_j^dag)/2
        let mut z = Complex64::new(0.5, 0.0);
        for spin in spins {
            let mut g = gate.clone();
            g.rabi_hz = spin.rabi_hz;
            let (v0, v1) = ddrf_branch_propagators(
                &SpinFrequencies::of(spin),
                &g,
                &phases,
                PulseFill::IntegerPeriods,
            )?;
            let prod = v0.dot(&dagger(&v1));
            z *= (prod[[0, 0]] + prod[[1, 1]]) / 2.0;
        }
        // projection probability along equatorial angle phi
        let values: Vec<f64> = phase_grid
            .iter()
            .map(|&phi| 0.5 + (z * Complex64::from_polar(1.0, -phi)).re)
            .collect();
        let (_, amplitude, phase_offset) = fit_cosine(phase_grid, &values)?;
        out.push(SpectrumPoint {
            rf_freq_hz: f_rf,
            amplitude,
            phase_offset_rad: phase_offset,
        });
    }
    Ok(out)
}

/// Least-squares fit of a + A cos(phi + phi0) via linear regression on
/// (1, cos phi, sin phi). Returns (a, A >= 0, phi0 in [0, 2pi)).
pub fn fit_cosine(phases: &[f64], values: &[f64]) -> Result<(f64, f64, f64), SpectroscopyError> {
    assert_eq!(phases.len(), values.len());
    if phases.len() < 3 {
        return Err(SpectroscopyError::DegenerateDesign);
    }
    // normal equations for v = a + b cos + c sin
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (&p, &v) in phases.iter().zip(values) {
        let row = [1.0, p.cos(), p.sin()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * v;
        }
    }
    let sol = solve3(m, rhs).ok_or(SpectroscopyError::DegenerateDesign)?;
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    let amplitude = (b * b + c * c).sqrt();
    let phi0 = if amplitude < 1e-14 {
        0.0
    } else {
        libm::atan2(-c, b).rem_euclid(TAU)
    };
    Ok((a, amplitude, phi0))
}

#[allow(clippy::needless_range_loop)]
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot =
            (col..3).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        let pv = m[col][col];
        for v in m[col].iter_mut() {
            *v /= pv;
        }
        b[col] /= pv;
        for r in 0..3 {
            if r != col {
                let f = m[r][col];
                for c2 in 0..3 {
                    m[r][c2] -= f * m[col][c2];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some(b)
}

/// Off-resonance interaction conditions for a spin precessing at `omega1_hz`
/// under a sequence with half-spacing `tau_s`: conditional rotations at
/// omega1 + m/tau and unconditional rotations at omega1 + (2p+1)/(2 tau).
pub fn resonance_frequencies(
    omega1_hz: f64,
    tau_s: f64,
    m_range: std::ops::RangeInclusive<i64>,
    p_range: std::ops::RangeInclusive<i64>,
) -> (Vec<f64>, Vec<f64>) {
    assert!(tau_s > 0.0);
    let conditional = m_range.map(|m| omega1_hz + m as f64 / tau_s).collect();
    let unconditional = p_range
        .map(|p| omega1_hz + (2 * p + 1) as f64 / (2.0 * tau_s))
        .collect();
    (conditional, unconditional)
}

/// AC-Stark shift of a spectator spin: Omega^2 / (2 (omega - omega_m1)).
pub fn ac_stark_shift(
    rabi_hz: f64,
    rf_freq_hz: f64,
    omega_m1_hz: f64,
) -> Result<f64, SpectroscopyError> {
    let detuning = rf_freq_hz - omega_m1_hz;
    if detuning == 0.0 {
        return Err(SpectroscopyError::ZeroDetuning);
    }
    Ok(rabi_hz * rabi_hz / (2.0 * detuning))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::RegisterConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fit_cosine_exact_recovery() {
        let phases: Vec<f64> = (0..8).map(|k| k as f64 * TAU / 8.0).collect();
        let values: Vec<f64> = phases.iter().map(|p| 0.5 + 0.4 * p.cos()).collect();
        let (a, amp, phi0) = fit_cosine(&phases, &values).unwrap();
        assert_abs_diff_eq!(a, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(amp, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(phi0, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_cosine_constant_input() {
        let phases: Vec<f64> = (0..10).map(|k| k as f64 * TAU / 10.0).collect();
        let values = vec![0.37; 10];
        let (a, amp, phi0) = fit_cosine(&phases, &values).unwrap();
        assert_abs_diff_eq!(a, 0.37, epsilon = 1e-12);
        assert!(amp < 1e-12);
        assert_eq!(phi0, 0.0);
    }

    #[test]
    fn fit_cosine_with_noise_recovers_amplitude() {
        let phases: Vec<f64> = (0..36).map(|k| k as f64 * TAU / 36.0).collect();
        // deterministic pseudo-noise with sigma ~ 0.01
        let values: Vec<f64> = phases
            .iter()
            .enumerate()
            .map(|(i, p)| 0.5 + 0.3 * (p + 1.0).cos() + 0.01 * ((i as f64 * 2.399).sin()))
            .collect();
        let (_, amp, phi0) = fit_cosine(&phases, &values).unwrap();
        assert_abs_diff_eq!(amp, 0.3, epsilon = 0.01);
        assert_abs_diff_eq!(phi0, 1.0, epsilon = 0.05);
    }

    #[test]
    fn fit_cosine_rejects_collinear_phases() {
        let phases = vec![0.3; 5];
        let values = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(matches!(
            fit_cosine(&phases, &values),
            Err(SpectroscopyError::DegenerateDesign)
        ));
    }

    #[test]
    fn fit_cosine_shift_covariance() {
        let phases: Vec<f64> = (0..12).map(|k| k as f64 * TAU / 12.0).collect();
        let values: Vec<f64> = phases.iter().map(|p| 0.4 + 0.2 * (p + 0.7).cos()).collect();
        let shifted: Vec<f64> = phases.iter().map(|p| 0.4 + 0.2 * (p + 1.7).cos()).collect();
        let (_, a1, p1) = fit_cosine(&phases, &values).unwrap();
        let (_, a2, p2) = fit_cosine(&phases, &shifted).unwrap();
        assert_abs_diff_eq!(a1, a2, epsilon = 1e-12);
        assert_abs_diff_eq!((p2 - p1).rem_euclid(TAU), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn resonance_frequency_examples() {
        let tau = 1.0 / 54000.0;
        let (cond, _) = resonance_frequencies(218828.0, tau, 4..=4, 0..=0);
        assert_abs_diff_eq!(cond[0], 434828.0, epsilon = 1e-6);
        let (cond, _) = resonance_frequencies(480625.0, tau, -1..=-1, 0..=0);
        assert_abs_diff_eq!(cond[0], 426625.0, epsilon = 1e-6);
        let (cond, unc) = resonance_frequencies(3.0e5, tau, 0..=2, 0..=1);
        assert_eq!(cond[0], 3.0e5); // m = 0 is the main resonance
                                    // arithmetic progressions with spacing 1/tau and 1/tau
        assert_abs_diff_eq!(cond[1] - cond[0], 54000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(unc[1] - unc[0], 54000.0, epsilon = 1e-9);
        // unconditional list sits half-way between conditional ones
        assert_abs_diff_eq!(unc[0] - cond[0], 27000.0, epsilon = 1e-9);
    }

    #[test]
    fn ac_stark_examples() {
        let s = ac_stark_shift(538.0, 5160.0 + 408317.0, 408317.0).unwrap();
        assert_abs_diff_eq!(s, 28.05, epsilon = 0.01);
        assert_eq!(ac_stark_shift(0.0, 4.0e5, 3.9e5).unwrap(), 0.0);
        let plus = ac_stark_shift(500.0, 4.0e5 + 1000.0, 4.0e5).unwrap();
        let minus = ac_stark_shift(500.0, 4.0e5 - 1000.0, 4.0e5).unwrap();
        assert_abs_diff_eq!(plus, -minus, epsilon = 1e-12);
        assert!(matches!(
            ac_stark_shift(500.0, 4.0e5, 4.0e5),
            Err(SpectroscopyError::ZeroDetuning)
        ));
    }

    #[test]
    fn empty_spin_set_gives_flat_half_amplitude() {
        let sweep = SweepParams {
            n_pulses: 48,
            tau_s: 1.0 / 54000.0,
            schedule_larmor_hz: 431962.0,
        };
        let freqs = [2.0e5, 3.3e5, 4.4e5];
        let pts = simulate_spectrum(&[], &sweep, &freqs, &default_phase_grid()).unwrap();
        for p in pts {
            assert_abs_diff_eq!(p.amplitude, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectrum_dips_at_the_main_resonance() {
        let cfg = RegisterConfig::bundled();
        let c1 = cfg.spin("C1").unwrap();
        let sweep = SweepParams {
            n_pulses: 48,
            tau_s: 1.0 / 54000.0,
            schedule_larmor_hz: cfg.gamma_c13_hz_per_gauss * cfg.b_field_gauss,
        };
        let freqs = [
            c1.omega_m1_hz - 3000.0,
            c1.omega_m1_hz,
            c1.omega_m1_hz + 3000.0,
        ];
        let pts = simulate_spectrum(&[c1], &sweep, &freqs, &default_phase_grid()).unwrap();
        assert!(pts[1].amplitude < pts[0].amplitude - 0.01);
        assert!(pts[1].amplitude < pts[2].amplitude - 0.01);
    }

    #[test]
    fn spectrum_floor_away_from_all_resonances() {
        // detuned by > 20/tau from every resonance of the included spin and
        // with a modest drive, the electron keeps full coherence
        let cfg = RegisterConfig::bundled();
        let mut c5 = cfg.spin("C5").unwrap().clone();
        c5.rabi_hz = 450.0;
        let tau = 1.0 / 54000.0;
        let sweep = SweepParams {
            n_pulses: 32,
            tau_s: tau,
            schedule_larmor_hz: cfg.gamma_c13_hz_per_gauss * cfg.b_field_gauss,
        };
        // the interaction conditions form a 27 kHz half-grid around omega_m1
        // (conditional every 1/tau, unconditional midway); the midpoints of
        // that comb are maximally detuned from every condition
        let f0 = c5.omega_m1_hz;
        let candidates: Vec<f64> = (1..=3).map(|k| f0 + 27000.0 * k as f64 + 13500.0).collect();
        let pts = simulate_spectrum(&[&c5], &sweep, &candidates, &default_phase_grid()).unwrap();
        for p in &pts {
            assert!(
                p.amplitude > 0.5 - 1e-3,
                "A = {} at {}",
                p.amplitude,
                p.rf_freq_hz
            );
        }
    }
}
