//! Monte Carlo dephasing / crosstalk Bell simulation and the depolarizing
//! channel used to predict multi-qubit GHZ fidelities.
//!
//! Dephasing is modelled by drawing one quasi-static detuning per nuclear
//! spin and per sample from a Gaussian of angular width sqrt(2)/T2*, shifting
//! omega_L and omega_1 together. Bell-state experiments are rebuilt gate by
//! gate: swap-style initialization of the target spin (heralded on the
//! electron |0> outcome), then the entangling block, with every DDRF gate
//! acting on the target and its spectrally-close crosstalk spins at once.

use crate::dynamics::{
    ddrf_branch_propagators, DensityMatrix, DynamicsError, GateParams, PulseFill, SpinFrequencies,
};
use crate::linalg::{
    self, apply_unitary_one, apply_unitary_two, identity, kron, partial_trace, rot_equatorial,
    rot_y, CMat,
};
use crate::register::{NuclearSpinParams, RegisterConfig, RegisterError};
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{PI, SQRT_2, TAU};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("error probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("degenerate denominator in error-probability extraction")]
    DegenerateDenominator,
}

/// Monte Carlo run parameters.
#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub samples: u32,
    pub seed: u64,
    pub crosstalk_window_hz: f64,
    /// When false, the simulated system contains only the target spin.
    pub include_crosstalk: bool,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            seed: 0x5eed_dd8f,
            crosstalk_window_hz: 5000.0,
            include_crosstalk: true,
        }
    }
}

/// Depolarizing noise parameters for the multi-qubit prediction model: one
/// error probability per entangling gate, extracted from the measured Bell
/// and initialization fidelities.
#[derive(Debug, Clone)]
pub struct DepolarizingModel {
    pub electron_init_fidelity: f64,
    pub spins: Vec<DepolarizingSpin>,
}

#[derive(Debug, Clone)]
pub struct DepolarizingSpin {
    pub label: String,
    pub init_fidelity: f64,
    pub error_probability: f64,
}

impl DepolarizingModel {
    /// Extracts p_j for the given spin order from the register's
    /// initialization fidelities and the supplied Bell fidelities.
    pub fn from_register(
        spin_order: &[String],
        register: &RegisterConfig,
        bell_fidelities: &std::collections::BTreeMap<String, f64>,
    ) -> Result<Self, NoiseError> {
        let f_e = register.electron_init_fidelity;
        let mut spins = Vec::with_capacity(spin_order.len());
        for label in spin_order {
            let spin = register.spin(label)?;
            let f_bell = *bell_fidelities
                .get(label)
                .ok_or_else(|| RegisterError::UnknownSpin(label.clone()))?;
            spins.push(DepolarizingSpin {
                label: label.clone(),
                init_fidelity: spin.init_fidelity,
                error_probability: error_probability(f_bell, f_e, spin.init_fidelity)?,
            });
        }
        Ok(Self {
            electron_init_fidelity: f_e,
            spins,
        })
    }
}

/// Gaussian quasi-static detuning in ordinary frequency units (Hz):
/// draw * sigma / (2 pi) with sigma = sqrt(2)/T2* angular.
pub fn sample_detuning(t2_star_s: f64, draw: f64) -> f64 {
    assert!(t2_star_s > 0.0, "T2* must be positive");
    draw * SQRT_2 / t2_star_s / TAU
}

/// Counter-based Gaussian draw: a pure function of (seed, sample, spin index),
/// so sample evaluations can run in any order with bitwise-identical results.
pub fn gaussian_draw(seed: u64, sample: u32, spin_index: u32) -> f64 {
    let mix = seed
        ^ (sample as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ ((spin_index as u64) << 32).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(mix);
    StandardNormal.sample(&mut rng)
}

/// Outcome of a simulated Bell-state experiment.
#[derive(Debug, Clone)]
pub struct BellSimResult {
    pub mean_fidelity: f64,
    pub std_error: f64,
    pub optimized_rabi_hz: f64,
    pub crosstalk: Vec<String>,
}

/// Crosstalk companions: register spins within the window of the target's
/// m_s = -1 frequency, or the single nearest spin if the window is empty.
/// Rows describing the same physical spin as the target (or each other) are
/// deduplicated, preferring the unstarred entry.
pub fn crosstalk_spins<'a>(
    target: &NuclearSpinParams,
    candidates: &'a [NuclearSpinParams],
    window_hz: f64,
) -> Vec<&'a NuclearSpinParams> {
    let mut pool: Vec<&NuclearSpinParams> = Vec::new();
    for s in candidates {
        if s.physical_label() == target.physical_label() {
            continue;
        }
        match pool
            .iter_mut()
            .find(|p| p.physical_label() == s.physical_label())
        {
            Some(slot) => {
                if s.label == s.physical_label() {
                    *slot = s;
                }
            }
            None => pool.push(s),
        }
    }
    let dist = |s: &NuclearSpinParams| (s.omega_m1_hz - target.omega_m1_hz).abs();
    let mut within: Vec<&NuclearSpinParams> = pool
        .iter()
        .copied()
        .filter(|s| dist(s) <= window_hz)
        .collect();
    if within.is_empty() {
        if let Some(nearest) = pool
            .iter()
            .copied()
            .min_by(|a, b| dist(a).partial_cmp(&dist(b)).unwrap())
        {
            within.push(nearest);
        }
    }
    within.sort_by(|a, b| a.label.cmp(&b.label));
    within
}

/// The three environment spins quoted alongside the simulated Bell-state
/// table: two near C7 and one near C8, known only through their hyperfine
/// components. Their bare precession frequency is taken equal to the bulk
/// Larmor frequency and their coherence assumed bath-typical.
pub fn environment_spins(cfg: &RegisterConfig) -> Vec<NuclearSpinParams> {
    let omega_l = cfg.gamma_c13_hz_per_gauss * cfg.b_field_gauss;
    let mk = |label: &str, a_par_khz: f64, a_perp_khz: f64| {
        let a_par = a_par_khz * 1e3;
        let a_perp = a_perp_khz * 1e3;
        let d = omega_l - a_par;
        NuclearSpinParams {
            label: label.to_string(),
            omega0_hz: omega_l,
            omega_m1_hz: (a_perp * a_perp + d * d).sqrt(),
            omega_p1_hz: (a_perp * a_perp + (omega_l + a_par) * (omega_l + a_par)).sqrt(),
            a_par_hz: a_par,
            a_perp_hz: a_perp,
            t2_star_ms0_ms: 10.0,
            t2_star_ms1_ms: 10.0,
            t2_echo_s: 0.5,
            n_pulses: 2,
            tau_us: 10.0,
            rabi_hz: 500.0,
            rf_pi_us: 1000.0,
            init_fidelity: 0.5,
        }
    };
    vec![
        mk("E1", -20.7, 12.0),
        mk("E2", -23.2, 13.0),
        mk("E3", 14.5, 10.0),
    ]
}

/// Multi-spin DDRF propagator: the electron branch selects one tensor factor
/// per spin (nuclear-nuclear couplings neglected).
fn ddrf_multi(
    freqs: &[SpinFrequencies],
    gate: &GateParams,
    phases: &[f64],
) -> Result<CMat, DynamicsError> {
    let mut v0 = identity(1);
    let mut v1 = identity(1);
    for f in freqs {
        let (a, b) = ddrf_branch_propagators(f, gate, phases, PulseFill::Full)?;
        v0 = kron(&v0, &a);
        v1 = kron(&v1, &b);
    }
    let d = v0.nrows();
    let mut out: CMat = Array2::zeros((2 * d, 2 * d));
    for i in 0..d {
        for j in 0..d {
            out[[i, j]] = v0[[i, j]];
            out[[d + i, d + j]] = v1[[i, j]];
        }
    }
    Ok(out)
}

struct BellPipeline {
    init_gate: GateParams,
    entangle_gate: GateParams,
    init_phases: Vec<f64>,
    entangle_phases: Vec<f64>,
    to_z_rotation: CMat,
    perfect_init: bool,
}

impl BellPipeline {
    /// `alpha0` is the azimuth of the ideally heralded nuclear state; the
    /// basis rotation mapping it to |up> is calibrated once, on the noiseless
    /// pipeline at nominal drive strength.
    fn new(base: &GateParams, nominal_omega_l: f64, perfect_init: bool, alpha0: f64) -> Self {
        let mut init_gate = base.clone();
        init_gate.axis_phase = 0.0;
        let mut entangle_gate = base.clone();
        entangle_gate.axis_phase = PI / 2.0;
        let phi_tau_init = init_gate.phi_tau_for(nominal_omega_l);
        let phi_tau_ent = entangle_gate.phi_tau_for(nominal_omega_l);
        Self {
            init_phases: crate::dynamics::rf_phase_schedule(&init_gate, phi_tau_init),
            entangle_phases: crate::dynamics::rf_phase_schedule(&entangle_gate, phi_tau_ent),
            init_gate,
            entangle_gate,
            to_z_rotation: rot_equatorial(alpha0 + PI / 2.0, -PI / 2.0),
            perfect_init,
        }
    }

    fn with_rabi(&self, rabi: f64) -> (GateParams, GateParams) {
        let mut a = self.init_gate.clone();
        a.rabi_hz = rabi;
        let mut b = self.entangle_gate.clone();
        b.rabi_hz = rabi;
        (a, b)
    }

    /// Runs init + entangle on electron (x) target (x) crosstalk and reduces
    /// to the electron-target pair. Returned matrix is weighted by the herald
    /// probability (its trace).
    fn run(&self, freqs: &[SpinFrequencies], rabi: f64) -> Result<CMat, DynamicsError> {
        let nq = freqs.len() + 1;
        let (init_gate, entangle_gate) = self.with_rabi(rabi);
        let mut rho: CMat;
        if self.perfect_init {
            let mut blocks: Vec<CMat> = vec![{
                let mut m: CMat = Array2::zeros((2, 2));
                m[[0, 0]] = Complex64::new(1.0, 0.0);
                m
            }];
            blocks.push({
                let mut m: CMat = Array2::zeros((2, 2));
                m[[0, 0]] = Complex64::new(1.0, 0.0);
                m
            });
            for _ in 1..freqs.len() {
                blocks.push(identity(2).mapv(|z| z * 0.5));
            }
            let refs: Vec<&CMat> = blocks.iter().collect();
            rho = linalg::kron_all(&refs);
        } else {
            let mut blocks: Vec<CMat> = vec![{
                let mut m: CMat = Array2::zeros((2, 2));
                m[[0, 0]] = Complex64::new(1.0, 0.0);
                m
            }];
            for _ in 0..freqs.len() {
                blocks.push(identity(2).mapv(|z| z * 0.5));
            }
            let refs: Vec<&CMat> = blocks.iter().collect();
            rho = linalg::kron_all(&refs);
            // swap-style init: pi/2_y on electron, controlled rotation about
            // x, pi/2_x on electron, herald the |0> outcome
            apply_unitary_one(&mut rho, 0, nq, &rot_equatorial(PI / 2.0, PI / 2.0));
            let u = ddrf_multi(freqs, &init_gate, &self.init_phases)?;
            rho = linalg::sandwich(&u, &rho);
            apply_unitary_one(&mut rho, 0, nq, &rot_equatorial(0.0, PI / 2.0));
            let d = 1usize << (nq - 1);
            let mut heralded: CMat = Array2::zeros((2 * d, 2 * d));
            for i in 0..d {
                for j in 0..d {
                    heralded[[i, j]] = rho[[i, j]];
                }
            }
            rho = heralded;
            // calibrated basis rotation of the target onto |up>
            apply_unitary_one(&mut rho, 1, nq, &self.to_z_rotation);
        }
        apply_unitary_one(&mut rho, 0, nq, &rot_equatorial(PI / 2.0, PI / 2.0));
        let u = ddrf_multi(freqs, &entangle_gate, &self.entangle_phases)?;
        rho = linalg::sandwich(&u, &rho);
        Ok(partial_trace(&rho, nq, &[0, 1]))
    }
}

/// Azimuth of the heralded nuclear state on the noiseless single-spin
/// pipeline (before any to-z rotation).
fn ideal_heralded_azimuth(base: &GateParams, freqs: SpinFrequencies) -> Result<f64, DynamicsError> {
    let pipeline = BellPipeline::new(base, freqs.omega_l_hz, false, 0.0);
    let nq = 2;
    let mut rho: CMat = Array2::zeros((4, 4));
    rho[[0, 0]] = Complex64::new(0.5, 0.0);
    rho[[1, 1]] = Complex64::new(0.5, 0.0);
    apply_unitary_one(&mut rho, 0, nq, &rot_equatorial(PI / 2.0, PI / 2.0));
    let u = ddrf_multi(&[freqs], &pipeline.init_gate, &pipeline.init_phases)?;
    rho = linalg::sandwich(&u, &rho);
    apply_unitary_one(&mut rho, 0, nq, &rot_equatorial(0.0, PI / 2.0));
    let mut nuc: CMat = Array2::zeros((2, 2));
    for i in 0..2 {
        for j in 0..2 {
            nuc[[i, j]] = rho[[i, j]];
        }
    }
    let coherence = nuc[[0, 1]];
    // Bloch components: <sx> = 2 Re rho01, <sy> = -2 Im rho01
    Ok(libm::atan2(-2.0 * coherence.im, 2.0 * coherence.re))
}

/// Dominant eigenvector of a positive semidefinite matrix by power iteration.
fn dominant_eigenvector(m: &CMat) -> Vec<Complex64> {
    let n = m.nrows();
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64))
        .collect();
    for _ in 0..200 {
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                w[i] += m[[i, j]] * v[j];
            }
        }
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            break;
        }
        for z in w.iter_mut() {
            *z /= norm;
        }
        v = w;
    }
    v
}

/// Azimuth-optimized overlap with the target pair state: over nuclear z
/// rotations of the target, F(alpha) = c0 + 2 Re(z e^{i alpha}) whose maximum
/// is c0 + 2 |z|.
fn azimuth_optimized_fidelity(target: &[Complex64], rho: &CMat) -> (f64, f64) {
    let mut c0 = 0.0;
    let mut z = Complex64::new(0.0, 0.0);
    for e in 0..2 {
        for e2 in 0..2 {
            for nn in 0..2 {
                c0 += (target[2 * e + nn].conj()
                    * rho[[2 * e + nn, 2 * e2 + nn]]
                    * target[2 * e2 + nn])
                    .re;
            }
            z += target[2 * e].conj() * rho[[2 * e, 2 * e2 + 1]] * target[2 * e2 + 1];
        }
    }
    let alpha = -z.im.atan2(z.re);
    (c0 + 2.0 * z.norm(), alpha)
}

fn fidelity_at_azimuth(target: &[Complex64], rho: &CMat, alpha: f64) -> f64 {
    let phase = [
        Complex64::from_polar(1.0, -alpha / 2.0),
        Complex64::from_polar(1.0, alpha / 2.0),
    ];
    let v: Vec<Complex64> = (0..4).map(|i| target[i] * phase[i % 2]).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            acc += v[i].conj() * rho[[i, j]] * v[j];
        }
    }
    acc.re
}

/// Simulated electron-nuclear Bell-state fidelity for `target`, including
/// quasi-static dephasing of every involved spin and crosstalk driving of its
/// spectral neighbours. The drive strength and the nuclear readout azimuth
/// are optimized as in the experimental calibration. The nitrogen spin is
/// treated like a 13C spin with perfect initialization.
pub fn simulate_bell_fidelity(
    target_label: &str,
    register: &RegisterConfig,
    gate: &GateParams,
    mc: &MonteCarloConfig,
    extra_spins: &[NuclearSpinParams],
) -> Result<BellSimResult, NoiseError> {
    assert!(mc.samples >= 1, "need at least one sample");
    let target = register.spin(target_label)?;
    let mut candidates: Vec<NuclearSpinParams> = register.spins.clone();
    candidates.extend_from_slice(extra_spins);
    let crosstalk = if mc.include_crosstalk {
        crosstalk_spins(target, &candidates, mc.crosstalk_window_hz)
    } else {
        Vec::new()
    };
    let crosstalk_labels: Vec<String> = crosstalk.iter().map(|s| s.label.clone()).collect();

    let perfect_init = target.is_nitrogen();
    let nominal: Vec<SpinFrequencies> = std::iter::once(SpinFrequencies::of(target))
        .chain(crosstalk.iter().map(|s| SpinFrequencies::of(s)))
        .collect();
    let sigmas_hz: Vec<f64> = std::iter::once(target)
        .chain(crosstalk.iter().copied())
        .map(|s| sample_detuning(s.t2_star_ms1_s(), 1.0))
        .collect();

    let alpha0 = if perfect_init {
        0.0
    } else {
        ideal_heralded_azimuth(gate, nominal[0])?
    };
    let pipeline = BellPipeline::new(gate, nominal[0].omega_l_hz, perfect_init, alpha0);

    // ideal target state: noiseless pipeline, no crosstalk, nominal drive
    let ideal = pipeline.run(&nominal[0..1], gate.rabi_hz)?;
    let trace: f64 = (0..4).map(|i| ideal[[i, i]].re).sum();
    let ideal = ideal.mapv(|v| v / trace);
    let target_state = dominant_eigenvector(&ideal);

    let mean_rho = |rabi: f64| -> Result<CMat, NoiseError> {
        let mut acc: CMat = Array2::zeros((4, 4));
        for i in 0..mc.samples {
            let freqs: Vec<SpinFrequencies> = nominal
                .iter()
                .enumerate()
                .map(|(j, f)| f.shifted(sigmas_hz[j] * gaussian_draw(mc.seed, i, j as u32)))
                .collect();
            acc = acc + pipeline.run(&freqs, rabi)?;
        }
        let trace: f64 = (0..4).map(|i| acc[[i, i]].re).sum();
        Ok(acc.mapv(|v| v / trace))
    };
    let fidelity_of = |rabi: f64| -> Result<f64, NoiseError> {
        Ok(azimuth_optimized_fidelity(&target_state, &mean_rho(rabi)?).0)
    };

    // golden-section search over the drive strength, +-10% around nominal
    let golden = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.9 * gate.rabi_hz, 1.1 * gate.rabi_hz);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let mut fc = fidelity_of(c)?;
    let mut fd = fidelity_of(d)?;
    for _ in 0..16 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = fidelity_of(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = fidelity_of(d)?;
        }
    }
    let best_rabi = 0.5 * (a + b);

    // final pass: per-sample fidelities at the chosen azimuth for the error bar
    let rho_bar = mean_rho(best_rabi)?;
    let (_, alpha) = azimuth_optimized_fidelity(&target_state, &rho_bar);
    let mut weights = Vec::with_capacity(mc.samples as usize);
    let mut values = Vec::with_capacity(mc.samples as usize);
    for i in 0..mc.samples {
        let freqs: Vec<SpinFrequencies> = nominal
            .iter()
            .enumerate()
            .map(|(j, f)| f.shifted(sigmas_hz[j] * gaussian_draw(mc.seed, i, j as u32)))
            .collect();
        let pair = pipeline.run(&freqs, best_rabi)?;
        let w: f64 = (0..4).map(|k| pair[[k, k]].re).sum();
        let normalized = pair.mapv(|v| v / w);
        weights.push(w);
        values.push(fidelity_at_azimuth(&target_state, &normalized, alpha));
    }
    let wsum: f64 = weights.iter().sum();
    let mean: f64 = weights.iter().zip(&values).map(|(w, v)| w * v).sum::<f64>() / wsum;
    let var: f64 = weights
        .iter()
        .zip(&values)
        .map(|(w, v)| w * (v - mean) * (v - mean))
        .sum::<f64>()
        / wsum;
    let std_error = (var / mc.samples as f64).sqrt();
    Ok(BellSimResult {
        mean_fidelity: mean,
        std_error,
        optimized_rabi_hz: best_rabi,
        crosstalk: crosstalk_labels,
    })
}

/// Depolarizing two-qubit gate: convex mixture of the ideal controlled
/// rotation and the uniform 16-term Pauli twirl on the electron-nuclear pair.
pub fn apply_depolarizing_gate(
    rho: &DensityMatrix,
    electron: usize,
    nuclear: usize,
    p: f64,
) -> Result<DensityMatrix, NoiseError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(NoiseError::InvalidProbability(p));
    }
    let dim = rho.dim();
    let n = dim.trailing_zeros() as usize;
    let crot = pair_crot();
    let mut ideal = rho.matrix().clone();
    apply_unitary_two(&mut ideal, electron, nuclear, n, &crot);
    let mut twirled: CMat = Array2::zeros((dim, dim));
    for a in ['I', 'X', 'Y', 'Z'] {
        for b in ['I', 'X', 'Y', 'Z'] {
            let mut term = ideal.clone();
            apply_unitary_one(&mut term, electron, n, &linalg::pauli(a));
            apply_unitary_one(&mut term, nuclear, n, &linalg::pauli(b));
            twirled = twirled + term;
        }
    }
    let out = ideal.mapv(|v| v * (1.0 - p)) + twirled.mapv(|v| v * (p / 16.0));
    Ok(DensityMatrix::new(out)?)
}

/// Ideal controlled rotation on an (electron, nuclear) pair:
/// |0><0| R_y(pi/2) + |1><1| R_y(-pi/2).
fn pair_crot() -> CMat {
    let mut out: CMat = Array2::zeros((4, 4));
    let plus = rot_y(PI / 2.0);
    let minus = rot_y(-PI / 2.0);
    for i in 0..2 {
        for j in 0..2 {
            out[[i, j]] = plus[[i, j]];
            out[[2 + i, 2 + j]] = minus[[i, j]];
        }
    }
    out
}

/// Analytic inversion of the depolarizing Bell model:
/// p = 1 - (1 - 4 F_Bell) / (1 - 4 F_init_e F_init_j).
pub fn error_probability(f_bell: f64, f_init_e: f64, f_init_j: f64) -> Result<f64, NoiseError> {
    let denom = 1.0 - 4.0 * f_init_e * f_init_j;
    if denom.abs() < 1e-12 {
        return Err(NoiseError::DegenerateDenominator);
    }
    let p = 1.0 - (1.0 - 4.0 * f_bell) / denom;
    if (-1e-6..0.0).contains(&p) {
        return Ok(0.0);
    }
    if (1.0..1.0 + 1e-6).contains(&p) {
        return Ok(1.0);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(NoiseError::InvalidProbability(p));
    }
    Ok(p)
}

/// Worst-case two-qubit gate fidelity of the depolarizing channel: 1 - 3p/4.
pub fn gate_fidelity(p: f64) -> f64 {
    1.0 - 0.75 * p
}

/// Predicted initialization and GHZ fidelities for growing register prefixes.
///
/// Builds rho_init as the product of classical mixtures, applies the ideal
/// electron pi/2 rotation and one depolarizing controlled rotation per spin,
/// and evaluates <GHZ_N| rho |GHZ_N>. `bell_fidelities` supplies the measured
/// Bell fidelity per spin label used for the p_j extraction.
pub fn predict_ghz(
    spin_order: &[String],
    register: &RegisterConfig,
    bell_fidelities: &std::collections::BTreeMap<String, f64>,
) -> Result<Vec<(usize, f64, f64)>, NoiseError> {
    let model = DepolarizingModel::from_register(spin_order, register, bell_fidelities)?;
    let f_e = model.electron_init_fidelity;
    let mut rows = Vec::new();
    for prefix in 1..=model.spins.len() {
        let included = &model.spins[..prefix];
        let qubits = prefix + 1;
        let dim = 1usize << qubits;
        // rho_init: electron mixture (x) per-spin mixtures
        let mut diag = vec![1.0f64; 1];
        let mut fids = vec![f_e];
        fids.extend(included.iter().map(|s| s.init_fidelity));
        for f in &fids {
            let mut next = Vec::with_capacity(diag.len() * 2);
            for v in &diag {
                next.push(v * f);
                next.push(v * (1.0 - f));
            }
            diag = next;
        }
        let mut rho: CMat = Array2::zeros((dim, dim));
        for (i, v) in diag.iter().enumerate() {
            rho[[i, i]] = Complex64::new(*v, 0.0);
        }
        let init_fidelity: f64 = fids.iter().product();
        apply_unitary_one(&mut rho, 0, qubits, &rot_y(PI / 2.0));
        let mut state = DensityMatrix::new(rho)?;
        for (j, spin) in included.iter().enumerate() {
            state = apply_depolarizing_gate(&state, 0, j + 1, spin.error_probability)?;
        }
        let ghz = crate::dynamics::ghz_state(qubits);
        let mut f = Complex64::new(0.0, 0.0);
        let m = state.matrix();
        for i in 0..dim {
            for j in 0..dim {
                f += ghz[i].conj() * m[[i, j]] * ghz[j];
            }
        }
        rows.push((qubits, init_fidelity, f.re));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::polarized_state;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sample_detuning_examples() {
        assert_eq!(sample_detuning(0.012, 0.0), 0.0);
        assert_abs_diff_eq!(sample_detuning(0.012, 1.0), 18.76, epsilon = 0.01);
    }

    #[test]
    fn gaussian_draw_statistics() {
        let n = 100_000u32;
        let mean: f64 = (0..n).map(|i| gaussian_draw(42, i, 0)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        // pure function of the counter triple
        assert_eq!(gaussian_draw(42, 7, 3), gaussian_draw(42, 7, 3));
        assert_ne!(gaussian_draw(42, 7, 3), gaussian_draw(42, 8, 3));
    }

    #[test]
    fn crosstalk_selection_rules() {
        let cfg = RegisterConfig::bundled();
        // C1: nothing within 5 kHz, nearest is C5
        let t = cfg.spin("C1").unwrap();
        let sel = crosstalk_spins(t, &cfg.spins, 5000.0);
        assert_eq!(
            sel.iter().map(|s| s.label.as_str()).collect::<Vec<_>>(),
            vec!["C5"]
        );
        // the starred duplicate never appears as its own crosstalk
        let t = cfg.spin("C1*").unwrap();
        let sel = crosstalk_spins(t, &cfg.spins, 5000.0);
        assert!(sel.iter().all(|s| s.physical_label() != "C1"));
    }

    #[test]
    fn depolarizing_gate_limits() {
        let rho = DensityMatrix::pure(&polarized_state(2)).unwrap();
        // p = 0: ideal controlled rotation exactly
        let out = apply_depolarizing_gate(&rho, 0, 1, 0.0).unwrap();
        let mut expect = rho.matrix().clone();
        apply_unitary_two(&mut expect, 0, 1, 2, &pair_crot());
        assert!(linalg::max_abs_diff(out.matrix(), &expect) < 1e-12);
        // p = 1: the pair is maximally mixed
        let out = apply_depolarizing_gate(&rho, 0, 1, 1.0).unwrap();
        let expect = identity(4).mapv(|z| z * 0.25);
        assert!(linalg::max_abs_diff(out.matrix(), &expect) < 1e-12);
        assert!(matches!(
            apply_depolarizing_gate(&rho, 0, 1, 1.5),
            Err(NoiseError::InvalidProbability(_))
        ));
    }

    #[test]
    fn depolarizing_gate_preserves_trace_and_hermiticity() {
        // random-ish mixed state on 3 qubits
        let mut rho: CMat = Array2::zeros((8, 8));
        let mut acc = 0.0;
        for i in 0..8 {
            let v = 1.0 / (1.0 + i as f64);
            rho[[i, i]] = Complex64::new(v, 0.0);
            acc += v;
        }
        for i in 0..8 {
            rho[[i, i]] /= acc;
        }
        rho[[0, 3]] = Complex64::new(0.02, 0.01);
        rho[[3, 0]] = Complex64::new(0.02, -0.01);
        let dm = DensityMatrix::new(rho).unwrap();
        for p in [0.0, 0.3, 0.9] {
            // construction re-validates Hermiticity, trace and positivity
            let out = apply_depolarizing_gate(&dm, 0, 2, p).unwrap();
            let tr: f64 = (0..8).map(|i| out.matrix()[[i, i]].re).sum();
            assert_abs_diff_eq!(tr, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn error_probability_examples() {
        let p = error_probability(0.972, 0.998, 0.983).unwrap();
        assert_abs_diff_eq!(p, 0.0123, epsilon = 2e-4);
        assert_abs_diff_eq!(gate_fidelity(p), 0.991, epsilon = 1e-3);
        // numerator zero
        let p = error_probability(0.25, 0.998, 0.983).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        assert_eq!(gate_fidelity(0.0), 1.0);
        assert_eq!(gate_fidelity(1.0), 0.25);
        assert!(matches!(
            error_probability(0.9, 0.5, 0.5),
            Err(NoiseError::DegenerateDenominator)
        ));
    }

    #[test]
    fn forward_backward_consistency() {
        // run the two-qubit sequence on rho_init with a known p, read the Bell
        // fidelity off the state, and invert
        let (f_e, f_j, p_true) = (0.991, 0.973, 0.0317);
        let mut rho: CMat = Array2::zeros((4, 4));
        rho[[0, 0]] = Complex64::new(f_e * f_j, 0.0);
        rho[[1, 1]] = Complex64::new(f_e * (1.0 - f_j), 0.0);
        rho[[2, 2]] = Complex64::new((1.0 - f_e) * f_j, 0.0);
        rho[[3, 3]] = Complex64::new((1.0 - f_e) * (1.0 - f_j), 0.0);
        let mut prepped = rho;
        apply_unitary_one(&mut prepped, 0, 2, &rot_y(PI / 2.0));
        let state = DensityMatrix::new(prepped).unwrap();
        let out = apply_depolarizing_gate(&state, 0, 1, p_true).unwrap();
        let ghz = crate::dynamics::ghz_state(2);
        let mut f_bell = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                f_bell += (ghz[i].conj() * out.matrix()[[i, j]] * ghz[j]).re;
            }
        }
        let p = error_probability(f_bell, f_e, f_j).unwrap();
        assert_abs_diff_eq!(p, p_true, epsilon = 1e-9);
    }

    #[test]
    fn predict_ghz_perfect_inputs_give_unity() {
        let mut cfg = RegisterConfig::bundled();
        cfg.electron_init_fidelity = 1.0;
        for s in cfg.spins.iter_mut() {
            s.init_fidelity = 1.0;
        }
        let mut bells = std::collections::BTreeMap::new();
        for s in &cfg.spins {
            bells.insert(s.label.clone(), 1.0);
        }
        let order: Vec<String> = cfg.ghz_spin_order.clone();
        let rows = predict_ghz(&order, &cfg, &bells).unwrap();
        for (_, fi, fg) in rows {
            assert_abs_diff_eq!(fi, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fg, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn predict_ghz_init_column_is_product_of_fidelities() {
        let cfg = RegisterConfig::bundled();
        let rows = predict_ghz(
            &cfg.ghz_spin_order.clone(),
            &cfg,
            &cfg.bell_fidelity_electron,
        )
        .unwrap();
        // Table values for the predicted initialization column
        let expected = [0.978, 0.963, 0.949, 0.946, 0.913, 0.886, 0.855];
        for ((_, fi, _), e) in rows.iter().zip(expected) {
            assert_abs_diff_eq!(*fi, e, epsilon = 1e-3);
        }
    }

    #[test]
    fn bell_simulation_noiseless_limit() {
        // enormous T2*, no crosstalk within reach, ideal regime -> fidelity 1
        let mut cfg = RegisterConfig::bundled();
        for s in cfg.spins.iter_mut() {
            s.t2_star_ms1_ms = 1e12;
        }
        let spin = cfg.spin("C1*").unwrap().clone();
        let gate = GateParams::entangling_for(&spin);
        let mc = MonteCarloConfig {
            samples: 10,
            ..Default::default()
        };
        let r = simulate_bell_fidelity("C1*", &cfg, &gate, &mc, &[]).unwrap();
        assert!(
            (r.mean_fidelity - 1.0).abs() < 1e-3,
            "F = {}",
            r.mean_fidelity
        );
    }

    #[test]
    fn bell_simulation_deterministic_given_seed() {
        let cfg = RegisterConfig::bundled();
        let spin = cfg.spin("C1*").unwrap().clone();
        let gate = GateParams::entangling_for(&spin);
        let mc = MonteCarloConfig {
            samples: 20,
            ..Default::default()
        };
        let a = simulate_bell_fidelity("C1*", &cfg, &gate, &mc, &[]).unwrap();
        let b = simulate_bell_fidelity("C1*", &cfg, &gate, &mc, &[]).unwrap();
        assert_eq!(a.mean_fidelity.to_bits(), b.mean_fidelity.to_bits());
    }
}
