//! Scratch probe for the headline simulation numbers.

use ddrf_core::dynamics::{
    closed_form_from_rates, ddrf_branch_propagators, rf_phase_schedule, GateParams, PulseFill,
    SpinFrequencies,
};
use ddrf_core::noise::{predict_ghz, simulate_bell_fidelity, MonteCarloConfig};
use ddrf_core::register::RegisterConfig;
use num_complex::Complex64;
use std::f64::consts::{PI, TAU};

fn bell_infidelity_beta(beta: f64, n: u32, tau: f64, fl: f64, a_par: f64) -> f64 {
    let f1 = (fl - a_par) / beta.cos();
    let freqs = SpinFrequencies {
        omega_l_hz: fl,
        omega_1_hz: f1,
        beta,
    };
    let gate = GateParams {
        n_pulses: n,
        tau_s: tau,
        rabi_hz: 1.0 / (4.0 * n as f64 * tau),
        rf_freq_hz: f1,
        axis_phase: PI / 2.0,
        conditional: true,
    };
    let phases = rf_phase_schedule(&gate, TAU * (fl - f1) * tau);
    let (v0, v1) = ddrf_branch_propagators(&freqs, &gate, &phases, PulseFill::Full).unwrap();
    let closed = closed_form_from_rates(fl - f1, &gate).unwrap();
    let c = closed.matrix();
    let up = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let mut psi = [Complex64::new(0.0, 0.0); 4];
    let mut targ = [Complex64::new(0.0, 0.0); 4];
    for i in 0..2 {
        for j in 0..2 {
            psi[i] += v0[[i, j]] * up[j] / 2f64.sqrt();
            psi[2 + i] += v1[[i, j]] * up[j] / 2f64.sqrt();
            targ[i] += c[[i, j]] * up[j] / 2f64.sqrt();
            targ[2 + i] += c[[2 + i, 2 + j]] * up[j] / 2f64.sqrt();
        }
    }
    let ov: Complex64 = targ.iter().zip(&psi).map(|(a, b)| a.conj() * b).sum();
    1.0 - ov.norm_sqr()
}

fn main() {
    let fl = 432e3;
    let a_par = 50e3;
    let tau = 5.0 / fl;
    println!("fig-s2 config N=16 tau=5tauL:");
    for beta in [0.0, 0.01, 0.02, 0.05, 0.10, 0.13, 0.20] {
        println!(
            "  beta={beta:.3}  infid={:.6e}",
            bell_infidelity_beta(beta, 16, tau, fl, a_par)
        );
    }

    let cfg = RegisterConfig::bundled();
    let mc = MonteCarloConfig::default();
    for label in ["C1*", "N14", "C1"] {
        let spin = cfg.spin(label).unwrap();
        let gate = GateParams::entangling_for(spin);
        let t0 = std::time::Instant::now();
        let r = simulate_bell_fidelity(label, &cfg, &gate, &mc, &[]).unwrap();
        println!(
            "bell {label}: F = {:.5} +- {:.5}  rabi* = {:.1}  crosstalk {:?}  [{:.1?}]",
            r.mean_fidelity,
            r.std_error,
            r.optimized_rabi_hz,
            r.crosstalk,
            t0.elapsed()
        );
    }

    let rows = predict_ghz(
        &cfg.ghz_spin_order.clone(),
        &cfg,
        &cfg.bell_fidelity_electron,
    )
    .unwrap();
    for (n, fi, fg) in rows {
        println!("ghz N={n}: init={fi:.4} ghz={fg:.4}");
    }
}
