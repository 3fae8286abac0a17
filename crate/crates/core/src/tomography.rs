//! Expectation-value reconstruction from two-pass electron measurements,
//! readout correction, Bell/GHZ fidelities, entanglement witnesses, and the
//! stretched-exponential decay fit.

use crate::dynamics::DensityMatrix;
use crate::linalg::{self, embed1, embed_many, identity, partial_trace, pauli, CMat};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("no photon detections across the sequence pair")]
    NoDetections,
    #[error("non-positive readout signal {0}")]
    NonPositiveSignal(f64),
    #[error("missing operator {0:?} for the fidelity formula")]
    MissingOperator(String),
    #[error("decay fit did not converge: {0}")]
    NonConvergence(&'static str),
    #[error("malformed shot record: {0}")]
    MalformedRecord(String),
}

/// A measured multi-qubit Pauli expectation value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectationRecord {
    pub pauli_string: String,
    pub value: f64,
    pub stderr: f64,
    pub corrected: bool,
}

impl ExpectationRecord {
    /// A physical expectation stays within [-1, 1] up to statistics; values
    /// beyond three standard errors flag an over-correction.
    pub fn plausible(&self) -> bool {
        self.value.abs() <= 1.0 + 3.0 * self.stderr
    }
}

/// One experimental shot: which sequence variant ran (A = no pi-pulse,
/// B = with pi-pulse), whether the electron readout detected a photon, and
/// the nuclear parity outcomes conditioned on detection.
#[derive(Debug, Clone)]
pub struct ShotRecord {
    pub basis: String,
    pub sequence: char,
    pub photon_detected: bool,
    pub nuclear_outcomes: Vec<i8>,
}

/// Electron outcome probabilities from the photon-detection rates of the two
/// sequence variants: p(+1) = pA / (pA + pB).
pub fn electron_outcome_probabilities(pa: f64, pb: f64) -> Result<(f64, f64), TomographyError> {
    let total = pa + pb;
    if total <= 0.0 {
        return Err(TomographyError::NoDetections);
    }
    Ok((pa / total, pb / total))
}

/// Assembles an electron (x) nuclear expectation value from the electron
/// outcome probabilities and the conditional nuclear expectations. The
/// identity basis sums the branches; X, Y, Z take the difference.
pub fn assemble_expectation(
    basis: char,
    p_plus: f64,
    p_minus: f64,
    cond_plus: f64,
    cond_minus: f64,
) -> f64 {
    match basis {
        'I' => p_plus * cond_plus + p_minus * cond_minus,
        _ => p_plus * cond_plus - p_minus * cond_minus,
    }
}

/// Symmetric single-qubit readout correction factor: <Z> = C^2.
pub fn single_qubit_correction(z_expectation: f64) -> Result<f64, TomographyError> {
    if z_expectation <= 0.0 {
        return Err(TomographyError::NonPositiveSignal(z_expectation));
    }
    Ok(z_expectation.sqrt())
}

/// Multi-qubit readout correction: the joint <Z...Z> factorizes into per-spin
/// initialization factors (marginal / single-qubit C) times the joint factor.
pub fn multi_qubit_correction(
    joint: f64,
    marginals: &[f64],
    single_c: &[f64],
) -> Result<f64, TomographyError> {
    assert_eq!(marginals.len(), single_c.len());
    let mut product = 1.0;
    for (&m, &c) in marginals.iter().zip(single_c) {
        if m <= 0.0 {
            return Err(TomographyError::NonPositiveSignal(m));
        }
        if c <= 0.0 {
            return Err(TomographyError::NonPositiveSignal(c));
        }
        product *= m / c;
    }
    if joint <= 0.0 {
        return Err(TomographyError::NonPositiveSignal(joint));
    }
    Ok(joint / product)
}

/// Which Bell-state fidelity combination applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellKind {
    /// (1 + <XZ> + <YY> + <ZX>) / 4 for (|0+> + |1->)/sqrt(2).
    ElectronNuclear,
    /// (1 + <XX> - <YY> + <ZZ>) / 4 for (|++> + |-->)/sqrt(2).
    NuclearNuclear,
}

/// Bell fidelity from the three non-trivial Pauli expectations.
pub fn bell_fidelity(
    kind: BellKind,
    expectations: &BTreeMap<String, f64>,
) -> Result<f64, TomographyError> {
    let get = |s: &str| {
        expectations
            .get(s)
            .copied()
            .ok_or_else(|| TomographyError::MissingOperator(s.to_string()))
    };
    match kind {
        BellKind::ElectronNuclear => Ok((1.0 + get("XZ")? + get("YY")? + get("ZX")?) / 4.0),
        BellKind::NuclearNuclear => Ok((1.0 + get("XX")? - get("YY")? + get("ZZ")?) / 4.0),
    }
}

/// Enumerates the 2^n Pauli strings with non-zero expectation on |GHZ_n> by
/// brute force over all 4^n strings, together with their ideal coefficients
/// (always +-1: the GHZ stabilizer group).
pub fn ghz_operator_set(qubits: usize) -> Vec<(String, f64)> {
    assert!(qubits >= 2);
    let ghz = crate::dynamics::ghz_state(qubits);
    let labels = ['I', 'X', 'Y', 'Z'];
    let mut out = Vec::new();
    let total = 4usize.pow(qubits as u32);
    for code in 0..total {
        let mut string = String::with_capacity(qubits);
        let mut c = code;
        for _ in 0..qubits {
            string.push(labels[c % 4]);
            c /= 4;
        }
        let string: String = string.chars().rev().collect();
        let val = pauli_expectation_on_state(&ghz, &string);
        if val.abs() > 1e-9 {
            out.push((string, val));
        }
    }
    out
}

/// <psi| P |psi> for a Pauli string applied qubit-wise to a state vector.
pub fn pauli_expectation_on_state(state: &[Complex64], string: &str) -> f64 {
    let n = string.len();
    let dim = state.len();
    assert_eq!(dim, 1 << n);
    let mut acc = Complex64::new(0.0, 0.0);
    for (idx, &amp) in state.iter().enumerate() {
        if amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        // P|idx> = phase * |jdx>
        let mut jdx = idx;
        let mut phase = Complex64::new(1.0, 0.0);
        for (q, ch) in string.chars().enumerate() {
            let bit = (idx >> (n - 1 - q)) & 1;
            match ch {
                'I' => {}
                'X' => jdx ^= 1 << (n - 1 - q),
                'Y' => {
                    jdx ^= 1 << (n - 1 - q);
                    // Y|0> = i|1>, Y|1> = -i|0>
                    phase *= if bit == 0 {
                        Complex64::new(0.0, 1.0)
                    } else {
                        Complex64::new(0.0, -1.0)
                    };
                }
                'Z' => {
                    if bit == 1 {
                        phase = -phase;
                    }
                }
                _ => panic!("unknown Pauli label {ch}"),
            }
        }
        acc += state[jdx].conj() * phase * amp;
    }
    acc.re
}

/// GHZ fidelity from measured expectations of the operator set:
/// F = 2^-n sum coeff * value, with the identity string contributing one.
pub fn ghz_fidelity_from_expectations(
    qubits: usize,
    measured: &BTreeMap<String, f64>,
) -> Result<f64, TomographyError> {
    let set = ghz_operator_set(qubits);
    let mut acc = 0.0;
    for (s, coeff) in &set {
        let v = if s.chars().all(|c| c == 'I') {
            1.0
        } else {
            *measured
                .get(s)
                .ok_or_else(|| TomographyError::MissingOperator(s.clone()))?
        };
        acc += coeff * v;
    }
    Ok(acc / (1 << qubits) as f64)
}

/// GHZ witness 1/2 - |GHZ><GHZ|: negativity (fidelity above one half)
/// certifies genuine multipartite entanglement.
pub fn witness_ghz(fidelity: f64, stderr: f64) -> (bool, f64) {
    assert!(stderr > 0.0);
    (fidelity > 0.5, (fidelity - 0.5) / stderr)
}

/// Two-pass electron measurement simulated on a density matrix: returns the
/// assembled expectation of the full Pauli string (electron label first),
/// routed through the same estimator used for experimental records.
pub fn expectation_two_pass(rho: &DensityMatrix, string: &str) -> Result<f64, TomographyError> {
    let n = string.len();
    let dim = rho.dim();
    assert_eq!(dim, 1 << n);
    let e_basis = string.chars().next().expect("non-empty string");
    // electron measured along its basis; identity measures in Z
    let w = if e_basis == 'I' {
        pauli('Z')
    } else {
        pauli(e_basis)
    };
    let half = Complex64::new(0.5, 0.0);
    let proj_plus = (identity(2) + &w).mapv(|v| v * half);
    let proj_minus = (identity(2) - &w).mapv(|v| v * half);
    let p_plus_op = embed1(&proj_plus, 0, n);
    let p_minus_op = embed1(&proj_minus, 0, n);
    // photon detection rates of the two sequence variants are proportional to
    // the projector populations
    let pa = linalg::expectation(&p_plus_op, rho.matrix());
    let pb = linalg::expectation(&p_minus_op, rho.matrix());
    let (p_plus, p_minus) = electron_outcome_probabilities(pa.max(0.0), pb.max(0.0))?;
    // conditional nuclear expectations from the conditioned reduced states
    let nuclear_ops: Vec<(usize, CMat)> = string
        .chars()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| *c != 'I')
        .map(|(q, c)| (q, pauli(c)))
        .collect();
    let op_refs: Vec<(usize, &CMat)> = nuclear_ops.iter().map(|(q, m)| (*q - 1, m)).collect();
    let nuc_op = embed_many(&op_refs, n - 1);
    let keep: Vec<usize> = (1..n).collect();
    let cond = |proj: &CMat, p: f64| -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let conditioned = linalg::sandwich(proj, rho.matrix());
        let reduced = partial_trace(&conditioned, n, &keep);
        linalg::expectation(&nuc_op, &reduced) / p
    };
    let cond_plus = cond(&p_plus_op, pa);
    let cond_minus = cond(&p_minus_op, pb);
    Ok(assemble_expectation(
        e_basis, p_plus, p_minus, cond_plus, cond_minus,
    ))
}

/// Estimates expectation values from experimental shot records, grouped by
/// basis string. Binomial errors on the detection fractions and on the
/// conditional parities are propagated to first order.
pub fn expectations_from_shots(
    shots: &[ShotRecord],
) -> Result<Vec<ExpectationRecord>, TomographyError> {
    let mut by_basis: BTreeMap<&str, Vec<&ShotRecord>> = BTreeMap::new();
    for s in shots {
        if s.sequence != 'A' && s.sequence != 'B' {
            return Err(TomographyError::MalformedRecord(format!(
                "sequence must be A or B, got {:?}",
                s.sequence
            )));
        }
        by_basis.entry(s.basis.as_str()).or_default().push(s);
    }
    let mut out = Vec::new();
    for (basis, group) in by_basis {
        let split = |seq: char| -> (usize, usize, f64, f64, usize) {
            let total = group.iter().filter(|s| s.sequence == seq).count();
            let detected: Vec<&&ShotRecord> = group
                .iter()
                .filter(|s| s.sequence == seq && s.photon_detected)
                .collect();
            let parity =
                |s: &ShotRecord| -> f64 { s.nuclear_outcomes.iter().map(|v| *v as f64).product() };
            let mean = if detected.is_empty() {
                0.0
            } else {
                detected.iter().map(|s| parity(s)).sum::<f64>() / detected.len() as f64
            };
            let var = if detected.len() < 2 {
                0.0
            } else {
                detected
                    .iter()
                    .map(|s| (parity(s) - mean).powi(2))
                    .sum::<f64>()
                    / (detected.len() as f64 - 1.0)
            };
            (total, detected.len(), mean, var, detected.len())
        };
        let (na, ka, mean_a, var_a, da) = split('A');
        let (nb, kb, mean_b, var_b, db) = split('B');
        if na == 0 || nb == 0 {
            return Err(TomographyError::MalformedRecord(format!(
                "basis {basis} lacks one of the sequence variants"
            )));
        }
        let pa = ka as f64 / na as f64;
        let pb = kb as f64 / nb as f64;
        let (p_plus, p_minus) = electron_outcome_probabilities(pa, pb)?;
        let e_basis = basis.chars().next().unwrap();
        let value = assemble_expectation(e_basis, p_plus, p_minus, mean_a, mean_b);
        // first-order propagation: detection fractions (binomial) and the two
        // conditional means, combined through the assembly formula
        let var_pa = pa * (1.0 - pa) / na as f64;
        let var_pb = pb * (1.0 - pb) / nb as f64;
        let total = pa + pb;
        // d p_plus / d pa = pb / total^2, d p_plus / d pb = -pa / total^2
        let sign = if e_basis == 'I' { 1.0 } else { -1.0 };
        let dv_dpa = (pb / (total * total)) * (mean_a - sign * mean_b);
        let dv_dpb = (-pa / (total * total)) * (mean_a - sign * mean_b);
        let var_mean_a = if da > 0 { var_a / da as f64 } else { 0.0 };
        let var_mean_b = if db > 0 { var_b / db as f64 } else { 0.0 };
        let variance = dv_dpa * dv_dpa * var_pa
            + dv_dpb * dv_dpb * var_pb
            + p_plus * p_plus * var_mean_a
            + p_minus * p_minus * var_mean_b;
        out.push(ExpectationRecord {
            pauli_string: basis.to_string(),
            value,
            stderr: variance.sqrt(),
            corrected: false,
        });
    }
    Ok(out)
}

/// Parses shot records from CSV lines: basis,sequence(A|B),photon(0|1),
/// nuclear outcomes as +-1 separated by semicolons.
pub fn parse_shot_csv(text: &str) -> Result<Vec<ShotRecord>, TomographyError> {
    let mut shots = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("basis") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TomographyError::MalformedRecord(format!(
                "line {}: expected 4 fields",
                lineno + 1
            )));
        }
        let sequence = fields[1]
            .chars()
            .next()
            .ok_or_else(|| TomographyError::MalformedRecord("empty sequence".into()))?;
        if sequence != 'A' && sequence != 'B' {
            return Err(TomographyError::MalformedRecord(format!(
                "line {}: sequence must be A or B",
                lineno + 1
            )));
        }
        let photon = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(TomographyError::MalformedRecord(format!(
                    "line {}: photon flag {:?}",
                    lineno + 1,
                    other
                )))
            }
        };
        let outcomes: Result<Vec<i8>, _> = fields[3]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<i8>())
            .collect();
        let outcomes = outcomes
            .map_err(|e| TomographyError::MalformedRecord(format!("line {}: {}", lineno + 1, e)))?;
        if outcomes.iter().any(|v| *v != 1 && *v != -1) {
            return Err(TomographyError::MalformedRecord(format!(
                "line {}: outcomes must be +-1",
                lineno + 1
            )));
        }
        shots.push(ShotRecord {
            basis: fields[0].to_string(),
            sequence,
            photon_detected: photon,
            nuclear_outcomes: outcomes,
        });
    }
    Ok(shots)
}

/// Result of the stretched-exponential decay fit f(t) = A + B exp(-(t/T)^n).
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub n: f64,
    /// One-sigma errors for the free parameters, in (A, B, T, n) order; fixed
    /// parameters report zero.
    pub errors: [f64; 4],
}

/// Levenberg-Marquardt fit with optional fixed offset and amplitude.
pub fn fit_decay(
    times: &[f64],
    values: &[f64],
    fix_a: Option<f64>,
    fix_b: Option<f64>,
) -> Result<DecayFit, TomographyError> {
    assert_eq!(times.len(), values.len());
    if times.len() < 4 {
        return Err(TomographyError::NonConvergence("need at least 4 points"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
        return Err(TomographyError::NonConvergence(
            "times must be positive increasing",
        ));
    }
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread < 1e-12 {
        return Err(TomographyError::NonConvergence(
            "constant data: T unidentifiable",
        ));
    }

    // initial guesses
    let v_first = values[0];
    let v_last = *values.last().unwrap();
    let a0 = fix_a.unwrap_or(v_last);
    let b0 = fix_b.unwrap_or(v_first - a0);
    let t_mid = times[times.len() / 2];
    let mut params = [a0, if b0.abs() < 1e-9 { spread } else { b0 }, t_mid, 1.0];

    let free: Vec<usize> = [
        (0, fix_a.is_none()),
        (1, fix_b.is_none()),
        (2, true),
        (3, true),
    ]
    .iter()
    .filter(|(_, f)| *f)
    .map(|(i, _)| *i)
    .collect();

    let model = |p: &[f64; 4], t: f64| -> f64 {
        p[0] + p[1] * (-(t / p[2].abs().max(1e-12)).powf(p[3])).exp()
    };
    let sse = |p: &[f64; 4]| -> f64 {
        times
            .iter()
            .zip(values)
            .map(|(&t, &v)| (model(p, t) - v).powi(2))
            .sum()
    };

    let mut lambda = 1e-3;
    let mut current = sse(&params);
    let npar = free.len();
    let mut converged = false;
    for _ in 0..400 {
        if converged {
            break;
        }
        // numeric Jacobian
        let mut jtj = vec![vec![0.0; npar]; npar];
        let mut jtr = vec![0.0; npar];
        for (&t, &v) in times.iter().zip(values) {
            let r = v - model(&params, t);
            let mut grad = vec![0.0; npar];
            for (col, &pi) in free.iter().enumerate() {
                let h = (params[pi].abs() * 1e-6).max(1e-9);
                let mut up = params;
                up[pi] += h;
                let mut dn = params;
                dn[pi] -= h;
                grad[col] = (model(&up, t) - model(&dn, t)) / (2.0 * h);
            }
            for i in 0..npar {
                for j in 0..npar {
                    jtj[i][j] += grad[i] * grad[j];
                }
                jtr[i] += grad[i] * r;
            }
        }
        // solve (JtJ + lambda diag) step = Jtr
        let mut m = jtj.clone();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] *= 1.0 + lambda;
        }
        let step = match solve_dense(&m, &jtr) {
            Some(s) => s,
            None => return Err(TomographyError::NonConvergence("singular normal equations")),
        };
        let mut trial = params;
        for (col, &pi) in free.iter().enumerate() {
            trial[pi] += step[col];
        }
        trial[2] = trial[2].abs().max(1e-12);
        trial[3] = trial[3].clamp(0.05, 10.0);
        let trial_sse = sse(&trial);
        if trial_sse < current {
            let rel = (current - trial_sse) / current.max(1e-300);
            params = trial;
            current = trial_sse;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-12 {
                converged = true;
            }
        } else {
            lambda *= 3.0;
            if lambda > 1e12 {
                converged = true; // stuck at a (possibly local) minimum
            }
        }
    }
    if !converged {
        return Err(TomographyError::NonConvergence(
            "iteration budget exhausted",
        ));
    }
    // covariance-based errors: sigma^2 (JtJ)^-1
    let dof = (times.len() as f64 - npar as f64).max(1.0);
    let sigma2 = current / dof;
    let mut jtj = vec![vec![0.0; npar]; npar];
    for &t in times {
        let mut grad = vec![0.0; npar];
        for (col, &pi) in free.iter().enumerate() {
            let h = (params[pi].abs() * 1e-6).max(1e-9);
            let mut up = params;
            up[pi] += h;
            let mut dn = params;
            dn[pi] -= h;
            grad[col] = (model(&up, t) - model(&dn, t)) / (2.0 * h);
        }
        for i in 0..npar {
            for j in 0..npar {
                jtj[i][j] += grad[i] * grad[j];
            }
        }
    }
    let mut errors = [0.0f64; 4];
    if let Some(inv_diag) = invert_diagonal(&jtj) {
        for (col, &pi) in free.iter().enumerate() {
            errors[pi] = (sigma2 * inv_diag[col]).max(0.0).sqrt();
        }
    }
    Ok(DecayFit {
        a: params[0],
        b: params[1],
        t: params[2],
        n: params[3],
        errors,
    })
}

#[allow(clippy::needless_range_loop)]
fn solve_dense(m: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        let pv = a[col][col];
        for v in a[col].iter_mut() {
            *v /= pv;
        }
        x[col] /= pv;
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for c2 in 0..n {
                    a[r][c2] -= f * a[col][c2];
                }
                x[r] -= f * x[col];
            }
        }
    }
    Some(x)
}

/// Diagonal of the inverse via full inversion of the (small) matrix.
fn invert_diagonal(m: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = m.len();
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let col = solve_dense(m, &e)?;
        diag.push(col[i]);
    }
    Some(diag)
}
