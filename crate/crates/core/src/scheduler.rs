//! Spin-echo timing solver and RF waveform constraints.
//!
//! The measurement sequence for n nuclear spins interleaves two rounds of
//! echo pulses with the entanglement gates, basis rotations and parity
//! readout. Balancing the free-evolution intervals on both sides of every
//! echo yields a linear system in the 2n wait durations, generalizing the
//! printed three-spin instance. The system is built and solved in exact
//! rational arithmetic; conversion to microsecond floats happens at emission.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("no non-negative wait assignment within the spacing search bound")]
    Infeasible,
    #[error("generated timing system is rank-deficient")]
    SingularSystem,
    #[error("schedule malformed: {0}")]
    MalformedSchedule(String),
    #[error("window of {tau_us} us is shorter than one RF period")]
    NoValidCount { tau_us: f64 },
    #[error("envelope length {length_us} us must exceed twice the rise time {rise_us} us")]
    InvalidShape { length_us: f64, rise_us: f64 },
    #[error("echo solver needs at least two spins, got {0}")]
    TooFewSpins(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Gate,
    Echo,
    Wait,
    Idle,
}

/// One box of the measurement timeline. `spin` is a register label or
/// "electron" for global waits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineOp {
    pub spin: String,
    pub kind: OpKind,
    pub duration_us: f64,
    pub start_us: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub ops: Vec<TimelineOp>,
    /// Residual imbalance per echo, labelled by spin, in us.
    pub refocus_residuals_us: Vec<(String, f64)>,
}

/// Solution of the echo-timing system, converted to microsecond floats.
#[derive(Debug, Clone)]
pub struct EchoTimings {
    pub waits_us: Vec<f64>,
    /// Spacing parameter actually used (grown geometrically if needed).
    pub spacing_us: f64,
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite duration")
}

/// Coefficient matrix and right-hand side of the 2n-wait system for the
/// canonical interleaving:
///
/// gates x_1..x_n | w_1, e_1, t, e_2, t, ..., e_n, t | x_1, w_2, x_2, ...,
/// w_n, x_n | e_1, w_{n+1}, e_2, ..., e_n, w_{2n} | readout x_1..x_n
///
/// Round-one equation for spin i balances the intervals flanking its first
/// echo; round two likewise inside the basis-rotation/readout chain. The
/// three-spin instance reproduces the printed six equations term by term.
pub fn echo_system(
    x: &[BigRational],
    e: &[BigRational],
    t: &BigRational,
) -> (Vec<Vec<BigRational>>, Vec<BigRational>) {
    let n = x.len();
    let zero = BigRational::zero();
    let one = BigRational::from_integer(BigInt::from(1));
    let mut a = vec![vec![zero.clone(); 2 * n]; 2 * n];
    let mut b = vec![zero.clone(); 2 * n];
    // first echo round: before = sum_{j>i} x_j + w_1 + sum_{j<i} (e_j + t)
    //                   after  = sum_{j>i} (t + e_j) + t + sum_{j<i} (x_j + w_{j+1})
    for i in 1..=n {
        let r = i - 1;
        let mut lhs = zero.clone();
        for j in (i + 1)..=n {
            lhs += &x[j - 1];
        }
        a[r][0] += &one;
        for j in 1..i {
            lhs += &e[j - 1] + t;
        }
        let mut rhs = zero.clone();
        for j in (i + 1)..=n {
            rhs += t + &e[j - 1];
        }
        rhs += t;
        for j in 1..i {
            rhs += &x[j - 1];
            a[r][j] -= &one;
        }
        b[r] = rhs - lhs;
    }
    // second echo round: before = sum_{j>i} (w_j + x_j) + sum_{j<i} (e_j + w_{n+j})
    //                    after  = w_{n+i} + sum_{j>i} (e_j + w_{n+j}) + sum_{j<i} x_j
    for i in 1..=n {
        let r = n + i - 1;
        let mut lhs = zero.clone();
        for j in (i + 1)..=n {
            a[r][j - 1] += &one;
            lhs += &x[j - 1];
        }
        for j in 1..i {
            lhs += &e[j - 1];
            a[r][n + j - 1] += &one;
        }
        let mut rhs = zero.clone();
        a[r][n + i - 1] -= &one;
        for j in (i + 1)..=n {
            rhs += &e[j - 1];
            a[r][n + j - 1] -= &one;
        }
        for j in 1..i {
            rhs += &x[j - 1];
        }
        b[r] = rhs - lhs;
    }
    (a, b)
}

#[allow(clippy::needless_range_loop)]
fn solve_exact(
    mut a: Vec<Vec<BigRational>>,
    mut b: Vec<BigRational>,
) -> Result<Vec<BigRational>, SchedulerError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or(SchedulerError::SingularSystem)?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pv = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v /= &pv;
        }
        b[col] /= &pv;
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for cidx in 0..n {
                    let sub = &f * &a[col][cidx];
                    a[r][cidx] -= sub;
                }
                let sub = &f * &b[col];
                b[r] -= sub;
            }
        }
    }
    Ok(b)
}

/// Solves the wait durations for the n-spin measurement sequence. If the
/// exact solution contains a negative wait, `spacing_t_us` is grown by a
/// factor 3/2 for up to 32 retries before reporting `Infeasible`.
pub fn solve_echo_timings(
    gate_durations_us: &[f64],
    echo_durations_us: &[f64],
    spacing_t_us: f64,
) -> Result<EchoTimings, SchedulerError> {
    let n = gate_durations_us.len();
    if n < 2 {
        return Err(SchedulerError::TooFewSpins(n));
    }
    assert_eq!(n, echo_durations_us.len(), "one echo duration per spin");
    let x: Vec<BigRational> = gate_durations_us.iter().copied().map(rat).collect();
    let e: Vec<BigRational> = echo_durations_us.iter().copied().map(rat).collect();
    let mut t = rat(spacing_t_us);
    let growth = BigRational::new(BigInt::from(3), BigInt::from(2));
    for _ in 0..32 {
        let (a, b) = echo_system(&x, &e, &t);
        let w = solve_exact(a, b)?;
        if w.iter().all(|v| !v.is_negative()) {
            let waits_us: Vec<f64> = w.iter().map(rational_to_f64).collect();
            let spacing_us = rational_to_f64(&t);
            return Ok(EchoTimings {
                waits_us,
                spacing_us,
            });
        }
        t *= &growth;
    }
    Err(SchedulerError::Infeasible)
}

fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().expect("duration fits in f64")
}

/// Emits the canonical timeline with assigned start times.
pub fn build_schedule(
    spin_labels: &[String],
    gate_durations_us: &[f64],
    echo_durations_us: &[f64],
    timings: &EchoTimings,
) -> PulseSchedule {
    let n = spin_labels.len();
    let mut ops = Vec::new();
    let mut cursor = 0.0f64;
    let mut push = |spin: &str, kind: OpKind, dur: f64, cursor: &mut f64| {
        ops.push(TimelineOp {
            spin: spin.to_string(),
            kind,
            duration_us: dur,
            start_us: *cursor,
        });
        *cursor += dur;
    };
    for j in 0..n {
        push(
            &spin_labels[j],
            OpKind::Gate,
            gate_durations_us[j],
            &mut cursor,
        );
    }
    push("electron", OpKind::Wait, timings.waits_us[0], &mut cursor);
    for j in 0..n {
        push(
            &spin_labels[j],
            OpKind::Echo,
            echo_durations_us[j],
            &mut cursor,
        );
        push("electron", OpKind::Wait, timings.spacing_us, &mut cursor);
    }
    for j in 0..n {
        push(
            &spin_labels[j],
            OpKind::Gate,
            gate_durations_us[j],
            &mut cursor,
        );
        if j + 1 < n {
            push(
                "electron",
                OpKind::Wait,
                timings.waits_us[j + 1],
                &mut cursor,
            );
        }
    }
    for j in 0..n {
        push(
            &spin_labels[j],
            OpKind::Echo,
            echo_durations_us[j],
            &mut cursor,
        );
        push(
            "electron",
            OpKind::Wait,
            timings.waits_us[n + j],
            &mut cursor,
        );
    }
    for j in 0..n {
        push(
            &spin_labels[j],
            OpKind::Gate,
            gate_durations_us[j],
            &mut cursor,
        );
    }
    let mut schedule = PulseSchedule {
        ops,
        refocus_residuals_us: Vec::new(),
    };
    if let Ok(res) = verify_refocus(&schedule) {
        schedule.refocus_residuals_us = res;
    }
    schedule
}

/// Checks the refocusing condition for every echo: the interval from the end
/// of the previous operation on that spin to the echo centre must equal the
/// interval from the echo centre to the start of the next operation on it.
pub fn verify_refocus(schedule: &PulseSchedule) -> Result<Vec<(String, f64)>, SchedulerError> {
    let mut residuals = Vec::new();
    let mut by_spin: std::collections::BTreeMap<&str, Vec<&TimelineOp>> =
        std::collections::BTreeMap::new();
    for op in &schedule.ops {
        if op.kind != OpKind::Wait {
            by_spin.entry(op.spin.as_str()).or_default().push(op);
        }
    }
    for (spin, ops) in by_spin {
        for (i, op) in ops.iter().enumerate() {
            if op.kind != OpKind::Echo {
                continue;
            }
            if i == 0 || i + 1 == ops.len() {
                return Err(SchedulerError::MalformedSchedule(format!(
                    "echo on {spin} lacks flanking operations"
                )));
            }
            let prev = ops[i - 1];
            let next = ops[i + 1];
            let center = op.start_us + op.duration_us / 2.0;
            let before = center - (prev.start_us + prev.duration_us);
            let after = next.start_us - center;
            residuals.push((spin.to_string(), before - after));
        }
    }
    Ok(residuals)
}

/// Largest integer period count n with t_pulse = n / f strictly shorter than
/// the window. `halve` selects the first/last-pulse count n (window tau);
/// interior pulses use 2n (window 2 tau). Returns (count, t_pulse in us).
pub fn rf_period_count(
    rf_freq_hz: f64,
    tau_us: f64,
    halve: bool,
) -> Result<(u64, f64), SchedulerError> {
    assert!(rf_freq_hz > 0.0, "rf_freq must be positive");
    let periods = tau_us * 1e-6 * rf_freq_hz;
    let mut n = periods.floor() as u64;
    if (n as f64 - periods).abs() < 1e-9 && n > 0 {
        n -= 1; // strict inequality at an exact multiple
    }
    if n == 0 {
        return Err(SchedulerError::NoValidCount { tau_us });
    }
    let count = if halve { n } else { 2 * n };
    let t_pulse_us = count as f64 / rf_freq_hz * 1e6;
    Ok((count, t_pulse_us))
}

/// Flat-top error-function pulse envelope. The printed form of this envelope
/// evaluates to 2 on the plateau; the constant offset here restores a
/// physical 0 -> 1 -> 0 shape:
/// f(t) = -erf(2(dt - t + t0)/dt)/2 - erf(2(dt + t - t0 - t_pulse)/dt)/2.
pub fn erf_envelope(
    time_us: f64,
    rise_us: f64,
    start_us: f64,
    length_us: f64,
) -> Result<f64, SchedulerError> {
    assert!(rise_us > 0.0, "rise time must be positive");
    if length_us <= 2.0 * rise_us {
        return Err(SchedulerError::InvalidShape { length_us, rise_us });
    }
    let a = 2.0 * (rise_us - time_us + start_us) / rise_us;
    let b = 2.0 * (rise_us + time_us - start_us - length_us) / rise_us;
    Ok(-0.5 * libm::erf(a) - 0.5 * libm::erf(b))
}
