//! Dense complex matrix helpers for small register Hilbert spaces.
//!
//! Everything operates on `ndarray::Array2<Complex64>`. Dimensions stay small
//! (2x2 segment propagators up to 256x256 density matrices for an 8-qubit
//! register), so no BLAS backend is needed.

use ndarray::Array2;
use num_complex::Complex64;

pub type CMat = Array2<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> CMat {
    Array2::from_diag_elem(dim, Complex64::new(1.0, 0.0))
}

pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[[i, j]];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[[i * rb + k, j * cb + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

pub fn kron_all(mats: &[&CMat]) -> CMat {
    let mut out = identity(1);
    for m in mats {
        out = kron(&out, m);
    }
    out
}

/// Largest entrywise absolute difference.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest entrywise absolute difference after aligning `a`'s global phase to
/// `b` on `b`'s largest-magnitude entry.
pub fn max_abs_diff_up_to_phase(a: &CMat, b: &CMat) -> f64 {
    let mut idx = (0, 0);
    let mut best = -1.0;
    for ((i, j), v) in b.indexed_iter() {
        if v.norm() > best {
            best = v.norm();
            idx = (i, j);
        }
    }
    let a_ref = a[[idx.0, idx.1]];
    if a_ref.norm() < 1e-300 {
        return max_abs_diff(a, b);
    }
    let phase = b[[idx.0, idx.1]] / a_ref;
    let phase = phase / phase.norm();
    let aligned = a.mapv(|z| z * phase);
    max_abs_diff(&aligned, b)
}

/// exp(-i t (ax Ix + ay Iy + az Iz)) for spin-1/2 operators I = sigma/2.
///
/// Exact via the Pauli decomposition; coefficients are angular frequencies.
pub fn su2_exp(ax: f64, ay: f64, az: f64, t: f64) -> CMat {
    let half = 0.5 * (ax * ax + ay * ay + az * az).sqrt();
    let mut out = Array2::zeros((2, 2));
    if half < 1e-300 {
        out[[0, 0]] = c(1.0, 0.0);
        out[[1, 1]] = c(1.0, 0.0);
        return out;
    }
    let (nx, ny, nz) = (ax / (2.0 * half), ay / (2.0 * half), az / (2.0 * half));
    let (cos_a, sin_a) = ((half * t).cos(), (half * t).sin());
    // cos I - i sin (n . sigma)
    out[[0, 0]] = c(cos_a, -sin_a * nz);
    out[[0, 1]] = c(-sin_a * ny, -sin_a * nx);
    out[[1, 0]] = c(sin_a * ny, -sin_a * nx);
    out[[1, 1]] = c(cos_a, sin_a * nz);
    out
}

/// Rotation by `angle` about the equatorial axis at azimuth `axis_phase`:
/// exp(-i angle (cos phi Ix + sin phi Iy)).
pub fn rot_equatorial(axis_phase: f64, angle: f64) -> CMat {
    su2_exp(axis_phase.cos(), axis_phase.sin(), 0.0, angle)
}

/// Rotation by `angle` about z: exp(-i angle Iz).
pub fn rot_z(angle: f64) -> CMat {
    su2_exp(0.0, 0.0, 1.0, angle)
}

/// Rotation by `angle` about y: exp(-i angle Iy).
pub fn rot_y(angle: f64) -> CMat {
    su2_exp(0.0, 1.0, 0.0, angle)
}

pub fn pauli(which: char) -> CMat {
    let mut m = Array2::zeros((2, 2));
    match which {
        'I' => {
            m[[0, 0]] = c(1.0, 0.0);
            m[[1, 1]] = c(1.0, 0.0);
        }
        'X' => {
            m[[0, 1]] = c(1.0, 0.0);
            m[[1, 0]] = c(1.0, 0.0);
        }
        'Y' => {
            m[[0, 1]] = c(0.0, -1.0);
            m[[1, 0]] = c(0.0, 1.0);
        }
        'Z' => {
            m[[0, 0]] = c(1.0, 0.0);
            m[[1, 1]] = c(-1.0, 0.0);
        }
        _ => panic!("unknown Pauli label {which}"),
    }
    m
}

/// Embed a single-qubit operator on qubit `q` of an `n`-qubit register.
/// Qubit 0 is the most significant bit of the basis index.
pub fn embed1(op: &CMat, q: usize, n: usize) -> CMat {
    let left = identity(1 << q);
    let right = identity(1 << (n - q - 1));
    kron(&kron(&left, op), &right)
}

/// Embed a list of single-qubit operators on distinct qubits.
pub fn embed_many(ops: &[(usize, &CMat)], n: usize) -> CMat {
    let id = identity(2);
    let mats: Vec<&CMat> = (0..n)
        .map(|q| {
            ops.iter()
                .find(|(i, _)| *i == q)
                .map(|(_, m)| *m)
                .unwrap_or(&id)
        })
        .collect();
    kron_all(&mats)
}

/// Partial trace keeping qubits `keep` (in their original order).
pub fn partial_trace(rho: &CMat, n: usize, keep: &[usize]) -> CMat {
    let k = keep.len();
    let dim_out = 1 << k;
    let mut out: CMat = Array2::zeros((dim_out, dim_out));
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    let dim_tr = 1 << traced.len();
    // bit q of the full index sits at position n-1-q
    let assemble = |kept_bits: usize, traced_bits: usize| -> usize {
        let mut idx = 0usize;
        for (pos, &q) in keep.iter().enumerate() {
            let bit = (kept_bits >> (k - 1 - pos)) & 1;
            idx |= bit << (n - 1 - q);
        }
        for (pos, &q) in traced.iter().enumerate() {
            let bit = (traced_bits >> (traced.len().saturating_sub(1) - pos)) & 1;
            idx |= bit << (n - 1 - q);
        }
        idx
    };
    for a in 0..dim_out {
        for b in 0..dim_out {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..dim_tr {
                acc += rho[[assemble(a, t), assemble(b, t)]];
            }
            out[[a, b]] = acc;
        }
    }
    out
}

/// In-place rho -> U rho U^dagger for a single-qubit unitary on qubit `q`.
/// O(d^2) via bit-index pairing; qubit 0 is the most significant bit.
pub fn apply_unitary_one(rho: &mut CMat, q: usize, n: usize, u: &CMat) {
    let dim = 1usize << n;
    let mask = 1usize << (n - 1 - q);
    let (u00, u01, u10, u11) = (u[[0, 0]], u[[0, 1]], u[[1, 0]], u[[1, 1]]);
    // left multiply
    for r0 in 0..dim {
        if r0 & mask != 0 {
            continue;
        }
        let r1 = r0 | mask;
        for col in 0..dim {
            let a = rho[[r0, col]];
            let b = rho[[r1, col]];
            rho[[r0, col]] = u00 * a + u01 * b;
            rho[[r1, col]] = u10 * a + u11 * b;
        }
    }
    // right multiply by U^dagger
    let (d00, d01, d10, d11) = (u00.conj(), u10.conj(), u01.conj(), u11.conj());
    for c0 in 0..dim {
        if c0 & mask != 0 {
            continue;
        }
        let c1 = c0 | mask;
        for row in 0..dim {
            let a = rho[[row, c0]];
            let b = rho[[row, c1]];
            rho[[row, c0]] = a * d00 + b * d10;
            rho[[row, c1]] = a * d01 + b * d11;
        }
    }
}

/// In-place rho -> U rho U^dagger for a two-qubit unitary on (q1, q2); the
/// 4x4 matrix is ordered with q1 as the high bit.
pub fn apply_unitary_two(rho: &mut CMat, q1: usize, q2: usize, n: usize, u: &CMat) {
    let dim = 1usize << n;
    let m1 = 1usize << (n - 1 - q1);
    let m2 = 1usize << (n - 1 - q2);
    let idx = |base: usize, k: usize| {
        base | if k & 2 != 0 { m1 } else { 0 } | if k & 1 != 0 { m2 } else { 0 }
    };
    for base in 0..dim {
        if base & (m1 | m2) != 0 {
            continue;
        }
        for col in 0..dim {
            let vals: [Complex64; 4] = std::array::from_fn(|k| rho[[idx(base, k), col]]);
            for r in 0..4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += u[[r, k]] * vals[k];
                }
                rho[[idx(base, r), col]] = acc;
            }
        }
    }
    for base in 0..dim {
        if base & (m1 | m2) != 0 {
            continue;
        }
        for row in 0..dim {
            let vals: [Complex64; 4] = std::array::from_fn(|k| rho[[row, idx(base, k)]]);
            for c in 0..4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += vals[k] * u[[c, k]].conj();
                }
                rho[[row, idx(base, c)]] = acc;
            }
        }
    }
}

pub fn expectation(op: &CMat, rho: &CMat) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..rho.nrows() {
        for j in 0..rho.ncols() {
            acc += op[[i, j]] * rho[[j, i]];
        }
    }
    acc.re
}

pub fn sandwich(u: &CMat, rho: &CMat) -> CMat {
    u.dot(rho).dot(&dagger(u))
}
