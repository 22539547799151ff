//! The unperturbed dispersion lattice of the straight waveguide: values
//! M_q + (eta + 2 pi m)^2 over cross-section modes q and axial branch m,
//! reordered into ascending band functions, plus the gap precondition
//! M_1 + pi^2 < M_2.

use crate::cross_modes::ModeSet;
use std::f64::consts::PI;

/// Wrap an arbitrary real quasi-momentum into [0, 2 pi).
pub fn wrap_eta(eta: f64) -> f64 {
    let t = eta.rem_euclid(2.0 * PI);
    if t == 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Lattice eigenvalue for cross-section mode `q` (1-based) and axial index `m`.
pub fn lattice_eigenvalue(ms: &ModeSet, q: usize, m: i64, eta: f64) -> f64 {
    let mq = ms.eigenvalue(q).expect("mode index within ModeSet");
    let beta = eta + 2.0 * PI * m as f64;
    mq + beta * beta
}

/// First `k` lattice values at `eta`, ascending, with their (q, m) labels.
/// Ties are broken by (q, m) lexicographic order. The axial window is widened
/// automatically until no omitted |m| could enter the first `k` values.
pub fn ordered_spectrum(ms: &ModeSet, eta: f64, k: usize) -> Vec<(f64, usize, i64)> {
    assert!(k >= 1);
    let eta = wrap_eta(eta);
    let mut m_max: i64 = 2;
    loop {
        let mut vals = Vec::with_capacity(ms.count() * (2 * m_max as usize + 1));
        for q in 1..=ms.count() {
            for m in -m_max..=m_max {
                vals.push((lattice_eigenvalue(ms, q, m, eta), q, m));
            }
        }
        vals.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        vals.truncate(k);
        // every omitted |m| > m_max value is at least (2 pi (m_max - 1))^2
        let guard = (2.0 * PI * (m_max - 1) as f64).powi(2);
        if let Some(last) = vals.last() {
            if guard > last.0 || m_max > 1_000_000 {
                return vals;
            }
        }
        m_max *= 2;
    }
}

/// The gap precondition M_1 + pi^2 < M_2 and its margin M_2 - M_1 - pi^2.
pub fn gap_precondition(ms: &ModeSet) -> (bool, f64) {
    let m1 = ms.eigenvalues()[0];
    let m2 = ms.eigenvalues()[1];
    let margin = m2 - m1 - PI * PI;
    (margin > 0.0, margin)
}

/// The two lowest dispersion curves (M_1 + eta^2, M_1 + (eta - 2 pi)^2).
pub fn unperturbed_curves(ms: &ModeSet, eta: f64) -> (f64, f64) {
    let eta = wrap_eta(eta);
    let m1 = ms.eigenvalues()[0];
    (m1 + eta * eta, m1 + (eta - 2.0 * PI) * (eta - 2.0 * PI))
}

/// Ordered rank (1-based) of the lattice label (q, m) at `eta`: the position
/// this branch occupies in the ascending spectrum. Used to pick which
/// perturbed eigenvalue tracks which branch.
pub fn branch_rank(ms: &ModeSet, eta: f64, q: usize, m: i64) -> usize {
    let target = lattice_eigenvalue(ms, q, m, wrap_eta(eta));
    let window = 64usize;
    let spec = ordered_spectrum(ms, eta, window);
    for (i, &(v, sq, sm)) in spec.iter().enumerate() {
        if sq == q && sm == m {
            debug_assert_eq!(v, target);
            return i + 1;
        }
    }
    panic!("branch (q={q}, m={m}) not within the first {window} lattice values");
}
