//! Walk coordinates for the Metropolis moves.
//!
//! Each exposure's `log sigma_j` is replaced by `log tau_j` with
//! `tau_j^2 = sigma_j^2 + v delta_j^2`, the residual variance given the
//! instruments. It is well identified, and the ridge along which the
//! confounder loading trades off against the noise becomes straight.

/// `(delta index, log sigma index)` for each exposure.
pub(crate) type Slots = [(usize, usize)];

pub(crate) fn to_walk(theta: &[f64], slots: &Slots, v: f64) -> Vec<f64> {
    let mut phi = theta.to_vec();
    for &(d, s) in slots {
        phi[s] = 0.5 * ((2.0 * theta[s]).exp() + v * theta[d] * theta[d]).ln();
    }
    phi
}

/// `None` outside the support `v delta_j^2 < tau_j^2`.
pub(crate) fn from_walk(phi: &[f64], slots: &Slots, v: f64) -> Option<Vec<f64>> {
    let mut theta = phi.to_vec();
    for &(d, s) in slots {
        let s2 = (2.0 * phi[s]).exp() - v * phi[d] * phi[d];
        if !(s2 > 0.0) {
            return None;
        }
        theta[s] = 0.5 * s2.ln();
    }
    Some(theta)
}

/// `log |d theta / d phi| = sum_j 2 (log tau_j - log sigma_j)`.
pub(crate) fn log_jacobian(phi: &[f64], theta: &[f64], slots: &Slots) -> f64 {
    slots.iter().map(|&(_, s)| 2.0 * (phi[s] - theta[s])).sum()
}

/// Flips the sign of every loading; an involution that leaves each `tau_j`
/// alone.
pub(crate) fn flip(phi: &[f64], slots: &Slots) -> Vec<f64> {
    let mut out = phi.to_vec();
    for &(d, _) in slots {
        out[d] = -out[d];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_trip_and_support() {
        let slots = [(0, 2), (1, 3)];
        let theta = [0.5, -1.2, 0.1, -0.3];
        let back = from_walk(&to_walk(&theta, &slots, 0.1), &slots, 0.1).unwrap();
        for (a, b) in back.iter().zip(theta) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        // tau = 1 with v delta^2 = 1.6 has no valid sigma
        assert!(from_walk(&[4.0, 0.0, 0.0, 0.0], &slots, 0.1).is_none());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let slots = [(0, 1)];
        let v = 0.3;
        let phi = [0.8, 0.2];
        let theta = from_walk(&phi, &slots, v).unwrap();
        let h = 1e-6;
        let d = |a: usize, b: usize| {
            let mut up = phi;
            up[a] += h;
            let mut dn = phi;
            dn[a] -= h;
            (from_walk(&up, &slots, v).unwrap()[b] - from_walk(&dn, &slots, v).unwrap()[b]) / (2.0 * h)
        };
        let det = d(0, 0) * d(1, 1) - d(0, 1) * d(1, 0);
        assert_abs_diff_eq!(log_jacobian(&phi, &theta, &slots), det.abs().ln(), epsilon = 1e-6);
    }
}
