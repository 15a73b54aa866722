//! Check that contracting `(dl/dy ⊗ h)` against the materialised Jacobian
//! of the `C` head equals the closed-form VJP of that head.

use crate::linalg;
use crate::ssm::{Activation, HeadParams};

use super::vjp::vjp_head;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub passed: bool,
    pub max_deviation: f64,
}

/// Tolerance used by [`outer_product_identity_check`].
pub const IDENTITY_TOL: f64 = 1e-12;

/// Forward-mode derivative of `φ(W x + b)` along `(dW, db)`.
fn jvp(head: &HeadParams, activation: Activation, x: &[f64], dw: &[f64], db: &[f64]) -> Vec<f64> {
    let u = linalg::mat_vec(&head.weight, head.out, head.inp, x);
    let du = linalg::mat_vec(dw, head.out, head.inp, x);
    u.iter()
        .zip(&head.bias)
        .zip(du.iter().zip(db))
        .map(|((u, b), (du, db))| {
            let s = activation.apply(u + b);
            activation.derivative_from_output(s) * (du + db)
        })
        .collect()
}

/// Jacobian of the head output (`out` rows) with respect to its flattened
/// parameters (weight then bias), one column per parameter.
pub fn head_jacobian(head: &HeadParams, activation: Activation, x: &[f64]) -> Vec<Vec<f64>> {
    let nw = head.weight.len();
    let mut dw = vec![0.0; nw];
    let mut db = vec![0.0; head.out];
    let mut cols = Vec::with_capacity(head.len());
    for j in 0..head.len() {
        if j < nw {
            dw[j] = 1.0;
        } else {
            db[j - nw] = 1.0;
        }
        cols.push(jvp(head, activation, x, &dw, &db));
        if j < nw {
            dw[j] = 0.0;
        } else {
            db[j - nw] = 0.0;
        }
    }
    cols
}

/// `head` is the `C` head (output `P x N`), `dl_dy` has length `P` and `h`
/// length `N`.
pub fn outer_product_identity_check(
    dl_dy: &[f64],
    h: &[f64],
    head: &HeadParams,
    activation: Activation,
    input: &[f64],
) -> IdentityCheck {
    let m = linalg::outer(dl_dy, h);
    let Ok(vjp) = vjp_head(head, activation, input, &m) else {
        return IdentityCheck { passed: false, max_deviation: f64::INFINITY };
    };
    let jac = head_jacobian(head, activation, input);
    let max_deviation = jac
        .iter()
        .map(|col| linalg::dot(&m, col))
        .zip(vjp.weight.iter().chain(&vjp.bias))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    IdentityCheck {
        passed: max_deviation <= IDENTITY_TOL,
        max_deviation,
    }
}
