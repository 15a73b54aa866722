//! Adjoint states `λ^{t,τ} = C^t A^t A^{t-1} ⋯ A^{τ+1}` for one `(t, k)`.

use crate::error::{check_len, Error, Result, Site};
use crate::linalg;
use crate::ssm::StateKind;

/// Adjoint states for one token `t` and layer `k` over the window
/// `τ = window.0 ..= window.1` (with `window.1 == t`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBatch {
    pub t: usize,
    pub k: usize,
    pub window: (usize, usize),
    /// `ζ_τ = A^t ⋯ A^{τ+1}` in ascending `τ`; `ζ_t` is the identity.
    /// `N x N` matrices for unstructured transitions, `N`-vectors for
    /// diagonal ones, single scalars for the scalar variant.
    pub zeta: Vec<Vec<f64>>,
    /// `λ^{t,τ} = C^t ζ_τ`, each `P x N`, ascending `τ`.
    pub lambda: Vec<Vec<f64>>,
}

impl AdjointBatch {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn taus(&self) -> std::ops::RangeInclusive<usize> {
        self.window.0..=self.window.1
    }

    pub fn lambda_at(&self, tau: usize) -> &[f64] {
        &self.lambda[tau - self.window.0]
    }

    pub fn zeta_at(&self, tau: usize) -> &[f64] {
        &self.zeta[tau - self.window.0]
    }
}

/// First `τ` whose adjoint state is kept for token `t` with truncation `tbar`.
pub fn window_start(t: usize, tbar: usize) -> usize {
    (t + 1).saturating_sub(tbar).max(1)
}

/// Index range of the transitions needed for token `t`: `max(2, t+2-tbar) ..= t`.
pub fn transition_range(t: usize, tbar: usize) -> std::ops::RangeInclusive<usize> {
    (window_start(t, tbar) + 1)..=t
}

/// Builds the cumulative products right to left, then left-multiplies by
/// `C^t`. `transitions[j]` is `A^{lo + j}` for the range returned by
/// [`transition_range`].
#[allow(clippy::too_many_arguments)]
pub fn compute_adjoint_states(
    t: usize,
    k: usize,
    tbar: usize,
    kind: StateKind,
    n: usize,
    p: usize,
    readout: &[f64],
    transitions: &[&[f64]],
) -> Result<AdjointBatch> {
    if tbar == 0 {
        return Err(Error::Config("truncation length must be at least 1".into()));
    }
    if t == 0 {
        return Err(Error::Index("token index starts at 1".into()));
    }
    check_len("C^t", p * n, readout.len())?;
    let range = transition_range(t, tbar);
    let needed = range.clone().count();
    if transitions.len() < needed {
        return Err(Error::Index(format!(
            "transition window for t={t} k={k} holds {} of {needed} matrices",
            transitions.len()
        )));
    }
    let a_len = match kind {
        StateKind::Unstructured => n * n,
        StateKind::Diagonal => n,
        StateKind::Scalar => 1,
    };
    let lo = *range.start();
    let tau_min = window_start(t, tbar);

    // Descending τ while building, reversed at the end.
    let mut zeta: Vec<Vec<f64>> = Vec::with_capacity(t - tau_min + 1);
    zeta.push(match kind {
        StateKind::Unstructured => linalg::identity(n),
        StateKind::Diagonal => vec![1.0; n],
        StateKind::Scalar => vec![1.0],
    });
    for tau in (tau_min + 1..=t).rev() {
        let a = transitions[tau - lo];
        check_len("A^τ", a_len, a.len())?;
        let prev = zeta.last().expect("non-empty");
        let next = match kind {
            StateKind::Unstructured => linalg::mat_mul(prev, a, n, n, n),
            StateKind::Diagonal | StateKind::Scalar => prev.iter().zip(a).map(|(z, a)| z * a).collect(),
        };
        if !linalg::all_finite(&next) {
            return Err(Error::NonFinite {
                stage: "adjoint product",
                site: Site::new(t, k).with_tau(tau - 1),
            });
        }
        zeta.push(next);
    }
    zeta.reverse();

    let lambda = zeta.iter().map(|z| readout_times(kind, readout, z, n, p)).collect();
    Ok(AdjointBatch {
        t,
        k,
        window: (tau_min, t),
        zeta,
        lambda,
    })
}

/// `C ζ` without materialising diagonal matrices.
fn readout_times(kind: StateKind, c: &[f64], zeta: &[f64], n: usize, p: usize) -> Vec<f64> {
    match kind {
        StateKind::Unstructured => linalg::mat_mul(c, zeta, p, n, n),
        StateKind::Diagonal => c
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(zeta).map(|(c, z)| c * z))
            .collect(),
        StateKind::Scalar => c.iter().map(|c| c * zeta[0]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_hand_products() {
        // A^2 = 0.25, A^3 = 0.5, C^3 = 2.
        let batch =
            compute_adjoint_states(3, 1, 3, StateKind::Diagonal, 1, 1, &[2.0], &[&[0.25], &[0.5]]).unwrap();
        assert_eq!(batch.window, (1, 3));
        assert_eq!(batch.lambda_at(3), &[2.0]);
        assert_eq!(batch.lambda_at(2), &[1.0]);
        assert_eq!(batch.lambda_at(1), &[0.25]);
    }

    #[test]
    fn empty_product_is_readout() {
        let c = [1.0, -2.0, 3.0, 0.5, 0.0, 7.0];
        let a = [9.0, 1.0, 2.0, 3.0];
        let batch = compute_adjoint_states(4, 2, 1, StateKind::Unstructured, 2, 3, &c, &[]).unwrap();
        assert_eq!(batch.window, (4, 4));
        assert_eq!(batch.lambda, vec![c.to_vec()]);
        let batch = compute_adjoint_states(2, 2, 5, StateKind::Unstructured, 2, 3, &c, &[&a]).unwrap();
        assert_eq!(batch.lambda_at(2), &c);
    }

    #[test]
    fn identity_transitions_keep_readout() {
        let c = [0.3, -1.2, 2.0, 0.7];
        let eye = linalg::identity(2);
        let window: Vec<&[f64]> = vec![&eye; 4];
        let batch = compute_adjoint_states(5, 1, 5, StateKind::Unstructured, 2, 2, &c, &window).unwrap();
        assert_eq!(batch.len(), 5);
        for tau in batch.taus() {
            assert_eq!(batch.lambda_at(tau), &c);
        }
    }

    #[test]
    fn short_window_is_an_index_error() {
        let err = compute_adjoint_states(3, 1, 3, StateKind::Scalar, 1, 1, &[1.0], &[&[0.5]]).unwrap_err();
        assert!(matches!(err, Error::Index(_)));
        assert!(compute_adjoint_states(3, 1, 0, StateKind::Scalar, 1, 1, &[1.0], &[]).is_err());
    }

    #[test]
    fn overflow_reports_tau() {
        let big = [1e300];
        let err =
            compute_adjoint_states(3, 2, 3, StateKind::Scalar, 1, 1, &[1.0], &[&big, &big]).unwrap_err();
        match err {
            Error::NonFinite { site, .. } => assert_eq!((site.t, site.k, site.tau), (3, 2, Some(1))),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn underflow_is_kept() {
        let tiny = [1e-200];
        let batch =
            compute_adjoint_states(3, 1, 3, StateKind::Scalar, 1, 1, &[1.0], &[&tiny, &tiny]).unwrap();
        assert_eq!(batch.lambda_at(1), &[0.0]);
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_start(5, 2), 4);
        assert_eq!(transition_range(5, 2), 5..=5);
        assert_eq!(window_start(1, 1), 1);
        assert_eq!(transition_range(1, 4).count(), 0);
        assert_eq!(transition_range(6, 100), 2..=6);
    }
}
