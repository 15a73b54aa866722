use crate::error::{Error, Result};
use crate::ssm::{ForwardTrace, ModelDims, SsmVariant};

/// Read access to the tensors the gradient phase consumes. Indices are
/// 1-based (`t = 0` is valid for [`TraceView::state`]).
///
/// Implementors may refuse reads they do not hold; the distributed shards
/// use this to enforce tensor locality.
pub trait TraceView {
    fn dims(&self) -> ModelDims;
    fn variant(&self) -> SsmVariant;
    /// `A_k^t`.
    fn transition(&self, t: usize, k: usize) -> Result<&[f64]>;
    /// `C_k^t`.
    fn readout(&self, t: usize, k: usize) -> Result<&[f64]>;
    /// `h_k^t`, `t = 0..T`.
    fn state(&self, t: usize, k: usize) -> Result<&[f64]>;
    /// `ŷ_{k-1}^t`.
    fn layer_input(&self, t: usize, k: usize) -> Result<&[f64]>;
    /// `dl(o^t)/dy_K^t`.
    fn output_cotangent(&self, t: usize) -> Result<&[f64]>;
}

fn check(what: &str, t: usize, k: usize, t_lo: usize, dims: &ModelDims) -> Result<()> {
    if k == 0 || k > dims.k || t < t_lo || t > dims.t {
        return Err(Error::Index(format!("{what} at t={t} k={k} outside the trace")));
    }
    Ok(())
}

impl TraceView for ForwardTrace {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn variant(&self) -> SsmVariant {
        self.variant
    }

    fn transition(&self, t: usize, k: usize) -> Result<&[f64]> {
        check("A", t, k, 1, &self.dims)?;
        Ok(ForwardTrace::transition(self, t, k))
    }

    fn readout(&self, t: usize, k: usize) -> Result<&[f64]> {
        check("C", t, k, 1, &self.dims)?;
        Ok(ForwardTrace::readout(self, t, k))
    }

    fn state(&self, t: usize, k: usize) -> Result<&[f64]> {
        check("h", t, k, 0, &self.dims)?;
        Ok(ForwardTrace::state(self, t, k))
    }

    fn layer_input(&self, t: usize, k: usize) -> Result<&[f64]> {
        check("layer input", t, k, 1, &self.dims)?;
        Ok(ForwardTrace::layer_input(self, t, k))
    }

    fn output_cotangent(&self, t: usize) -> Result<&[f64]> {
        check("cotangent", t, 1, 1, &self.dims)?;
        Ok(ForwardTrace::output_cotangent(self, t))
    }
}
