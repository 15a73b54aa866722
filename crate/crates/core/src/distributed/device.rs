//! Per-device state and the messages devices exchange.

use std::fmt;
use std::ops::RangeInclusive;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::adjoint::TraceView;
use crate::error::{Error, Result};
use crate::ssm::{ForwardTrace, LayerParams, LossSpec, ModelDims, SsmVariant};

use super::plan::{Placement, Tensor};

/// Language-head state kept by the last device.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    pub omega: Vec<f64>,
    pub loss: LossSpec,
    pub y_final: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub total_loss: f64,
}

/// Everything one simulated device holds after the forward pass.
/// Reads go through [`TraceView`], which refuses tensors outside the
/// device's placement and counts each refusal.
#[derive(Debug)]
pub struct DeviceShard {
    pub device: usize,
    pub dims: ModelDims,
    pub variant: SsmVariant,
    pub layers: RangeInclusive<usize>,
    pub placement: Vec<Placement>,
    /// Hosted layer parameters, index `k - first hosted layer`.
    pub params: Vec<LayerParams>,
    /// `A_k^t` for `t = 2..T`.
    pub(crate) a: Vec<Vec<Vec<f64>>>,
    /// `C_k^t` for `t = 1..T`.
    pub(crate) c: Vec<Vec<Vec<f64>>>,
    /// `h_k^t` for `t = 1..T`.
    pub(crate) h: Vec<Vec<Vec<f64>>>,
    /// Inputs of hosted layers, `ŷ_{k-1}^t` for `t = 1..T`.
    pub(crate) y_hat: Vec<Vec<Vec<f64>>>,
    pub(crate) cotangent: Vec<Vec<f64>>,
    pub(crate) h0: Vec<f64>,
    pub head: Option<HeadState>,
    violations: AtomicUsize,
}

/// Stored scalar counts of one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceMemory {
    pub device: usize,
    pub layers: RangeInclusive<usize>,
    /// Placement-table tensors: `A`, `C`, `h`, `ŷ` and the cotangents.
    pub trace_scalars: usize,
    pub param_scalars: usize,
    /// `Ω`, `y_K` and logits on the last device.
    pub head_scalars: usize,
}

fn count(v: &[Vec<Vec<f64>>]) -> usize {
    v.iter().flatten().map(Vec::len).sum()
}

impl DeviceShard {
    pub(crate) fn new(
        device: usize,
        dims: ModelDims,
        variant: SsmVariant,
        layers: RangeInclusive<usize>,
        placement: Vec<Placement>,
        params: Vec<LayerParams>,
    ) -> Self {
        let hosted = layers.clone().count();
        DeviceShard {
            device,
            dims,
            variant,
            layers,
            placement,
            params,
            a: Vec::with_capacity(hosted),
            c: Vec::with_capacity(hosted),
            h: Vec::with_capacity(hosted),
            y_hat: Vec::with_capacity(hosted),
            cotangent: Vec::new(),
            h0: vec![0.0; dims.n],
            head: None,
            violations: AtomicUsize::new(0),
        }
    }

    pub fn first_layer(&self) -> usize {
        *self.layers.start()
    }

    /// Parameters of hosted layer `k`.
    pub fn layer(&self, k: usize) -> Result<&LayerParams> {
        self.check(Tensor::Params, k, 0)?;
        Ok(&self.params[k - self.first_layer()])
    }

    /// Number of refused reads so far.
    pub fn locality_violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }

    fn check(&self, tensor: Tensor, k: usize, t: usize) -> Result<()> {
        let row = self.placement.iter().find(|p| p.tensor == tensor).expect("every tensor has a row");
        if row.contains(k, t) && (t <= self.dims.t) {
            Ok(())
        } else {
            self.violations.fetch_add(1, Ordering::Relaxed);
            Err(Error::Locality {
                tensor: tensor.name(),
                device: self.device,
                k,
                t,
            })
        }
    }

    fn slot(&self, k: usize) -> usize {
        k - self.first_layer()
    }

    pub fn memory(&self) -> DeviceMemory {
        let head_scalars = self.head.as_ref().map_or(0, |h| {
            h.omega.len() + h.y_final.iter().map(Vec::len).sum::<usize>() + h.logits.iter().map(Vec::len).sum::<usize>()
        });
        DeviceMemory {
            device: self.device,
            layers: self.layers.clone(),
            trace_scalars: count(&self.a)
                + count(&self.c)
                + count(&self.h)
                + count(&self.y_hat)
                + self.cotangent.iter().map(Vec::len).sum::<usize>(),
            param_scalars: self.params.iter().map(LayerParams::len).sum(),
            head_scalars,
        }
    }

    /// Every tensor this device stores equals the corresponding entry of
    /// the single-device trace, bit for bit.
    pub fn matches(&self, trace: &ForwardTrace) -> bool {
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        let dims = self.dims;
        for k in self.layers.clone() {
            let s = self.slot(k);
            for t in 1..=dims.t {
                if !same(&self.c[s][t - 1], trace.readout(t, k))
                    || !same(&self.h[s][t - 1], trace.state(t, k))
                    || !same(&self.y_hat[s][t - 1], trace.layer_input(t, k))
                    || (t >= 2 && !same(&self.a[s][t - 2], trace.transition(t, k)))
                {
                    return false;
                }
            }
        }
        let cot_ok = self.cotangent.len() == dims.t
            && (1..=dims.t).all(|t| same(&self.cotangent[t - 1], trace.output_cotangent(t)));
        let head_ok = self.head.as_ref().is_none_or(|h| {
            h.total_loss.to_bits() == trace.loss.to_bits()
                && h.y_final.iter().zip(&trace.y_final).all(|(a, b)| same(a, b))
                && h.logits.iter().zip(&trace.logits).all(|(a, b)| same(a, b))
        });
        cot_ok && head_ok
    }
}

impl TraceView for DeviceShard {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn variant(&self) -> SsmVariant {
        self.variant
    }

    fn transition(&self, t: usize, k: usize) -> Result<&[f64]> {
        self.check(Tensor::Transition, k, t)?;
        Ok(&self.a[self.slot(k)][t - 2])
    }

    fn readout(&self, t: usize, k: usize) -> Result<&[f64]> {
        self.check(Tensor::Readout, k, t)?;
        Ok(&self.c[self.slot(k)][t - 1])
    }

    fn state(&self, t: usize, k: usize) -> Result<&[f64]> {
        if t == 0 {
            // h^0 is a fixed constant known to every device hosting layer k.
            self.check(Tensor::State, k, 1)?;
            return Ok(&self.h0);
        }
        self.check(Tensor::State, k, t)?;
        Ok(&self.h[self.slot(k)][t - 1])
    }

    fn layer_input(&self, t: usize, k: usize) -> Result<&[f64]> {
        self.check(Tensor::LayerInput, k - 1, t)?;
        Ok(&self.y_hat[self.slot(k)][t - 1])
    }

    fn output_cotangent(&self, t: usize) -> Result<&[f64]> {
        self.check(Tensor::Cotangent, 0, t)?;
        self.cotangent
            .get(t - 1)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Protocol(format!("device {} has no cotangent for t={t}", self.device)))
    }
}

/// Messages between devices.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceMsg {
    /// Residual stream and normalised stream at the block boundary.
    BoundaryActivations {
        source: usize,
        destination: usize,
        y: Vec<Vec<f64>>,
        y_hat: Vec<Vec<f64>>,
    },
    /// `dl/dy_K^t` for every `t`, from the last device.
    CotangentBroadcast {
        source: usize,
        cotangent: Arc<Vec<Vec<f64>>>,
    },
    /// The sender stopped early; receivers must not wait for more.
    Done { source: usize },
}

impl DeviceMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            DeviceMsg::BoundaryActivations { .. } => "BoundaryActivations",
            DeviceMsg::CotangentBroadcast { .. } => "CotangentBroadcast",
            DeviceMsg::Done { .. } => "Done",
        }
    }

    pub fn source(&self) -> usize {
        match self {
            DeviceMsg::BoundaryActivations { source, .. }
            | DeviceMsg::CotangentBroadcast { source, .. }
            | DeviceMsg::Done { source } => *source,
        }
    }

    fn scalars(&self) -> usize {
        let n = |v: &Vec<Vec<f64>>| v.iter().map(Vec::len).sum::<usize>();
        match self {
            DeviceMsg::BoundaryActivations { y, y_hat, .. } => n(y) + n(y_hat),
            DeviceMsg::CotangentBroadcast { cotangent, .. } => n(cotangent),
            DeviceMsg::Done { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Device(usize),
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub kind: &'static str,
    pub source: usize,
    pub destination: Destination,
    pub scalars: usize,
}

impl fmt::Display for MessageRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.destination {
            Destination::Device(d) => write!(f, "{} {} -> {} scalars={}", self.kind, self.source, d, self.scalars),
            Destination::All => write!(f, "{} {} -> all scalars={}", self.kind, self.source, self.scalars),
        }
    }
}

/// Append-only record of sent messages, shared by all devices.
#[derive(Debug, Clone, Default)]
pub struct MessageLog(Arc<Mutex<Vec<MessageRecord>>>);

impl MessageLog {
    pub fn record(&self, msg: &DeviceMsg, destination: Destination) {
        let rec = MessageRecord {
            kind: msg.kind(),
            source: msg.source(),
            destination,
            scalars: msg.scalars(),
        };
        self.0.lock().expect("log lock").push(rec);
    }

    pub fn records(&self) -> Vec<MessageRecord> {
        self.0.lock().expect("log lock").clone()
    }
}

/// One line per message.
pub fn render_log(records: &[MessageRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

/// Each sequence must log `Υ − 1` boundary transfers `1→2, …, Υ−1→Υ`
/// followed by a single broadcast from device `Υ`.
pub fn protocol_conforms(records: &[MessageRecord], upsilon: usize) -> bool {
    if records.is_empty() || !records.len().is_multiple_of(upsilon) {
        return false;
    }
    records.chunks(upsilon).all(|seq| {
        let (last, boundaries) = seq.split_last().expect("non-empty");
        boundaries.iter().enumerate().all(|(i, r)| {
            r.kind == "BoundaryActivations" && r.source == i + 1 && r.destination == Destination::Device(i + 2)
        }) && last.kind == "CotangentBroadcast"
            && last.source == upsilon
            && last.destination == Destination::All
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(kind: &'static str, source: usize, destination: Destination) -> MessageRecord {
        MessageRecord {
            kind,
            source,
            destination,
            scalars: 0,
        }
    }

    #[test]
    fn protocol_pattern() {
        let good = vec![
            rec("BoundaryActivations", 1, Destination::Device(2)),
            rec("BoundaryActivations", 2, Destination::Device(3)),
            rec("CotangentBroadcast", 3, Destination::All),
        ];
        assert!(protocol_conforms(&good, 3));
        assert!(protocol_conforms(&[good.clone(), good.clone()].concat(), 3));
        let mut swapped = good.clone();
        swapped.swap(0, 1);
        assert!(!protocol_conforms(&swapped, 3));
        assert!(!protocol_conforms(&good[..2], 3));
        assert!(protocol_conforms(&[rec("CotangentBroadcast", 1, Destination::All)], 1));
    }

    #[test]
    fn log_lines() {
        let log = MessageLog::default();
        let msg = DeviceMsg::CotangentBroadcast {
            source: 2,
            cotangent: Arc::new(vec![vec![0.0; 3]; 2]),
        };
        log.record(&msg, Destination::All);
        assert_eq!(render_log(&log.records()), "CotangentBroadcast 2 -> all scalars=6\n");
    }
}
