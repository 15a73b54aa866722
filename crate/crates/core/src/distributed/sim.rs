//! Pipelined forward pass and sharded gradient over simulated devices.
//!
//! Each device is a thread owning its [`DeviceShard`]; the only shared
//! state is the message log. The gradient phase needs no messages at all.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;

use crate::adjoint::engine::zero_like;
use crate::adjoint::{token_layer_contribution, GradVector, NetCounts, Truncation, VjpCounts};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::ssm::forward::{language_head, omega_gradient_from};
use crate::ssm::{normalize, ssm_layer_forward, LayerParams, LossSpec, StackParams};

use super::device::{Destination, DeviceMsg, DeviceShard, HeadState, MessageLog, MessageRecord};
use super::plan::{DevicePlan, ShardPlan};

/// How per-worker partial gradients are combined inside a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Every `Ξ_{t,k}` is kept and summed in ascending `t`.
    #[default]
    Deterministic,
    /// Workers accumulate privately; partials merge as workers finish.
    Fast,
}

#[derive(Debug)]
pub struct DistributedForward {
    pub shards: Vec<DeviceShard>,
    pub loss: f64,
    pub log: Vec<MessageRecord>,
}

fn tag_device(err: Error, device: usize) -> Error {
    match err {
        Error::NonFinite { stage, site } => Error::NonFinite {
            stage,
            site: site.on_device(device),
        },
        other => other,
    }
}

/// Picks the error that caused the others: anything but a protocol error
/// reported as a consequence of an upstream stop, lowest device first.
fn root_error(errors: Vec<Error>) -> Error {
    let mut errors = errors;
    let pos = errors.iter().position(|e| !matches!(e, Error::Protocol(_))).unwrap_or(0);
    errors.swap_remove(pos)
}

/// Residual stream and its normalised copy for every token.
type Boundary = (Vec<Vec<f64>>, Vec<Vec<f64>>);

pub(crate) fn receive_boundary(inbox: &Receiver<DeviceMsg>, device: usize) -> Result<Boundary> {
    match inbox.recv() {
        Ok(DeviceMsg::BoundaryActivations {
            source,
            destination,
            y,
            y_hat,
        }) if source + 1 == device && destination == device => Ok((y, y_hat)),
        Ok(DeviceMsg::Done { source }) => Err(Error::Protocol(format!(
            "device {device} was waiting for boundary activations but device {source} stopped"
        ))),
        Ok(other) => Err(Error::Protocol(format!(
            "device {device} expected boundary activations from device {}, got {} from device {}",
            device - 1,
            other.kind(),
            other.source()
        ))),
        Err(_) => Err(Error::Protocol(format!("device {device}: upstream channel closed"))),
    }
}

fn receive_cotangent(inbox: &Receiver<DeviceMsg>, device: usize, last: usize) -> Result<Arc<Vec<Vec<f64>>>> {
    match inbox.recv() {
        Ok(DeviceMsg::CotangentBroadcast { source, cotangent }) if source == last => Ok(cotangent),
        Ok(DeviceMsg::Done { source }) => Err(Error::Protocol(format!(
            "device {device} was waiting for cotangents but device {source} stopped"
        ))),
        Ok(other) => Err(Error::Protocol(format!(
            "device {device} expected the cotangent broadcast, got {} from device {}",
            other.kind(),
            other.source()
        ))),
        Err(_) => Err(Error::Protocol(format!("device {device}: broadcast channel closed"))),
    }
}

struct DeviceInputs<'a> {
    plan: &'a DevicePlan,
    upsilon: usize,
    shard: DeviceShard,
    tokens: Option<&'a [Vec<f64>]>,
    head: Option<(Vec<f64>, LossSpec)>,
    inbox: Receiver<DeviceMsg>,
    outboxes: Vec<Sender<DeviceMsg>>,
    log: MessageLog,
}

fn send(outboxes: &[Sender<DeviceMsg>], to: usize, msg: DeviceMsg) -> Result<()> {
    outboxes[to - 1]
        .send(msg)
        .map_err(|_| Error::Protocol(format!("device {to} is no longer receiving")))
}

fn run_device_forward(mut inp: DeviceInputs<'_>) -> Result<DeviceShard> {
    let device = inp.plan.device;
    let outcome = device_forward(&mut inp);
    if outcome.is_err() {
        // Unblock everyone who might still wait on this device.
        let stop = || DeviceMsg::Done { source: device };
        if inp.plan.holds_head {
            for d in (1..=inp.upsilon).filter(|&d| d != device) {
                let _ = send(&inp.outboxes, d, stop());
            }
        } else {
            let _ = send(&inp.outboxes, device + 1, stop());
        }
    }
    outcome.map(|()| inp.shard).map_err(|e| tag_device(e, device))
}

fn device_forward(inp: &mut DeviceInputs<'_>) -> Result<()> {
    let device = inp.plan.device;
    let shard = &mut inp.shard;
    let dims = shard.dims;
    let (mut stream, mut inputs) = match inp.tokens {
        Some(tokens) => (tokens.to_vec(), tokens.iter().map(|x| normalize(x)).collect::<Vec<_>>()),
        None => receive_boundary(&inp.inbox, device)?,
    };
    check_len("boundary activations", dims.t, stream.len())?;
    check_len("boundary activations", dims.t, inputs.len())?;

    for k in inp.plan.layers.clone() {
        let layer = &shard.params[k - shard.first_layer()];
        let out = ssm_layer_forward(layer, &shard.variant, &inputs, &shard.h0, k)?;
        for (y, y_tilde) in stream.iter_mut().zip(&out.y_tilde) {
            linalg::add_assign(y, y_tilde);
        }
        let next = stream.iter().map(|y| normalize(y)).collect();
        shard.y_hat.push(std::mem::replace(&mut inputs, next));
        shard.a.push(out.a.into_iter().skip(1).collect());
        shard.c.push(out.c);
        shard.h.push(out.h.into_iter().skip(1).collect());
    }

    if let Some((omega, loss)) = inp.head.take() {
        let head = language_head(&omega, &dims, &stream, &loss)?;
        let cotangent = Arc::new(head.cotangent);
        let msg = DeviceMsg::CotangentBroadcast {
            source: device,
            cotangent: Arc::clone(&cotangent),
        };
        inp.log.record(&msg, Destination::All);
        for d in (1..=inp.upsilon).filter(|&d| d != device) {
            send(&inp.outboxes, d, msg.clone())?;
        }
        shard.cotangent = cotangent.to_vec();
        shard.head = Some(HeadState {
            omega,
            loss,
            y_final: stream,
            logits: head.logits,
            total_loss: head.loss,
        });
    } else {
        let msg = DeviceMsg::BoundaryActivations {
            source: device,
            destination: device + 1,
            y: stream,
            y_hat: inputs,
        };
        inp.log.record(&msg, Destination::Device(device + 1));
        send(&inp.outboxes, device + 1, msg)?;
        shard.cotangent = receive_cotangent(&inp.inbox, device, inp.upsilon)?.to_vec();
    }
    Ok(())
}

/// Runs the layer blocks in pipeline order. The last device computes the
/// logits, loss and cotangents and broadcasts the cotangents.
pub fn distributed_forward(
    plan: &ShardPlan,
    params: &StackParams,
    tokens: &[Vec<f64>],
    loss: &LossSpec,
) -> Result<DistributedForward> {
    params.validate()?;
    let dims = params.dims;
    if plan.k != dims.k {
        return Err(Error::Config(format!("plan covers K={} but the model has K={}", plan.k, dims.k)));
    }
    check_len("token sequence", dims.t, tokens.len())?;
    for x in tokens {
        check_len("token", dims.p, x.len())?;
    }
    loss.validate(dims.t, dims.v)?;

    let log = MessageLog::default();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..plan.upsilon).map(|_| channel()).unzip();
    let results: Vec<Result<DeviceShard>> = thread::scope(|scope| {
        let handles: Vec<_> = plan
            .devices
            .iter()
            .zip(receivers)
            .map(|(dp, inbox)| {
                let hosted: Vec<LayerParams> = dp.layers.clone().map(|k| params.layers[k - 1].clone()).collect();
                let shard = DeviceShard::new(dp.device, dims, params.variant, dp.layers.clone(), dp.placement(dims.t), hosted);
                let inputs = DeviceInputs {
                    plan: dp,
                    upsilon: plan.upsilon,
                    shard,
                    tokens: (dp.device == 1).then_some(tokens),
                    head: dp.holds_head.then(|| (params.omega.clone(), loss.clone())),
                    inbox,
                    outboxes: senders.clone(),
                    log: log.clone(),
                };
                scope.spawn(move || run_device_forward(inputs))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("device thread panicked")).collect()
    });

    let mut shards = Vec::with_capacity(plan.upsilon);
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(s) => shards.push(s),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(root_error(errors));
    }
    let loss = shards.last().and_then(|s| s.head.as_ref()).map(|h| h.total_loss).unwrap_or(0.0);
    Ok(DistributedForward {
        shards,
        loss,
        log: log.records(),
    })
}

#[derive(Debug, Clone)]
pub struct DistributedGradient {
    pub grad: GradVector,
    pub counts: VjpCounts,
    pub locality_violations: usize,
    /// Work items `(t, k)` processed by each device.
    pub items_per_device: Vec<usize>,
}

type Partial = (Vec<LayerParams>, Vec<NetCounts>);

fn device_gradient(shard: &DeviceShard, tbar: usize, workers: usize, reduction: Reduction) -> Result<Partial> {
    let t_len = shard.dims.t;
    let hosted: Vec<usize> = shard.layers.clone().collect();
    let items: Vec<(usize, usize)> = hosted.iter().flat_map(|&k| (1..=t_len).map(move |t| (k, t))).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let zero: Vec<LayerParams> = shard.params.iter().map(zero_like).collect();

    let run_item = |idx: usize| -> Result<(LayerParams, NetCounts)> {
        let (k, t) = items[idx];
        token_layer_contribution(shard, shard.layer(k)?, t, k, tbar)
    };

    match reduction {
        Reduction::Deterministic => {
            let slots: Vec<Mutex<Option<(LayerParams, NetCounts)>>> = items.iter().map(|_| Mutex::new(None)).collect();
            let first_error: Mutex<Option<(usize, Error)>> = Mutex::new(None);
            thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| {
                        while !stop.load(Ordering::Relaxed) {
                            let idx = next.fetch_add(1, Ordering::Relaxed);
                            if idx >= items.len() {
                                break;
                            }
                            match run_item(idx) {
                                Ok(v) => *slots[idx].lock().expect("slot") = Some(v),
                                Err(e) => {
                                    stop.store(true, Ordering::Relaxed);
                                    let mut fe = first_error.lock().expect("error slot");
                                    if fe.as_ref().is_none_or(|(i, _)| idx < *i) {
                                        *fe = Some((idx, e));
                                    }
                                }
                            }
                        }
                    });
                }
            });
            if let Some((_, e)) = first_error.into_inner().expect("error slot") {
                return Err(e);
            }
            let mut acc = zero;
            let mut counts = vec![NetCounts::default(); hosted.len()];
            for (slot, &(k, _)) in slots.into_iter().zip(&items) {
                let (xi, c) = slot.into_inner().expect("slot").expect("every item ran");
                let s = k - shard.first_layer();
                acc[s].add_assign(&xi);
                counts[s].add(c);
            }
            Ok((acc, counts))
        }
        Reduction::Fast => {
            let (tx, rx) = channel::<Result<Partial>>();
            thread::scope(|scope| {
                for _ in 0..workers {
                    let tx = tx.clone();
                    let zero = zero.clone();
                    let (next, stop, items, run_item) = (&next, &stop, &items, &run_item);
                    scope.spawn(move || {
                        let mut acc = zero;
                        let mut counts = vec![NetCounts::default(); acc.len()];
                        while !stop.load(Ordering::Relaxed) {
                            let idx = next.fetch_add(1, Ordering::Relaxed);
                            if idx >= items.len() {
                                break;
                            }
                            match run_item(idx) {
                                Ok((xi, c)) => {
                                    let s = items[idx].0 - shard.first_layer();
                                    acc[s].add_assign(&xi);
                                    counts[s].add(c);
                                }
                                Err(e) => {
                                    stop.store(true, Ordering::Relaxed);
                                    let _ = tx.send(Err(e));
                                    return;
                                }
                            }
                        }
                        let _ = tx.send(Ok((acc, counts)));
                    });
                }
            });
            drop(tx);
            let mut acc = zero;
            let mut counts = vec![NetCounts::default(); hosted.len()];
            for partial in rx {
                let (p, c) = partial?;
                for (a, b) in acc.iter_mut().zip(&p) {
                    a.add_assign(b);
                }
                for (a, b) in counts.iter_mut().zip(c) {
                    a.add(b);
                }
            }
            Ok((acc, counts))
        }
    }
}

/// Every device computes the gradient blocks of its own layers from its
/// own shard, on `workers` threads. Blocks are disjoint, so assembly is a
/// copy. The language-head block comes from the last device.
pub fn distributed_adjoint_gradient(
    plan: &ShardPlan,
    shards: &[DeviceShard],
    truncation: Truncation,
    workers: usize,
    reduction: Reduction,
) -> Result<DistributedGradient> {
    if workers == 0 {
        return Err(Error::Config("workers per device must be at least 1".into()));
    }
    check_len("device shards", plan.upsilon, shards.len())?;
    let first = shards.first().ok_or_else(|| Error::Config("no devices".into()))?;
    let (dims, variant) = (first.dims, first.variant);
    let tbar = truncation.tbar(dims.t)?;

    let results: Vec<Result<Partial>> = thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .map(|shard| scope.spawn(move || device_gradient(shard, tbar, workers, reduction).map_err(|e| tag_device(e, shard.device))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("device thread panicked")).collect()
    });

    let mut grad = GradVector::zeros(dims, variant);
    let mut counts = VjpCounts {
        per_layer: vec![NetCounts::default(); dims.k],
    };
    let mut items_per_device = Vec::with_capacity(shards.len());
    for (shard, r) in shards.iter().zip(results) {
        let (blocks, c) = r?;
        for (offset, (b, c)) in blocks.into_iter().zip(c).enumerate() {
            let k = shard.first_layer() + offset;
            grad.layers[k - 1] = b;
            counts.per_layer[k - 1] = c;
        }
        items_per_device.push(shard.layers.clone().count() * dims.t);
    }
    let head_shard = shards.last().expect("non-empty");
    let head = head_shard
        .head
        .as_ref()
        .ok_or_else(|| Error::Protocol(format!("device {} holds no language head", head_shard.device)))?;
    grad.omega = omega_gradient_from(&head.logits, &head.y_final, &head.loss, dims.v, dims.p)?;

    Ok(DistributedGradient {
        grad,
        counts,
        locality_violations: shards.iter().map(DeviceShard::locality_violations).sum(),
        items_per_device,
    })
}
