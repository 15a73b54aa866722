//! One function per CLI mode. Each returns a [`Report`]: the text printed
//! to stdout, the files to write, and the verdict that sets the exit code.

use std::fmt::Write as _;

use crate::adjoint::{adjoint_gradient, GradVector, Truncation};
use crate::cost::{
    adjoint_vs_backprop_memory_curve, cost_report, group, memory_curve_csv, throughput_estimate, vjp_count,
    vjp_counts_csv, CurveConfig, GpuSpec, REFERENCE_VJP_BYTES, REFERENCE_VJP_FLOPS,
};
use crate::distributed::{
    distributed_adjoint_gradient, distributed_forward, plan_shards, protocol_conforms, render_log, simulate_speedup,
    DeviceMemory, Reduction,
};
use crate::error::{Error, Result};
use crate::reference::{compare_gradients, finite_difference_gradient, tape_gradient, FdConfig, Tolerance};
use crate::ssm::{stack_forward, Activation, LossSpec, ModelDims, SsmVariant, StackParams};

use super::config::{LossKind, RunConfig};
use super::data::SyntheticTask;
use super::train::{train, GradientSource};

/// Largest model `gradcheck` accepts for finite differences.
pub const GRADCHECK_MAX_PARAMS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    /// `(file name, contents)` written under the output directory.
    pub files: Vec<(String, String)>,
    pub passed: bool,
}

impl Report {
    fn new() -> Self {
        Report {
            text: String::new(),
            files: Vec::new(),
            passed: true,
        }
    }

    fn check(&mut self, label: &str, ok: bool, detail: impl std::fmt::Display) {
        let _ = writeln!(self.text, "[{}] {label}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.passed &= ok;
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Report> {
    let mut r = Report::new();
    let log = train(cfg, GradientSource::Adjoint)?;
    let d = cfg.model.dims;
    let _ = writeln!(
        r.text,
        "train: K={} N={} P={} V={} T={} bs={} {}/{} lr={} steps={} upsilon={} Tbar={}",
        d.k,
        d.n,
        d.p,
        d.v,
        d.t,
        d.bs,
        cfg.model.variant.kind,
        cfg.model.variant.activation,
        cfg.lr,
        cfg.steps,
        cfg.upsilon,
        cfg.tbar.map_or("T".to_string(), |w| w.to_string())
    );
    let mut csv = String::from("step,loss\n");
    for (step, loss) in log.losses.iter().enumerate() {
        let _ = writeln!(csv, "{step},{loss:.12e}");
        if step % 20 == 0 || step + 1 == log.losses.len() {
            let _ = writeln!(r.text, "step {step:>5} loss {loss:.6}");
        }
    }
    r.files.push(("train_loss.csv".into(), csv));
    if cfg.steps > 0 {
        let (first, last) = (log.initial(), log.last());
        r.check(
            "loss decreased",
            last < first || cfg.lr == 0.0,
            format!("{first:.6} -> {last:.6}"),
        );
    }
    Ok(r)
}

fn probe_inputs(dims: &ModelDims, seed: u64, loss: LossKind) -> (Vec<Vec<f64>>, LossSpec) {
    let sample = SyntheticTask::new(dims.v, dims.p, seed).sample(dims.t, loss);
    (sample.tokens, sample.loss)
}

fn comparison_section(r: &mut Report, title: &str, a: &GradVector, b: &GradVector, tol: Tolerance) -> Result<()> {
    let c = compare_gradients(a, b, tol)?;
    let _ = writeln!(r.text, "\n{title}\n{c}");
    let worst = c.worst_block().map_or("-".to_string(), |b| b.name.clone());
    r.check(title, c.passed(), format!("max_rel {:.3e}, worst block {worst}", c.max_rel()));
    Ok(())
}

/// Exactness at `K = 1`, detached equivalence at `K = 3`, and window saturation.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Report> {
    let mut r = Report::new();
    let base = cfg.model.dims;
    let seed = cfg.model.seed;

    let dims1 = ModelDims { k: 1, bs: 1, ..base };
    let variant1 = SsmVariant::new(cfg.model.variant.kind, Activation::Identity);
    let dims3 = ModelDims { k: 3, bs: 1, ..base };
    for dims in [&dims1, &dims3] {
        let n = StackParams::zeros(*dims, cfg.model.variant).num_params();
        if n > GRADCHECK_MAX_PARAMS {
            return Err(Error::Config(format!(
                "gradcheck needs at most {GRADCHECK_MAX_PARAMS} parameters, K={} model has {n}",
                dims.k
            )));
        }
    }

    let params = StackParams::init(dims1, variant1, seed);
    let (tokens, loss) = probe_inputs(&dims1, seed, LossKind::Mse);
    let trace = stack_forward(&params, &tokens, &loss)?;
    let adj = adjoint_gradient(&params, &trace, &loss, Truncation::Full)?;
    let fd = finite_difference_gradient(&params, &tokens, &loss, &FdConfig::default())?;
    comparison_section(&mut r, "K=1 adjoint vs finite differences", &adj, &fd, Tolerance::new(1e-5, 1e-8))?;

    let params = StackParams::init(dims3, cfg.model.variant, seed);
    let (tokens, loss) = probe_inputs(&dims3, seed, cfg.loss);
    let trace = stack_forward(&params, &tokens, &loss)?;
    let adj = adjoint_gradient(&params, &trace, &loss, Truncation::Full)?;
    let detached = tape_gradient(&params, &tokens, &loss, true)?;
    comparison_section(&mut r, "K=3 adjoint vs detached tape", &adj, &detached, Tolerance::new(1e-10, 0.0))?;
    let full = tape_gradient(&params, &tokens, &loss, false)?;
    let fd = finite_difference_gradient(&params, &tokens, &loss, &FdConfig::default())?;
    comparison_section(&mut r, "K=3 full tape vs finite differences", &full, &fd, Tolerance::new(1e-5, 1e-8))?;
    let gap = compare_gradients(&adj, &full, Tolerance::new(1e-5, 1e-8))?;
    let _ = writeln!(
        r.text,
        "\nK=3 adjoint vs full backprop (informational): max_rel {:.3e}, max_abs {:.3e}",
        gap.max_rel(),
        gap.max_abs()
    );

    let saturated = adjoint_gradient(&params, &trace, &loss, Truncation::Window(dims3.t))?;
    r.check(
        "Tbar=T equals untruncated bitwise",
        saturated.bitwise_eq(&adj),
        format!("T={}", dims3.t),
    );
    Ok(r)
}

fn memory_csv(rows: &[DeviceMemory]) -> String {
    let mut s = String::from("device,layers,trace_scalars,param_scalars,head_scalars\n");
    for m in rows {
        let _ = writeln!(
            s,
            "{},{}-{},{},{},{}",
            m.device,
            m.layers.start(),
            m.layers.end(),
            m.trace_scalars,
            m.param_scalars,
            m.head_scalars
        );
    }
    s
}

/// Gradient invariance across device counts, locality, protocol and shard
/// balance.
pub fn cmd_distcheck(cfg: &RunConfig) -> Result<Report> {
    let mut r = Report::new();
    let dims = cfg.model.dims;
    let params = StackParams::init(dims, cfg.model.variant, cfg.model.seed);
    let (tokens, loss) = probe_inputs(&dims, cfg.model.seed, cfg.loss);
    let trace = stack_forward(&params, &tokens, &loss)?;
    let reference = adjoint_gradient(&params, &trace, &loss, cfg.truncation())?;

    let mut upsilons: Vec<usize> = [1, 2, 4, cfg.upsilon].into_iter().filter(|u| dims.k.is_multiple_of(*u)).collect();
    upsilons.sort_unstable();
    upsilons.dedup();
    let reduction = if cfg.deterministic { Reduction::Deterministic } else { Reduction::Fast };
    let _ = writeln!(
        r.text,
        "distcheck: K={} T={} workers={} reduction={:?} upsilon={:?}",
        dims.k, dims.t, cfg.workers, reduction, upsilons
    );
    if !dims.k.is_multiple_of(cfg.upsilon) {
        let _ = writeln!(r.text, "note: upsilon={} does not divide K={} and was skipped", cfg.upsilon, dims.k);
    }

    let mut all_identical = true;
    for &u in &upsilons {
        let plan = plan_shards(dims.k, u)?;
        let fwd = distributed_forward(&plan, &params, &tokens, &loss)?;
        let union_ok = fwd.shards.iter().all(|s| s.matches(&trace));
        let protocol_ok = protocol_conforms(&fwd.log, u);
        let g = distributed_adjoint_gradient(&plan, &fwd.shards, cfg.truncation(), cfg.workers, reduction)?;
        let same = if cfg.deterministic {
            g.grad.bitwise_eq(&reference)
        } else {
            compare_gradients(&g.grad, &reference, Tolerance::new(1e-12, 0.0))?.passed()
        };
        all_identical &= same;
        let balance: Vec<usize> = fwd.shards.iter().map(|s| {
            let m = s.memory();
            m.trace_scalars + m.param_scalars
        }).collect();
        let balanced = balance.iter().max() == balance.iter().min();
        r.check(&format!("upsilon={u} shards match single-device trace"), union_ok, format!("{} devices", u));
        r.check(&format!("upsilon={u} message protocol"), protocol_ok, format!("{} messages", fwd.log.len()));
        r.check(&format!("upsilon={u} locality"), g.locality_violations == 0, format!("{} violations", g.locality_violations));
        r.check(&format!("upsilon={u} shard balance"), balanced, format!("{balance:?}"));
        r.check(&format!("upsilon={u} gradient matches"), same, format!("{} vjps", g.counts.total()));
        if u == cfg.upsilon || (!dims.k.is_multiple_of(cfg.upsilon) && u == *upsilons.last().expect("non-empty")) {
            r.files.push(("message_log.txt".into(), render_log(&fwd.log)));
            let mem: Vec<DeviceMemory> = fwd.shards.iter().map(|s| s.memory()).collect();
            r.files.push(("device_memory.csv".into(), memory_csv(&mem)));
        }
    }
    let _ = writeln!(r.text, "verdict: {}", if all_identical { "identical gradients" } else { "gradients differ" });
    r.passed &= all_identical;
    Ok(r)
}

pub fn cmd_cost(cfg: &RunConfig) -> Result<Report> {
    let mut r = Report::new();
    let dims = cfg.model.dims;
    let tbar = cfg.tbar.unwrap_or(dims.t);
    let report = cost_report(&dims, &cfg.model.variant, tbar)?;
    let _ = writeln!(r.text, "{report}");

    let gpu = GpuSpec::h100();
    let reference = throughput_estimate(&gpu, REFERENCE_VJP_BYTES, REFERENCE_VJP_FLOPS);
    let _ = writeln!(r.text, "\nH100 with the reference per-vjp figures (0.6 MB, 1,798,144 FLOPs):");
    let _ = writeln!(r.text, "  bandwidth bound: {:.3e} vjp batches/s", reference.bandwidth_bound_vjps_per_sec);
    let _ = writeln!(r.text, "  compute bound:   {:.3e} vjp batches/s", reference.compute_bound_vjps_per_sec);
    let _ = writeln!(r.text, "  resident:        {:.0} vjp batches", reference.resident_batches);

    let b = report.per_vjp.b;
    let own = throughput_estimate(&gpu, b.memory_bytes_fp16 as f64, b.flops as f64);
    let _ = writeln!(r.text, "H100 with this model's B vjp ({} bytes, {} FLOPs):", b.memory_bytes_fp16, b.flops);
    let _ = writeln!(r.text, "  bandwidth bound: {:.3e} vjp batches/s", own.bandwidth_bound_vjps_per_sec);
    let _ = writeln!(r.text, "  compute bound:   {:.3e} vjp batches/s", own.compute_bound_vjps_per_sec);
    let _ = writeln!(r.text, "  resident:        {:.0} vjp batches", own.resident_batches);

    if dims.k.is_multiple_of(cfg.upsilon) {
        let plan = plan_shards(dims.k, cfg.upsilon)?;
        let instance_rate = gpu.flops_per_sec / gpu.mig_instances as f64;
        let s = simulate_speedup(&plan, &report, gpu.mig_instances, instance_rate);
        let _ = writeln!(
            r.text,
            "speedup model: upsilon={} x {} instances = {}x; gradient phase {:.3e} s (serial {:.3e} s), forward {:.3e} s",
            cfg.upsilon,
            gpu.mig_instances,
            s.parallelism,
            s.gradient_phase_seconds,
            s.serial_gradient_seconds,
            s.forward_phase_seconds
        );
    }
    r.files.push(("vjp_counts.csv".into(), vjp_counts_csv(&[report.vjp_counts])));
    let c = report.vjp_counts;
    let _ = writeln!(
        r.text,
        "truncated vjps per A/B network: {} counted, {} by the closed form",
        group(c.truncated_per_ab),
        group(c.printed_truncated_per_ab)
    );
    Ok(r)
}

/// Context lengths swept by `curves`.
pub const CURVE_LENGTHS: [usize; 8] = [8, 16, 24, 32, 40, 48, 56, 64];

pub fn cmd_curves(cfg: &RunConfig) -> Result<Report> {
    let mut r = Report::new();
    let d = cfg.model.dims;
    let curve = CurveConfig {
        k: d.k,
        n: d.n,
        p: d.p,
        v: d.v,
        variant: cfg.model.variant,
        seed: cfg.model.seed,
        tape_limit: None,
    };
    let rows = adjoint_vs_backprop_memory_curve(&curve, &CURVE_LENGTHS)?;
    let _ = writeln!(r.text, "{:>8} {:>12} {:>12}", "T", "adjoint", "tape");
    for row in &rows {
        let tape = row.tape_numbers.map_or("censored".to_string(), |x| x.to_string());
        let _ = writeln!(r.text, "{:>8} {:>12} {:>12}", row.context_length, row.adjoint_numbers, tape);
    }
    r.files.push(("memory_curve.csv".into(), memory_curve_csv(&rows)));

    let mut counts = Vec::new();
    for &t in &[16usize, 64, 256, 1024, 10_000] {
        for &w in &[1usize, 4, 16, 64, 256, 2_000] {
            if w <= t {
                counts.push(vjp_count(t, w)?);
            }
        }
    }
    r.files.push(("vjp_counts.csv".into(), vjp_counts_csv(&counts)));
    let increasing = rows.windows(2).all(|w| w[0].context_length < w[1].context_length);
    r.check("context lengths increase", increasing, format!("{} rows", rows.len()));
    Ok(r)
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.mode {
        super::config::Mode::Train => cmd_train(cfg),
        super::config::Mode::Gradcheck => cmd_gradcheck(cfg),
        super::config::Mode::Distcheck => cmd_distcheck(cfg),
        super::config::Mode::Cost => cmd_cost(cfg),
        super::config::Mode::Curves => cmd_curves(cfg),
    }
}
