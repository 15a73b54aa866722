use adjoint_shard::adjoint::{adjoint_batch, adjoint_gradient_counted, build_cotangents, run_task, Truncation};
use adjoint_shard::ssm::{
    ssm_layer_forward, stack_forward, Activation, ForwardTrace, LossSpec, ModelDims, SsmVariant, StackParams,
    StateKind,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kind_strategy() -> impl Strategy<Value = StateKind> {
    prop_oneof![Just(StateKind::Unstructured), Just(StateKind::Diagonal), Just(StateKind::Scalar)]
}

fn act_strategy() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Identity), Just(Activation::Tanh), Just(Activation::Sigmoid)]
}

fn model(k: usize, n: usize, p: usize, t: usize, kind: StateKind, act: Activation, seed: u64) -> (StackParams, Vec<Vec<f64>>, LossSpec, ForwardTrace) {
    let v = 4;
    let dims = ModelDims::new(k, n, p, v, t, 1).unwrap();
    let params = StackParams::init(dims, SsmVariant::new(kind, act), seed);
    let tokens: Vec<Vec<f64>> = (0..t).map(|i| (0..p).map(|j| ((seed as usize + 3 * i + j) as f64 * 0.83).sin()).collect()).collect();
    let loss = LossSpec::CrossEntropy((0..t).map(|i| (i + seed as usize) % v).collect());
    let trace = stack_forward(&params, &tokens, &loss).unwrap();
    (params, tokens, loss, trace)
}

/// `λ A` for a `P x N` row-major `λ`.
fn right_multiply(kind: StateKind, lambda: &[f64], a: &[f64], n: usize) -> Vec<f64> {
    let p = lambda.len() / n;
    let mut out = vec![0.0; p * n];
    for r in 0..p {
        for j in 0..n {
            out[r * n + j] = match kind {
                StateKind::Unstructured => (0..n).map(|i| lambda[r * n + i] * a[i * n + j]).sum(),
                StateKind::Diagonal => lambda[r * n + j] * a[j],
                StateKind::Scalar => lambda[r * n + j] * a[0],
            };
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0), "{} vs {}", x, y);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_states_follow_the_backward_recurrence(
        kind in kind_strategy(), act in act_strategy(), n in 1usize..4, p in 1usize..4, t in 2usize..9, seed in 0u64..1000,
    ) {
        let (_, _, _, trace) = model(1, n, p, t, kind, act, seed);
        let batch = adjoint_batch(&trace, t, 1, t).unwrap();
        prop_assert_eq!(batch.window, (1, t));
        assert_close(batch.lambda_at(t), trace.readout(t, 1), 0.0)?;
        for tau in 2..=t {
            let next = right_multiply(kind, batch.lambda_at(tau), trace.transition(tau, 1), n);
            assert_close(batch.lambda_at(tau - 1), &next, 1e-12)?;
        }
    }

    #[test]
    fn vjp_sum_is_insensitive_to_task_order(
        kind in kind_strategy(), act in act_strategy(), t in 1usize..7, seed in 0u64..1000,
    ) {
        let (params, _, _, trace) = model(2, 3, 2, t, kind, act, seed);
        let batch = adjoint_batch(&trace, t, 2, t).unwrap();
        let mut tasks = build_cotangents(&trace, &batch).unwrap();
        let layer = &params.layers[1];
        let sum = |tasks: &[adjoint_shard::adjoint::VjpTask]| {
            let mut acc: Vec<f64> = Vec::new();
            for task in tasks {
                let g = run_task(&trace, layer, task).unwrap();
                let mut flat = vec![0.0; 3 * layer.len()];
                let offset = match task.kind {
                    adjoint_shard::ssm::Net::A => 0,
                    adjoint_shard::ssm::Net::B => layer.len(),
                    adjoint_shard::ssm::Net::C => 2 * layer.len(),
                };
                for (slot, x) in flat[offset..].iter_mut().zip(g.weight.iter().chain(&g.bias)) {
                    *slot = *x;
                }
                if acc.is_empty() {
                    acc = flat;
                } else {
                    acc.iter_mut().zip(&flat).for_each(|(a, b)| *a += b);
                }
            }
            acc
        };
        let ordered = sum(&tasks);
        tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = sum(&tasks);
        assert_close(&ordered, &shuffled, 1e-12)?;
    }

    #[test]
    fn residual_stream_is_input_plus_layer_outputs(
        kind in kind_strategy(), act in act_strategy(), k in 1usize..4, t in 1usize..6, seed in 0u64..1000,
    ) {
        let (_, tokens, _, trace) = model(k, 3, 2, t, kind, act, seed);
        for tt in 1..=t {
            let mut y = tokens[tt - 1].clone();
            for layer in 1..=k {
                let c = trace.readout(tt, layer);
                let h = trace.state(tt, layer);
                for (r, yr) in y.iter_mut().enumerate() {
                    *yr += (0..3).map(|i| c[r * 3 + i] * h[i]).sum::<f64>();
                }
            }
            assert_close(&trace.y_final[tt - 1], &y, 1e-12)?;
        }
    }

    #[test]
    fn states_are_affine_in_the_initial_state(
        kind in kind_strategy(), act in act_strategy(), t in 1usize..8, seed in 0u64..1000,
        alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
    ) {
        let (params, tokens, _, _) = model(1, 3, 2, t, kind, act, seed);
        let layer = &params.layers[0];
        let variant = params.variant;
        let u = [0.3, -0.7, 1.1];
        let v = [-0.4, 0.2, 0.5];
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let run = |h0: &[f64]| ssm_layer_forward(layer, &variant, &tokens, h0, 1).unwrap().h;
        let zero = run(&[0.0; 3]);
        let (hu, hv, hm) = (run(&u), run(&v), run(&mix));
        for s in 0..=t {
            let want: Vec<f64> = (0..3).map(|i| zero[s][i] + alpha * (hu[s][i] - zero[s][i]) + beta * (hv[s][i] - zero[s][i])).collect();
            assert_close(&hm[s], &want, 1e-10)?;
        }
    }

    #[test]
    fn truncated_counts_grow_with_the_window(t in 1usize..12, seed in 0u64..100) {
        let (params, _, loss, trace) = model(2, 2, 2, t, StateKind::Diagonal, Activation::Tanh, seed);
        let mut last = 0;
        for tbar in 1..=t + 2 {
            let (_, c) = adjoint_gradient_counted(&params, &trace, &loss, Truncation::Window(tbar)).unwrap();
            prop_assert!(c.total() >= last);
            last = c.total();
        }
        let (_, full) = adjoint_gradient_counted(&params, &trace, &loss, Truncation::Full).unwrap();
        prop_assert_eq!(last, full.total());
    }
}

