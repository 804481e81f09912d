mod common;

use common::random_problem;
use mtnn_core::loss::{LossConfig, LossKind};
use mtnn_core::model::{backward, forward, Activation, LayerSpec, MtnnArchitecture, ParamVector};
use mtnn_core::objective::single_task_params;
use mtnn_core::optim::{scoped_step, train, Method, Schedule, SchedulePair, TrainConfig};
use mtnn_core::verify::{audit_costs, fd_directional, fd_gradient, relative_error, trunk_backward_macs, DEFAULT_FD_STEP};
use mtnn_core::{Matrix, Objective, Rng, Scope};
use proptest::prelude::*;

fn layer_macs(l: &LayerSpec, batch: u64, params: bool, input: bool) -> u64 {
    let k = (l.input_width * l.output_width) as u64;
    let mut m = 0;
    if params {
        m += batch * (k + l.output_width as u64);
    }
    if input {
        m += batch * k;
    }
    m
}

/// Backward cost per scope counted from the layer shapes alone.
fn expected_macs(arch: &MtnnArchitecture, batch: u64, scope: Scope) -> u64 {
    let trunk: u64 = arch
        .trunk()
        .iter()
        .enumerate()
        .map(|(i, l)| layer_macs(l, batch, true, i > 0))
        .sum();
    let branches: u64 = arch
        .branches()
        .iter()
        .flat_map(|b| b.iter().enumerate())
        .map(|(i, l)| match scope {
            Scope::Full => layer_macs(l, batch, true, true),
            Scope::SharedOnly => layer_macs(l, batch, false, true),
            Scope::TaskSpecificOnly => layer_macs(l, batch, true, i > 0),
        })
        .sum();
    match scope {
        Scope::TaskSpecificOnly => branches,
        _ => branches + trunk,
    }
}

fn arb_arch() -> impl Strategy<Value = MtnnArchitecture> {
    let layers = |n: std::ops::Range<usize>| proptest::collection::vec(1usize..9, n);
    (1usize..4, layers(1..4), proptest::collection::vec((layers(0..3), 1usize..5), 1..4)).prop_map(
        |(input, trunk, branches)| {
            let trunk: Vec<_> = trunk.into_iter().map(|w| (w, Activation::Relu)).collect();
            let branches: Vec<Vec<_>> = branches
                .into_iter()
                .map(|(hidden, out)| {
                    let mut b: Vec<_> = hidden.into_iter().map(|w| (w, Activation::Relu)).collect();
                    b.push((out, Activation::Linear));
                    b
                })
                .collect();
            MtnnArchitecture::from_widths(input, &trunk, &branches).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_matches_finite_differences(seed in any::<u64>(), tasks in 1usize..4) {
        let mut rng = Rng::new(seed);
        let p = random_problem(&mut rng, tasks, 300, 4);
        let loss = |w: &ParamVector| Ok(p.objective.evaluate(w, &p.batch)?.total);
        for scope in [Scope::Full, Scope::SharedOnly, Scope::TaskSpecificOnly] {
            let g = p.objective.gradient(&p.params, &p.batch, scope).unwrap().gradient;
            let fd = fd_gradient(loss, &p.params, scope, DEFAULT_FD_STEP).unwrap();
            prop_assert_eq!(g.len(), p.params.scope_range(scope).len());
            let err = relative_error(&g, &fd);
            prop_assert!(err < 1e-5, "{:?}: relative error {}", scope, err);
        }
    }

    #[test]
    fn scoped_gradients_are_blocks_of_the_full_gradient(seed in any::<u64>(), tasks in 1usize..4) {
        let mut rng = Rng::new(seed);
        let p = random_problem(&mut rng, tasks, 400, 5);
        let full = p.objective.gradient(&p.params, &p.batch, Scope::Full).unwrap().gradient;
        let shared = p.objective.gradient(&p.params, &p.batch, Scope::SharedOnly).unwrap().gradient;
        let ts = p.objective.gradient(&p.params, &p.batch, Scope::TaskSpecificOnly).unwrap().gradient;
        let p0 = p.params.shared_range().len();
        prop_assert_eq!(&full[..p0], &shared[..]);
        prop_assert_eq!(&full[p0..], &ts[..]);
    }

    #[test]
    fn branch_gradient_is_weighted_task_gradient(seed in any::<u64>(), tasks in 1usize..4) {
        let mut rng = Rng::new(seed);
        let p = random_problem(&mut rng, tasks, 400, 5);
        let arch = p.objective.arch();
        let ts = p.objective.gradient(&p.params, &p.batch, Scope::TaskSpecificOnly).unwrap().gradient;
        let base = p.params.task_specific_range().start;
        for k in 0..tasks {
            let single = Objective::new(
                arch.single_task(k),
                LossConfig::unweighted(vec![p.objective.loss_config().kind(k)]),
            ).unwrap();
            let sub = mtnn_core::loss::LabeledBatch::new(p.batch.inputs().clone(), vec![p.batch.labels(k).clone()]).unwrap();
            let w = single_task_params(arch, &p.params, k);
            let gk = single.gradient(&w, &sub, Scope::TaskSpecificOnly).unwrap().gradient;
            let lambda = p.objective.loss_config().weight(k);
            let r = p.params.task_range(k);
            for (a, b) in ts[r.start - base..r.end - base].iter().zip(&gk) {
                prop_assert!((a - lambda * b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn block_steps_descend(seed in any::<u64>(), tasks in 1usize..4) {
        let mut rng = Rng::new(seed);
        let p = random_problem(&mut rng, tasks, 400, 6);
        let n = p.params.len();
        let p0 = p.params.shared_range().len();
        let full = p.objective.gradient(&p.params, &p.batch, Scope::Full).unwrap().gradient;
        let loss = |w: &ParamVector| Ok(p.objective.evaluate(w, &p.batch)?.total);
        let mut d0 = vec![0.0; n];
        let mut dts = vec![0.0; n];
        for j in 0..n {
            if j < p0 { d0[j] = -full[j] } else { dts[j] = -full[j] }
        }
        let sq = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>();
        if sq(&d0) > 1e-8 {
            prop_assert!(fd_directional(loss, &p.params, &d0, DEFAULT_FD_STEP).unwrap() < 0.0);
        }
        if sq(&dts) > 1e-8 {
            prop_assert!(fd_directional(loss, &p.params, &dts, DEFAULT_FD_STEP).unwrap() < 0.0);
            for k in 0..tasks {
                let lk = |w: &ParamVector| Ok(p.objective.evaluate(w, &p.batch)?.per_task[k]);
                prop_assert!(fd_directional(lk, &p.params, &dts, DEFAULT_FD_STEP).unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn work_counter_matches_layer_shapes(arch in arb_arch(), batch in 1usize..5) {
        let params = ParamVector::zeros(&arch);
        let (_, trace) = forward(&arch, &params, &Matrix::zeros(batch, arch.input_width())).unwrap();
        let grads: Vec<Matrix> = (0..arch.task_count()).map(|k| Matrix::zeros(batch, arch.output_width(k))).collect();
        let mut macs = Vec::new();
        for scope in [Scope::Full, Scope::SharedOnly, Scope::TaskSpecificOnly] {
            let w = backward(&arch, &params, &trace, &grads, scope).unwrap().work;
            prop_assert_eq!(w.multiply_accumulate_count, expected_macs(&arch, batch as u64, scope));
            prop_assert_eq!(w.materialized_gradient_entries, params.scope_range(scope).len() as u64);
            macs.push(w.multiply_accumulate_count);
        }
        let (full, shared, ts) = (macs[0], macs[1], macs[2]);
        prop_assert!(ts < full);
        prop_assert!(shared <= full);
        prop_assert!(ts + trunk_backward_macs(&arch, batch) <= full);
    }

    #[test]
    fn phases_stay_pure_during_training(seed in any::<u64>(), e0 in 1usize..3, ets in 1usize..3) {
        let mut rng = Rng::new(seed);
        let p = random_problem(&mut rng, 2, 300, 12);
        for method in [Method::AteSg, Method::AteSgImplemented] {
            let cfg = |epochs| TrainConfig {
                method,
                batch_size: 4,
                epochs,
                shared_epochs: e0,
                task_epochs: ets,
                schedules: SchedulePair::same(Schedule::constant(0.01).unwrap()),
                plateau: None,
                early_stop: None,
            };
            let mut prev = p.params.clone();
            for epochs in 1..=(e0 + ets) * 2 {
                let out = train(&p.objective, p.params.clone(), &cfg(epochs), &p.batch, None, &mut Rng::new(seed ^ 1)).unwrap();
                let in_cycle = (epochs - 1) % (e0 + ets);
                if in_cycle < e0 {
                    prop_assert_eq!(out.params.task_specific(), prev.task_specific());
                } else {
                    prop_assert_eq!(out.params.shared(), prev.shared());
                }
                prev = out.params;
            }
        }
    }
}

#[test]
fn shared_cost_exceeds_task_cost_on_quadrant_circle_shapes() {
    // at width 2 the output layers dominate and the order flips
    let narrow = audit_costs(&MtnnArchitecture::quadrant_circle(2));
    assert!(narrow.task_specific_only.multiply_accumulate_count > narrow.shared_only.multiply_accumulate_count);
    for width in [3, 4, 8, 16, 64, 512] {
        let a = audit_costs(&MtnnArchitecture::quadrant_circle(width));
        assert!(a.task_specific_only.multiply_accumulate_count < a.shared_only.multiply_accumulate_count, "width {width}");
        assert!(a.shared_only.multiply_accumulate_count < a.full.multiply_accumulate_count);
    }
}

#[test]
fn task_cost_can_exceed_shared_cost() {
    // a one-neuron trunk under wide branches: the shared phase is the cheap one
    use Activation::*;
    let arch = MtnnArchitecture::from_widths(1, &[(1, Relu)], &[vec![(32, Relu), (32, Relu), (1, Linear)]]).unwrap();
    let a = audit_costs(&arch);
    assert!(a.task_specific_only.multiply_accumulate_count > a.shared_only.multiply_accumulate_count);
    assert!(a.task_specific_only.multiply_accumulate_count < a.full.multiply_accumulate_count);
}

/// Full-batch sub-steps decrease the loss once the rate is small enough.
#[test]
fn full_batch_alternating_steps_descend() {
    let mut rng = Rng::new(2024);
    for _ in 0..30 {
        let p = random_problem(&mut rng, 2, 400, 8);
        let obj = &p.objective;
        let value = |w: &ParamVector| obj.evaluate(w, &p.batch).unwrap();
        let mut w = p.params.clone();
        for scope in [Scope::SharedOnly, Scope::TaskSpecificOnly, Scope::SharedOnly, Scope::TaskSpecificOnly] {
            let g = obj.gradient(&w, &p.batch, scope).unwrap().gradient;
            if g.iter().all(|v| v.abs() < 1e-12) {
                continue;
            }
            let before = value(&w);
            let block_grads: Vec<bool> = (0..2)
                .map(|k| {
                    let r = w.task_range(k);
                    let base = w.task_specific_range().start;
                    scope == Scope::TaskSpecificOnly && g[r.start - base..r.end - base].iter().any(|v| v.abs() > 1e-12)
                })
                .collect();
            let mut eta = 1e-2;
            let mut accepted = None;
            for _ in 0..=20 {
                let mut trial = w.clone();
                scoped_step(obj, &mut trial, &p.batch, scope, eta).unwrap();
                let after = value(&trial);
                let tasks_ok = (0..2).all(|k| !block_grads[k] || after.per_task[k] < before.per_task[k]);
                if after.total < before.total && tasks_ok {
                    accepted = Some(trial);
                    break;
                }
                eta /= 2.0;
            }
            w = accepted.expect("a halved rate gives descent");
        }
    }
}

#[test]
fn single_task_kinds_cover_all_losses() {
    // guards the generator: every loss kind shows up
    let mut rng = Rng::new(5);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..40 {
        let p = random_problem(&mut rng, 3, 500, 2);
        for k in 0..3 {
            seen.insert(p.objective.loss_config().kind(k));
        }
    }
    assert!(seen.contains(&LossKind::CategoricalCrossEntropy));
    assert!(seen.contains(&LossKind::BinaryCrossEntropyFromLogits));
    assert!(seen.contains(&LossKind::Mse));
}
