//! Randomized round-trip and order-theory properties.

use std::collections::BTreeMap;

use proptest::prelude::*;
use valobj::dlo::Backend;
use valobj::ordered::OrderedOps;
use valobj::sim::regular::response_order_extension;
use valobj::sim::scenario::{build_kernel, seeded_scenario, ScenarioImpl};
use valobj::types::{OpUid, OperationRecord, ProcessId, Value};
use valobj::wire;

fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<i64>().prop_map(Value::Int),
        any::<bool>().prop_map(Value::Bool),
        proptest::collection::vec(any::<char>(), 0..12)
            .prop_map(|cs| Value::Str(cs.into_iter().collect())),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        (inner.clone(), inner).prop_map(|(a, b)| Value::Pair(Box::new(a), Box::new(b)))
    })
}

fn arb_dag() -> impl Strategy<Value = (Vec<OperationRecord>, Vec<(usize, usize)>)> {
    (2usize..8).prop_flat_map(|n| {
        let ops: Vec<OperationRecord> = (0..n)
            .map(|k| {
                OperationRecord::new(
                    OpUid::new(ProcessId(k as u32 % 3 + 1), k as u32 / 3 + 1),
                    "read",
                    vec![],
                )
            })
            .collect();
        // Edges only point from a lower index to a higher one, so any subset
        // is acyclic.
        let all_edges: Vec<(usize, usize)> =
            (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect();
        proptest::sample::subsequence(all_edges.clone(), 0..=all_edges.len())
            .prop_map(move |edges| (ops.clone(), edges))
    })
}

proptest! {
    #[test]
    fn values_survive_the_wire(v in arb_value()) {
        let rendered = v.to_string();
        let parsed = wire::parse_value(&rendered, 1, false).unwrap();
        prop_assert_eq!(parsed, v);
    }

    #[test]
    fn calls_survive_the_wire(
        kind in "[a-z][a-z0-9-]{0,8}",
        args in proptest::collection::vec(arb_value(), 0..4),
    ) {
        let op = OperationRecord::new(OpUid::new(ProcessId(1), 1), kind.clone(), args.clone());
        let rendered = op.render_call();
        let (k, a) = wire::parse_call(&rendered, 1, false).unwrap();
        prop_assert_eq!(k, kind);
        prop_assert_eq!(a, args);
    }

    #[test]
    fn rendered_runs_parse_back_to_the_same_history(
        app_idx in 0usize..4,
        seed in any::<u64>(),
        total in any::<bool>(),
        replicated in any::<bool>(),
    ) {
        let app = ["punching", "crypto", "doall", "versioned"][app_idx];
        let (impl_kind, backend) = if total {
            (ScenarioImpl::Total, Backend::Oracle)
        } else if replicated {
            (ScenarioImpl::Regular, Backend::Replicated { replicas: 3, tolerated: 1 })
        } else {
            (ScenarioImpl::Regular, Backend::Oracle)
        };
        let scenario = seeded_scenario(app, impl_kind, backend, 3, 6, 1, seed).unwrap();
        let mut kernel = build_kernel(&scenario).unwrap().kernel;
        let summary = kernel.run(seed);
        prop_assert!(summary.deadlocked.is_empty());
        let rendered = kernel.render_trace().unwrap();
        let parsed = wire::parse_trace(&rendered).unwrap();
        let completed = kernel.completed_trace().unwrap();
        prop_assert_eq!(parsed.events(), completed.events());
    }

    #[test]
    fn pair_closure_yields_a_strict_partial_order((ops, edges) in arb_dag()) {
        let uids: Vec<OpUid> = ops.iter().map(|o| o.uid).collect();
        let pairs: Vec<(OpUid, OpUid)> =
            edges.iter().map(|&(a, b)| (uids[a], uids[b])).collect();
        let order = OrderedOps::from_pairs(ops, pairs.clone()).unwrap();
        for &a in &uids {
            prop_assert!(!order.precedes(a, a));
            for &b in &uids {
                for &c in &uids {
                    if order.precedes(a, b) && order.precedes(b, c) {
                        prop_assert!(order.precedes(a, c));
                    }
                }
                if order.precedes(a, b) {
                    prop_assert!(!order.precedes(b, a));
                }
            }
        }
        // The closure keeps every stated edge.
        for (a, b) in pairs {
            prop_assert!(order.precedes(a, b));
        }
    }

    #[test]
    fn response_extension_linearizes_the_order(
        (ops, edges) in arb_dag(),
        rank_seed in any::<u64>(),
    ) {
        let uids: Vec<OpUid> = ops.iter().map(|o| o.uid).collect();
        let pairs: Vec<(OpUid, OpUid)> =
            edges.iter().map(|&(a, b)| (uids[a], uids[b])).collect();
        let order = OrderedOps::from_pairs(ops, pairs).unwrap();

        // An arbitrary but valid rank permutation derived from the seed.
        let mut ranked = uids.clone();
        let mut state = rank_seed | 1;
        for k in (1..ranked.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ranked.swap(k, (state >> 33) as usize % (k + 1));
        }
        let ranks: BTreeMap<OpUid, usize> =
            ranked.iter().enumerate().map(|(r, &u)| (u, r)).collect();

        let ext = response_order_extension(&order, &ranks);
        // A permutation of the ops that respects the partial order.
        let mut sorted = ext.clone();
        sorted.sort();
        let mut expect = uids.clone();
        expect.sort();
        prop_assert_eq!(sorted, expect);
        for (x, &a) in ext.iter().enumerate() {
            for &b in &ext[x + 1..] {
                prop_assert!(!order.precedes(b, a));
            }
        }
        // With nothing constrained, the ranks decide everything.
        if order.reduction_edges().next().is_none() {
            prop_assert_eq!(ext, ranked);
        }
    }
}
