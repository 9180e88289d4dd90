//! Builders checked node for node against independent brute-force
//! reimplementations over a generated suite of small table models.

mod common;

use common::{
    oracle_static, oracle_talon, random_static, random_talon, rng, table_suite, tree_paths,
};
use talon_core::builders::{build_talon_traced, gather_pool, SelectionRule};
use talon_core::{build_static, build_talon, Context, ExpansionPolicy};

#[test]
fn talon_matches_brute_force() {
    let mut r = rng(3);
    for (i, inst) in table_suite(1, 300).into_iter().enumerate() {
        let policy = random_talon(&mut r);
        let ctx = Context::new(inst.ctx.clone());
        let tree = build_talon(&inst.model, &ctx, &policy).unwrap();
        tree.validate().unwrap();
        assert_eq!(
            tree_paths(&tree),
            oracle_talon(&inst.model, &inst.ctx, &policy),
            "instance {i} {policy:?}"
        );
    }
}

#[test]
fn static_matches_brute_force() {
    let mut r = rng(4);
    for (i, inst) in table_suite(2, 300).into_iter().enumerate() {
        let policy = random_static(&mut r);
        let ctx = Context::new(inst.ctx.clone());
        let tree = build_static(&inst.model, &ctx, &policy).unwrap();
        tree.validate().unwrap();
        assert_eq!(
            tree_paths(&tree),
            oracle_static(&inst.model, &inst.ctx, &policy),
            "instance {i} {policy:?}"
        );
    }
}

#[test]
fn talon_budget_and_gating_laws() {
    let mut r = rng(5);
    for (i, inst) in table_suite(6, 300).into_iter().enumerate() {
        let policy = random_talon(&mut r);
        let ExpansionPolicy::Talon {
            budget,
            mu,
            init_layers,
            ..
        } = policy
        else {
            unreachable!()
        };
        let ctx = Context::new(inst.ctx.clone());
        let (tree, trace) = build_talon_traced(&inst.model, &ctx, &policy).unwrap();
        assert!(tree.len() <= budget);
        if tree.len() < budget {
            // Only an exhausted frontier may leave budget unspent.
            let last = tree.layers().last().unwrap();
            assert!(
                gather_pool(&tree, last, &inst.model, &ctx)
                    .unwrap()
                    .is_empty(),
                "instance {i}"
            );
        }
        for t in &trace {
            let rule = if t.depth <= init_layers {
                SelectionRule::TopK
            } else {
                SelectionRule::Gate
            };
            assert_eq!(t.rule, rule);
            if t.rule == SelectionRule::Gate {
                let anchor = t.outcome.anchor;
                for c in &t.outcome.kept {
                    assert!(c.path_prob >= mu * anchor, "instance {i} depth {}", t.depth);
                }
            }
        }
    }
}
