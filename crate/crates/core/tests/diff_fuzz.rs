//! Randomized soundness of the differ over mutated region trees.

mod common;

use std::collections::{HashMap, HashSet};

use mvee_core::diff::{apply, diff, Edit, EditScript};
use mvee_core::tree::{hash_tree, isomorphic, NodeId, TreeNode};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn ids(node: &TreeNode) -> Vec<NodeId> {
    node.preorder().into_iter().map(|n| n.id).collect()
}

/// No node is deleted or moved twice, and inserted nodes are fresh and untouched.
fn exactly_once(source: &TreeNode, script: &EditScript) -> Result<(), String> {
    let source_ids: HashSet<NodeId> = ids(source).into_iter().collect();
    let mut consumed = HashSet::new();
    let mut inserted = HashSet::new();
    for edit in &script.edits {
        match edit {
            Edit::Delete { node, .. } | Edit::Move { node, .. } => {
                if !consumed.insert(*node) {
                    return Err(format!("node {node} used twice"));
                }
            }
            Edit::Insert { node, .. } => {
                for id in ids(node) {
                    if source_ids.contains(&id) || !inserted.insert(id) {
                        return Err(format!("inserted node {id} is not fresh"));
                    }
                }
            }
            Edit::UpdateLiteral { .. } => {}
        }
    }
    for edit in &script.edits {
        if let Some(id) = edit.source_node() {
            if inserted.contains(&id) && !matches!(edit, Edit::Insert { .. }) {
                // only the parent of a later insert may be a fresh node
                return Err(format!("inserted node {id} is edited again"));
            }
        }
    }
    Ok(())
}

fn check_pair(source: &TreeNode, target: &TreeNode) -> Result<(), TestCaseError> {
    let script = diff(source, target);
    let result = apply(source, &script).map_err(|e| TestCaseError::fail(format!("{e}: {script:#?}")))?;
    prop_assert!(isomorphic(&result, target), "apply(S, diff(S,T)) differs from T: {script:#?}");
    exactly_once(source, &script).map_err(TestCaseError::fail)?;
    prop_assert!(diff(source, source).is_empty());
    prop_assert!(diff(target, target).is_empty());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1200, ..ProptestConfig::default() })]

    #[test]
    fn diff_apply_round_trips(seed in any::<u64>(), groups in 1usize..8, mutations in 1usize..5) {
        let mut rng = StdRng::seed_from_u64(seed);
        let source = common::random_region(&mut rng, groups, 6);
        let target = common::mutated(&mut rng, &source, mutations);
        check_pair(&source, &target)?;
        check_pair(&target, &source)?;
    }

    #[test]
    fn unrelated_regions_round_trip(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let source = common::random_region(&mut rng, 4, 5);
        let target = common::random_region(&mut rng, 3, 5);
        check_pair(&source, &target)?;
    }
}

fn subtree_counts(root: &TreeNode) -> (HashMap<u128, usize>, HashMap<NodeId, u128>) {
    let hashes = hash_tree(root);
    let mut counts = HashMap::new();
    let mut by_id = HashMap::new();
    for n in root.preorder() {
        let h = hashes[&n.id].full;
        *counts.entry(h).or_insert(0) += 1;
        by_id.insert(n.id, h);
    }
    (counts, by_id)
}

fn find_by_id(root: &TreeNode, id: NodeId) -> Option<&TreeNode> {
    root.find(id)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 400, ..ProptestConfig::default() })]

    /// Subtrees with a unique full hash in both trees survive with all their
    /// nodes, unless they are register or label names that may be renamed in
    /// place.
    #[test]
    fn unique_shared_subtrees_are_reused(seed in any::<u64>(), mutations in 1usize..4) {
        let mut rng = StdRng::seed_from_u64(seed);
        let source = common::random_region(&mut rng, 5, 6);
        let target = common::mutated(&mut rng, &source, mutations);
        let script = diff(&source, &target);
        let result = apply(&source, &script).unwrap();
        let (src_counts, src_hash) = subtree_counts(&source);
        let (tgt_counts, _) = subtree_counts(&target);
        let updated: HashSet<NodeId> = script
            .edits
            .iter()
            .filter_map(|e| match e { Edit::UpdateLiteral { node, .. } => Some(*node), _ => None })
            .collect();
        for n in source.preorder().into_iter().skip(1) {
            let h = src_hash[&n.id];
            if src_counts[&h] != 1 || tgt_counts.get(&h) != Some(&1) {
                continue;
            }
            if n.preorder().iter().any(|d| d.kind.is_register() || d.kind.is_label()) {
                continue;
            }
            let kept = find_by_id(&result, n.id);
            prop_assert!(kept.is_some_and(|k| isomorphic(k, n) && ids(k) == ids(n)),
                "unique subtree {} was not reused: {script:#?}", n.id);
            prop_assert!(n.preorder().iter().all(|d| !updated.contains(&d.id)));
        }
    }
}

#[test]
fn identical_large_region_has_empty_diff() {
    let mut rng = StdRng::seed_from_u64(7);
    let r = common::sized_region(&mut rng, 2000);
    assert!(diff(&r, &r.clone()).is_empty());
}
