//! End-to-end properties across synthgen, merging, metrics, and uplift.

use panomerge::mask::PanopticMap;
use panomerge::merging::{merge_qubo, MergeConfig, Solver};
use panomerge::metrics::{scene_pq, PqOptions};
use panomerge::synthgen::{generate_scene, CorruptionSpec, SceneSpec};
use panomerge::uplift::{render_panoptic, uplift_labels};
use proptest::prelude::*;

/// Soft IoU of a proposal against a binary instance mask.
fn soft_iou(proposal: &[f32], gt: &PanopticMap, instance: u16) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for (&p, &id) in proposal.iter().zip(gt.instance_ids()) {
        let g = if id == instance { 1.0 } else { 0.0 };
        inter += f64::min(p as f64, g);
        union += f64::max(p as f64, g);
    }
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn worst_faithfulness(corruption: CorruptionSpec, seeds: std::ops::Range<u64>) -> f64 {
    let mut worst = f64::INFINITY;
    for seed in seeds {
        let scene = generate_scene(&SceneSpec {
            seed,
            corruption: corruption.clone(),
            ..SceneSpec::default()
        })
        .unwrap();
        for (q, &src) in scene.proposal_sources.iter().enumerate() {
            worst = worst.min(soft_iou(scene.proposals.mask(q).unwrap(), &scene.gt, src));
        }
    }
    worst
}

#[test]
fn whole_proposals_stay_faithful_to_their_source() {
    let corruption = CorruptionSpec {
        fragment_rate: 0.0,
        ..CorruptionSpec::default()
    };
    let worst = worst_faithfulness(corruption, 0..100);
    assert!(worst >= 0.3, "worst IoU {worst}");
}

#[test]
fn fragments_keep_a_fair_share_of_their_source() {
    // A fragment holds 40-60% of the visible instance before boundary noise.
    let corruption = CorruptionSpec {
        fragment_rate: 1.0,
        duplicate_rate: 0.0,
        ..CorruptionSpec::default()
    };
    let worst = worst_faithfulness(corruption, 0..100);
    assert!(worst >= 0.15, "worst IoU {worst}");
}

#[test]
fn three_view_clean_scene_is_recovered() {
    let spec = SceneSpec {
        seed: 3,
        num_views: 3,
        corruption: CorruptionSpec::none(),
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).unwrap();
    let out = merge_qubo(&scene.proposals, &MergeConfig::default()).unwrap();
    let r = scene_pq(&out.map, &scene.gt, &scene.classes, &PqOptions::default()).unwrap();
    assert_eq!(r.pq, 100.0);
    assert_eq!(out.map.present_instances().len(), scene.gt.present_instances().len());
}

#[test]
fn uplifted_labels_render_into_novel_views() {
    let spec = SceneSpec {
        seed: 11,
        corruption: CorruptionSpec::none(),
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).unwrap();
    let merged = merge_qubo(&scene.proposals, &MergeConfig::default()).unwrap().map;
    let field = uplift_labels(&merged, &scene.splats).unwrap();

    // Novel windows inside the union of the training views see only
    // observed splats, so they must match the ground truth rendered there.
    let (r0, c0) = scene.windows[0];
    let novel = vec![(r0, c0)];
    let table = scene.splat_table(&novel).unwrap();
    let rendered = render_panoptic(&field, &table, merged.instance_to_class()).unwrap();
    let gt = scene.render_gt(&novel).unwrap();
    let r = scene_pq(&rendered, &gt, &scene.classes, &PqOptions::default()).unwrap();
    assert_eq!(r.pq, 100.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn query_order_does_not_change_the_merge(seed in 0u64..500, rotate in 1usize..7) {
        let scene = generate_scene(&SceneSpec { seed, ..SceneSpec::default() }).unwrap();
        let m = scene.proposals.num_queries();
        let order: Vec<usize> = (0..m).map(|i| (i + rotate) % m).rev().collect();
        let shuffled = scene.proposals.select_queries(&order).unwrap();
        let cfg = MergeConfig { solver: Solver::Exact, ..MergeConfig::default() };
        let a = merge_qubo(&scene.proposals, &cfg).unwrap();
        let b = merge_qubo(&shuffled, &cfg).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.abs().max(1.0));
        let r = scene_pq(&a.map, &b.map, &scene.classes, &PqOptions::default()).unwrap();
        prop_assert_eq!(r.pq, 100.0);
    }

    #[test]
    fn merging_is_deterministic(seed in 0u64..500) {
        let scene = generate_scene(&SceneSpec { seed, ..SceneSpec::default() }).unwrap();
        let a = merge_qubo(&scene.proposals, &MergeConfig::default()).unwrap();
        let b = merge_qubo(&scene.proposals, &MergeConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
