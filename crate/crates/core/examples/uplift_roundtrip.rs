//! Lifts merged labels onto splats and renders them into views that were
//! never labelled.

use panomerge::merging::{merge_qubo, MergeConfig};
use panomerge::metrics::{scene_pq, PqOptions};
use panomerge::synthgen::{generate_scene, CorruptionSpec, SceneSpec};
use panomerge::uplift::{render_panoptic, uplift_labels};

fn main() -> panomerge::Result<()> {
    let spec = SceneSpec {
        seed: 5,
        corruption: CorruptionSpec::none(),
        ..Default::default()
    };
    let scene = generate_scene(&spec)?;
    let merged = merge_qubo(&scene.proposals, &MergeConfig::default())?.map;
    let field = uplift_labels(&merged, &scene.splats)?;
    let observed = (0..field.num_splats()).filter(|&g| field.is_observed(g)).count();
    println!(
        "{observed}/{} splats observed, {} labels",
        field.num_splats(),
        field.num_labels()
    );

    let training = render_panoptic(&field, &scene.splats, merged.instance_to_class())?;
    let pq = scene_pq(&training, &scene.gt, &scene.classes, &PqOptions::default())?.pq;
    println!("training views: scene-PQ {pq:.2}");

    // Shifted windows see part of the canvas no training view covered;
    // those pixels render void and are scored as missed.
    for (dr, dc) in [(0, 0), (4, 4), (16, 0)] {
        let (r, c) = scene.windows[0];
        let max = spec.world_size - spec.height;
        let window = vec![((r + dr).min(max), (c + dc).min(max))];
        let table = scene.splat_table(&window)?;
        let rendered = render_panoptic(&field, &table, merged.instance_to_class())?;
        let gt = scene.render_gt(&window)?;
        let void = rendered.instance_ids().iter().filter(|&&id| id == 0).count();
        let pq = scene_pq(&rendered, &gt, &scene.classes, &PqOptions::default())?.pq;
        println!("novel window {:?}: scene-PQ {pq:6.2}, {void} void pixels", window[0]);
    }
    Ok(())
}
