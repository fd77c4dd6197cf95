//! Merges one noisy synthetic scene and reports what the solver kept.
//!
//! ```bash
//! cargo run --release --example merge_scene -- 7
//! ```

use std::collections::BTreeMap;

use panomerge::merging::{merge_qubo, MergeConfig};
use panomerge::metrics::{scene_pq, PqOptions};
use panomerge::synthgen::{generate_scene, SceneSpec};

fn main() -> panomerge::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let scene = generate_scene(&SceneSpec {
        seed,
        ..Default::default()
    })?;
    let out = merge_qubo(&scene.proposals, &MergeConfig::default())?;

    let mut per_source: BTreeMap<u16, (usize, usize)> = BTreeMap::new();
    for (q, &src) in scene.proposal_sources.iter().enumerate() {
        let e = per_source.entry(src).or_default();
        e.0 += 1;
        e.1 += usize::from(out.selected.contains(&q));
    }
    println!("gt instance  proposals  kept");
    for (src, (n, kept)) in per_source {
        println!("{src:>11} {n:>10} {kept:>5}");
    }
    let report = scene_pq(&out.map, &scene.gt, &scene.classes, &PqOptions::default())?;
    println!("objective {:.1}, scene-PQ {:.2}", out.objective, report.pq);
    Ok(())
}
