//! QUBO merging versus the conventional pixel-vote merging on seeded
//! synthetic scenes with duplicated and fragmented proposals.
//!
//! ```bash
//! cargo run --release --example ablation -- 20
//! ```

use panomerge::merging::{merge_baseline, merge_qubo, BaselineConfig, MergeConfig};
use panomerge::metrics::{dataset_pq, scene_pq, PqOptions};
use panomerge::synthgen::{generate_scene, CorruptionSpec, SceneSpec};

fn main() -> panomerge::Result<()> {
    let scenes: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let corruption = CorruptionSpec {
        duplicate_rate: 0.5,
        fragment_rate: 0.3,
        ..Default::default()
    };
    let opts = PqOptions::default();
    let (mut qubo, mut base) = (Vec::new(), Vec::new());
    println!("{:>5} {:>8} {:>10} {:>10}", "seed", "queries", "qubo", "baseline");
    for seed in 0..scenes {
        let scene = generate_scene(&SceneSpec {
            seed,
            corruption: corruption.clone(),
            ..Default::default()
        })?;
        let q = merge_qubo(&scene.proposals, &MergeConfig::default())?;
        let b = merge_baseline(&scene.proposals, &BaselineConfig::default())?;
        let rq = scene_pq(&q.map, &scene.gt, &scene.classes, &opts)?;
        let rb = scene_pq(&b.map, &scene.gt, &scene.classes, &opts)?;
        println!(
            "{seed:>5} {:>8} {:>10.2} {:>10.2}",
            scene.proposals.num_queries(),
            rq.pq,
            rb.pq
        );
        qubo.push(rq);
        base.push(rb);
    }
    let (sq, sb) = (dataset_pq(&qubo)?, dataset_pq(&base)?);
    let wins = qubo.iter().zip(&base).filter(|(a, b)| a.pq > b.pq).count();
    println!(
        "mean scene-PQ: qubo {:.2}  baseline {:.2}  (qubo wins {wins}/{scenes})",
        sq.pq, sb.pq
    );
    Ok(())
}
