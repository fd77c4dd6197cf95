//! Builds the selection QUBO for a handful of proposals and compares the
//! annealer against exhaustive enumeration.

use panomerge::mask::{overlap_matrix, weighted_area};
use panomerge::qubo::{build_qubo, solve_anneal, solve_exact, AnnealConfig, DEFAULT_PENALTY};
use panomerge::synthgen::{generate_scene, SceneSpec};

fn main() -> panomerge::Result<()> {
    let scene = generate_scene(&SceneSpec {
        seed: 2,
        ..Default::default()
    })?;
    let masks = &scene.proposals;
    let m = masks.num_queries();
    let overlaps = overlap_matrix(masks);
    for i in 0..m {
        let row: Vec<String> = (0..m).map(|j| format!("{:6.0}", overlaps[i * m + j])).collect();
        println!("q{i:<2} area {:7.1} | {}", weighted_area(masks, i)?, row.join(" "));
    }

    let q = build_qubo(masks, DEFAULT_PENALTY)?;
    let exact = solve_exact(&q)?;
    let annealed = solve_anneal(&q, &AnnealConfig::default())?;
    println!("exact   {:?} objective {:.2}", exact.selected(), exact.objective());
    println!(
        "anneal  {:?} objective {:.2}",
        annealed.selected(),
        annealed.objective()
    );
    println!("sources {:?}", scene.proposal_sources);
    Ok(())
}
