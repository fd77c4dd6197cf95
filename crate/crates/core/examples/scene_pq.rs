//! Scene-level panoptic quality on a tiny hand-made scene.
//!
//! The same object carries different instance IDs in the two views of the
//! first prediction, so it counts as two segments and neither matches.

use std::collections::BTreeMap;

use panomerge::mask::{ClassTable, PanopticMap};
use panomerge::metrics::{scene_pq, PqOptions};

fn map(ids: Vec<u16>, classes: &[(u16, u16)]) -> panomerge::Result<PanopticMap> {
    PanopticMap::new(2, 2, 3, ids, classes.iter().copied().collect::<BTreeMap<_, _>>())
}

fn main() -> panomerge::Result<()> {
    let classes = ClassTable::new(vec!["chair".into(), "floor".into()], vec![true, false])?;
    #[rustfmt::skip]
    let gt = map(vec![
        1, 1, 2,   1, 1, 2,
        1, 1, 2,   1, 1, 2,
    ], &[(1, 0), (2, 1)])?;
    #[rustfmt::skip]
    let split = map(vec![
        1, 1, 3,   1, 1, 3,
        2, 2, 3,   2, 2, 3,
    ], &[(1, 0), (2, 0), (3, 1)])?;
    #[rustfmt::skip]
    let consistent = map(vec![
        5, 5, 9,   5, 5, 9,
        5, 5, 9,   5, 5, 9,
    ], &[(5, 0), (9, 1)])?;

    for (name, pred) in [("per-view ids", &split), ("consistent ids", &consistent)] {
        let r = scene_pq(pred, &gt, &classes, &PqOptions::default())?;
        println!("{name}:");
        print!("{}", r.to_text());
        println!("{}", r.to_json(true)?);
    }
    Ok(())
}
