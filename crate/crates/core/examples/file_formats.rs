//! Writes every file type the command line reads and reads it back.

use panomerge::io;
use panomerge::synthgen::{generate_scene, SceneSpec};

fn main() -> panomerge::Result<()> {
    let dir = std::env::temp_dir().join("panomerge-formats");
    std::fs::create_dir_all(&dir)?;
    let scene = generate_scene(&SceneSpec::default())?;

    let gt = dir.join("gt.pmt");
    io::write_panoptic(&gt, &scene.gt, &scene.classes)?;
    let (map, classes) = io::read_panoptic(&gt)?;
    assert_eq!(map, scene.gt);
    assert_eq!(classes, scene.classes);

    let (masks, probs) = (dir.join("masks.pmt"), dir.join("classes.pmt"));
    io::write_proposals(&masks, &probs, &scene.proposals)?;
    assert_eq!(io::read_proposals(&masks, &probs)?, scene.proposals);

    let splats = dir.join("splats.psw");
    io::write_splats(&splats, &scene.splats)?;
    assert_eq!(io::read_splats(&splats)?, scene.splats);

    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let bytes = std::fs::read(&path)?;
        let head: String = bytes
            .iter()
            .take(4)
            .map(|&b| if b.is_ascii_graphic() { b as char } else { '.' })
            .collect();
        println!(
            "{:<14} {:>8} bytes  {head}",
            path.file_name().unwrap().to_string_lossy(),
            bytes.len()
        );
    }
    Ok(())
}
