//! Farthest-point keyframe selection over a synthetic camera path.

use panomerge::keyframe::{fps_select, FrameDescriptors, Metric};

fn main() -> panomerge::Result<()> {
    // A slow loop with a few frames revisiting the start.
    let n = 300;
    let mut values = Vec::with_capacity(n * 2);
    for i in 0..n {
        let t = i as f64 / n as f64 * std::f64::consts::TAU;
        values.extend([t.cos() * (1.0 + 0.2 * (3.0 * t).sin()), t.sin()]);
    }
    let desc = FrameDescriptors::new(n, 2, values)?;
    for metric in [Metric::Euclidean, Metric::Cosine] {
        let picked = fps_select(&desc, 12, 0, metric)?;
        println!("{metric:?}: {picked:?}");
    }
    Ok(())
}
