//! Seeded synthetic multi-view scenes with ground truth, corrupted
//! proposals, and splat weight tables.
//!
//! A scene is a square world canvas of stuff bands overlaid with rectangles
//! and disks (things). Views are axis-aligned crop windows of the canvas, so
//! the same object appears in several views under one ground-truth ID.
//! Geometry is laid out on a grid of `tile_size` pixel cells and every cell
//! carries one splat, which makes each splat see exactly one object.
//!
//! Randomness comes from three independent xoshiro streams derived from the
//! seed: world layout, view windows, and proposal corruption. Supplying
//! explicit windows therefore leaves the world unchanged, which is how novel
//! views of the same scene are produced.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::mask::{ClassTable, PanopticMap, SoftMaskSet, VOID_INSTANCE};
use crate::uplift::{SplatRecord, SplatWeightTable};

/// Fraction of its own footprint an earlier thing must keep visible when
/// later things are placed on top of it.
const MIN_VISIBLE_FRACTION: f64 = 0.6;
const PLACEMENT_ATTEMPTS: usize = 200;
/// Logit given to the true class before noise.
const CLASS_LOGIT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionSpec {
    /// Probability that an instance yields `duplicates` near-identical proposals.
    pub duplicate_rate: f64,
    pub duplicates: usize,
    /// Per-view dilation/erosion drawn uniformly from `[-b, b]` pixels.
    pub boundary_noise_px: usize,
    /// Box-blur radius in pixels (rounded) applied to binary masks.
    pub softness: f64,
    /// Probability that an instance is split into two partial proposals.
    pub fragment_rate: f64,
    /// Standard deviation of Gaussian noise on class logits.
    pub class_noise: f64,
    /// Per-view mask strength is drawn from `[1 − j, 1]`.
    pub view_confidence_jitter: f64,
    /// Instances with fewer visible pixels (over all views) get no proposal.
    pub min_visible_px: usize,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            duplicate_rate: 0.3,
            duplicates: 2,
            boundary_noise_px: 1,
            softness: 1.0,
            fragment_rate: 0.1,
            class_noise: 0.5,
            view_confidence_jitter: 0.25,
            min_visible_px: 32,
        }
    }
}

impl CorruptionSpec {
    /// Proposals identical to the ground truth.
    pub fn none() -> Self {
        Self {
            duplicate_rate: 0.0,
            duplicates: 2,
            boundary_noise_px: 0,
            softness: 0.0,
            fragment_rate: 0.0,
            class_noise: 0.0,
            view_confidence_jitter: 0.0,
            min_visible_px: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("duplicate rate", self.duplicate_rate),
            ("fragment rate", self.fragment_rate),
            ("view confidence jitter", self.view_confidence_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.duplicates < 2 {
            return Err(Error::invalid("duplicates must be at least 2"));
        }
        if self.softness.is_nan() || self.softness < 0.0 || self.class_noise.is_nan() || self.class_noise < 0.0 {
            return Err(Error::invalid("softness and class noise must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub num_views: usize,
    pub height: usize,
    pub width: usize,
    pub num_things: usize,
    pub num_stuff: usize,
    pub thing_classes: usize,
    /// Side of the square world canvas in pixels.
    pub world_size: usize,
    /// Side of a layout cell (and splat footprint) in pixels.
    pub tile_size: usize,
    /// Top-left `(row, col)` of each view; drawn at random when `None`.
    pub view_windows: Option<Vec<(usize, usize)>>,
    pub corruption: CorruptionSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_views: 4,
            height: 48,
            width: 48,
            num_things: 6,
            num_stuff: 2,
            thing_classes: 4,
            world_size: 80,
            tile_size: 2,
            view_windows: None,
            corruption: CorruptionSpec::default(),
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.num_views == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("views and image size must be positive"));
        }
        if self.tile_size == 0 || !self.world_size.is_multiple_of(self.tile_size) {
            return Err(Error::invalid(format!(
                "world size {} must be a positive multiple of tile size {}",
                self.world_size, self.tile_size
            )));
        }
        if self.height > self.world_size || self.width > self.world_size {
            return Err(Error::invalid("views must fit inside the world canvas"));
        }
        if self.num_stuff > self.world_size / self.tile_size {
            return Err(Error::invalid("more stuff bands than canvas rows"));
        }
        if self.num_things > 0 && self.thing_classes == 0 {
            return Err(Error::invalid("things need at least one thing class"));
        }
        if self.thing_classes + self.num_stuff == 0 {
            return Err(Error::invalid("scene needs at least one class"));
        }
        if let Some(w) = &self.view_windows {
            if w.len() != self.num_views {
                return Err(Error::invalid(format!(
                    "{} view windows for {} views",
                    w.len(),
                    self.num_views
                )));
            }
            self.check_windows(w)?;
        }
        self.corruption.validate()
    }

    fn check_windows(&self, windows: &[(usize, usize)]) -> Result<()> {
        for &(r, c) in windows {
            if r + self.height > self.world_size || c + self.width > self.world_size {
                return Err(Error::invalid(format!(
                    "view window at ({r}, {c}) does not fit in the {0}x{0} canvas",
                    self.world_size
                )));
            }
        }
        Ok(())
    }

    /// Class table: thing classes first, then one class per stuff band.
    pub fn class_table(&self) -> ClassTable {
        let names = (0..self.thing_classes)
            .map(|i| format!("thing_{i}"))
            .chain((0..self.num_stuff).map(|i| format!("stuff_{i}")))
            .collect();
        let flags = (0..self.thing_classes + self.num_stuff)
            .map(|i| i < self.thing_classes)
            .collect();
        ClassTable::new(names, flags).expect("validated sizes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Band {
        top: usize,
        bottom: usize,
    },
    Rect {
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    },
    Disk {
        cy: usize,
        cx: usize,
        r: usize,
    },
}

impl Shape {
    fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Shape::Band { top, bottom } => row >= top && row < bottom,
            Shape::Rect { top, left, h, w } => row >= top && row < top + h && col >= left && col < left + w,
            Shape::Disk { cy, cx, r } => {
                let (dy, dx) = (row as i64 - cy as i64, col as i64 - cx as i64);
                dy * dy + dx * dx <= (r * r) as i64
            }
        }
    }
}

/// A generated scene. Ground-truth instance IDs are world object indices
/// plus one, stable across any set of views.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    pub classes: ClassTable,
    pub windows: Vec<(usize, usize)>,
    pub gt: PanopticMap,
    pub proposals: SoftMaskSet,
    /// Ground-truth instance each proposal was derived from.
    pub proposal_sources: Vec<u16>,
    pub splats: SplatWeightTable,
    /// Object ID per layout cell, row-major (`0` = empty).
    cells: Vec<u16>,
    object_classes: Vec<u16>,
}

fn streams(seed: u64) -> [Xoshiro256PlusPlus; 3] {
    let world = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut windows = world.clone();
    windows.jump();
    let mut proposals = windows.clone();
    proposals.jump();
    [world, windows, proposals]
}

/// Generates ground truth, proposals, and splat weights for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let [mut world_rng, mut window_rng, mut proposal_rng] = streams(spec.seed);
    let (cells, object_classes) = layout(spec, &mut world_rng)?;
    let windows = match &spec.view_windows {
        Some(w) => w.clone(),
        None => (0..spec.num_views)
            .map(|_| {
                (
                    window_rng.random_range(0..=spec.world_size - spec.height),
                    window_rng.random_range(0..=spec.world_size - spec.width),
                )
            })
            .collect(),
    };
    let classes = spec.class_table();
    let mut scene = Scene {
        spec: spec.clone(),
        classes,
        gt: PanopticMap::void(1, 1, 1)?,
        proposals: SoftMaskSet::new(
            1,
            1,
            1,
            1,
            vec![0.0],
            vec![0.0; spec.thing_classes + spec.num_stuff],
            spec.class_table(),
        )?,
        proposal_sources: Vec::new(),
        splats: SplatWeightTable::new(0, 1, 1, 1, Vec::new())?,
        windows: windows.clone(),
        cells,
        object_classes,
    };
    scene.gt = scene.render_gt(&windows)?;
    scene.splats = scene.splat_table(&windows)?;
    let (proposals, sources) = corrupt(&scene, &mut proposal_rng)?;
    scene.proposals = proposals;
    scene.proposal_sources = sources;
    Ok(scene)
}

fn layout(spec: &SceneSpec, rng: &mut Xoshiro256PlusPlus) -> Result<(Vec<u16>, Vec<u16>)> {
    let n = spec.world_size / spec.tile_size;
    let mut shapes = Vec::new();
    let mut classes = Vec::new();

    // Stuff: horizontal bands with distinct random cut rows.
    if spec.num_stuff > 0 {
        let mut cuts: Vec<usize> = (1..n).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(spec.num_stuff - 1).collect();
        cuts.sort_unstable();
        let bounds: Vec<usize> = std::iter::once(0).chain(cuts).chain(std::iter::once(n)).collect();
        for (i, pair) in bounds.windows(2).enumerate() {
            shapes.push(Shape::Band {
                top: pair[0],
                bottom: pair[1],
            });
            classes.push((spec.thing_classes + i) as u16);
        }
    }

    let paint = |shapes: &[Shape]| -> Vec<u16> {
        let mut cells = vec![VOID_INSTANCE; n * n];
        for (id, s) in shapes.iter().enumerate() {
            for r in 0..n {
                for c in 0..n {
                    if s.contains(r, c) {
                        cells[r * n + c] = (id + 1) as u16;
                    }
                }
            }
        }
        cells
    };
    let footprint = |s: &Shape| (0..n * n).filter(|&k| s.contains(k / n, k % n)).count();

    let max_side = (n / 4).max(3);
    let max_radius = (n / 8).max(2);
    for _ in 0..spec.num_things {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = if rng.random_bool(0.5) {
                let h = rng.random_range(3..=max_side).min(n);
                let w = rng.random_range(3..=max_side).min(n);
                Shape::Rect {
                    top: rng.random_range(0..=n - h),
                    left: rng.random_range(0..=n - w),
                    h,
                    w,
                }
            } else {
                let r = rng.random_range(2..=max_radius);
                if 2 * r + 1 > n {
                    continue;
                }
                Shape::Disk {
                    cy: rng.random_range(r..n - r),
                    cx: rng.random_range(r..n - r),
                    r,
                }
            };
            let mut trial = shapes.clone();
            trial.push(shape);
            let cells = paint(&trial);
            let ok = trial.iter().enumerate().skip(spec.num_stuff).all(|(id, s)| {
                let visible = cells.iter().filter(|&&c| c as usize == id + 1).count();
                visible as f64 >= MIN_VISIBLE_FRACTION * footprint(s) as f64
            });
            if ok {
                shapes = trial;
                classes.push(rng.random_range(0..spec.thing_classes) as u16);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "overfull scene: could not place thing {} of {} on a {n}x{n} cell canvas",
                shapes.len() - spec.num_stuff + 1,
                spec.num_things
            )));
        }
    }
    if shapes.len() >= u16::MAX as usize {
        return Err(Error::TooLarge(format!("{} objects", shapes.len())));
    }
    Ok((paint(&shapes), classes))
}

impl Scene {
    fn cell_at(&self, row: usize, col: usize) -> (usize, u16) {
        let t = self.spec.tile_size;
        let n = self.spec.world_size / t;
        let cell = (row / t) * n + col / t;
        (cell, self.cells[cell])
    }

    /// Ground truth as seen through `windows`.
    pub fn render_gt(&self, windows: &[(usize, usize)]) -> Result<PanopticMap> {
        self.spec.check_windows(windows)?;
        if windows.is_empty() {
            return Err(Error::Empty("view windows"));
        }
        let (h, w) = (self.spec.height, self.spec.width);
        let mut ids = Vec::with_capacity(windows.len() * h * w);
        for &(r0, c0) in windows {
            for r in 0..h {
                for c in 0..w {
                    ids.push(self.cell_at(r0 + r, c0 + c).1);
                }
            }
        }
        let mut classes = BTreeMap::new();
        for &id in &ids {
            if id != VOID_INSTANCE {
                classes.insert(id, self.object_classes[id as usize - 1]);
            }
        }
        PanopticMap::new(windows.len(), h, w, ids, classes)
    }

    /// One splat per layout cell; each pixel gets its cell's splat with an
    /// isotropic Gaussian falloff from the cell centre.
    pub fn splat_table(&self, windows: &[(usize, usize)]) -> Result<SplatWeightTable> {
        self.spec.check_windows(windows)?;
        let t = self.spec.tile_size as f64;
        let sigma = t / 2.0;
        let n = self.spec.world_size / self.spec.tile_size;
        let (h, w) = (self.spec.height, self.spec.width);
        let mut records = Vec::with_capacity(windows.len() * h * w);
        for (v, &(r0, c0)) in windows.iter().enumerate() {
            for r in 0..h {
                for c in 0..w {
                    let (wr, wc) = (r0 + r, c0 + c);
                    let (cell, _) = self.cell_at(wr, wc);
                    let cy = (wr / self.spec.tile_size) as f64 * t + t / 2.0;
                    let cx = (wc / self.spec.tile_size) as f64 * t + t / 2.0;
                    let (dy, dx) = (wr as f64 + 0.5 - cy, wc as f64 + 0.5 - cx);
                    let weight = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                    records.push(SplatRecord {
                        splat: cell as u32,
                        view: v as u16,
                        pixel: (r * w + c) as u32,
                        weight: weight as f32,
                    });
                }
            }
        }
        SplatWeightTable::new(n * n, windows.len(), h, w, records)
    }
}

fn corrupt(scene: &Scene, rng: &mut Xoshiro256PlusPlus) -> Result<(SoftMaskSet, Vec<u16>)> {
    let spec = &scene.spec;
    let cfg = &spec.corruption;
    let (n, h, w) = (scene.windows.len(), spec.height, spec.width);
    let num_classes = scene.classes.len();
    let instances = scene.gt.present_instances();

    let mut proposals: Vec<(u16, Vec<f32>, Vec<f32>)> = Vec::new();
    for &id in &instances {
        let binary: Vec<bool> = scene.gt.instance_ids().iter().map(|&x| x == id).collect();
        if binary.iter().filter(|&&b| b).count() < cfg.min_visible_px {
            continue;
        }
        let roll: f64 = rng.random();
        let parts: Vec<Vec<bool>> = if roll < cfg.duplicate_rate {
            vec![binary.clone(); cfg.duplicates]
        } else if rng.random::<f64>() < cfg.fragment_rate {
            split(scene, &binary, rng)
        } else {
            vec![binary]
        };
        for part in parts {
            let mut values = Vec::with_capacity(part.len());
            for v in 0..n {
                let view = &part[v * h * w..(v + 1) * h * w];
                let d = if cfg.boundary_noise_px > 0 {
                    let b = cfg.boundary_noise_px as i64;
                    rng.random_range(-b..=b)
                } else {
                    0
                };
                let mut jittered = morph(view, h, w, d);
                // Boundary noise may thin a mask but not wipe it out.
                if d < 0 && 2 * count(&jittered) < count(view) {
                    jittered = view.to_vec();
                }
                let strength = 1.0 - cfg.view_confidence_jitter * rng.random::<f64>();
                let radius = cfg.softness.round() as usize;
                values.extend(blur(&jittered, h, w, radius).into_iter().map(|x| (x * strength) as f32));
            }
            let class = scene.gt.class_of(id) as usize;
            let logits: Vec<f64> = (0..num_classes)
                .map(|c| {
                    let noise: f64 = rng.sample(StandardNormal);
                    let base = if c == class { CLASS_LOGIT } else { 0.0 };
                    base + noise * cfg.class_noise
                })
                .collect();
            proposals.push((id, values, softmax(&logits)));
        }
    }
    if proposals.is_empty() {
        return Err(Error::invalid("scene has no detectable instance"));
    }
    proposals.shuffle(rng);
    let m = proposals.len();
    let mut values = Vec::with_capacity(m * n * h * w);
    let mut probs = Vec::with_capacity(m * num_classes);
    let mut sources = Vec::with_capacity(m);
    for (id, v, p) in proposals {
        values.extend(v);
        probs.extend(p);
        sources.push(id);
    }
    let set = SoftMaskSet::new(m, n, h, w, values, probs, scene.classes.clone())?;
    Ok((set, sources))
}

fn softmax(logits: &[f64]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.iter().map(|e| (e / z) as f32).collect()
}

/// Splits an instance into two parts that share a one-pixel seam. The cut
/// runs across the longer side of the world bounding box and falls where
/// 40-60% of the visible pixels lie before it.
fn split(scene: &Scene, binary: &[bool], rng: &mut Xoshiro256PlusPlus) -> Vec<Vec<bool>> {
    let (h, w) = (scene.spec.height, scene.spec.width);
    let coord = |k: usize| {
        let v = k / (h * w);
        let (r0, c0) = scene.windows[v];
        (r0 + (k % (h * w)) / w, c0 + k % w)
    };
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for (k, _) in binary.iter().enumerate().filter(|(_, &b)| b) {
        let (r, c) = coord(k);
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    }
    let along_rows = rmax - rmin >= cmax - cmin;
    let key = |k: usize| {
        let (r, c) = coord(k);
        if along_rows {
            r
        } else {
            c
        }
    };
    let mut keys: Vec<usize> = binary
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(k, _)| key(k))
        .collect();
    keys.sort_unstable();
    let rank = ((keys.len() as f64 * rng.random_range(0.4..0.6)) as usize).min(keys.len() - 1);
    let cut = keys[rank];
    let first = binary.iter().enumerate().map(|(k, &b)| b && key(k) <= cut).collect();
    let second = binary.iter().enumerate().map(|(k, &b)| b && key(k) >= cut).collect();
    vec![first, second]
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Dilates (`d > 0`) or erodes (`d < 0`) with a square of radius `|d|`.
/// Pixels outside the view do not take part.
fn morph(mask: &[bool], h: usize, w: usize, d: i64) -> Vec<bool> {
    if d == 0 {
        return mask.to_vec();
    }
    let rad = d.unsigned_abs() as usize;
    let dilate = d > 0;
    (0..h * w)
        .map(|k| {
            let (r, c) = (k / w, k % w);
            let rows = r.saturating_sub(rad)..(r + rad + 1).min(h);
            let mut hit = !dilate;
            for rr in rows {
                for cc in c.saturating_sub(rad)..(c + rad + 1).min(w) {
                    if mask[rr * w + cc] == dilate {
                        hit = dilate;
                    }
                }
            }
            hit
        })
        .collect()
}

/// Box blur with clamped window, returning values in `[0, 1]`.
fn blur(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    }
    (0..h * w)
        .map(|k| {
            let (r, c) = (k / w, k % w);
            let (mut on, mut total) = (0usize, 0usize);
            for rr in r.saturating_sub(radius)..(r + radius + 1).min(h) {
                for cc in c.saturating_sub(radius)..(c + radius + 1).min(w) {
                    total += 1;
                    on += mask[rr * w + cc] as usize;
                }
            }
            on as f64 / total as f64
        })
        .collect()
}
