//! Uplifting per-pixel instance labels onto splat primitives and rendering
//! them back.
//!
//! Each splat `i` collects the one-hot labels of every `(view, pixel)` it
//! contributes to, weighted by its alpha-blend weight `w_i(n, u)` and
//! normalized by `Z_w = Σ w_i(n, u)`. Column 0 of a distribution is void.
//! Rendering accumulates `Σ_i w_i(n, u) · g_i` per pixel and takes the argmax.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::mask::{PanopticMap, VOID_INSTANCE};

/// Above this many label columns distributions are stored sparsely.
pub const DENSE_LABEL_LIMIT: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatRecord {
    pub splat: u32,
    pub view: u16,
    /// Row-major pixel index within the view, `row * W + col`.
    pub pixel: u32,
    pub weight: f32,
}

/// Sparse alpha-blend weights of splats over view pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatWeightTable {
    num_splats: usize,
    num_views: usize,
    height: usize,
    width: usize,
    records: Vec<SplatRecord>,
}

impl SplatWeightTable {
    pub fn new(
        num_splats: usize,
        num_views: usize,
        height: usize,
        width: usize,
        records: Vec<SplatRecord>,
    ) -> Result<Self> {
        if num_views == 0 || height == 0 || width == 0 {
            return Err(Error::shape("splat table views and image size must be positive"));
        }
        let pixels = height * width;
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.splat as usize >= num_splats {
                return Err(Error::IndexOutOfRange {
                    what: "splats",
                    index: r.splat as usize,
                    len: num_splats,
                });
            }
            if r.view as usize >= num_views {
                return Err(Error::IndexOutOfRange {
                    what: "views",
                    index: r.view as usize,
                    len: num_views,
                });
            }
            if r.pixel as usize >= pixels {
                return Err(Error::IndexOutOfRange {
                    what: "pixels",
                    index: r.pixel as usize,
                    len: pixels,
                });
            }
            if r.weight < 0.0 || !r.weight.is_finite() {
                return Err(Error::invalid(format!(
                    "splat {} has weight {} at view {} pixel {}",
                    r.splat, r.weight, r.view, r.pixel
                )));
            }
            if !seen.insert((r.splat, r.view, r.pixel)) {
                return Err(Error::invalid(format!(
                    "duplicate record for splat {} view {} pixel {}",
                    r.splat, r.view, r.pixel
                )));
            }
        }
        Ok(Self {
            num_splats,
            num_views,
            height,
            width,
            records,
        })
    }

    pub fn num_splats(&self) -> usize {
        self.num_splats
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn records(&self) -> &[SplatRecord] {
        &self.records
    }

    /// Same records with every weight in `view` multiplied by `factor`.
    pub fn scale_view(&self, view: u16, factor: f32) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| SplatRecord {
                weight: if r.view == view { r.weight * factor } else { r.weight },
                ..*r
            })
            .collect();
        Self::new(self.num_splats, self.num_views, self.height, self.width, records)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Rows {
    Dense(Vec<f64>),
    Sparse(Vec<Vec<(u32, f64)>>),
}

/// Per-splat label distributions over `labels` columns (column 0 = void).
#[derive(Clone, Debug, PartialEq)]
pub struct SplatLabelField {
    labels: usize,
    rows: Rows,
    observed: Vec<bool>,
}

impl SplatLabelField {
    /// A dense field from raw rows (`splats × labels`). Rows that are all zero
    /// are unobserved.
    pub fn from_dense(splats: usize, labels: usize, values: Vec<f64>) -> Result<Self> {
        if labels == 0 {
            return Err(Error::shape("label field needs at least the void column"));
        }
        if values.len() != splats * labels {
            return Err(Error::shape(format!(
                "label field has {} values, expected {splats}x{labels}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("label distributions must be finite and nonnegative"));
        }
        let observed = values.chunks(labels).map(|r| r.iter().any(|&v| v > 0.0)).collect();
        Ok(Self {
            labels,
            rows: Rows::Dense(values),
            observed,
        })
    }

    pub fn num_splats(&self) -> usize {
        self.observed.len()
    }

    /// Number of label columns, void included.
    pub fn num_labels(&self) -> usize {
        self.labels
    }

    pub fn is_observed(&self, splat: usize) -> bool {
        self.observed[splat]
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.rows, Rows::Dense(_))
    }

    /// Nonzero `(label, probability)` entries of one splat, ascending label.
    pub fn row_entries(&self, splat: usize) -> Vec<(u32, f64)> {
        match &self.rows {
            Rows::Dense(v) => v[splat * self.labels..(splat + 1) * self.labels]
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(l, &p)| (l as u32, p))
                .collect(),
            Rows::Sparse(rows) => rows[splat].clone(),
        }
    }

    /// Full row of one splat.
    pub fn row(&self, splat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.labels];
        for (l, p) in self.row_entries(splat) {
            out[l as usize] = p;
        }
        out
    }

    /// Dense `splats × labels` copy of the field.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.rows {
            Rows::Dense(v) => v.clone(),
            Rows::Sparse(_) => (0..self.num_splats()).flat_map(|s| self.row(s)).collect(),
        }
    }
}

/// Aggregates the one-hot instance labels of `labels` onto every splat.
pub fn uplift_labels(labels: &PanopticMap, weights: &SplatWeightTable) -> Result<SplatLabelField> {
    if labels.num_views() != weights.num_views || labels.height() != weights.height || labels.width() != weights.width {
        return Err(Error::shape(format!(
            "labels are {}x{}x{} but splat table covers {}x{}x{}",
            labels.num_views(),
            labels.height(),
            labels.width(),
            weights.num_views,
            weights.height,
            weights.width
        )));
    }
    let max_id = labels.instance_ids().iter().copied().max().unwrap_or(0) as usize;
    let num_labels = max_id.max(labels.instance_to_class().keys().next_back().copied().unwrap_or(0) as usize) + 1;
    let g = weights.num_splats;
    let pixels = weights.height * weights.width;

    let mut mass: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); g];
    let mut total = vec![0.0f64; g];
    for r in &weights.records {
        let label = labels.instance_ids()[r.view as usize * pixels + r.pixel as usize] as u32;
        let w = r.weight as f64;
        *mass[r.splat as usize].entry(label).or_default() += w;
        total[r.splat as usize] += w;
    }
    let observed: Vec<bool> = total.iter().map(|&z| z > 0.0).collect();
    let normalized = mass.into_iter().zip(&total).map(|(row, &z)| {
        if z > 0.0 {
            row.into_iter()
                .filter(|&(_, w)| w > 0.0)
                .map(|(l, w)| (l, w / z))
                .collect()
        } else {
            Vec::new()
        }
    });
    let rows = if num_labels > DENSE_LABEL_LIMIT {
        Rows::Sparse(normalized.collect())
    } else {
        let mut dense = vec![0.0; g * num_labels];
        for (s, row) in normalized.enumerate() {
            for (l, p) in row {
                dense[s * num_labels + l as usize] = p;
            }
        }
        Rows::Dense(dense)
    };
    Ok(SplatLabelField {
        labels: num_labels,
        rows,
        observed,
    })
}

/// Renders the instance map of one view. Pixels with no accumulated label
/// mass are void; ties go to the lower label.
pub fn render_labels(field: &SplatLabelField, weights: &SplatWeightTable, view: usize) -> Result<Vec<u16>> {
    if view >= weights.num_views {
        return Err(Error::IndexOutOfRange {
            what: "views",
            index: view,
            len: weights.num_views,
        });
    }
    if field.num_splats() != weights.num_splats {
        return Err(Error::shape(format!(
            "label field has {} splats, weight table has {}",
            field.num_splats(),
            weights.num_splats
        )));
    }
    if field.labels > u16::MAX as usize + 1 {
        return Err(Error::TooLarge(format!("{} labels", field.labels)));
    }
    let pixels = weights.height * weights.width;
    let mut acc: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); pixels];
    for r in weights.records.iter().filter(|r| r.view as usize == view) {
        let w = r.weight as f64;
        if w == 0.0 {
            continue;
        }
        let slot = &mut acc[r.pixel as usize];
        for (l, p) in field.row_entries(r.splat as usize) {
            *slot.entry(l).or_default() += w * p;
        }
    }
    Ok(acc
        .into_iter()
        .map(|m| {
            let mut best: Option<(u32, f64)> = None;
            for (l, v) in m {
                if v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((l, v));
                }
            }
            best.map_or(VOID_INSTANCE, |(l, _)| l as u16)
        })
        .collect())
}

/// Renders every view of `weights` into a panoptic map, taking instance
/// classes from `instance_to_class` (usually the map that was uplifted).
pub fn render_panoptic(
    field: &SplatLabelField,
    weights: &SplatWeightTable,
    instance_to_class: &BTreeMap<u16, u16>,
) -> Result<PanopticMap> {
    let mut ids = Vec::with_capacity(weights.num_views * weights.height * weights.width);
    for v in 0..weights.num_views {
        ids.extend(render_labels(field, weights, v)?);
    }
    let classes = instance_to_class
        .iter()
        .filter(|(id, _)| ids.contains(id))
        .map(|(&id, &c)| (id, c))
        .collect();
    PanopticMap::new(weights.num_views, weights.height, weights.width, ids, classes)
}
