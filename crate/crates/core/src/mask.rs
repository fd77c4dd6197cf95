//! Soft multi-view mask proposals, panoptic label maps, and the area/overlap
//! kernels that feed the QUBO builder.
//!
//! Mask values are stored query-major: `(query, view, row, col)` flattened in
//! row-major order. All reductions walk that layout front to back, so the
//! same inputs always produce bit-identical sums.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Instance ID reserved for unlabeled pixels.
pub const VOID_INSTANCE: u16 = 0;

/// Class ID reserved for unlabeled pixels. Never a member of a [`ClassTable`].
pub const VOID_CLASS: u16 = u16::MAX;

/// Class vocabulary with a thing/stuff flag per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
    is_thing: Vec<bool>,
}

impl ClassTable {
    pub fn new(names: Vec<String>, is_thing: Vec<bool>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("class table"));
        }
        if names.len() != is_thing.len() {
            return Err(Error::shape(format!(
                "class table has {} names but {} thing flags",
                names.len(),
                is_thing.len()
            )));
        }
        if names.len() >= VOID_CLASS as usize {
            return Err(Error::TooLarge(format!("{} classes", names.len())));
        }
        Ok(Self { names, is_thing })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn thing_flags(&self) -> &[bool] {
        &self.is_thing
    }

    pub fn name(&self, class: u16) -> Option<&str> {
        self.names.get(class as usize).map(String::as_str)
    }

    /// `false` for stuff classes and for IDs outside the table.
    pub fn is_thing(&self, class: u16) -> bool {
        self.is_thing.get(class as usize).copied().unwrap_or(false)
    }

    pub fn contains(&self, class: u16) -> bool {
        (class as usize) < self.names.len()
    }
}

/// Per-query soft masks over every view plus per-query class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMaskSet {
    num_queries: usize,
    num_views: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    class_probs: Vec<f32>,
    classes: ClassTable,
}

impl SoftMaskSet {
    /// `values` is `m × N × H × W`, `class_probs` is `m × C` with `C` the size
    /// of `classes`. Every mask value must lie in `[0, 1]`.
    pub fn new(
        num_queries: usize,
        num_views: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        class_probs: Vec<f32>,
        classes: ClassTable,
    ) -> Result<Self> {
        if num_queries == 0 || num_views == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "mask dimensions must be positive, got m={num_queries} N={num_views} H={height} W={width}"
            )));
        }
        let expected = num_queries * num_views * height * width;
        if values.len() != expected {
            return Err(Error::shape(format!(
                "mask tensor has {} values, expected m*N*H*W = {expected}",
                values.len()
            )));
        }
        if class_probs.len() != num_queries * classes.len() {
            return Err(Error::shape(format!(
                "class probabilities have {} values, expected m*C = {}*{}",
                class_probs.len(),
                num_queries,
                classes.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "mask value {} at flat index {bad} outside [0, 1]",
                values[bad]
            )));
        }
        if class_probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite class probability"));
        }
        Ok(Self {
            num_queries,
            num_views,
            height,
            width,
            values,
            class_probs,
            classes,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
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

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    /// Number of mask positions per query, `N·H·W`.
    pub fn positions(&self) -> usize {
        self.num_views * self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn class_probs(&self) -> &[f32] {
        &self.class_probs
    }

    fn check_query(&self, query: usize) -> Result<()> {
        if query >= self.num_queries {
            return Err(Error::IndexOutOfRange {
                what: "queries",
                index: query,
                len: self.num_queries,
            });
        }
        Ok(())
    }

    /// All `N·H·W` values of one query.
    pub fn mask(&self, query: usize) -> Result<&[f32]> {
        self.check_query(query)?;
        let len = self.positions();
        Ok(&self.values[query * len..(query + 1) * len])
    }

    /// Class score row of one query.
    pub fn class_row(&self, query: usize) -> Result<&[f32]> {
        self.check_query(query)?;
        let c = self.classes.len();
        Ok(&self.class_probs[query * c..(query + 1) * c])
    }

    /// Highest-scoring class of a query; ties go to the lower class ID.
    pub fn predicted_class(&self, query: usize) -> Result<u16> {
        Ok(argmax_first(self.class_row(query)?) as u16)
    }

    /// Maximum class score of a query.
    pub fn confidence(&self, query: usize) -> Result<f32> {
        let row = self.class_row(query)?;
        Ok(row.iter().copied().fold(f32::NEG_INFINITY, f32::max))
    }

    /// A new set holding only `queries`, in the given order.
    pub fn select_queries(&self, queries: &[usize]) -> Result<SoftMaskSet> {
        if queries.is_empty() {
            return Err(Error::Empty("query selection"));
        }
        let mut values = Vec::with_capacity(queries.len() * self.positions());
        let mut probs = Vec::with_capacity(queries.len() * self.classes.len());
        for &q in queries {
            values.extend_from_slice(self.mask(q)?);
            probs.extend_from_slice(self.class_row(q)?);
        }
        SoftMaskSet::new(
            queries.len(),
            self.num_views,
            self.height,
            self.width,
            values,
            probs,
            self.classes.clone(),
        )
    }

    /// Multiplies every mask value by `factor`; the result must stay in `[0, 1]`.
    pub fn scaled(&self, factor: f32) -> Result<SoftMaskSet> {
        let values = self.values.iter().map(|v| v * factor).collect();
        SoftMaskSet::new(
            self.num_queries,
            self.num_views,
            self.height,
            self.width,
            values,
            self.class_probs.clone(),
            self.classes.clone(),
        )
    }
}

pub(crate) fn argmax_first(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sum of a query's soft mask over all `N·H·W` positions.
pub fn weighted_area(masks: &SoftMaskSet, query: usize) -> Result<f64> {
    Ok(masks.mask(query)?.iter().map(|&v| v as f64).sum())
}

/// Fuzzy intersection `Σ_k min(M_i,k, M_j,k)` of two queries.
pub fn pairwise_overlap(masks: &SoftMaskSet, i: usize, j: usize) -> Result<f64> {
    let (a, b) = (masks.mask(i)?, masks.mask(j)?);
    Ok(overlap_of(a, b))
}

fn overlap_of(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.min(y) as f64).sum()
}

/// Dense symmetric `m × m` overlap matrix with a zero diagonal.
///
/// Rows are computed in parallel; each entry is a single sequential
/// reduction, so the result does not depend on the thread schedule.
pub fn overlap_matrix(masks: &SoftMaskSet) -> Vec<f64> {
    let m = masks.num_queries();
    let len = masks.positions();
    let mask = |q: usize| &masks.values[q * len..(q + 1) * len];
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| ((i + 1)..m).map(|j| overlap_of(mask(i), mask(j))).collect())
        .collect();
    let mut out = vec![0.0; m * m];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            out[i * m + j] = v;
            out[j * m + i] = v;
        }
    }
    out
}

/// Per-view instance and class labels with a shared instance namespace.
///
/// The same nonzero instance ID denotes the same object in every view.
/// Classes are never stored per pixel; they are derived from the instance
/// map through `instance_to_class`, so the two can not disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticMap {
    num_views: usize,
    height: usize,
    width: usize,
    instance_ids: Vec<u16>,
    instance_to_class: BTreeMap<u16, u16>,
}

impl PanopticMap {
    pub fn new(
        num_views: usize,
        height: usize,
        width: usize,
        instance_ids: Vec<u16>,
        instance_to_class: BTreeMap<u16, u16>,
    ) -> Result<Self> {
        if num_views == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "panoptic map dimensions must be positive, got N={num_views} H={height} W={width}"
            )));
        }
        if instance_ids.len() != num_views * height * width {
            return Err(Error::shape(format!(
                "instance map has {} pixels, expected N*H*W = {}",
                instance_ids.len(),
                num_views * height * width
            )));
        }
        if instance_to_class.contains_key(&VOID_INSTANCE) {
            return Err(Error::invalid("void instance 0 must not carry a class"));
        }
        if instance_to_class.values().any(|&c| c == VOID_CLASS) {
            return Err(Error::invalid("instance mapped to the void class"));
        }
        if let Some(&id) = instance_ids
            .iter()
            .find(|&&id| id != VOID_INSTANCE && !instance_to_class.contains_key(&id))
        {
            return Err(Error::invalid(format!("instance {id} has no class")));
        }
        Ok(Self {
            num_views,
            height,
            width,
            instance_ids,
            instance_to_class,
        })
    }

    /// An all-void map.
    pub fn void(num_views: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            num_views,
            height,
            width,
            vec![VOID_INSTANCE; num_views * height * width],
            BTreeMap::new(),
        )
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

    pub fn instance_ids(&self) -> &[u16] {
        &self.instance_ids
    }

    pub fn view(&self, view: usize) -> &[u16] {
        let len = self.height * self.width;
        &self.instance_ids[view * len..(view + 1) * len]
    }

    pub fn instance_to_class(&self) -> &BTreeMap<u16, u16> {
        &self.instance_to_class
    }

    /// Class of an instance; [`VOID_CLASS`] for void or unknown IDs.
    pub fn class_of(&self, instance: u16) -> u16 {
        self.instance_to_class.get(&instance).copied().unwrap_or(VOID_CLASS)
    }

    /// Per-pixel class map, `VOID_CLASS` where the instance is void.
    pub fn class_ids(&self) -> Vec<u16> {
        self.instance_ids.iter().map(|&id| self.class_of(id)).collect()
    }

    /// Instance IDs that occur on at least one pixel, ascending.
    pub fn present_instances(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &id in &self.instance_ids {
            seen[id as usize] = true;
        }
        (1..=u16::MAX).filter(|&id| seen[id as usize]).collect()
    }

    /// Applies `f` to every instance ID (void stays void). Used to relabel.
    pub fn relabel(&self, f: impl Fn(u16) -> u16) -> Result<Self> {
        let ids = self
            .instance_ids
            .iter()
            .map(|&id| if id == VOID_INSTANCE { id } else { f(id) })
            .collect();
        let map = self.instance_to_class.iter().map(|(&id, &c)| (f(id), c)).collect();
        Self::new(self.num_views, self.height, self.width, ids, map)
    }

    /// Nearest-neighbour upsampling by integer factors along rows and columns.
    pub fn upsample_nearest(&self, factor_h: usize, factor_w: usize) -> Result<Self> {
        if factor_h == 0 || factor_w == 0 {
            return Err(Error::invalid("upsampling factor must be positive"));
        }
        let (h, w) = (self.height * factor_h, self.width * factor_w);
        let mut ids = Vec::with_capacity(self.num_views * h * w);
        for v in 0..self.num_views {
            let src = self.view(v);
            for r in 0..h {
                let row = &src[(r / factor_h) * self.width..(r / factor_h + 1) * self.width];
                ids.extend((0..w).map(|c| row[c / factor_w]));
            }
        }
        Self::new(self.num_views, h, w, ids, self.instance_to_class.clone())
    }

    /// Both maps have identical `N`, `H`, `W`.
    pub fn same_shape(&self, other: &PanopticMap) -> bool {
        self.num_views == other.num_views && self.height == other.height && self.width == other.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn table(n: usize) -> ClassTable {
        ClassTable::new(
            (0..n).map(|i| format!("c{i}")).collect(),
            (0..n).map(|i| i % 2 == 0).collect(),
        )
        .unwrap()
    }

    fn set(m: usize, n: usize, h: usize, w: usize, values: Vec<f32>) -> SoftMaskSet {
        SoftMaskSet::new(m, n, h, w, values, vec![1.0; m * 2], table(2)).unwrap()
    }

    #[test]
    fn area_of_full_and_empty_masks() {
        let full = set(1, 2, 4, 4, vec![1.0; 32]);
        assert_eq!(weighted_area(&full, 0).unwrap(), 32.0);
        let empty = set(1, 2, 4, 4, vec![0.0; 32]);
        assert_eq!(weighted_area(&empty, 0).unwrap(), 0.0);
    }

    #[test]
    fn area_of_half_valued_pixels() {
        let mut values = vec![0.0; 32];
        for v in values.iter_mut().step_by(3).take(10) {
            *v = 0.5;
        }
        let masks = set(1, 2, 4, 4, values.clone());
        let oracle: f64 = values.iter().map(|&v| v as f64).sum();
        assert_eq!(oracle, 5.0);
        assert_eq!(weighted_area(&masks, 0).unwrap(), 5.0);
    }

    #[test]
    fn overlap_cases() {
        let disjoint = set(2, 1, 1, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(pairwise_overlap(&disjoint, 0, 1).unwrap(), 0.0);
        let single = set(2, 1, 1, 1, vec![0.8, 0.3]);
        assert_eq!(pairwise_overlap(&single, 0, 1).unwrap(), 0.3f32 as f64);
        assert_eq!(
            pairwise_overlap(&single, 0, 0).unwrap(),
            weighted_area(&single, 0).unwrap()
        );
    }

    #[test]
    fn out_of_range_query() {
        let masks = set(1, 1, 1, 1, vec![0.2]);
        assert!(matches!(weighted_area(&masks, 1), Err(Error::IndexOutOfRange { .. })));
        assert!(pairwise_overlap(&masks, 0, 3).is_err());
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(SoftMaskSet::new(1, 1, 1, 1, vec![1.5], vec![1.0, 0.0], table(2)).is_err());
        assert!(SoftMaskSet::new(1, 1, 1, 2, vec![1.0], vec![1.0, 0.0], table(2)).is_err());
        assert!(SoftMaskSet::new(1, 1, 1, 1, vec![1.0], vec![1.0], table(2)).is_err());
        assert!(SoftMaskSet::new(0, 1, 1, 1, vec![], vec![], table(2)).is_err());
        assert!(ClassTable::new(vec![], vec![]).is_err());
        assert!(ClassTable::new(vec!["a".into()], vec![true, false]).is_err());
    }

    #[test]
    fn panoptic_map_requires_classes() {
        let ok = PanopticMap::new(1, 1, 2, vec![0, 3], BTreeMap::from([(3, 1)])).unwrap();
        assert_eq!(ok.class_ids(), vec![VOID_CLASS, 1]);
        assert!(PanopticMap::new(1, 1, 2, vec![0, 3], BTreeMap::new()).is_err());
        assert!(PanopticMap::new(1, 1, 2, vec![0, 0], BTreeMap::from([(0, 1)])).is_err());
    }

    #[test]
    fn upsample_repeats_pixels() {
        let map = PanopticMap::new(1, 1, 2, vec![1, 2], BTreeMap::from([(1, 0), (2, 1)])).unwrap();
        let up = map.upsample_nearest(2, 2).unwrap();
        assert_eq!(up.instance_ids(), &[1, 1, 2, 2, 1, 1, 2, 2]);
    }

    fn mask_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f32..=1.0, n),
                proptest::collection::vec(0.0f32..=1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded((a, b) in mask_pair()) {
            let n = a.len();
            let masks = set(2, 1, 1, n, [a.clone(), b.clone()].concat());
            let ij = pairwise_overlap(&masks, 0, 1).unwrap();
            let ji = pairwise_overlap(&masks, 1, 0).unwrap();
            prop_assert_eq!(ij.to_bits(), ji.to_bits());
            let (ai, aj) = (weighted_area(&masks, 0).unwrap(), weighted_area(&masks, 1).unwrap());
            prop_assert!(ij >= 0.0 && ij <= ai.min(aj) + 1e-9);
            // Inclusion-exclusion under min/max fuzzy-set semantics.
            let union: f64 = a.iter().zip(&b).map(|(&x, &y)| x.max(y) as f64).sum();
            prop_assert!((ai + aj - ij - union).abs() < 1e-9);
        }

        #[test]
        fn scaling_scales_area_and_overlap((a, b) in mask_pair(), k in 0usize..3) {
            // Power-of-two factors keep the scaling exact in floating point.
            let c = [1.0f32, 0.5, 0.25][k];
            let n = a.len();
            let masks = set(2, 1, 1, n, [a, b].concat());
            let scaled = masks.scaled(c).unwrap();
            prop_assert_eq!(weighted_area(&scaled, 0).unwrap(), c as f64 * weighted_area(&masks, 0).unwrap());
            prop_assert_eq!(pairwise_overlap(&scaled, 0, 1).unwrap(), c as f64 * pairwise_overlap(&masks, 0, 1).unwrap());
        }

        #[test]
        fn overlap_matrix_matches_pairwise(values in proptest::collection::vec(0.0f32..=1.0, 4 * 6)) {
            let masks = set(4, 2, 1, 3, values);
            let mat = overlap_matrix(&masks);
            for i in 0..4 {
                prop_assert_eq!(mat[i * 4 + i], 0.0);
                for j in 0..4 {
                    if i != j {
                        prop_assert_eq!(mat[i * 4 + j], pairwise_overlap(&masks, i, j).unwrap());
                    }
                }
            }
        }
    }
}
