//! Panoptic quality over whole scenes.
//!
//! A scene is scored as if its views were one long image: a segment is the
//! union of all pixels carrying the same instance ID across every view, so an
//! object labeled with different IDs in different views is penalized. Stuff
//! classes are merged into a single segment per class on both sides.
//!
//! Per class, with `TP` the matched pairs (IoU > 0.5):
//!
//! ```text
//! PQ = Σ_TP IoU / (|TP| + ½|FP| + ½|FN|)
//! SQ = Σ_TP IoU / |TP|
//! RQ = |TP| / (|TP| + ½|FP| + ½|FN|)
//! ```
//!
//! All scores are reported in percent.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{ClassTable, PanopticMap, VOID_INSTANCE};

/// IoU a pair must strictly exceed to count as a match.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PqOptions {
    /// Skip false positives that lie mostly on ground-truth void.
    pub void_exemption: bool,
}

impl Default for PqOptions {
    fn default() -> Self {
        Self { void_exemption: true }
    }
}

/// Key of a segment: stuff is keyed by class, things by instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentKey {
    Thing(u16),
    Stuff(u16),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentMatch {
    pub pred: SegmentKey,
    pub gt: SegmentKey,
    pub class: u16,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassPq {
    pub class_id: u16,
    pub name: String,
    pub is_thing: bool,
    pub iou_sum: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

impl ClassPq {
    fn new(class_id: u16, classes: &ClassTable) -> Self {
        Self {
            class_id,
            name: classes.name(class_id).unwrap_or_default().to_owned(),
            is_thing: classes.is_thing(class_id),
            iou_sum: 0.0,
            tp: 0,
            fp: 0,
            fn_: 0,
            pq: 0.0,
            sq: 0.0,
            rq: 0.0,
        }
    }

    fn finish(&mut self) {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom > 0.0 {
            self.pq = 100.0 * self.iou_sum / denom;
            self.rq = 100.0 * self.tp as f64 / denom;
        }
        if self.tp > 0 {
            self.sq = 100.0 * self.iou_sum / self.tp as f64;
        }
    }

    /// Whether the class has any ground-truth or counted predicted segment.
    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PqReport {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// `None` when no thing class is present.
    pub pq_things: Option<f64>,
    pub pq_stuff: Option<f64>,
    pub num_classes: usize,
    pub per_class: Vec<ClassPq>,
    #[serde(skip)]
    pub matches: Vec<SegmentMatch>,
}

impl PqReport {
    /// JSON document; per-class rows are included only when asked for.
    pub fn to_json(&self, per_class: bool) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if !per_class {
            value.as_object_mut().expect("struct").remove("per_class");
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }

    /// Flat `key value` lines.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("nan".to_owned(), |v| format!("{v:.6}"));
        format!(
            "pq {:.6}\nsq {:.6}\nrq {:.6}\npq_things {}\npq_stuff {}\nnum_classes {}\n",
            self.pq,
            self.sq,
            self.rq,
            opt(self.pq_things),
            opt(self.pq_stuff),
            self.num_classes
        )
    }
}

/// IoU of two pixel sets given as sorted, duplicate-free index slices.
/// Two empty sets score 0.
pub fn iou(pred: &[u32], gt: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < pred.len() && j < gt.len() {
        match pred[i].cmp(&gt[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = pred.len() + gt.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn segment_key(map: &PanopticMap, classes: &ClassTable, id: u16) -> Option<(SegmentKey, u16)> {
    if id == VOID_INSTANCE {
        return None;
    }
    let class = map.class_of(id);
    Some(if classes.is_thing(class) {
        (SegmentKey::Thing(id), class)
    } else {
        (SegmentKey::Stuff(class), class)
    })
}

fn check_classes(map: &PanopticMap, classes: &ClassTable, side: &str) -> Result<()> {
    if let Some((id, c)) = map.instance_to_class().iter().find(|(_, &c)| !classes.contains(c)) {
        return Err(Error::shape(format!(
            "{side} instance {id} has class {c}, class table has {} classes",
            classes.len()
        )));
    }
    Ok(())
}

/// Scene-level panoptic quality of `pred` against `gt`.
pub fn scene_pq(pred: &PanopticMap, gt: &PanopticMap, classes: &ClassTable, opts: &PqOptions) -> Result<PqReport> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(format!(
            "prediction is {}x{}x{} but ground truth is {}x{}x{}",
            pred.num_views(),
            pred.height(),
            pred.width(),
            gt.num_views(),
            gt.height(),
            gt.width()
        )));
    }
    check_classes(pred, classes, "predicted")?;
    check_classes(gt, classes, "ground-truth")?;

    // Per-ID key lookups, computed once.
    let keys = |map: &PanopticMap| -> HashMap<u16, (SegmentKey, u16)> {
        map.instance_to_class()
            .keys()
            .filter_map(|&id| segment_key(map, classes, id).map(|k| (id, k)))
            .collect()
    };
    let (pred_keys, gt_keys) = (keys(pred), keys(gt));

    let mut pred_area: BTreeMap<SegmentKey, (u16, usize)> = BTreeMap::new();
    let mut gt_area: BTreeMap<SegmentKey, (u16, usize)> = BTreeMap::new();
    let mut pred_on_void: HashMap<SegmentKey, usize> = HashMap::new();
    let mut inter: HashMap<(SegmentKey, SegmentKey), usize> = HashMap::new();
    for (&p, &g) in pred.instance_ids().iter().zip(gt.instance_ids()) {
        let pk = (p != VOID_INSTANCE).then(|| pred_keys[&p]);
        let gk = (g != VOID_INSTANCE).then(|| gt_keys[&g]);
        if let Some((k, c)) = gk {
            gt_area.entry(k).or_insert((c, 0)).1 += 1;
        }
        if let Some((k, c)) = pk {
            pred_area.entry(k).or_insert((c, 0)).1 += 1;
            match gk {
                None => *pred_on_void.entry(k).or_default() += 1,
                Some((gk, _)) => *inter.entry((k, gk)).or_default() += 1,
            }
        }
    }

    let mut rows: BTreeMap<u16, ClassPq> = BTreeMap::new();
    let mut matched_pred = HashMap::new();
    let mut matched_gt = HashMap::new();
    let mut matches = Vec::new();

    let mut pairs: Vec<_> = inter.iter().collect();
    pairs.sort();
    for (&(pk, gk), &n) in pairs {
        let (pc, pa) = pred_area[&pk];
        let (gc, ga) = gt_area[&gk];
        if pc != gc {
            continue;
        }
        let void = pred_on_void.get(&pk).copied().unwrap_or(0);
        let union = pa + ga - n - void;
        let iou = n as f64 / union as f64;
        if iou > MATCH_THRESHOLD {
            matched_pred.insert(pk, gk);
            matched_gt.insert(gk, pk);
            matches.push(SegmentMatch {
                pred: pk,
                gt: gk,
                class: gc,
                iou,
            });
            let r = class_row(&mut rows, gc, classes);
            r.tp += 1;
            r.iou_sum += iou;
        }
    }
    for (gk, &(c, _)) in &gt_area {
        if !matched_gt.contains_key(gk) {
            class_row(&mut rows, c, classes).fn_ += 1;
        }
    }
    for (pk, &(c, area)) in &pred_area {
        if matched_pred.contains_key(pk) {
            continue;
        }
        let void = pred_on_void.get(pk).copied().unwrap_or(0);
        if opts.void_exemption && void as f64 > 0.5 * area as f64 {
            continue;
        }
        class_row(&mut rows, c, classes).fp += 1;
    }

    let mut per_class: Vec<ClassPq> = rows.into_values().filter(ClassPq::is_present).collect();
    per_class.iter_mut().for_each(ClassPq::finish);
    Ok(summarize(per_class, matches))
}

fn class_row<'a>(rows: &'a mut BTreeMap<u16, ClassPq>, c: u16, classes: &ClassTable) -> &'a mut ClassPq {
    rows.entry(c).or_insert_with(|| ClassPq::new(c, classes))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(per_class: Vec<ClassPq>, matches: Vec<SegmentMatch>) -> PqReport {
    // With nothing to find and nothing predicted there is no error to count.
    let vacuous = if per_class.is_empty() { Some(100.0) } else { None };
    PqReport {
        pq: mean(per_class.iter().map(|r| r.pq)).or(vacuous).unwrap_or(0.0),
        sq: mean(per_class.iter().map(|r| r.sq)).or(vacuous).unwrap_or(0.0),
        rq: mean(per_class.iter().map(|r| r.rq)).or(vacuous).unwrap_or(0.0),
        pq_things: mean(per_class.iter().filter(|r| r.is_thing).map(|r| r.pq)),
        pq_stuff: mean(per_class.iter().filter(|r| !r.is_thing).map(|r| r.pq)),
        num_classes: per_class.len(),
        per_class,
        matches,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub num_scenes: usize,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Mean over the scenes that have thing classes.
    pub pq_things: Option<f64>,
    pub pq_stuff: Option<f64>,
}

/// Arithmetic mean of per-scene scores.
pub fn dataset_pq(reports: &[PqReport]) -> Result<DatasetSummary> {
    if reports.is_empty() {
        return Err(Error::Empty("scene reports"));
    }
    Ok(DatasetSummary {
        num_scenes: reports.len(),
        pq: mean(reports.iter().map(|r| r.pq)).unwrap_or(0.0),
        sq: mean(reports.iter().map(|r| r.sq)).unwrap_or(0.0),
        rq: mean(reports.iter().map(|r| r.rq)).unwrap_or(0.0),
        pq_things: mean(reports.iter().filter_map(|r| r.pq_things)),
        pq_stuff: mean(reports.iter().filter_map(|r| r.pq_stuff)),
    })
}
