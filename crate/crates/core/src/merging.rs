//! Turning soft multi-view proposals into a [`PanopticMap`].
//!
//! [`merge_qubo`] selects a globally consistent subset of proposals by
//! solving the selection QUBO, then labels every pixel with the selected
//! proposal of highest soft value. [`merge_baseline`] is the conventional
//! confidence-filter / pixel-vote / support-filter scheme, kept for
//! comparison.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::{PanopticMap, SoftMaskSet, VOID_INSTANCE};
use crate::qubo::{build_qubo, solve_anneal, solve_exact, AnnealConfig, DEFAULT_PENALTY};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Anneal,
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeConfig {
    pub penalty: f64,
    /// Pixels whose winning soft value is below this are void.
    pub void_threshold: f64,
    /// Drop queries whose best class score is below this before solving.
    pub confidence_prefilter: Option<f64>,
    pub solver: Solver,
    pub anneal: AnnealConfig,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            penalty: DEFAULT_PENALTY,
            void_threshold: 0.5,
            confidence_prefilter: None,
            solver: Solver::Anneal,
            anneal: AnnealConfig::default(),
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("void threshold", self.void_threshold)?;
        if let Some(t) = self.confidence_prefilter {
            check_unit("confidence prefilter", t)?;
        }
        if self.penalty.is_nan() || self.penalty <= 1.0 {
            return Err(Error::invalid(format!(
                "overlap penalty must exceed 1, got {}",
                self.penalty
            )));
        }
        self.anneal.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub confidence_threshold: f64,
    /// Minimum fraction of its own binarized area a query must win.
    pub vote_support_threshold: f64,
    /// Vote and filter each view separately. Instance IDs are shared either way.
    pub per_view_independent: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            vote_support_threshold: 0.8,
            per_view_independent: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("confidence threshold", self.confidence_threshold)?;
        check_unit("vote support threshold", self.vote_support_threshold)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeStatus {
    Ok,
    /// Every query was filtered out; the map is all void.
    AllFiltered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub map: PanopticMap,
    /// Query indices that received an instance ID, ascending. Instance
    /// `k + 1` belongs to `selected[k]`.
    pub selected: Vec<usize>,
    /// Solver objective; zero for the baseline.
    pub objective: f64,
    pub status: MergeStatus,
}

/// Builds the label map from per-pixel winning queries (`None` = void).
fn assemble(masks: &SoftMaskSet, winners: &[Option<usize>], candidates: &[usize]) -> Result<(PanopticMap, Vec<usize>)> {
    let mut used = vec![false; masks.num_queries()];
    for w in winners.iter().flatten() {
        used[*w] = true;
    }
    // Queries that won no pixel still keep their ID so the mapping from
    // selection to instance stays the documented one.
    for &q in candidates {
        used[q] = true;
    }
    let selected: Vec<usize> = (0..masks.num_queries()).filter(|&q| used[q]).collect();
    if selected.len() > u16::MAX as usize {
        return Err(Error::TooLarge(format!("{} instances", selected.len())));
    }
    let mut id_of = vec![VOID_INSTANCE; masks.num_queries()];
    let mut classes = BTreeMap::new();
    for (k, &q) in selected.iter().enumerate() {
        let id = (k + 1) as u16;
        id_of[q] = id;
        classes.insert(id, masks.predicted_class(q)?);
    }
    let ids = winners.iter().map(|w| w.map_or(VOID_INSTANCE, |q| id_of[q])).collect();
    let map = PanopticMap::new(masks.num_views(), masks.height(), masks.width(), ids, classes)?;
    Ok((map, selected))
}

/// Merges proposals by solving the selection QUBO.
pub fn merge_qubo(masks: &SoftMaskSet, cfg: &MergeConfig) -> Result<MergeOutcome> {
    cfg.validate()?;
    let pool: Vec<usize> = match cfg.confidence_prefilter {
        None => (0..masks.num_queries()).collect(),
        Some(t) => (0..masks.num_queries())
            .filter(|&q| masks.confidence(q).map(|c| c as f64 >= t).unwrap_or(false))
            .collect(),
    };
    if pool.is_empty() {
        return Ok(MergeOutcome {
            map: PanopticMap::void(masks.num_views(), masks.height(), masks.width())?,
            selected: Vec::new(),
            objective: 0.0,
            status: MergeStatus::AllFiltered,
        });
    }
    let sub = if pool.len() == masks.num_queries() {
        masks.clone()
    } else {
        masks.select_queries(&pool)?
    };
    let q = build_qubo(&sub, cfg.penalty)?;
    let assignment = match cfg.solver {
        Solver::Exact => solve_exact(&q)?,
        Solver::Anneal => solve_anneal(&q, &cfg.anneal)?,
    };
    let chosen: Vec<usize> = assignment.selected().into_iter().map(|k| pool[k]).collect();

    let len = masks.positions();
    let mut winners = vec![None; len];
    for (k, winner) in winners.iter_mut().enumerate() {
        let mut best: Option<(usize, f32)> = None;
        for &qi in &chosen {
            let v = masks.values()[qi * len + k];
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((qi, v));
            }
        }
        *winner = best.and_then(|(qi, v)| (v as f64 >= cfg.void_threshold).then_some(qi));
    }
    let (map, selected) = assemble(masks, &winners, &chosen)?;
    Ok(MergeOutcome {
        map,
        selected,
        objective: assignment.objective(),
        status: MergeStatus::Ok,
    })
}

/// Conventional single-image merging applied to multi-view proposals.
pub fn merge_baseline(masks: &SoftMaskSet, cfg: &BaselineConfig) -> Result<MergeOutcome> {
    cfg.validate()?;
    let mut keep = Vec::new();
    let mut score = Vec::new();
    for q in 0..masks.num_queries() {
        let c = masks.confidence(q)?;
        if c as f64 >= cfg.confidence_threshold {
            keep.push(q);
            score.push(c);
        }
    }
    let len = masks.positions();
    let mut winners = vec![None; len];
    let chunk = if cfg.per_view_independent {
        masks.height() * masks.width()
    } else {
        len
    };
    for start in (0..len).step_by(chunk) {
        let range = start..start + chunk;
        let region = &mut winners[range.clone()];
        for (off, winner) in region.iter_mut().enumerate() {
            let k = start + off;
            let mut best: Option<(usize, f32)> = None;
            for (slot, &q) in keep.iter().enumerate() {
                let p = score[slot] * masks.values()[q * len + k];
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((q, p));
                }
            }
            *winner = best.and_then(|(q, _)| (masks.values()[q * len + k] >= 0.5).then_some(q));
        }
        for &q in &keep {
            let mask = &masks.values()[q * len + range.start..q * len + range.end];
            let original = mask.iter().filter(|&&v| v >= 0.5).count();
            let won = region.iter().filter(|w| **w == Some(q)).count();
            if won == 0 {
                continue;
            }
            if original == 0 || (won as f64) < cfg.vote_support_threshold * original as f64 {
                for w in region.iter_mut().filter(|w| **w == Some(q)) {
                    *w = None;
                }
            }
        }
    }
    let (map, selected) = assemble(masks, &winners, &[])?;
    Ok(MergeOutcome {
        map,
        selected,
        objective: 0.0,
        status: MergeStatus::Ok,
    })
}
