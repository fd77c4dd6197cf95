//! Mask-selection QUBO: build, evaluate, and solve.
//!
//! The objective over a boolean selection `u` is
//!
//! ```text
//! f(u) = Σ_i u_i Q_i − λ_p Σ_{i<j} u_i u_j Q_ij
//! ```
//!
//! with `Q_i` the weighted area of proposal `i` and `Q_ij` the fuzzy overlap
//! of proposals `i` and `j`. It is maximized.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{overlap_matrix, weighted_area, SoftMaskSet};

/// Overlap penalty used unless configured otherwise.
pub const DEFAULT_PENALTY: f64 = 2.0;

/// Largest problem [`solve_exact`] will enumerate.
pub const MAX_EXACT_VARIABLES: usize = 24;

/// Relative tolerance under which two objective values count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct QuboInstance {
    linear: Vec<f64>,
    quadratic: Vec<f64>,
    penalty: f64,
}

impl QuboInstance {
    /// `quadratic` is a dense row-major `m × m` matrix. It must be symmetric
    /// and nonnegative; the diagonal is ignored and stored as zero.
    pub fn new(linear: Vec<f64>, mut quadratic: Vec<f64>, penalty: f64) -> Result<Self> {
        let m = linear.len();
        if quadratic.len() != m * m {
            return Err(Error::shape(format!(
                "quadratic matrix has {} entries, expected {m}x{m}",
                quadratic.len()
            )));
        }
        if penalty <= 1.0 || !penalty.is_finite() {
            return Err(Error::invalid(format!(
                "overlap penalty must be a finite value > 1, got {penalty}"
            )));
        }
        if linear.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("linear weights must be finite and nonnegative"));
        }
        for i in 0..m {
            quadratic[i * m + i] = 0.0;
            for j in (i + 1)..m {
                let (a, b) = (quadratic[i * m + j], quadratic[j * m + i]);
                if a != b {
                    return Err(Error::invalid(format!(
                        "quadratic matrix not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::invalid(format!(
                        "quadratic entry ({i}, {j}) = {a} must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(Self {
            linear,
            quadratic,
            penalty,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.linear.len()
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn quadratic(&self) -> &[f64] {
        &self.quadratic
    }

    pub fn quadratic_at(&self, i: usize, j: usize) -> f64 {
        self.quadratic[i * self.linear.len() + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        let m = self.linear.len();
        &self.quadratic[i * m..(i + 1) * m]
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Upper bound on the magnitude of any objective value.
    fn magnitude(&self) -> f64 {
        let lin: f64 = self.linear.iter().sum();
        let quad: f64 = self.quadratic.iter().sum::<f64>() * 0.5;
        lin + self.penalty * quad
    }

    fn check_bits(&self, bits: &[bool]) -> Result<()> {
        if bits.len() != self.linear.len() {
            return Err(Error::shape(format!(
                "assignment has {} bits, problem has {} variables",
                bits.len(),
                self.linear.len()
            )));
        }
        Ok(())
    }
}

/// A selection together with its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    bits: Vec<bool>,
    objective: f64,
}

impl Assignment {
    /// Evaluates `bits` against `q`; the stored objective always matches.
    pub fn evaluate(q: &QuboInstance, bits: Vec<bool>) -> Result<Self> {
        let objective = objective(q, &bits)?;
        Ok(Self { bits, objective })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Indices of the selected variables, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Temperature {
    /// Largest linear weight of the instance.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitStrategy {
    Empty,
    AllOn,
    /// Add variables by decreasing weight whenever that improves the objective.
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealConfig {
    pub seed: u64,
    pub initial_temperature: Temperature,
    /// Geometric factor applied to the temperature after every sweep.
    pub cooling_rate: f64,
    /// Each sweep makes `m` single-bit-flip proposals.
    pub sweeps: usize,
    pub restarts: usize,
    pub init: InitStrategy,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            initial_temperature: Temperature::Auto,
            cooling_rate: 0.97,
            sweeps: 300,
            restarts: 4,
            init: InitStrategy::Greedy,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::invalid(format!(
                "cooling rate must lie in (0, 1), got {}",
                self.cooling_rate
            )));
        }
        if self.sweeps == 0 {
            return Err(Error::invalid("sweeps must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if let Temperature::Fixed(t) = self.initial_temperature {
            if t < 0.0 || !t.is_finite() {
                return Err(Error::invalid(format!(
                    "initial temperature {t} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the selection problem for every query of `masks`.
pub fn build_qubo(masks: &SoftMaskSet, penalty: f64) -> Result<QuboInstance> {
    let linear = (0..masks.num_queries())
        .map(|q| weighted_area(masks, q))
        .collect::<Result<Vec<_>>>()?;
    QuboInstance::new(linear, overlap_matrix(masks), penalty)
}

pub fn objective(q: &QuboInstance, bits: &[bool]) -> Result<f64> {
    q.check_bits(bits)?;
    let m = bits.len();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..m {
        if !bits[i] {
            continue;
        }
        lin += q.linear[i];
        let row = q.row(i);
        for j in (i + 1)..m {
            if bits[j] {
                quad += row[j];
            }
        }
    }
    Ok(lin - q.penalty * quad)
}

/// Objective change from flipping bit `i`, in `O(m)`.
pub fn flip_delta(q: &QuboInstance, bits: &[bool], i: usize) -> Result<f64> {
    q.check_bits(bits)?;
    if i >= bits.len() {
        return Err(Error::IndexOutOfRange {
            what: "variables",
            index: i,
            len: bits.len(),
        });
    }
    let field: f64 = q
        .row(i)
        .iter()
        .zip(bits)
        .enumerate()
        .filter(|&(j, (_, &b))| b && j != i)
        .map(|(_, (&v, _))| v)
        .sum();
    Ok(delta_from_field(q, bits[i], i, field))
}

#[inline]
fn delta_from_field(q: &QuboInstance, current: bool, i: usize, field: f64) -> f64 {
    let gain = q.linear[i] - q.penalty * field;
    if current {
        -gain
    } else {
        gain
    }
}

fn bits_from_code(code: u32, m: usize) -> Vec<bool> {
    (0..m).map(|i| code >> i & 1 == 1).collect()
}

/// Exhaustive maximization over all `2^m` selections.
///
/// Among optimal selections the one with the smallest code `Σ u_i 2^i` is
/// returned, so for two interchangeable proposals the lower index wins.
pub fn solve_exact(q: &QuboInstance) -> Result<Assignment> {
    let m = q.num_variables();
    if m > MAX_EXACT_VARIABLES {
        return Err(Error::TooLarge(format!(
            "exact solver enumerates at most {MAX_EXACT_VARIABLES} variables, got {m}"
        )));
    }
    let tie = TIE_TOLERANCE * q.magnitude().max(1.0);
    // Gray-code walk with incremental values. Drift in the running value is
    // far below `screen`; anything that might be optimal is re-evaluated
    // exactly before it is compared.
    let screen = 1e-9 * q.magnitude().max(1.0);
    let mut bits = vec![false; m];
    let mut field = vec![0.0f64; m];
    let mut running = 0.0f64;
    let mut best_code = 0u32;
    let mut best_value = 0.0f64;
    for step in 1u64..(1u64 << m) {
        let i = step.trailing_zeros() as usize;
        running += delta_from_field(q, bits[i], i, field[i]);
        bits[i] = !bits[i];
        let sign = if bits[i] { 1.0 } else { -1.0 };
        for (f, &w) in field.iter_mut().zip(q.row(i)) {
            *f += sign * w;
        }
        if running + screen < best_value - tie {
            continue;
        }
        let value = objective(q, &bits)?;
        let code = (step ^ (step >> 1)) as u32;
        if value > best_value + tie || (value >= best_value - tie && code < best_code) {
            best_value = value;
            best_code = code;
        }
    }
    Assignment::evaluate(q, bits_from_code(best_code, m))
}

/// Simulated annealing with single-bit-flip Metropolis moves.
///
/// Restarts are independent (restart `r` uses seed `seed + r`) and may run in
/// parallel; the best objective wins, ties go to the lowest restart index.
/// The winner is polished so that no single flip improves it.
pub fn solve_anneal(q: &QuboInstance, cfg: &AnnealConfig) -> Result<Assignment> {
    cfg.validate()?;
    let m = q.num_variables();
    if m == 0 {
        return Assignment::evaluate(q, Vec::new());
    }
    let start = initial_bits(q, cfg.init);
    let runs: Vec<Vec<bool>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| anneal_once(q, cfg, start.clone(), cfg.seed.wrapping_add(r as u64)))
        .collect();
    let mut best: Option<Assignment> = None;
    for bits in runs {
        let cand = Assignment::evaluate(q, bits)?;
        if best.as_ref().is_none_or(|b| cand.objective > b.objective) {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one restart");
    Assignment::evaluate(q, polish(q, best.bits))
}

fn initial_bits(q: &QuboInstance, init: InitStrategy) -> Vec<bool> {
    let m = q.num_variables();
    match init {
        InitStrategy::Empty => vec![false; m],
        InitStrategy::AllOn => vec![true; m],
        InitStrategy::Greedy => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| q.linear[b].total_cmp(&q.linear[a]).then(a.cmp(&b)));
            let mut bits = vec![false; m];
            let mut field = vec![0.0; m];
            for i in order {
                if delta_from_field(q, false, i, field[i]) > 0.0 {
                    bits[i] = true;
                    for (f, &w) in field.iter_mut().zip(q.row(i)) {
                        *f += w;
                    }
                }
            }
            bits
        }
    }
}

fn local_fields(q: &QuboInstance, bits: &[bool]) -> Vec<f64> {
    let m = bits.len();
    (0..m)
        .map(|i| q.row(i).iter().zip(bits).filter(|(_, &b)| b).map(|(&w, _)| w).sum())
        .collect()
}

/// One annealing run; returns the best selection seen, starting point included.
fn anneal_once(q: &QuboInstance, cfg: &AnnealConfig, mut bits: Vec<bool>, seed: u64) -> Vec<bool> {
    let m = bits.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut field = local_fields(q, &bits);
    let mut current = objective(q, &bits).expect("length checked");
    let mut best = bits.clone();
    let mut best_value = current;
    let mut temperature = match cfg.initial_temperature {
        Temperature::Auto => q.linear.iter().copied().fold(0.0, f64::max),
        Temperature::Fixed(t) => t,
    };
    for _ in 0..cfg.sweeps {
        for _ in 0..m {
            let i = rng.random_range(0..m);
            let delta = delta_from_field(q, bits[i], i, field[i]);
            let accept = delta >= 0.0 || (temperature > 0.0 && rng.random::<f64>() < (delta / temperature).exp());
            if !accept {
                continue;
            }
            bits[i] = !bits[i];
            current += delta;
            let sign = if bits[i] { 1.0 } else { -1.0 };
            for (j, (f, &w)) in field.iter_mut().zip(q.row(i)).enumerate() {
                if j != i {
                    *f += sign * w;
                }
            }
            if current > best_value {
                best_value = current;
                best.copy_from_slice(&bits);
            }
        }
        temperature *= cfg.cooling_rate;
    }
    best
}

/// Drops selections that contribute nothing, then climbs until no single
/// flip strictly improves the objective.
fn polish(q: &QuboInstance, mut bits: Vec<bool>) -> Vec<bool> {
    let m = bits.len();
    let mut field = local_fields(q, &bits);
    let flip = |bits: &mut Vec<bool>, field: &mut Vec<f64>, i: usize| {
        bits[i] = !bits[i];
        let sign = if bits[i] { 1.0 } else { -1.0 };
        for (j, (f, &w)) in field.iter_mut().zip(q.row(i)).enumerate() {
            if j != i {
                *f += sign * w;
            }
        }
    };
    for i in 0..m {
        if bits[i] && delta_from_field(q, true, i, field[i]) >= 0.0 {
            flip(&mut bits, &mut field, i);
        }
    }
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            let d = delta_from_field(q, bits[i], i, field[i]);
            if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => flip(&mut bits, &mut field, i),
            None => return bits,
        }
    }
}
