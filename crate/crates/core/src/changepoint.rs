//! Offline change-point detection by penalized segmentation: minimize
//! `V(tau) + beta * K` over all segmentations of the series, where `V` is the
//! sum of per-segment costs and `K` the number of breakpoints.
//!
//! Two solvers share one contract: [`detect_exact`] scans every admissible
//! last-segment start (O(T^2)), [`detect_pruned`] additionally discards
//! candidates that can no longer start an optimal last segment (PELT-style,
//! near-linear on long series with informative penalties). Both return a
//! global minimizer; they may differ in breakpoints only when objectives tie.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::MobilitySeries;

/// Per-segment cost model. Costs are additive over the segment's own
/// elements only; no cross-segment terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentCost {
    /// Sum of squared deviations from the segment's own mean. Zero on
    /// constant and single-element segments; the standard choice for
    /// mean-shift detection.
    L2Mean,
    /// Sum of squared deviations from a fixed reference level.
    L2ConstantRef { reference: f64 },
}

/// A detected segmentation: breakpoint indices in `(0, T)`, strictly
/// increasing. A breakpoint at index `t` starts a new segment at `t`
/// (half-open segments `[prev, t)`, `[t, next)`), so its calendar date is
/// the first day of the new regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub breakpoints: Vec<usize>,
    /// Penalized objective `V(tau) + beta * K`, recomputed from the stored
    /// breakpoints.
    pub objective: f64,
    pub beta: f64,
}

impl Segmentation {
    /// Number of breakpoints K.
    pub fn change_count(&self) -> usize {
        self.breakpoints.len()
    }

    /// Checks self-consistency: monotone in-range breakpoints and an
    /// objective that matches a recomputation under the stored beta.
    pub fn validate(&self, series: &MobilitySeries, cost: SegmentCost) -> Result<()> {
        let t_len = series.len();
        let mut prev = 0usize;
        for &b in &self.breakpoints {
            if b <= prev || b >= t_len {
                return Err(Error::Argument(format!(
                    "breakpoint {b} out of order or range for series of length {t_len}"
                )));
            }
            prev = b;
        }
        let recomputed = objective_of(series.values(), &self.breakpoints, self.beta, cost)?;
        if recomputed != self.objective {
            return Err(Error::Argument(format!(
                "stored objective {} does not match recomputed {}",
                self.objective, recomputed
            )));
        }
        Ok(())
    }
}

/// Detection parameters. `beta` is the per-breakpoint penalty weight;
/// `min_segment_len` suppresses spurious single-day segments (default 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub beta: f64,
    pub cost: SegmentCost,
    pub min_segment_len: usize,
}

impl DetectorParams {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            cost: SegmentCost::L2Mean,
            min_segment_len: 2,
        }
    }

    pub fn with_cost(mut self, cost: SegmentCost) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_min_segment_len(mut self, len: usize) -> Self {
        self.min_segment_len = len.max(1);
        self
    }

    fn validate(&self, t_len: usize) -> Result<()> {
        if t_len < 2 {
            return Err(Error::Argument(format!(
                "series of length {t_len} is too short for detection"
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Argument(format!(
                "penalty beta must be nonnegative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// BIC-style default penalty: `2 * ln(T) * Var(series)`.
pub fn default_beta(series: &MobilitySeries) -> f64 {
    let values = series.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    2.0 * n.ln() * var
}

/// Prefix-sum cost evaluator. Building it once per series makes every
/// per-segment query O(1) and, crucially, makes the segment value a pure
/// function of (series, start, end, cost) so the solvers and the public
/// [`segment_cost`] agree bit for bit.
struct CostEval {
    prefix_sum: Vec<f64>,
    prefix_sq: Vec<f64>,
    cost: SegmentCost,
}

impl CostEval {
    fn new(values: &[f64], cost: SegmentCost) -> Self {
        let mut prefix_sum = Vec::with_capacity(values.len() + 1);
        let mut prefix_sq = Vec::with_capacity(values.len() + 1);
        prefix_sum.push(0.0);
        prefix_sq.push(0.0);
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for &v in values {
            s1 += v;
            s2 += v * v;
            prefix_sum.push(s1);
            prefix_sq.push(s2);
        }
        Self {
            prefix_sum,
            prefix_sq,
            cost,
        }
    }

    /// Cost of the half-open segment `[start, end)`, `start < end`.
    fn segment(&self, start: usize, end: usize) -> f64 {
        let n = (end - start) as f64;
        let s1 = self.prefix_sum[end] - self.prefix_sum[start];
        let s2 = self.prefix_sq[end] - self.prefix_sq[start];
        let raw = match self.cost {
            SegmentCost::L2Mean => s2 - s1 * s1 / n,
            SegmentCost::L2ConstantRef { reference } => {
                s2 - 2.0 * reference * s1 + n * reference * reference
            }
        };
        // Cancellation can push a mathematically nonnegative cost slightly
        // below zero.
        raw.max(0.0)
    }
}

/// Cost of the half-open segment `[start, end)` of the series.
pub fn segment_cost(
    series: &MobilitySeries,
    start: usize,
    end: usize,
    cost: SegmentCost,
) -> Result<f64> {
    segment_cost_values(series.values(), start, end, cost)
}

/// Slice-level variant of [`segment_cost`].
pub fn segment_cost_values(
    values: &[f64],
    start: usize,
    end: usize,
    cost: SegmentCost,
) -> Result<f64> {
    if start >= end || end > values.len() {
        return Err(Error::Argument(format!(
            "invalid segment [{start}, {end}) for series of length {}",
            values.len()
        )));
    }
    Ok(CostEval::new(values, cost).segment(start, end))
}

/// Penalized objective of a given breakpoint sequence, summed left to right:
/// `sum of segment costs + beta * K`. The solvers and every oracle use this
/// exact accumulation order.
pub fn objective_of(
    values: &[f64],
    breakpoints: &[usize],
    beta: f64,
    cost: SegmentCost,
) -> Result<f64> {
    let eval = CostEval::new(values, cost);
    objective_with_eval(&eval, values.len(), breakpoints, beta)
}

fn objective_with_eval(
    eval: &CostEval,
    t_len: usize,
    breakpoints: &[usize],
    beta: f64,
) -> Result<f64> {
    let mut v = 0.0;
    let mut prev = 0usize;
    for &b in breakpoints {
        if b <= prev || b >= t_len {
            return Err(Error::Argument(format!("invalid breakpoint {b}")));
        }
        v += eval.segment(prev, b);
        prev = b;
    }
    v += eval.segment(prev, t_len);
    Ok(v + beta * breakpoints.len() as f64)
}

/// Finds a global minimizer of `V(tau) + beta * K` by dynamic programming
/// over prefixes, scanning every admissible candidate. Ties break toward
/// fewer breakpoints, then the lexicographically smallest sequence.
pub fn detect_exact(series: &MobilitySeries, params: &DetectorParams) -> Result<Segmentation> {
    params.validate(series.len())?;
    Ok(dp_detect(series.values(), params, false))
}

/// Same contract as [`detect_exact`], with PELT-style candidate pruning.
/// The returned objective always equals the exact optimum; breakpoints may
/// differ from `detect_exact` only when objectives tie.
pub fn detect_pruned(series: &MobilitySeries, params: &DetectorParams) -> Result<Segmentation> {
    params.validate(series.len())?;
    Ok(dp_detect(series.values(), params, true))
}

/// Maps the first breakpoint to its calendar date.
pub fn change_date(series: &MobilitySeries, seg: &Segmentation) -> Result<NaiveDate> {
    let first = *seg.breakpoints.first().ok_or(Error::NoChangePoint)?;
    Ok(series.date_at(first))
}

/// Reconstructs the breakpoint sequence ending at prefix `t` from the
/// predecessor table.
fn path_of(prev: &[usize], mut t: usize) -> Vec<usize> {
    let mut seq = Vec::new();
    while t != 0 {
        let s = prev[t];
        if s == 0 {
            break;
        }
        seq.push(s);
        t = s;
    }
    seq.reverse();
    seq
}

/// Shared solver. `F[t]` is the minimal penalized cost of segmenting
/// `[0, t)`, seeded with `F[0] = -beta` so each segment start contributes
/// one `beta` uniformly. Candidate `s` for prefix `t` means "last segment
/// is `[s, t)`".
///
/// Pruning marks candidate `s` as dominated at the first `t0` where
/// `F[s] + c(s, t0) > F[t0]`, but only drops it once `t >= t0 + min_len`:
/// the dominance argument substitutes a breakpoint at `t0`, which is
/// admissible only when the replacement segment `[t0, t)` has reached the
/// minimum length. Dropping earlier could lose optima, so candidates linger
/// for `min_len` steps.
fn dp_detect(values: &[f64], params: &DetectorParams, prune: bool) -> Segmentation {
    let t_len = values.len();
    let min_len = params.min_segment_len;
    let beta = params.beta;
    let eval = CostEval::new(values, params.cost);

    let mut f = vec![f64::INFINITY; t_len + 1];
    let mut k = vec![0usize; t_len + 1];
    let mut prev = vec![usize::MAX; t_len + 1];
    f[0] = -beta;
    prev[0] = 0;

    // Candidate last-segment starts, paired with the prefix index at which
    // they became dominated (usize::MAX while still competitive).
    let mut candidates: Vec<(usize, usize)> = vec![(0, usize::MAX)];

    for t in 1..=t_len {
        let mut best: Option<(f64, usize, usize)> = None; // (value, K, start)
        for &(s, _) in &candidates {
            // Every segment respects the minimum length, except the single
            // whole-series segment, which keeps K = 0 reachable even when
            // T < min_len.
            let whole_series = s == 0 && t == t_len;
            if !whole_series && t - s < min_len {
                continue;
            }
            if !f[s].is_finite() {
                continue;
            }
            let value = f[s] + eval.segment(s, t) + beta;
            let cand_k = k[s] + usize::from(s != 0);
            let replace = match &best {
                None => true,
                Some((bv, bk, bs)) => {
                    if value < *bv {
                        true
                    } else if value > *bv {
                        false
                    } else if cand_k != *bk {
                        cand_k < *bk
                    } else {
                        // Exact value and K tie: lexicographically smallest
                        // full sequence wins. Rare, so reconstruction here
                        // is affordable.
                        let mut cand_seq = path_of(&prev, s);
                        if s != 0 {
                            cand_seq.push(s);
                        }
                        let mut best_seq = path_of(&prev, *bs);
                        if *bs != 0 {
                            best_seq.push(*bs);
                        }
                        cand_seq < best_seq
                    }
                }
            };
            if replace {
                best = Some((value, cand_k, s));
            }
        }
        // Prefixes shorter than min_len admit no candidate and stay
        // unreachable (infinite cost).
        if let Some((value, cand_k, s)) = best {
            f[t] = value;
            k[t] = cand_k;
            prev[t] = s;
        }

        if prune && f[t].is_finite() {
            for entry in candidates.iter_mut() {
                let (s, ref mut dominated_at) = *entry;
                if *dominated_at != usize::MAX || t - s < min_len {
                    continue;
                }
                // PELT dominance: once extending from s cannot beat the
                // optimum at t, s can never start an optimal last segment
                // for any t' >= t + min_len.
                if f[s] + eval.segment(s, t) > f[t] {
                    *dominated_at = t;
                }
            }
            candidates.retain(|&(_, dominated_at)| {
                dominated_at == usize::MAX || t < dominated_at + min_len
            });
        }
        if t < t_len {
            candidates.push((t, usize::MAX));
        }
    }

    let breakpoints = path_of(&prev, t_len);
    // Recompute the reported objective with the canonical left-to-right
    // formula so it is bit-identical to any oracle using `objective_of`.
    let objective = objective_with_eval(&eval, t_len, &breakpoints, beta)
        .expect("backtracked breakpoints are valid");
    Segmentation {
        breakpoints,
        objective,
        beta,
    }
}
