//! Conflict-aware layer decomposition: cross-attention aggregation, the
//! attention-aware IoU against panoptic regions, per-object conflict masks and
//! the SNR-driven removal-rate schedule.

use rayon::prelude::*;

use crate::attention::{CrossAttentionMaps, TokenId};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Mask};
use crate::rng::{bernoulli_mask, SeededRng};
use crate::scalar::{sigmoid, Scalar};
use crate::schedule::{snr, NoiseSchedule};

/// Time-and-token averaged cross-attention of one object, max-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedAttention<T> {
    pub map: Mask<T>,
}

/// Mean of `maps`, divided by its maximum. An all-zero mean stays zero.
pub fn aggregate_masks<T: Scalar>(maps: &[&Mask<T>]) -> Result<AggregatedAttention<T>> {
    let first = maps.first().ok_or_else(|| Error::Parameter("no attention maps to aggregate".into()))?;
    let (h, w) = first.dims();
    let mut acc = vec![T::zero(); h * w];
    for m in maps {
        m.ensure_dims(h, w)?;
        for (a, &v) in acc.iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    let n = T::from_count(maps.len());
    acc.iter_mut().for_each(|a| *a /= n);
    let max = acc.iter().copied().fold(T::zero(), T::max);
    if max > T::zero() {
        acc.iter_mut().for_each(|a| *a = (*a / max).min(T::one()));
    }
    Ok(AggregatedAttention { map: Mask::new(h, w, acc)? })
}

/// Averages the maps of `tokens` over every recorded step and normalises.
pub fn aggregate_attention<T: Scalar>(
    steps: &[CrossAttentionMaps<T>],
    tokens: &[TokenId],
) -> Result<AggregatedAttention<T>> {
    if steps.is_empty() || tokens.is_empty() {
        return Err(Error::Parameter("aggregation needs at least one step and one token".into()));
    }
    let mut maps = Vec::with_capacity(steps.len() * tokens.len());
    for step in steps {
        for &t in tokens {
            maps.push(step.get(t).ok_or(Error::TokenNotFound(t))?);
        }
    }
    aggregate_masks(&maps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouScore<T> {
    pub value: T,
    /// Both operands were identically zero.
    pub degenerate: bool,
}

/// Soft IoU `Σ min(Ā, M) / Σ max(Ā, M)`.
pub fn a_iou<T: Scalar>(attention: &Mask<T>, m_pan: &Mask<T>) -> Result<IouScore<T>> {
    m_pan.ensure_dims(attention.height(), attention.width())?;
    let (mut inter, mut union) = (T::zero(), T::zero());
    for (&a, &m) in attention.as_slice().iter().zip(m_pan.as_slice()) {
        inter += a.min(m);
        union += a.max(m);
    }
    if union == T::zero() {
        return Ok(IouScore { value: T::zero(), degenerate: true });
    }
    Ok(IouScore { value: inter / union, degenerate: false })
}

/// Checks that every panoptic mask is binary, sized `height × width`, and
/// that no two overlap.
pub fn validate_panoptic<T: Scalar>(panoptic: &[Mask<T>], height: usize, width: usize) -> Result<()> {
    let mut owner = vec![usize::MAX; height * width];
    for (j, m) in panoptic.iter().enumerate() {
        m.ensure_dims(height, width)?;
        m.ensure_binary(&format!("panoptic mask {j}"))?;
        for (cell, &v) in m.as_slice().iter().enumerate() {
            if v > T::zero() {
                if owner[cell] != usize::MAX {
                    return Err(Error::Parameter(format!(
                        "panoptic masks {} and {j} overlap at cell ({}, {})",
                        owner[cell],
                        cell / width,
                        cell % width
                    )));
                }
                owner[cell] = j;
            }
        }
    }
    Ok(())
}

/// Union of the panoptic regions scoring above `eta`, minus the object's own
/// mask.
pub fn conflict_mask<T: Scalar>(iou_row: &[T], eta: T, panoptic: &[Mask<T>], m_o: &Mask<T>) -> Result<Mask<T>> {
    if !(eta > T::zero() && eta < T::one()) {
        return Err(Error::Parameter(format!("IoU threshold {eta} outside (0, 1)")));
    }
    if iou_row.len() != panoptic.len() {
        return Err(Error::shape(format!("{} IoU scores", panoptic.len()), iou_row.len()));
    }
    let (h, w) = m_o.dims();
    m_o.ensure_binary("object mask")?;
    validate_panoptic(panoptic, h, w)?;
    let mut acc = Mask::zeros(h, w)?;
    for (m, &score) in panoptic.iter().zip(iou_row) {
        if score > eta {
            acc = acc.union(m)?;
        }
    }
    acc.difference(m_o)
}

/// Scores and conflict masks for every object.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictReport<T> {
    /// `N × K` attention-aware IoU, objects by panoptic regions.
    pub iou: Vec<Vec<T>>,
    pub masks: Vec<Mask<T>>,
    pub eta: T,
}

pub fn conflict_report<T: Scalar>(
    attention: &[AggregatedAttention<T>],
    panoptic: &[Mask<T>],
    object_masks: &[Mask<T>],
    eta: T,
) -> Result<ConflictReport<T>> {
    if attention.len() != object_masks.len() {
        return Err(Error::shape(format!("{} object masks", attention.len()), object_masks.len()));
    }
    let iou = attention
        .par_iter()
        .map(|a| panoptic.iter().map(|m| a_iou(&a.map, m).map(|s| s.value)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let masks = iou
        .iter()
        .zip(object_masks)
        .map(|(row, m_o)| conflict_mask(row, eta, panoptic, m_o))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConflictReport { iou, masks, eta })
}

/// `sigmoid(k·(SNR(t_thres)/SNR(position) − 1))`.
pub fn removal_rate<T: Scalar>(position: usize, sched: &NoiseSchedule<T>, k: T, thres_position: usize) -> Result<T> {
    let at = snr(position, sched)?.value;
    let thres = snr(thres_position, sched)?.value;
    Ok(sigmoid(k * (thres / at - T::one())))
}

/// Removal rate `r(t)` for one feature role, precomputed for every position.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalSchedule<T> {
    pub k: T,
    /// Threshold as a denoising-step index counted from the noisy end.
    pub t_thres: usize,
    rates: Vec<T>,
}

impl<T: Scalar> RemovalSchedule<T> {
    pub fn new(k: T, t_thres: usize, sched: &NoiseSchedule<T>) -> Result<Self> {
        if !(k > T::zero()) {
            return Err(Error::Parameter(format!("steepness k must be positive, got {k}")));
        }
        let thres_position = sched.position_of_step(t_thres)?;
        let rates = (0..=sched.steps())
            .map(|p| removal_rate(p, sched, k, thres_position))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, t_thres, rates })
    }

    /// A schedule that never removes anything.
    pub fn disabled(steps: usize) -> Self {
        Self { k: T::zero(), t_thres: 0, rates: vec![T::zero(); steps + 1] }
    }

    pub fn rate(&self, position: usize) -> Result<T> {
        self.rates
            .get(position)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("position {position} outside the removal schedule")))
    }

    /// Rates indexed by sampler position.
    pub fn rates(&self) -> &[T] {
        &self.rates
    }

    /// Rates in denoising order: first denoising step first.
    pub fn rates_in_denoising_order(&self) -> Vec<T> {
        self.rates[1..].iter().rev().copied().collect()
    }
}

/// `f ⊙ (1 − m_con ⊙ Bernoulli(r))`, broadcast over channels.
pub fn region_remove<T: Scalar>(f: &FeatureGrid<T>, m_con: &Mask<T>, r: T, rng: &mut SeededRng) -> Result<FeatureGrid<T>> {
    let (h, w, c) = f.shape();
    m_con.ensure_dims(h, w)?;
    m_con.ensure_binary("conflict mask")?;
    let drop = bernoulli_mask(h, w, r, rng)?;
    let mut data = f.as_slice().to_vec();
    for (p, row) in data.chunks_exact_mut(c).enumerate() {
        let keep = T::one() - m_con.as_slice()[p] * drop.as_slice()[p];
        if keep != T::one() {
            row.iter_mut().for_each(|v| *v = *v * keep);
        }
    }
    Ok(FeatureGrid::from_raw(h, w, c, data))
}
