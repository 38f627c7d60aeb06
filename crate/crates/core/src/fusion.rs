//! Transparency-guided layer fusion.
//!
//! Each object layer `i` owns a per-pixel transparency `τ^i`. The canvas
//! features are replaced by `Σ τ^i φ̂^i + (1 − Σ τ^i) φ̂^canvas`, and the
//! transparencies are fitted by plain gradient descent on a loss that, on the
//! overlap region `M_τ`, pulls the fused features toward the source layer and
//! the transparencies toward a partition of unity, while a hinge keeps them
//! non-negative everywhere.

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Mask};
use crate::scalar::Scalar;

/// Lower and upper clamp applied to `τ` during descent.
pub const TAU_CLAMP: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, PartialEq)]
pub struct TransparencyField<T> {
    height: usize,
    width: usize,
    layers: Vec<Vec<T>>,
    overlap: Mask<T>,
    /// Total descent iterations applied so far.
    pub iterations: usize,
}

impl<T: Scalar> TransparencyField<T> {
    /// `τ^i = M_o^i`.
    pub fn from_object_masks(masks: &[Mask<T>]) -> Result<Self> {
        Self::seeded(masks, &[], T::zero(), 0)
    }

    /// `τ^i = M_o^i`, plus `band_value` on the `radius`-cell dilation band
    /// around `M_o^i` and around `extra[i]` when given.
    pub fn seeded(masks: &[Mask<T>], extra: &[Option<Mask<T>>], band_value: T, radius: usize) -> Result<Self> {
        let first = masks.first().ok_or_else(|| Error::Parameter("no object masks".into()))?;
        let (h, w) = first.dims();
        let mut layers = Vec::with_capacity(masks.len());
        for (i, m) in masks.iter().enumerate() {
            m.ensure_dims(h, w)?;
            let mut tau = m.as_slice().to_vec();
            if radius > 0 && band_value > T::zero() {
                let mut region = m.clone();
                if let Some(Some(e)) = extra.get(i) {
                    region = region.union(e)?;
                }
                let band = region.dilate(radius);
                for (t, &b) in tau.iter_mut().zip(band.as_slice()) {
                    if *t == T::zero() && b > T::zero() {
                        *t = band_value;
                    }
                }
            }
            layers.push(tau);
        }
        Self::from_layers(h, w, layers)
    }

    pub fn from_layers(height: usize, width: usize, layers: Vec<Vec<T>>) -> Result<Self> {
        if layers.iter().any(|l| l.len() != height * width) {
            return Err(Error::shape(height * width, "a transparency layer of another size"));
        }
        if layers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("transparency values must be finite".into()));
        }
        let overlap = overlap_of(height, width, &layers);
        Ok(Self { height, width, layers, overlap, iterations: 0 })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of object layers `N`.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, i: usize) -> &[T] {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[Vec<T>] {
        &self.layers
    }

    /// Replaces `τ^i` and refreshes `M_τ`.
    pub fn set_layer(&mut self, i: usize, values: Vec<T>) -> Result<()> {
        if values.len() != self.height * self.width {
            return Err(Error::shape(self.height * self.width, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("transparency values must be finite".into()));
        }
        self.layers[i] = values;
        self.refresh_overlap();
        Ok(())
    }

    /// Sets one cell of `τ^i` and leaves `M_τ` as it is.
    pub fn set_value(&mut self, i: usize, p: usize, value: T) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Parameter("transparency values must be finite".into()));
        }
        let cell = self.layers.get_mut(i).and_then(|l| l.get_mut(p));
        *cell.ok_or_else(|| Error::Parameter(format!("cell {p} of layer {i} is out of range")))? = value;
        Ok(())
    }

    /// The overlap mask `M_τ` as of the last refresh.
    pub fn overlap(&self) -> &Mask<T> {
        &self.overlap
    }

    pub fn refresh_overlap(&mut self) {
        self.overlap = overlap_of(self.height, self.width, &self.layers);
    }

    /// `τ^i` as a single-channel grid.
    pub fn layer_grid(&self, i: usize) -> FeatureGrid<T> {
        FeatureGrid::from_raw(self.height, self.width, 1, self.layers[i].clone())
    }

    /// `τ^i` clamped to `[0, 1]`, for reporting.
    pub fn layer_mask(&self, i: usize) -> Mask<T> {
        Mask::from_raw(
            self.height,
            self.width,
            self.layers[i].iter().map(|&v| v.max(T::zero()).min(T::one())).collect(),
        )
    }

    /// `Σ_i τ^i` per pixel.
    pub fn total(&self) -> Vec<T> {
        let mut acc = vec![T::zero(); self.height * self.width];
        for l in &self.layers {
            for (a, &v) in acc.iter_mut().zip(l) {
                *a += v;
            }
        }
        acc
    }
}

fn overlap_of<T: Scalar>(height: usize, width: usize, layers: &[Vec<T>]) -> Mask<T> {
    let data = (0..height * width)
        .map(|p| {
            let count = layers.iter().filter(|l| l[p] > T::zero()).count();
            if count >= 2 {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Mask::from_raw(height, width, data)
}

/// Cells where at least two layers have positive transparency.
pub fn overlap_mask<T: Scalar>(tau: &TransparencyField<T>) -> Mask<T> {
    overlap_of(tau.height, tau.width, &tau.layers)
}

/// Object-layer, canvas and source features that the loss compares.
#[derive(Debug, Clone, Copy)]
pub struct FusionInputs<'a, T> {
    pub objects: &'a [&'a FeatureGrid<T>],
    pub canvas: &'a FeatureGrid<T>,
    pub source: &'a FeatureGrid<T>,
}

impl<T: Scalar> FusionInputs<'_, T> {
    fn check(&self, tau: &TransparencyField<T>) -> Result<()> {
        if self.objects.len() != tau.len() {
            return Err(Error::shape(format!("{} object feature grids", tau.len()), self.objects.len()));
        }
        self.canvas.ensure_spatial(tau.height, tau.width)?;
        for g in self.objects {
            g.ensure_same_shape(self.canvas)?;
        }
        self.source.ensure_same_shape(self.canvas)
    }
}

fn check_fuse_inputs<T: Scalar>(tau: &TransparencyField<T>, objects: &[&FeatureGrid<T>], canvas: &FeatureGrid<T>) -> Result<()> {
    if objects.len() != tau.len() {
        return Err(Error::shape(format!("{} object feature grids", tau.len()), objects.len()));
    }
    canvas.ensure_spatial(tau.height, tau.width)?;
    objects.iter().try_for_each(|g| g.ensure_same_shape(canvas))
}

/// `Σ τ^i ⊙ φ̂^i + (1 − Σ τ^i) ⊙ φ̂^canvas`, broadcast over channels.
pub fn fuse<T: Scalar>(tau: &TransparencyField<T>, objects: &[&FeatureGrid<T>], canvas: &FeatureGrid<T>) -> Result<FeatureGrid<T>> {
    check_fuse_inputs(tau, objects, canvas)?;
    let (h, w, c) = canvas.shape();
    let mut out = Vec::with_capacity(h * w * c);
    for p in 0..h * w {
        let rest = T::one() - tau.layers.iter().map(|l| l[p]).sum::<T>();
        for ch in 0..c {
            let mut v = rest * canvas.row(p)[ch];
            for (l, g) in tau.layers.iter().zip(objects) {
                v += l[p] * g.row(p)[ch];
            }
            out.push(v);
        }
    }
    Ok(FeatureGrid::from_raw(h, w, c, out))
}

/// Per-pixel residual `(fuse − φ̂^source) ⊙ M_τ`, channel-major within a pixel.
fn masked_residual<T: Scalar>(tau: &TransparencyField<T>, inputs: &FusionInputs<'_, T>) -> Result<Vec<T>> {
    let fused = fuse(tau, inputs.objects, inputs.canvas)?;
    let c = fused.channels();
    let mut r = Vec::with_capacity(fused.as_slice().len());
    for p in 0..fused.pixels() {
        let m = tau.overlap.as_slice()[p];
        for ch in 0..c {
            r.push((fused.row(p)[ch] - inputs.source.row(p)[ch]) * m);
        }
    }
    Ok(r)
}

/// The constraint loss, summed over pixels and channels, with `M_τ` taken
/// from the field as stored.
pub fn transparency_loss<T: Scalar>(tau: &TransparencyField<T>, inputs: &FusionInputs<'_, T>) -> Result<T> {
    inputs.check(tau)?;
    let fidelity: T = masked_residual(tau, inputs)?.iter().map(|&v| v * v).sum();
    let hinge: T = tau.layers.iter().flatten().map(|&v| (-v).max(T::zero()).powi(2)).sum();
    let partition: T = tau
        .total()
        .iter()
        .zip(tau.overlap.as_slice())
        .map(|(&s, &m)| ((T::one() - s) * m).powi(2))
        .sum();
    Ok(fidelity + hinge + partition)
}

/// Analytic gradient of [`transparency_loss`] with respect to every `τ^n`.
pub fn transparency_grads<T: Scalar>(tau: &TransparencyField<T>, inputs: &FusionInputs<'_, T>) -> Result<Vec<Vec<T>>> {
    inputs.check(tau)?;
    let residual = masked_residual(tau, inputs)?;
    let total = tau.total();
    let c = inputs.canvas.channels();
    let two = T::lit(2.0);
    let grads = (0..tau.len())
        .map(|n| {
            let layer = inputs.objects[n];
            (0..tau.height * tau.width)
                .map(|p| {
                    let m = tau.overlap.as_slice()[p];
                    let mut fid = T::zero();
                    if m != T::zero() {
                        for ch in 0..c {
                            fid += residual[p * c + ch] * m * (layer.row(p)[ch] - inputs.canvas.row(p)[ch]);
                        }
                    }
                    two * fid - two * (-tau.layers[n][p]).max(T::zero()) - two * (T::one() - total[p]) * m
                })
                .collect()
        })
        .collect();
    Ok(grads)
}

/// Gradient for layer `n` alone.
pub fn transparency_grad<T: Scalar>(tau: &TransparencyField<T>, n: usize, inputs: &FusionInputs<'_, T>) -> Result<Vec<T>> {
    if n >= tau.len() {
        return Err(Error::Parameter(format!("layer {n} out of range for {} layers", tau.len())));
    }
    Ok(transparency_grads(tau, inputs)?.swap_remove(n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig<T> {
    pub step_size: T,
    pub iterations: usize,
    /// Times the step size may be halved after a rise in loss.
    pub max_halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport<T> {
    pub initial_loss: T,
    pub final_loss: T,
    /// Loss before each iteration of the accepted attempt, plus the final loss.
    pub losses: Vec<T>,
    pub halvings: usize,
    pub step_size: T,
}

fn descend<T: Scalar>(
    tau: &TransparencyField<T>,
    inputs: &FusionInputs<'_, T>,
    step_size: T,
    iterations: usize,
) -> Result<(TransparencyField<T>, Vec<T>)> {
    let (lo, hi) = (T::lit(TAU_CLAMP.0), T::lit(TAU_CLAMP.1));
    let mut cur = tau.clone();
    let mut losses = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        cur.refresh_overlap();
        losses.push(transparency_loss(&cur, inputs)?);
        let grads = transparency_grads(&cur, inputs)?;
        for (layer, g) in cur.layers.iter_mut().zip(&grads) {
            for (t, &gv) in layer.iter_mut().zip(g) {
                *t = (*t - step_size * gv).max(lo).min(hi);
            }
        }
        cur.iterations += 1;
    }
    cur.refresh_overlap();
    losses.push(transparency_loss(&cur, inputs)?);
    Ok((cur, losses))
}

/// Runs `config.iterations` plain gradient-descent steps, recomputing `M_τ`
/// before each one. If the loss ends higher than it started, the attempt is
/// discarded and retried with half the step size, up to `max_halvings` times.
pub fn optimize_transparency<T: Scalar>(
    tau: &TransparencyField<T>,
    inputs: &FusionInputs<'_, T>,
    config: OptimizerConfig<T>,
) -> Result<(TransparencyField<T>, OptimizeReport<T>)> {
    if !(config.step_size > T::zero()) {
        return Err(Error::Parameter(format!("step size must be positive, got {}", config.step_size)));
    }
    inputs.check(tau)?;
    let mut start = tau.clone();
    start.refresh_overlap();
    let initial_loss = transparency_loss(&start, inputs)?;
    let mut step_size = config.step_size;
    let mut halvings = 0;
    loop {
        let (next, losses) = descend(&start, inputs, step_size, config.iterations)?;
        let final_loss = *losses.last().expect("at least the final loss");
        if final_loss <= initial_loss || halvings >= config.max_halvings || config.iterations == 0 {
            if final_loss > initial_loss {
                warn!("transparency loss rose from {initial_loss} to {final_loss} after {halvings} halvings");
            }
            let report = OptimizeReport { initial_loss, final_loss, losses, halvings, step_size };
            return Ok((next, report));
        }
        warn!("transparency loss rose from {initial_loss} to {final_loss}; halving step size {step_size}");
        step_size = step_size / T::lit(2.0);
        halvings += 1;
    }
}
