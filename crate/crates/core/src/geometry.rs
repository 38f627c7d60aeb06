//! Centroid-aligned move and resize of attention output features.
//!
//! Both maps blend an object into the canvas layer's features through its
//! transparency `τ^i`. Moves shift canvas features by an integer
//! displacement; resizes resample the object about its `τ`-weighted centroid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_bilinear, FeatureGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometricKind {
    Move { dh: i64, dw: i64 },
    Resize { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricOp {
    pub object: usize,
    pub kind: GeometricKind,
}

impl GeometricOp {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        match self.kind {
            GeometricKind::Move { dh, dw } => {
                if dh.unsigned_abs() as usize >= height || dw.unsigned_abs() as usize >= width {
                    return Err(Error::Parameter(format!(
                        "displacement ({dh}, {dw}) exceeds ±({}, {})",
                        height - 1,
                        width - 1
                    )));
                }
            }
            GeometricKind::Resize { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Parameter(format!("resize scale must be positive, got {scale}")));
                }
            }
        }
        Ok(())
    }
}

fn check_tau<T: Scalar>(tau: &FeatureGrid<T>, height: usize, width: usize) -> Result<()> {
    tau.ensure_spatial(height, width)?;
    if tau.channels() != 1 {
        return Err(Error::shape("1 transparency channel", tau.channels()));
    }
    Ok(())
}

/// `τ`-weighted mean `(row, column)` coordinate.
pub fn centroid<T: Scalar>(tau: &FeatureGrid<T>) -> Result<(T, T)> {
    check_tau(tau, tau.height(), tau.width())?;
    let (mut mass, mut ch, mut cw) = (T::zero(), T::zero(), T::zero());
    for h in 0..tau.height() {
        for w in 0..tau.width() {
            let t = tau.get(h, w, 0);
            mass += t;
            ch += t * T::from_count(h);
            cw += t * T::from_count(w);
        }
    }
    if !(mass > T::zero()) {
        return Err(Error::DegenerateObject);
    }
    Ok((ch / mass, cw / mass))
}

/// `Move(x)(h, w) = x(h − dh, w − dw)`, reading zero outside the grid.
pub fn shift<T: Scalar>(x: &FeatureGrid<T>, dh: i64, dw: i64) -> FeatureGrid<T> {
    let (h, w, c) = x.shape();
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        let sy = y as i64 - dh;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for xx in 0..w {
            let sx = xx as i64 - dw;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            let dst = (y * w + xx) * c;
            out[dst..dst + c].copy_from_slice(x.pixel(sy as usize, sx as usize));
        }
    }
    FeatureGrid::from_raw(h, w, c, out)
}

/// `canvas ⊙ (1 − Move(τ)) + Move(canvas) ⊙ Move(τ)`.
pub fn move_map<T: Scalar>(canvas: &FeatureGrid<T>, tau: &FeatureGrid<T>, dh: i64, dw: i64) -> Result<FeatureGrid<T>> {
    let (h, w, c) = canvas.shape();
    check_tau(tau, h, w)?;
    GeometricOp { object: 0, kind: GeometricKind::Move { dh, dw } }.validate(h, w)?;
    if dh == 0 && dw == 0 {
        return Ok(canvas.clone());
    }
    let moved_tau = shift(tau, dh, dw);
    let moved = shift(canvas, dh, dw);
    let mut out = canvas.as_slice().to_vec();
    for p in 0..h * w {
        let t = moved_tau.as_slice()[p];
        if t == T::zero() {
            continue;
        }
        for (o, &m) in out[p * c..(p + 1) * c].iter_mut().zip(moved.row(p)) {
            *o = *o * (T::one() - t) + m * t;
        }
    }
    Ok(FeatureGrid::from_raw(h, w, c, out))
}

/// Where a centroid-aligned resize writes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeWindow<T> {
    pub centroid: (T, T),
    /// Half-up rounded centroid used to place the window.
    pub anchor: (usize, usize),
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub scale: T,
}

impl<T: Scalar> ResizeWindow<T> {
    /// Window of `min(H, H·s) × min(W, W·s)` cells centred on the anchor,
    /// clipped at the grid border.
    pub fn new(height: usize, width: usize, centroid: (T, T), scale: T) -> Result<Self> {
        if !(scale > T::zero() && scale.is_finite()) {
            return Err(Error::Parameter(format!("resize scale must be positive, got {scale}")));
        }
        let round_half_up = |v: T| (v + T::lit(0.5)).floor().to_usize().unwrap_or(0);
        let anchor = (
            round_half_up(centroid.0).min(height - 1),
            round_half_up(centroid.1).min(width - 1),
        );
        let span = |len: usize, at: usize| {
            let size = (T::from_count(len) * scale).round().to_usize().unwrap_or(len).clamp(1, len);
            let start = at as i64 - (size / 2) as i64;
            (start.max(0) as usize, ((start + size as i64) as usize).min(len))
        };
        Ok(Self { centroid, anchor, rows: span(height, anchor.0), cols: span(width, anchor.1), scale })
    }

    pub fn contains(&self, h: usize, w: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&h) && (self.cols.0..self.cols.1).contains(&w)
    }

    /// Source coordinate read for output cell `(h, w)`: the cell's offset
    /// from the centroid divided by the scale.
    #[inline]
    fn source_of(&self, h: usize, w: usize) -> (T, T) {
        let shrink = T::one() - T::one() / self.scale;
        let (y, x) = (T::from_count(h), T::from_count(w));
        (y + (self.centroid.0 - y) * shrink, x + (self.centroid.1 - x) * shrink)
    }

    /// `x` resampled by the scale about the centroid, inside the window;
    /// zero elsewhere.
    pub fn resample(&self, x: &FeatureGrid<T>) -> FeatureGrid<T> {
        let (h, w, c) = x.shape();
        let mut out = vec![T::zero(); h * w * c];
        for y in self.rows.0..self.rows.1 {
            for xx in self.cols.0..self.cols.1 {
                let (sy, sx) = self.source_of(y, xx);
                let p = (y * w + xx) * c;
                if self.scale >= T::one() {
                    sample_bilinear(x, sy, sx, &mut out[p..p + c]);
                } else {
                    self.sample_shrunk(x, sy, sx, &mut out[p..p + c]);
                }
            }
        }
        FeatureGrid::from_raw(h, w, c, out)
    }

    /// Bilinear read with the tent widened to `1 / s` so a shrink averages
    /// every source cell it covers.
    fn sample_shrunk(&self, x: &FeatureGrid<T>, sy: T, sx: T, out: &mut [T]) {
        let (h, w, _) = x.shape();
        let radius = T::one() / self.scale;
        let taps = |at: T, len: usize| {
            let lo = (at - radius).ceil().to_i64().unwrap_or(0);
            let hi = (at + radius).floor().to_i64().unwrap_or(-1);
            let mut total = T::zero();
            let mut kept = Vec::with_capacity((hi - lo + 1).max(0) as usize);
            for i in lo..=hi {
                let weight = T::one() - (T::lit(i as f64) - at).abs() / radius;
                if weight <= T::zero() {
                    continue;
                }
                total += weight;
                if i >= 0 && (i as usize) < len {
                    kept.push((i as usize, weight));
                }
            }
            kept.into_iter().map(move |(i, wt)| (i, wt / total)).collect::<Vec<_>>()
        };
        let rows = taps(sy, h);
        let cols = taps(sx, w);
        out.iter_mut().for_each(|v| *v = T::zero());
        for &(i, wy) in &rows {
            for &(j, wx) in &cols {
                let weight = wy * wx;
                for (o, &v) in out.iter_mut().zip(x.pixel(i, j)) {
                    *o += weight * v;
                }
            }
        }
    }
}

/// Result of [`resize_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resized<T> {
    pub features: FeatureGrid<T>,
    /// The resampled transparency written into the window.
    pub tau: FeatureGrid<T>,
    pub window: ResizeWindow<T>,
}

/// Writes the object `layer ⊙ τ`, resized by `scale` about its centroid, into
/// the canvas: window cells become `resized(layer ⊙ τ) + canvas ⊙ (1 − resized τ)`.
pub fn resize_map<T: Scalar>(
    layer: &FeatureGrid<T>,
    canvas: &FeatureGrid<T>,
    tau: &FeatureGrid<T>,
    scale: T,
) -> Result<Resized<T>> {
    layer.ensure_same_shape(canvas)?;
    let (h, w, c) = canvas.shape();
    check_tau(tau, h, w)?;
    let window = ResizeWindow::new(h, w, centroid(tau)?, scale)?;
    let weighted = FeatureGrid::from_raw(
        h,
        w,
        c,
        layer
            .as_slice()
            .chunks_exact(c)
            .zip(tau.as_slice())
            .flat_map(|(row, &t)| row.iter().map(move |&v| v * t))
            .collect(),
    );
    let obj = window.resample(&weighted);
    let rtau = window.resample(tau);
    let mut out = canvas.as_slice().to_vec();
    for y in window.rows.0..window.rows.1 {
        for x in window.cols.0..window.cols.1 {
            let p = y * w + x;
            let t = rtau.as_slice()[p];
            for ch in 0..c {
                out[p * c + ch] = obj.as_slice()[p * c + ch] + canvas.as_slice()[p * c + ch] * (T::one() - t);
            }
        }
    }
    Ok(Resized { features: FeatureGrid::from_raw(h, w, c, out), tau: rtau, window })
}
