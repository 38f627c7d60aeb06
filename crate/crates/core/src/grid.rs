//! Spatial containers: multi-channel feature grids and single-channel masks.
//!
//! Both store values row-major in `(h, w, c)` order. That order is also the
//! on-disk order of the binary dumps in [`crate::io`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An `H × W` grid of `d`-dimensional feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::Parameter(format!(
            "grid dimensions must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

fn first_non_finite<T: Scalar>(data: &[T]) -> Option<usize> {
    data.iter().position(|v| !v.is_finite())
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values", height * width * channels),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = first_non_finite(&data) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        check_dims(height, width, channels)?;
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    data.push(f(h, w, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Builds a grid whose values are already known to be finite and
    /// correctly sized. Used on hot paths inside the crate.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(first_non_finite(&data).is_none(), "non-finite grid value");
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> T {
        self.data[(h * self.width + w) * self.channels + c]
    }

    /// Feature vector at pixel `(h, w)`.
    #[inline]
    pub fn pixel(&self, h: usize, w: usize) -> &[T] {
        let start = (h * self.width + w) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Feature vector at flat pixel index `p = h * width + w`.
    #[inline]
    pub fn row(&self, p: usize) -> &[T] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(fmt_shape(self.shape()), fmt_shape(other.shape())));
        }
        Ok(())
    }

    pub fn ensure_spatial(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_raw(self.height, self.width, self.channels, data))
    }

    /// `a·self + b·other`, elementwise.
    pub fn lin_comb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Frobenius norm over all cells and channels.
    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// `‖self − other‖ / ‖other‖`, or the absolute difference norm when
    /// `other` is identically zero.
    pub fn relative_diff(&self, other: &Self) -> Result<T> {
        let diff = self.zip_with(other, |a, b| a - b)?.norm();
        let base = other.norm();
        Ok(if base > T::zero() { diff / base } else { diff })
    }

    /// Converts the scalar type, e.g. for dumping an `f32` grid as `f64`.
    pub fn cast<U: Scalar>(&self) -> FeatureGrid<U> {
        FeatureGrid::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        )
    }
}

pub(crate) fn fmt_shape((h, w, c): (usize, usize, usize)) -> String {
    format!("{h}x{w}x{c}")
}

/// An `H × W` field of values in `[0, 1]`.
///
/// Binary masks are ordinary masks whose every value is `0` or `1`; see
/// [`Mask::is_binary`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mask<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_dims(height, width, 1)?;
        if data.len() != height * width {
            return Err(Error::shape(
                format!("{} values", height * width),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = first_non_finite(&data) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = data.iter().position(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::Parameter(format!(
                "mask value {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { height, width, data })
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|&v| v >= T::zero() && v <= T::one()));
        Self { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width, 1)?;
        Ok(Self::from_raw(height, width, vec![T::zero(); height * width]))
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width, 1)?;
        Ok(Self::from_raw(height, width, vec![T::one(); height * width]))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_dims(height, width, 1)?;
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                data.push(f(h, w));
            }
        }
        Self::new(height, width, data)
    }

    /// Binary mask that is one on rows `r0..r1` and columns `c0..c1`
    /// (half-open, clipped to the grid).
    pub fn rect(height: usize, width: usize, r0: usize, c0: usize, r1: usize, c1: usize) -> Result<Self> {
        Self::from_fn(height, width, |h, w| {
            if (r0..r1).contains(&h) && (c0..c1).contains(&w) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Binary indicator of `value > 0` for a real-valued field.
    pub fn support_of(height: usize, width: usize, values: &[T]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        Ok(Self::from_raw(
            height,
            width,
            values.iter().map(|&v| if v > T::zero() { T::one() } else { T::zero() }).collect(),
        ))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> T {
        self.data[h * self.width + w]
    }

    pub fn ensure_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero() || v == T::one())
    }

    pub fn ensure_binary(&self, what: &str) -> Result<()> {
        if !self.is_binary() {
            return Err(Error::Parameter(format!("{what} must be a binary mask")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero())
    }

    /// Number of cells with a positive value.
    pub fn support_size(&self) -> usize {
        self.data.iter().filter(|&&v| v > T::zero()).count()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }

    fn combine(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        other.ensure_dims(self.height, self.width)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_raw(self.height, self.width, data))
    }

    /// Cellwise maximum.
    pub fn union(&self, other: &Self) -> Result<Self> {
        self.combine(other, T::max)
    }

    /// Cellwise minimum.
    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.combine(other, T::min)
    }

    /// `self − other`, clamped to `[0, 1]`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| (a - b).max(T::zero()).min(T::one()))
    }

    /// Binary square dilation of the support by `radius` cells.
    pub fn dilate(&self, radius: usize) -> Self {
        let (hh, ww) = self.dims();
        let mut out = vec![T::zero(); hh * ww];
        for h in 0..hh {
            for w in 0..ww {
                if self.get(h, w) <= T::zero() {
                    continue;
                }
                for y in h.saturating_sub(radius)..(h + radius + 1).min(hh) {
                    for x in w.saturating_sub(radius)..(w + radius + 1).min(ww) {
                        out[y * ww + x] = T::one();
                    }
                }
            }
        }
        Self::from_raw(hh, ww, out)
    }

    /// Single-channel feature grid view of the mask.
    pub fn to_grid(&self) -> FeatureGrid<T> {
        FeatureGrid::from_raw(self.height, self.width, 1, self.data.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Mask<U> {
        Mask::from_raw(self.height, self.width, self.data.iter().map(|&v| U::lit(v.as_f64())).collect())
    }
}

/// Anything with a spatial extent and per-cell channel values.
pub trait SpatialField<T> {
    fn field_dims(&self) -> (usize, usize, usize);
    fn value(&self, h: usize, w: usize, c: usize) -> T;
}

impl<T: Scalar> SpatialField<T> for FeatureGrid<T> {
    fn field_dims(&self) -> (usize, usize, usize) {
        self.shape()
    }

    fn value(&self, h: usize, w: usize, c: usize) -> T {
        self.get(h, w, c)
    }
}

impl<T: Scalar> SpatialField<T> for Mask<T> {
    fn field_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, 1)
    }

    fn value(&self, h: usize, w: usize, _c: usize) -> T {
        self.get(h, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduced<T> {
    pub value: T,
    /// Set when the mask has no positive cell.
    pub empty_support: bool,
}

/// Mask-weighted sum or mean over every cell and channel of `field`.
///
/// The mean divides by the total mask weight times the channel count. An
/// empty support yields `0` with `empty_support` set.
pub fn masked_reduce<T: Scalar, F: SpatialField<T>>(
    field: &F,
    mask: &Mask<T>,
    reduction: Reduction,
) -> Result<Reduced<T>> {
    let (h, w, c) = field.field_dims();
    mask.ensure_dims(h, w)?;
    let mut acc = T::zero();
    let mut weight = T::zero();
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(y, x);
            if m <= T::zero() {
                continue;
            }
            weight += m;
            for k in 0..c {
                acc += m * field.value(y, x, k);
            }
        }
    }
    let empty_support = weight == T::zero();
    let value = match reduction {
        Reduction::Sum => acc,
        Reduction::Mean if empty_support => T::zero(),
        Reduction::Mean => acc / (weight * T::from_count(c)),
    };
    Ok(Reduced { value, empty_support })
}

/// Bilinear sample of every channel at fractional position `(y, x)`.
///
/// Neighbours outside the grid read as zero and neighbours with zero weight
/// are skipped, so integer positions return stored values bit-exactly.
pub fn sample_bilinear<T: Scalar>(grid: &FeatureGrid<T>, y: T, x: T, out: &mut [T]) {
    debug_assert_eq!(out.len(), grid.channels());
    out.iter_mut().for_each(|v| *v = T::zero());
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let taps = [
        (y0, x0, (T::one() - fy) * (T::one() - fx)),
        (y0, x0 + T::one(), (T::one() - fy) * fx),
        (y0 + T::one(), x0, fy * (T::one() - fx)),
        (y0 + T::one(), x0 + T::one(), fy * fx),
    ];
    let hmax = T::from_count(grid.height() - 1);
    let wmax = T::from_count(grid.width() - 1);
    for (ty, tx, weight) in taps {
        if weight == T::zero() || ty < T::zero() || tx < T::zero() || ty > hmax || tx > wmax {
            continue;
        }
        let (ty, tx) = (ty.to_usize().unwrap_or(0), tx.to_usize().unwrap_or(0));
        if weight == T::one() {
            out.copy_from_slice(grid.pixel(ty, tx));
            return;
        }
        for (o, &v) in out.iter_mut().zip(grid.pixel(ty, tx)) {
            *o += weight * v;
        }
    }
}

/// Corner-aligned source coordinate of output index `dst` when resampling a
/// length-`src_len` axis to `dst_len` samples.
fn corner_aligned<T: Scalar>(dst: usize, src_len: usize, dst_len: usize) -> T {
    if dst_len == 1 {
        return T::from_count(src_len - 1) / T::lit(2.0);
    }
    T::from_count(dst * (src_len - 1)) / T::from_count(dst_len - 1)
}

/// Resamples `grid` to `out_h × out_w` with bilinear interpolation.
///
/// Corner samples of input and output coincide, so a `1×3` ramp `[0, 1, 2]`
/// becomes `[0, 0.5, 1, 1.5, 2]` at width five.
pub fn bilinear_resize<T: Scalar>(grid: &FeatureGrid<T>, out_h: usize, out_w: usize) -> Result<FeatureGrid<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Parameter(format!("resize target must be positive, got {out_h}x{out_w}")));
    }
    let c = grid.channels();
    let mut data = vec![T::zero(); out_h * out_w * c];
    for (p, chunk) in data.chunks_exact_mut(c).enumerate() {
        let (h, w) = (p / out_w, p % out_w);
        let y = corner_aligned(h, grid.height(), out_h);
        let x = corner_aligned(w, grid.width(), out_w);
        sample_bilinear(grid, y, x, chunk);
    }
    Ok(FeatureGrid::from_raw(out_h, out_w, c, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(FeatureGrid::<f64>::zeros(0, 2, 2).is_err());
        assert!(FeatureGrid::new(1, 1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(FeatureGrid::new(1, 1, 2, vec![1.0]).is_err());
        assert!(Mask::new(1, 2, vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn resize_identity_is_exact() {
        let g = FeatureGrid::from_fn(5, 7, 3, |h, w, c| (h * 31 + w * 7 + c) as f64 * 0.37).unwrap();
        assert_eq!(bilinear_resize(&g, 5, 7).unwrap(), g);
    }

    #[test]
    fn resize_constant_grid() {
        let g = FeatureGrid::filled(2, 2, 2, 0.625).unwrap();
        let r = bilinear_resize(&g, 4, 4).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.625));
    }

    #[test]
    fn resize_ramp() {
        let g = FeatureGrid::new(1, 3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let r = bilinear_resize(&g, 1, 5).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let g = FeatureGrid::<f64>::zeros(2, 2, 1).unwrap();
        assert!(matches!(bilinear_resize(&g, 0, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn reduce_ones() {
        let g = FeatureGrid::filled(4, 4, 1, 1.0).unwrap();
        let m = Mask::ones(4, 4).unwrap();
        let r = masked_reduce(&g, &m, Reduction::Sum).unwrap();
        assert_eq!(r.value, 16.0);
        assert!(!r.empty_support);
    }

    #[test]
    fn reduce_empty_support() {
        let g = FeatureGrid::filled(4, 4, 1, 3.0).unwrap();
        let m = Mask::zeros(4, 4).unwrap();
        let s = masked_reduce(&g, &m, Reduction::Sum).unwrap();
        let a = masked_reduce(&g, &m, Reduction::Mean).unwrap();
        assert_eq!((s.value, s.empty_support), (0.0, true));
        assert_eq!((a.value, a.empty_support), (0.0, true));
    }

    #[test]
    fn reduce_matches_loop_oracle() {
        let vals: [f64; 9] = [0.3, -1.2, 2.5, 0.0, 4.1, -0.7, 1.9, 0.25, -3.3];
        let mvals: [f64; 9] = [0.0, 0.5, 1.0, 0.2, 0.0, 0.9, 0.4, 1.0, 0.1];
        let g = FeatureGrid::new(3, 3, 1, vals.to_vec()).unwrap();
        let m = Mask::new(3, 3, mvals.to_vec()).unwrap();
        let mut sum = 0.0f64;
        let mut wsum = 0.0f64;
        for i in 0..9 {
            if mvals[i] > 0.0 {
                sum += mvals[i] * vals[i];
                wsum += mvals[i];
            }
        }
        let s = masked_reduce(&g, &m, Reduction::Sum).unwrap();
        let a = masked_reduce(&g, &m, Reduction::Mean).unwrap();
        assert!((s.value - sum).abs() < 1e-12);
        assert!((a.value - sum / wsum).abs() < 1e-12);
    }

    #[test]
    fn mask_set_algebra() {
        let a = Mask::<f64>::rect(4, 4, 0, 0, 2, 4).unwrap();
        let b = Mask::<f64>::rect(4, 4, 1, 0, 3, 4).unwrap();
        assert_eq!(a.union(&b).unwrap().support_size(), 12);
        assert_eq!(a.intersection(&b).unwrap().support_size(), 4);
        assert_eq!(a.difference(&b).unwrap().support_size(), 4);
        let d = Mask::<f64>::rect(5, 5, 2, 2, 3, 3).unwrap().dilate(1);
        assert_eq!(d.support_size(), 9);
    }
}
