//! The toy denoiser: fixed random projections, one self-attention site with
//! conflict-region removal, one cross-attention site over synthetic token
//! embeddings, and a timestep-dependent output bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{region_remove, RemovalSchedule};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Mask};
use crate::rng::{SeededRng, StreamRole};
use crate::scalar::Scalar;

pub type TokenId = u32;

fn token_rng(seed: u64, id: TokenId) -> SeededRng {
    SeededRng::new(seed, ((id as u64) << 16) | StreamRole::TokenEmbedding as u64)
}

/// Deterministic embedding of `id`: a standard-normal draw of length `dim`
/// rescaled to norm `sqrt(dim)`.
pub fn token_embedding<T: Scalar>(seed: u64, id: TokenId, dim: usize) -> Vec<T> {
    let mut rng = token_rng(seed, id);
    let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let scale = (dim as f64).sqrt() / norm;
    raw.into_iter().map(|v| T::lit(v * scale)).collect()
}

/// An ordered prompt: unique token ids with one embedding each.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet<T> {
    ids: Vec<TokenId>,
    dim: usize,
    embeddings: Vec<T>,
}

impl<T: Scalar> TokenSet<T> {
    /// Prompt whose embeddings are generated from `(seed, token-id)`.
    pub fn generate(ids: &[TokenId], seed: u64, dim: usize) -> Result<Self> {
        let embeddings = ids.iter().map(|&id| token_embedding(seed, id, dim)).collect();
        Self::with_embeddings(ids.to_vec(), embeddings)
    }

    pub fn with_embeddings(ids: Vec<TokenId>, embeddings: Vec<Vec<T>>) -> Result<Self> {
        if ids.len() != embeddings.len() {
            return Err(Error::shape(format!("{} embeddings", ids.len()), embeddings.len()));
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::Parameter(format!("token {id} appears twice in the prompt")));
            }
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        if embeddings.iter().any(|e| e.len() != dim || e.iter().any(|v| !v.is_finite())) {
            return Err(Error::Parameter("token embeddings must share one finite dimension".into()));
        }
        Ok(Self { ids, dim, embeddings: embeddings.concat() })
    }

    pub fn empty() -> Self {
        Self { ids: Vec::new(), dim: 0, embeddings: Vec::new() }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.contains(&id)
    }

    pub fn position(&self, id: TokenId) -> Option<usize> {
        self.ids.iter().position(|&t| t == id)
    }

    pub fn embedding(&self, index: usize) -> &[T] {
        &self.embeddings[index * self.dim..(index + 1) * self.dim]
    }

    /// The prompt with every token in `remove` dropped, order preserved.
    pub fn without(&self, remove: &[TokenId]) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !remove.contains(&self.ids[i])).collect();
        let dim = if keep.is_empty() { 0 } else { self.dim };
        Self {
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            dim,
            embeddings: keep.iter().flat_map(|&i| self.embedding(i).iter().copied()).collect(),
        }
    }
}

/// Square projection matrices shared by every layer. Stored row-major with
/// inputs along rows, so a feature row `x` projects to `x·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    dim: usize,
    query: Vec<T>,
    key: Vec<T>,
    value: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    /// Gaussian projections with variance `1/d`. The key projection is the
    /// query projection plus a `key_jitter`-scaled independent draw, so that
    /// a feature aligned with a key scores high against it. Query and key
    /// projections are then multiplied by `qk_scale`.
    pub fn generate(dim: usize, seed: u64, key_jitter: f64, qk_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("attention dimension must be positive".into()));
        }
        let mut rng = SeededRng::new(seed, StreamRole::Weights as u64);
        let sd = 1.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal() * sd).collect() };
        let n = dim * dim;
        let q = draw(n);
        let jitter = draw(n);
        let value = draw(n);
        let output = draw(n);
        let key: Vec<f64> = q.iter().zip(&jitter).map(|(a, b)| qk_scale * (a + key_jitter * b)).collect();
        let q: Vec<f64> = q.into_iter().map(|a| qk_scale * a).collect();
        let conv = |v: Vec<f64>| v.into_iter().map(T::lit).collect();
        Ok(Self { dim, query: conv(q), key: conv(key), value: conv(value), output: conv(output) })
    }

    pub fn from_matrices(dim: usize, query: Vec<T>, key: Vec<T>, value: Vec<T>, output: Vec<T>) -> Result<Self> {
        for (name, m) in [("query", &query), ("key", &key), ("value", &value), ("output", &output)] {
            if m.len() != dim * dim {
                return Err(Error::shape(format!("{dim}x{dim} {name} matrix"), format!("{} values", m.len())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("{name} matrix has non-finite entries")));
            }
        }
        Ok(Self { dim, query, key, value, output })
    }

    /// Identity projections; handy for analytic checks.
    pub fn identity(dim: usize) -> Self {
        let eye: Vec<T> =
            (0..dim * dim).map(|i| if i / dim == i % dim { T::one() } else { T::zero() }).collect();
        Self { dim, query: eye.clone(), key: eye.clone(), value: eye.clone(), output: eye }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, what: &str, channels: usize) -> Result<()> {
        if channels != self.dim {
            return Err(Error::shape(format!("{} channels for {what}", self.dim), channels));
        }
        Ok(())
    }
}

/// `rows (n×d) · w (d×d)`.
fn project<T: Scalar>(rows: &[T], w: &[T], d: usize) -> Vec<T> {
    let n = rows.len() / d;
    let mut out = vec![T::zero(); n * d];
    out.par_chunks_mut(d).zip(rows.par_chunks(d)).for_each(|(o, x)| {
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wrow = &w[i * d..(i + 1) * d];
            for (oj, &wij) in o.iter_mut().zip(wrow) {
                *oj += xi * wij;
            }
        }
    });
    out
}

/// Scaled dot-product attention over raw projected rows.
///
/// `sink` adds one extra logit with a zero value vector; the returned
/// probabilities cover the real keys only and are renormalised to sum to one.
fn scaled_dot_attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    sink: Option<T>,
) -> (Vec<T>, Vec<T>) {
    let nq = q.len() / d;
    let nk = k.len() / d;
    let scale = T::one() / T::from_count(d).sqrt();
    let mut out = vec![T::zero(); nq * d];
    let mut probs = vec![T::zero(); nq * nk];
    out.par_chunks_mut(d).zip(probs.par_chunks_mut(nk)).enumerate().for_each(|(i, (o, p))| {
        let qi = &q[i * d..(i + 1) * d];
        let mut max = sink.unwrap_or(T::neg_infinity());
        for (j, pj) in p.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            let dot: T = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum();
            *pj = dot * scale;
            max = max.max(*pj);
        }
        let mut total = T::zero();
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            total += *pj;
        }
        let real_total = total;
        if let Some(s) = sink {
            total += (s - max).exp();
        }
        for (j, &pj) in p.iter().enumerate() {
            let w = pj / total;
            for (oc, &vc) in o.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *oc += w * vc;
            }
        }
        for pj in p.iter_mut() {
            *pj /= real_total;
        }
    });
    (out, probs)
}

/// Keys and values for [`attention_update`].
#[derive(Debug, Clone, Copy)]
pub enum Context<'a, T> {
    /// Spatial features (self-attention when this is the query grid).
    Grid(&'a FeatureGrid<T>),
    Tokens(&'a TokenSet<T>),
}

/// Row-stochastic attention probabilities, `queries × keys`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<T> {
    pub queries: usize,
    pub keys: usize,
    pub probs: Vec<T>,
}

impl<T: Scalar> AttentionMap<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.probs[i * self.keys..(i + 1) * self.keys]
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> T {
        (0..self.queries)
            .map(|i| (self.row(i).iter().copied().sum::<T>() - T::one()).abs())
            .fold(T::zero(), T::max)
    }
}

/// `softmax(QKᵀ/√d)·V` with `Q` projected from `queries` and `K`, `V` from
/// `context`. Returns the updated features (query-grid shaped) and the map.
pub fn attention_update<T: Scalar>(
    queries: &FeatureGrid<T>,
    context: Context<'_, T>,
    weights: &AttentionWeights<T>,
) -> Result<(FeatureGrid<T>, AttentionMap<T>)> {
    let d = weights.dim;
    weights.check("queries", queries.channels())?;
    let ctx_rows: &[T] = match context {
        Context::Grid(g) => {
            weights.check("context grid", g.channels())?;
            g.as_slice()
        }
        Context::Tokens(t) => {
            if t.is_empty() {
                return Err(Error::Parameter("attention context is empty".into()));
            }
            weights.check("token embeddings", t.dim)?;
            &t.embeddings
        }
    };
    let q = project(queries.as_slice(), &weights.query, d);
    let k = project(ctx_rows, &weights.key, d);
    let v = project(ctx_rows, &weights.value, d);
    let (out, probs) = scaled_dot_attention(&q, &k, &v, d, None);
    let (h, w, _) = queries.shape();
    let keys = k.len() / d;
    Ok((FeatureGrid::from_raw(h, w, d, out), AttentionMap { queries: h * w, keys, probs }))
}

/// Per-token spatial attention maps from one cross-attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionMaps<T> {
    pub maps: Vec<(TokenId, Mask<T>)>,
}

impl<T> Default for CrossAttentionMaps<T> {
    fn default() -> Self {
        Self { maps: Vec::new() }
    }
}

impl<T: Scalar> CrossAttentionMaps<T> {
    pub fn get(&self, id: TokenId) -> Option<&Mask<T>> {
        self.maps.iter().find(|(t, _)| *t == id).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    fn from_probs(height: usize, width: usize, prompt: &TokenSet<T>, map: &AttentionMap<T>) -> Self {
        let maps = prompt
            .ids()
            .iter()
            .enumerate()
            .map(|(j, &id)| {
                let column = (0..map.queries).map(|i| map.probs[i * map.keys + j].min(T::one())).collect();
                (id, Mask::from_raw(height, width, column))
            })
            .collect();
        Self { maps }
    }
}

/// Query and key removal streams for one layer at one step.
#[derive(Debug, Clone)]
pub struct RemovalRngs {
    pub query: SeededRng,
    pub key: SeededRng,
}

/// Self-attention with time-dependent region removal: `Q` and `K` are each
/// multiplied by `1 − m_con ⊙ Bernoulli(r)` with independent draws before the
/// softmax. `V` is never masked.
pub fn removed_self_attention<T: Scalar>(
    latent: &FeatureGrid<T>,
    m_con: &Mask<T>,
    r_q: T,
    r_k: T,
    rngs: &mut RemovalRngs,
    weights: &AttentionWeights<T>,
) -> Result<FeatureGrid<T>> {
    let (h, w, d) = latent.shape();
    weights.check("latent", d)?;
    m_con.ensure_dims(h, w)?;
    let q = FeatureGrid::from_raw(h, w, d, project(latent.as_slice(), &weights.query, d));
    let k = FeatureGrid::from_raw(h, w, d, project(latent.as_slice(), &weights.key, d));
    let q = region_remove(&q, m_con, r_q, &mut rngs.query)?;
    let k = region_remove(&k, m_con, r_k, &mut rngs.key)?;
    let v = project(latent.as_slice(), &weights.value, d);
    let (out, _) = scaled_dot_attention(q.as_slice(), k.as_slice(), &v, d, None);
    Ok(FeatureGrid::from_raw(h, w, d, out))
}

/// Fixed hyperparameters of the toy denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubstrateConfig {
    /// Scale of the independent component of the key projection.
    pub key_jitter: f64,
    /// Logit of the implicit null key in cross-attention (zero value vector).
    /// `None` disables it.
    pub null_logit: Option<f64>,
    /// Gain applied to the output projection of the attention features.
    pub output_gain: f64,
    /// Amplitude of the sinusoidal timestep bias.
    pub time_bias: f64,
    /// Multiplier on the query and key projections. Larger values sharpen
    /// every attention map.
    pub qk_scale: f64,
}

impl Default for SubstrateConfig {
    fn default() -> Self {
        Self { key_jitter: 0.25, null_logit: Some(6.0), output_gain: 0.005, time_bias: 0.05, qk_scale: 1.0 }
    }
}

/// Shared, immutable toy denoiser.
#[derive(Debug, Clone)]
pub struct Substrate<T> {
    pub weights: AttentionWeights<T>,
    pub config: SubstrateConfig,
    steps: usize,
}

/// Attention output features of one layer pass, before the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatures<T> {
    pub features: FeatureGrid<T>,
    pub maps: CrossAttentionMaps<T>,
}

/// Removal inputs for one layer: conflict mask, the query/key schedules and
/// the streams the Bernoulli masks are drawn from.
#[derive(Debug, Clone)]
pub struct Removal<'a, T> {
    pub m_con: &'a Mask<T>,
    pub query: &'a RemovalSchedule<T>,
    pub key: &'a RemovalSchedule<T>,
    pub rngs: RemovalRngs,
}

impl<T: Scalar> Substrate<T> {
    pub fn new(dim: usize, seed: u64, steps: usize, config: SubstrateConfig) -> Result<Self> {
        let weights = AttentionWeights::generate(dim, seed, config.key_jitter, config.qk_scale)?;
        Ok(Self { weights, config, steps })
    }

    pub fn with_weights(weights: AttentionWeights<T>, steps: usize, config: SubstrateConfig) -> Self {
        Self { weights, config, steps }
    }

    pub fn dim(&self) -> usize {
        self.weights.dim
    }

    /// Cross-attention of `latent` against `prompt`. Returns the attended
    /// features and the per-token maps, renormalised over prompt tokens.
    pub fn cross_attention(
        &self,
        latent: &FeatureGrid<T>,
        prompt: &TokenSet<T>,
    ) -> Result<(FeatureGrid<T>, CrossAttentionMaps<T>)> {
        let (h, w, d) = latent.shape();
        self.weights.check("latent", d)?;
        if prompt.is_empty() {
            return Ok((FeatureGrid::from_raw(h, w, d, vec![T::zero(); h * w * d]), CrossAttentionMaps::default()));
        }
        self.weights.check("token embeddings", prompt.dim)?;
        let q = project(latent.as_slice(), &self.weights.query, d);
        let k = project(&prompt.embeddings, &self.weights.key, d);
        let v = project(&prompt.embeddings, &self.weights.value, d);
        let sink = self.config.null_logit.map(T::lit);
        let (out, probs) = scaled_dot_attention(&q, &k, &v, d, sink);
        let map = AttentionMap { queries: h * w, keys: prompt.len(), probs };
        Ok((FeatureGrid::from_raw(h, w, d, out), CrossAttentionMaps::from_probs(h, w, prompt, &map)))
    }

    /// Self-attention of `latent`, with region removal when `removal` is given.
    pub fn self_attention(
        &self,
        latent: &FeatureGrid<T>,
        position: usize,
        removal: Option<Removal<'_, T>>,
    ) -> Result<FeatureGrid<T>> {
        match removal {
            Some(mut r) => {
                let rq = r.query.rate(position)?;
                let rk = r.key.rate(position)?;
                removed_self_attention(latent, r.m_con, rq, rk, &mut r.rngs, &self.weights)
            }
            None => {
                let (h, w, d) = latent.shape();
                self.weights.check("latent", d)?;
                let q = project(latent.as_slice(), &self.weights.query, d);
                let k = project(latent.as_slice(), &self.weights.key, d);
                let v = project(latent.as_slice(), &self.weights.value, d);
                let (out, _) = scaled_dot_attention(&q, &k, &v, d, None);
                Ok(FeatureGrid::from_raw(h, w, d, out))
            }
        }
    }

    /// Attention output features `φ̂`: removed self-attention plus
    /// cross-attention with `prompt`. An empty prompt skips cross-attention.
    pub fn layer_features(
        &self,
        latent: &FeatureGrid<T>,
        position: usize,
        prompt: &TokenSet<T>,
        removal: Option<Removal<'_, T>>,
    ) -> Result<LayerFeatures<T>> {
        Ok(self.guided_features(latent, position, prompt, removal)?.0)
    }

    /// Conditional features for `prompt` and the unconditional features for
    /// the empty prompt. Both share one self-attention pass, so the removal
    /// draws are identical between the two.
    pub fn guided_features(
        &self,
        latent: &FeatureGrid<T>,
        position: usize,
        prompt: &TokenSet<T>,
        removal: Option<Removal<'_, T>>,
    ) -> Result<(LayerFeatures<T>, FeatureGrid<T>)> {
        let selfattn = self.self_attention(latent, position, removal)?;
        if prompt.is_empty() {
            let cond = LayerFeatures { features: selfattn.clone(), maps: CrossAttentionMaps::default() };
            return Ok((cond, selfattn));
        }
        let (cross, maps) = self.cross_attention(latent, prompt)?;
        let features = selfattn.zip_with(&cross, |a, b| a + b)?;
        Ok((LayerFeatures { features, maps }, selfattn))
    }

    /// Sinusoidal per-channel bias for `position`.
    pub fn time_embedding(&self, position: usize) -> Vec<T> {
        let d = self.dim();
        let t = position as f64 / self.steps.max(1) as f64 * 1000.0;
        (0..d)
            .map(|c| {
                let freq = 1.0 / 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
                let v = if c % 2 == 0 { (t * freq).sin() } else { (t * freq).cos() };
                T::lit(self.config.time_bias * v)
            })
            .collect()
    }

    /// Output projection of attention features plus the timestep bias.
    pub fn noise_from_features(&self, features: &FeatureGrid<T>, position: usize) -> Result<FeatureGrid<T>> {
        let (h, w, d) = features.shape();
        self.weights.check("features", d)?;
        let gain = T::lit(self.config.output_gain);
        let bias = self.time_embedding(position);
        let mut out = project(features.as_slice(), &self.weights.output, d);
        for row in out.chunks_exact_mut(d) {
            for (v, &b) in row.iter_mut().zip(&bias) {
                *v = gain * *v + b;
            }
        }
        Ok(FeatureGrid::from_raw(h, w, d, out))
    }

    /// One layer's noise prediction: removed self-attention, cross-attention
    /// with `prompt`, output projection and timestep bias.
    pub fn toy_denoise(
        &self,
        latent: &FeatureGrid<T>,
        position: usize,
        prompt: &TokenSet<T>,
        removal: Option<Removal<'_, T>>,
    ) -> Result<(FeatureGrid<T>, CrossAttentionMaps<T>)> {
        let f = self.layer_features(latent, position, prompt, removal)?;
        Ok((self.noise_from_features(&f.features, position)?, f.maps))
    }
}

/// The attention column of `token` reshaped to the latent's grid.
pub fn cross_attention_map<T: Scalar>(
    substrate: &Substrate<T>,
    latent: &FeatureGrid<T>,
    prompt: &TokenSet<T>,
    token: TokenId,
) -> Result<Mask<T>> {
    if !prompt.contains(token) {
        return Err(Error::TokenNotFound(token));
    }
    let (_, maps) = substrate.cross_attention(latent, prompt)?;
    Ok(maps.get(token).cloned().expect("every prompt token has a map"))
}

/// A denoiser bound to one prompt and guidance scale, as used for inversion.
pub struct PromptedDenoiser<'a, T> {
    pub substrate: &'a Substrate<T>,
    pub prompt: &'a TokenSet<T>,
    pub guidance: T,
}

impl<T: Scalar> crate::schedule::NoisePredictor<T> for PromptedDenoiser<'_, T> {
    fn predict(&self, latent: &FeatureGrid<T>, position: usize) -> Result<(FeatureGrid<T>, CrossAttentionMaps<T>)> {
        let (cond, uncond) = self.substrate.guided_features(latent, position, self.prompt, None)?;
        let eps_cond = self.substrate.noise_from_features(&cond.features, position)?;
        if self.guidance == T::one() || self.prompt.is_empty() {
            return Ok((eps_cond, cond.maps));
        }
        let eps_uncond = self.substrate.noise_from_features(&uncond, position)?;
        Ok((crate::schedule::cfg_combine(&eps_uncond, &eps_cond, self.guidance)?, cond.maps))
    }
}
