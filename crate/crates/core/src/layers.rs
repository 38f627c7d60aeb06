//! The `N + 2` layer stack: per-layer prompts, parallel per-layer denoising
//! with region removal, and the per-step geometry and fusion barrier that
//! writes into the canvas layer.
//!
//! Layer `0` reconstructs the source with `T_s`. Layers `1..=N` carry one
//! edited object each. Layer `N + 1` is the canvas: it has an empty prompt,
//! a conflict mask covering every object and receives the fused features.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::attention::{PromptedDenoiser, Removal, RemovalRngs, Substrate, TokenId, TokenSet};
use crate::decomposition::{aggregate_attention, conflict_report, AggregatedAttention, ConflictReport, RemovalSchedule};
use crate::error::{Error, Result};
use crate::fusion::{fuse, optimize_transparency, FusionInputs, OptimizeReport, OptimizerConfig, TransparencyField};
use crate::geometry::{move_map, resize_map, GeometricKind, GeometricOp};
use crate::grid::{FeatureGrid, Mask};
use crate::rng::{SeededRng, StreamKey, StreamRole};
use crate::scalar::Scalar;
use crate::scenario::EditScenario;
use crate::schedule::{cfg_combine, ddim_invert, ddim_step, LatentState, NoiseSchedule};

/// Result of the majority-containment test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Containment {
    pub contained: bool,
    /// The inner mask was empty.
    pub degenerate: bool,
}

/// Whether at least `ratio` of `inner`'s support lies inside `outer`.
pub fn containment<T: Scalar>(inner: &Mask<T>, outer: &Mask<T>, ratio: T) -> Result<Containment> {
    outer.ensure_dims(inner.height(), inner.width())?;
    inner.ensure_binary("inner mask")?;
    outer.ensure_binary("outer mask")?;
    let size = inner.support_size();
    if size == 0 {
        return Ok(Containment { contained: false, degenerate: true });
    }
    let shared = inner
        .as_slice()
        .iter()
        .zip(outer.as_slice())
        .filter(|(&a, &b)| a > T::zero() && b > T::zero())
        .count();
    Ok(Containment { contained: T::from_count(shared) / T::from_count(size) >= ratio, degenerate: false })
}

/// Token ids of every layer: `T_s` for layer 0; for object layer `i`, `T_e`
/// without `O_e^j` for each object `j` contained in `M_con^i`; nothing for
/// the canvas.
pub fn build_layer_prompts<T: Scalar>(
    source_prompt: &[TokenId],
    edit_prompt: &[TokenId],
    edit_tokens: &[Vec<TokenId>],
    object_masks: &[Mask<T>],
    conflicts: &ConflictReport<T>,
    ratio: T,
) -> Result<Vec<Vec<TokenId>>> {
    let n = object_masks.len();
    if edit_tokens.len() != n || conflicts.masks.len() != n {
        return Err(Error::shape(format!("{n} objects"), format!("{} token sets, {} conflict masks", edit_tokens.len(), conflicts.masks.len())));
    }
    let mut prompts = Vec::with_capacity(n + 2);
    prompts.push(source_prompt.to_vec());
    for m_con in &conflicts.masks {
        let mut removed: Vec<TokenId> = Vec::new();
        for (j, m_o) in object_masks.iter().enumerate() {
            if containment(m_o, m_con, ratio)?.contained {
                removed.extend(&edit_tokens[j]);
            }
        }
        prompts.push(edit_prompt.iter().copied().filter(|t| !removed.contains(t)).collect());
    }
    prompts.push(Vec::new());
    Ok(prompts)
}

/// Prompt, conflict mask and removal schedules of one layer.
#[derive(Debug, Clone)]
pub struct LayerSpec<T> {
    pub id: usize,
    pub prompt: TokenSet<T>,
    pub m_con: Mask<T>,
    pub query: RemovalSchedule<T>,
    pub key: RemovalSchedule<T>,
}

impl<T: Scalar> LayerSpec<T> {
    fn removal(&self, seed: u64, position: usize) -> Option<Removal<'_, T>> {
        if self.m_con.is_empty() {
            return None;
        }
        let rngs = RemovalRngs {
            query: SeededRng::for_key(seed, StreamKey::new(self.id, position, StreamRole::QueryRemoval)),
            key: SeededRng::for_key(seed, StreamKey::new(self.id, position, StreamRole::KeyRemoval)),
        };
        Some(Removal { m_con: &self.m_con, query: &self.query, key: &self.key, rngs })
    }
}

/// Every layer's spec and latent. All latents sit at the same step.
#[derive(Debug, Clone)]
pub struct LayerStack<T> {
    pub specs: Vec<LayerSpec<T>>,
    pub latents: Vec<LatentState<T>>,
    /// Master seed the removal streams are keyed from.
    pub seed: u64,
}

impl<T: Scalar> LayerStack<T> {
    /// Builds the stack with every layer starting from `start`.
    ///
    /// `layer_prompts` holds `N + 2` prompts, `conflict_masks` the `N` object
    /// conflict masks; the canvas conflict mask is the union of `object_masks`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        start: &LatentState<T>,
        layer_prompts: Vec<TokenSet<T>>,
        object_masks: &[Mask<T>],
        conflict_masks: &[Mask<T>],
        query: &RemovalSchedule<T>,
        key: &RemovalSchedule<T>,
        seed: u64,
    ) -> Result<Self> {
        let n = object_masks.len();
        if layer_prompts.len() != n + 2 || conflict_masks.len() != n {
            return Err(Error::shape(
                format!("{} prompts and {n} conflict masks", n + 2),
                format!("{} prompts and {} conflict masks", layer_prompts.len(), conflict_masks.len()),
            ));
        }
        if !layer_prompts[n + 1].is_empty() {
            return Err(Error::Parameter("the canvas layer takes an empty prompt".into()));
        }
        let (h, w, _) = start.latent.shape();
        let empty = Mask::zeros(h, w)?;
        let mut canvas_con = empty.clone();
        for m in object_masks {
            canvas_con = canvas_con.union(m)?;
        }
        let steps = query.rates().len() - 1;
        let specs = layer_prompts
            .into_iter()
            .enumerate()
            .map(|(id, prompt)| {
                let (m_con, q, k) = match id {
                    0 => (empty.clone(), RemovalSchedule::disabled(steps), RemovalSchedule::disabled(steps)),
                    i if i == n + 1 => (canvas_con.clone(), query.clone(), key.clone()),
                    i => (conflict_masks[i - 1].clone(), query.clone(), key.clone()),
                };
                LayerSpec { id, prompt, m_con, query: q, key: k }
            })
            .collect();
        Ok(Self { specs, latents: vec![start.clone(); n + 2], seed })
    }

    /// Number of object layers `N`.
    pub fn objects(&self) -> usize {
        self.specs.len() - 2
    }

    pub fn canvas(&self) -> &LatentState<T> {
        self.latents.last().expect("stack has a canvas layer")
    }

    /// The common step of every latent.
    pub fn step(&self) -> Result<usize> {
        let step = self.latents[0].step;
        if let Some(l) = self.latents.iter().position(|s| s.step != step) {
            return Err(Error::State(format!("layer {l} is at step {} while layer 0 is at {step}", self.latents[l].step)));
        }
        Ok(step)
    }
}

/// The order in which layers are evaluated within a step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum LayerOrder {
    /// All layers concurrently on the current rayon pool.
    #[default]
    Parallel,
    /// One after another in the given permutation of layer ids.
    Sequential(Vec<usize>),
}

impl LayerOrder {
    fn map<R: Send>(&self, count: usize, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
        match self {
            LayerOrder::Parallel => (0..count).into_par_iter().map(f).collect(),
            LayerOrder::Sequential(perm) => {
                let mut sorted = perm.clone();
                sorted.sort_unstable();
                if sorted != (0..count).collect::<Vec<_>>() {
                    return Err(Error::Parameter(format!("{perm:?} is not a permutation of 0..{count}")));
                }
                let mut slots: Vec<Option<R>> = (0..count).map(|_| None).collect();
                for &l in perm {
                    slots[l] = Some(f(l)?);
                }
                Ok(slots.into_iter().map(|s| s.expect("every slot filled")).collect())
            }
        }
    }
}

/// How transparency is handled at the fusion barrier.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionMode<T> {
    /// Descend on `τ` every step with this configuration.
    Optimize(OptimizerConfig<T>),
    /// Keep `τ` as given.
    Fixed,
}

/// Per-step settings shared by every layer.
pub struct StepContext<'a, T> {
    pub substrate: &'a Substrate<T>,
    pub schedule: &'a NoiseSchedule<T>,
    pub guidance: T,
    pub geometry: &'a [GeometricOp],
    pub fusion: FusionMode<T>,
    pub order: LayerOrder,
}

/// What happened at one step's fusion barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<T> {
    /// Sampler position the step ran at.
    pub position: usize,
    pub fusion: Option<OptimizeReport<T>>,
}

/// Indices of the objects taking part in fusion: those without geometry.
fn fused_objects(n: usize, geometry: &[GeometricOp]) -> Vec<usize> {
    (0..n).filter(|i| !geometry.iter().any(|g| g.object == *i)).collect()
}

fn sub_field<T: Scalar>(tau: &TransparencyField<T>, which: &[usize]) -> Result<TransparencyField<T>> {
    let (h, w) = tau.dims();
    let mut f = TransparencyField::from_layers(h, w, which.iter().map(|&i| tau.layer(i).to_vec()).collect())?;
    f.iterations = tau.iterations;
    Ok(f)
}

/// Applies every geometric op to the canvas features, in scenario order.
fn apply_geometry<T: Scalar>(
    canvas: FeatureGrid<T>,
    objects: &[&FeatureGrid<T>],
    tau: &TransparencyField<T>,
    geometry: &[GeometricOp],
) -> Result<FeatureGrid<T>> {
    let mut canvas = canvas;
    for op in geometry {
        let t = tau.layer_grid(op.object);
        canvas = match op.kind {
            GeometricKind::Move { dh, dw } => move_map(&canvas, &t, dh, dw)?,
            GeometricKind::Resize { scale } => resize_map(objects[op.object], &canvas, &t, T::lit(scale))?.features,
        };
    }
    Ok(canvas)
}

/// Advances every layer by one denoising step.
///
/// Each layer computes its conditional and unconditional attention features
/// (in `ctx.order`). At the barrier the canvas features receive the geometric
/// maps, `τ` is updated against the layer-0 features and the object layers
/// without geometry are fused into the canvas. Every layer then applies
/// guidance and takes a DDIM step.
pub fn denoise_all_layers<T: Scalar>(
    stack: &mut LayerStack<T>,
    tau: &mut TransparencyField<T>,
    ctx: &StepContext<'_, T>,
) -> Result<StepReport<T>> {
    let position = stack.step()?;
    if position == 0 {
        return Err(Error::AlreadyClean);
    }
    let n = stack.objects();
    if tau.len() != n {
        return Err(Error::shape(format!("{n} transparency layers"), tau.len()));
    }
    let seed = stack.seed;
    let features = ctx.order.map(n + 2, |l| {
        let spec = &stack.specs[l];
        let (cond, uncond) =
            ctx.substrate.guided_features(&stack.latents[l].latent, position, &spec.prompt, spec.removal(seed, position))?;
        Ok((cond.features, uncond))
    })?;
    let (mut cond, mut uncond): (Vec<_>, Vec<_>) = features.into_iter().unzip();

    let canvas_cond = cond.pop().expect("canvas layer");
    let canvas_uncond = uncond.pop().expect("canvas layer");
    let obj_cond: Vec<&FeatureGrid<T>> = cond[1..].iter().collect();
    let obj_uncond: Vec<&FeatureGrid<T>> = uncond[1..].iter().collect();
    let canvas_cond = apply_geometry(canvas_cond, &obj_cond, tau, ctx.geometry)?;
    let canvas_uncond = apply_geometry(canvas_uncond, &obj_uncond, tau, ctx.geometry)?;

    let active = fused_objects(n, ctx.geometry);
    let mut report = None;
    let (fused_cond, fused_uncond) = if active.is_empty() {
        (canvas_cond, canvas_uncond)
    } else {
        let mut field = sub_field(tau, &active)?;
        let sel_cond: Vec<&FeatureGrid<T>> = active.iter().map(|&i| obj_cond[i]).collect();
        let sel_uncond: Vec<&FeatureGrid<T>> = active.iter().map(|&i| obj_uncond[i]).collect();
        if let FusionMode::Optimize(config) = ctx.fusion {
            let inputs = FusionInputs { objects: &sel_cond, canvas: &canvas_cond, source: &cond[0] };
            let (next, r) = optimize_transparency(&field, &inputs, config)?;
            field = next;
            report = Some(r);
            for (k, &i) in active.iter().enumerate() {
                tau.set_layer(i, field.layer(k).to_vec())?;
            }
            tau.iterations = field.iterations;
        }
        (fuse(&field, &sel_cond, &canvas_cond)?, fuse(&field, &sel_uncond, &canvas_uncond)?)
    };
    cond.push(fused_cond);
    uncond.push(fused_uncond);

    let latents = &stack.latents;
    let next = ctx.order.map(n + 2, |l| {
        let eps_cond = ctx.substrate.noise_from_features(&cond[l], position)?;
        let eps = if ctx.guidance == T::one() {
            eps_cond
        } else {
            let eps_uncond = ctx.substrate.noise_from_features(&uncond[l], position)?;
            cfg_combine(&eps_uncond, &eps_cond, ctx.guidance)?
        };
        ddim_step(&latents[l], &eps, ctx.schedule)
    })?;
    stack.latents = next;
    Ok(StepReport { position, fusion: report })
}

/// Wall-clock of each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub setup: Duration,
    pub inversion: Duration,
    pub decomposition: Duration,
    pub denoising: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.setup + self.inversion + self.decomposition + self.denoising
    }
}

/// Knobs of a pipeline run that are not part of the scenario.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions<T> {
    pub order: LayerOrder,
    /// Keep a copy of `τ` after every step.
    pub record_history: bool,
    /// Use this transparency throughout instead of optimizing it.
    pub fixed_transparency: Option<TransparencyField<T>>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    /// Final canvas latent.
    pub canvas: FeatureGrid<T>,
    /// Final latent of every layer, layer 0 first and the canvas last.
    pub layers: Vec<FeatureGrid<T>>,
    pub source: FeatureGrid<T>,
    pub inverted: FeatureGrid<T>,
    pub attention: Vec<AggregatedAttention<T>>,
    pub conflicts: ConflictReport<T>,
    pub prompts: Vec<Vec<TokenId>>,
    pub transparency: TransparencyField<T>,
    /// `τ` after each step, when requested.
    pub history: Vec<TransparencyField<T>>,
    pub steps: Vec<StepReport<T>>,
    pub timings: StageTimings,
}

/// Weight of the token embedding in a synthesized object region.
pub const SOURCE_OBJECT_GAIN: f64 = 2.0;

/// The shared substrate of a scenario.
pub fn scenario_substrate<T: Scalar>(scenario: &EditScenario) -> Result<Substrate<T>> {
    Substrate::new(scenario.channels, scenario.seed, scenario.schedule.steps, scenario.substrate)
}

/// The source latent: the scenario's own, or a synthetic one with a smooth
/// background and each object region pulled toward the mean embedding of
/// its source tokens.
pub fn source_latent<T: Scalar>(scenario: &EditScenario) -> Result<FeatureGrid<T>> {
    if let Some(g) = &scenario.source {
        return Ok(g.cast());
    }
    let (h, w, d) = (scenario.height, scenario.width, scenario.channels);
    let mut rng = SeededRng::for_key(scenario.seed, StreamKey::new(0, 0, StreamRole::SourceLatent));
    let coarse: FeatureGrid<f64> = rng.normal_grid(h.div_ceil(4) + 1, w.div_ceil(4) + 1, d)?;
    let background = crate::grid::bilinear_resize(&coarse, h, w)?;
    let detail: FeatureGrid<f64> = rng.normal_grid(h, w, d)?;
    let mut data: Vec<f64> = background.as_slice().iter().zip(detail.as_slice()).map(|(b, e)| 0.5 * b + 0.1 * e).collect();
    for o in &scenario.objects {
        if o.source_tokens.is_empty() {
            continue;
        }
        let tokens = TokenSet::<f64>::generate(&o.source_tokens, scenario.seed, d)?;
        let mut mean = vec![0.0; d];
        for t in 0..tokens.len() {
            for (m, &e) in mean.iter_mut().zip(tokens.embedding(t)) {
                *m += e / tokens.len() as f64;
            }
        }
        for p in 0..h * w {
            let m = o.mask.as_slice()[p];
            if m > 0.0 {
                for (v, &e) in data[p * d..(p + 1) * d].iter_mut().zip(&mean) {
                    *v = (1.0 - m) * *v + m * (0.3 * *v + SOURCE_OBJECT_GAIN * e);
                }
            }
        }
    }
    Ok(FeatureGrid::new(h, w, d, data)?.cast())
}

/// Runs the full edit: inversion, decomposition, `S` steps of layered
/// denoising with transparency optimization, and fusion into the canvas.
pub fn run_pipeline<T: Scalar>(scenario: &EditScenario, options: &PipelineOptions<T>) -> Result<PipelineOutput<T>> {
    let clock = Instant::now();
    let mut timings = StageTimings::default();
    let hp = &scenario.hyper;
    let (h, w, d) = (scenario.height, scenario.width, scenario.channels);
    let schedule = NoiseSchedule::<T>::scaled_linear(&scenario.schedule)?;
    let substrate = scenario_substrate::<T>(scenario)?;
    let t_s = TokenSet::<T>::generate(&scenario.source_prompt, scenario.seed, d)?;
    let z0 = source_latent::<T>(scenario)?;
    let object_masks: Vec<Mask<T>> = scenario.objects.iter().map(|o| o.mask.cast()).collect();
    let panoptic: Vec<Mask<T>> = scenario.panoptic.iter().map(Mask::cast).collect();
    timings.setup = clock.elapsed();

    let clock = Instant::now();
    let inverter = PromptedDenoiser { substrate: &substrate, prompt: &t_s, guidance: T::lit(hp.inversion_guidance) };
    let (start, maps) = ddim_invert(&z0, &inverter, &schedule)?;
    timings.inversion = clock.elapsed();

    let clock = Instant::now();
    let attention = scenario
        .objects
        .iter()
        .map(|o| {
            if o.source_tokens.is_empty() {
                Ok(AggregatedAttention { map: Mask::zeros(h, w)? })
            } else {
                aggregate_attention(&maps, &o.source_tokens)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let conflicts = conflict_report(&attention, &panoptic, &object_masks, T::lit(hp.eta))?;
    let edit_tokens: Vec<Vec<TokenId>> = scenario.objects.iter().map(|o| o.edit_tokens.clone()).collect();
    let prompts = build_layer_prompts(
        &scenario.source_prompt,
        &scenario.edit_prompt,
        &edit_tokens,
        &object_masks,
        &conflicts,
        T::lit(hp.containment_ratio),
    )?;
    let layer_prompts = prompts
        .iter()
        .map(|ids| TokenSet::generate(ids, scenario.seed, d))
        .collect::<Result<Vec<_>>>()?;
    let query = RemovalSchedule::new(T::lit(hp.k), hp.t_query, &schedule)?;
    let key = RemovalSchedule::new(T::lit(hp.k), hp.t_key, &schedule)?;
    let mut stack = LayerStack::new(&start, layer_prompts, &object_masks, &conflicts.masks, &query, &key, scenario.seed)?;
    let geometry = scenario.geometric_ops();
    let fused = fused_objects(object_masks.len(), &geometry);
    let mut tau = match &options.fixed_transparency {
        Some(t) => {
            if t.dims() != (h, w) || t.len() != object_masks.len() {
                return Err(Error::Parameter("fixed transparency does not match the scenario".into()));
            }
            t.clone()
        }
        None if object_masks.is_empty() => TransparencyField::from_layers(h, w, Vec::new())?,
        None => {
            let band: Vec<Mask<T>> =
                object_masks.iter().enumerate().map(|(i, m)| if fused.contains(&i) { m.clone() } else { Mask::zeros(h, w).expect("nonzero dims") }).collect();
            let mut seeded = TransparencyField::seeded(&band, &[], T::lit(hp.band_value), hp.band_radius)?;
            for (i, m) in object_masks.iter().enumerate() {
                if !fused.contains(&i) {
                    seeded.set_layer(i, m.as_slice().to_vec())?;
                }
            }
            seeded
        }
    };
    timings.decomposition = clock.elapsed();

    let clock = Instant::now();
    let ctx = StepContext {
        substrate: &substrate,
        schedule: &schedule,
        guidance: T::lit(hp.guidance),
        geometry: &geometry,
        fusion: if options.fixed_transparency.is_some() {
            FusionMode::Fixed
        } else {
            FusionMode::Optimize(OptimizerConfig {
                step_size: T::lit(hp.fusion_step_size),
                iterations: hp.fusion_iterations,
                max_halvings: 3,
            })
        },
        order: options.order.clone(),
    };
    let mut steps = Vec::with_capacity(schedule.steps());
    let mut history = Vec::new();
    while stack.step()? > 0 {
        steps.push(denoise_all_layers(&mut stack, &mut tau, &ctx)?);
        if options.record_history {
            history.push(tau.clone());
        }
    }
    timings.denoising = clock.elapsed();

    let layers: Vec<FeatureGrid<T>> = stack.latents.into_iter().map(|s| s.latent).collect();
    Ok(PipelineOutput {
        canvas: layers.last().expect("canvas layer").clone(),
        layers,
        source: z0,
        inverted: start.latent,
        attention,
        conflicts,
        prompts,
        transparency: tau,
        history,
        steps,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(r0: usize, c0: usize, r1: usize, c1: usize) -> Mask<f64> {
        Mask::rect(8, 8, r0, c0, r1, c1).unwrap()
    }

    #[test]
    fn containment_examples() {
        let inner = rect(0, 0, 2, 5);
        assert!(containment(&inner, &rect(0, 0, 4, 8), 0.5).unwrap().contained);
        assert!(!containment(&inner, &rect(4, 0, 8, 8), 0.5).unwrap().contained);
        // 6 of 10 cells inside, then 4 of 10
        assert!(containment(&inner, &rect(0, 0, 2, 3), 0.5).unwrap().contained);
        assert!(!containment(&inner, &rect(0, 0, 2, 2), 0.5).unwrap().contained);
        let c = containment(&Mask::zeros(8, 8).unwrap(), &rect(0, 0, 8, 8), 0.5).unwrap();
        assert_eq!(c, Containment { contained: false, degenerate: true });
    }

    fn report(masks: Vec<Mask<f64>>) -> ConflictReport<f64> {
        ConflictReport { iou: vec![vec![]; masks.len()], masks, eta: 0.3 }
    }

    #[test]
    fn prompts_follow_containment() {
        let m1 = rect(0, 0, 3, 3);
        let m2 = rect(5, 5, 8, 8);
        let edit = [10, 11, 20, 21, 30];
        let tokens = vec![vec![10, 11], vec![20, 21]];
        let objects = [m1.clone(), m2.clone()];
        let r = report(vec![rect(4, 4, 8, 8), Mask::zeros(8, 8).unwrap()]);
        let p = build_layer_prompts(&[1, 2], &edit, &tokens, &objects, &r, 0.5).unwrap();
        assert_eq!(p, vec![vec![1, 2], vec![10, 11, 30], edit.to_vec(), vec![]]);

        let none = report(vec![Mask::zeros(8, 8).unwrap(); 2]);
        let p = build_layer_prompts(&[1, 2], &edit, &tokens, &objects, &none, 0.5).unwrap();
        assert_eq!(p[1], edit.to_vec());
        assert!(p[3].is_empty());
    }

    #[test]
    fn order_rejects_non_permutation() {
        let order = LayerOrder::Sequential(vec![0, 0, 1]);
        assert!(order.map(3, Ok).is_err());
        let order = LayerOrder::Sequential(vec![2, 0, 1]);
        assert_eq!(order.map(3, |i| Ok(i * 10)).unwrap(), vec![0, 10, 20]);
    }
}
