//! Edit scenarios: the TOML schema, validation into an [`EditScenario`], and
//! serialization back to text.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{SubstrateConfig, TokenId};
use crate::decomposition::validate_panoptic;
use crate::error::{Error, FieldError, Result};
use crate::geometry::{GeometricKind, GeometricOp};
use crate::grid::{FeatureGrid, Mask};
use crate::io;
use crate::schedule::ScheduleConfig;

/// Where a mask comes from: a half-open rectangle `[r0, c0, r1, c1]` or an
/// LMSK file relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MaskSource {
    Rect { rect: [usize; 4] },
    File { mask: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// LGRD file holding the source latent. Synthesized from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub panoptic: Vec<MaskSource>,
}

fn default_channels() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    pub source: Vec<TokenId>,
    pub edit: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    #[serde(default)]
    pub source_tokens: Vec<TokenId>,
    #[serde(default)]
    pub edit_tokens: Vec<TokenId>,
    pub mask: MaskSource,
    #[serde(default, rename = "move", skip_serializing_if = "Option::is_none")]
    pub displacement: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSection {
    pub eta: f64,
    pub k: f64,
    /// Query removal threshold, a denoising-step index. Defaults to 2/5 of the steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_query: Option<usize>,
    /// Key removal threshold. Defaults to 4/5 of the steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_key: Option<usize>,
    pub guidance: f64,
    pub inversion_guidance: f64,
    pub fusion_step_size: f64,
    pub fusion_iterations: usize,
    pub containment_ratio: f64,
    pub band_value: f64,
    pub band_radius: usize,
}

impl Default for HyperSection {
    fn default() -> Self {
        Self {
            eta: 0.3,
            k: 5.0,
            t_query: None,
            t_key: None,
            guidance: 7.5,
            inversion_guidance: 1.0,
            fusion_step_size: 1e-2,
            fusion_iterations: 10,
            containment_ratio: 0.5,
            band_value: 0.05,
            band_radius: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub master: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { master: 0 }
    }
}

/// The scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridSection,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub prompts: PromptSection,
    #[serde(default)]
    pub objects: Vec<ObjectSection>,
    #[serde(default)]
    pub hyperparameters: HyperSection,
    #[serde(default)]
    pub substrate: SubstrateConfig,
    #[serde(default)]
    pub seed: SeedSection,
}

/// Resolved hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub eta: f64,
    pub k: f64,
    pub t_query: usize,
    pub t_key: usize,
    pub guidance: f64,
    pub inversion_guidance: f64,
    pub fusion_step_size: f64,
    pub fusion_iterations: usize,
    pub containment_ratio: f64,
    pub band_value: f64,
    pub band_radius: usize,
}

/// One editing pair `⟨O_s^i, O_e^i⟩` with its region and optional geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEdit {
    pub source_tokens: Vec<TokenId>,
    pub edit_tokens: Vec<TokenId>,
    pub mask: Mask<f64>,
    pub geometry: Option<GeometricKind>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EditScenario {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub source: Option<FeatureGrid<f64>>,
    pub panoptic: Vec<Mask<f64>>,
    pub source_prompt: Vec<TokenId>,
    pub edit_prompt: Vec<TokenId>,
    pub objects: Vec<ObjectEdit>,
    pub schedule: ScheduleConfig,
    pub hyper: Hyperparameters,
    pub substrate: SubstrateConfig,
    pub seed: u64,
    /// Out-of-range but accepted settings.
    pub warnings: Vec<String>,
    /// The configuration this scenario was validated from.
    pub config: ScenarioConfig,
    /// Directory relative mask and source paths resolve against.
    pub base_dir: PathBuf,
}

impl EditScenario {
    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn geometric_ops(&self) -> Vec<GeometricOp> {
        self.objects
            .iter()
            .enumerate()
            .filter_map(|(object, o)| o.geometry.map(|kind| GeometricOp { object, kind }))
            .collect()
    }

    /// The scenario's configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.config).map_err(|e| Error::Format { kind: "scenario", reason: e.to_string() })
    }
}

/// Overrides applied on top of a scenario file before validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub eta: Option<f64>,
    pub k: Option<f64>,
    pub t_query: Option<usize>,
    pub t_key: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ScenarioConfig) {
        if let Some(v) = self.seed {
            config.seed.master = v;
        }
        if let Some(v) = self.steps {
            config.schedule.steps = v;
        }
        let hp = &mut config.hyperparameters;
        if let Some(v) = self.eta {
            hp.eta = v;
        }
        if let Some(v) = self.k {
            hp.k = v;
        }
        if let Some(v) = self.t_query {
            hp.t_query = Some(v);
        }
        if let Some(v) = self.t_key {
            hp.t_key = Some(v);
        }
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| Error::Validation(vec![FieldError::new("scenario", e.message().to_string())]))
}

/// Reads, overrides and validates the scenario at `path`.
pub fn load_scenario_with(path: &Path, overrides: &Overrides) -> Result<EditScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    overrides.apply(&mut config);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(config, &base)
}

pub fn load_scenario(path: &Path) -> Result<EditScenario> {
    load_scenario_with(path, &Overrides::default())
}

/// Parses scenario text whose relative paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<EditScenario> {
    validate(parse_config(text)?, base_dir)
}

/// Threshold scaled from its 50-step value to `steps`, at least 1.
fn scaled_step(at_fifty: usize, steps: usize) -> usize {
    ((at_fifty * steps) as f64 / 50.0).round().max(1.0) as usize
}

fn load_mask(src: &MaskSource, h: usize, w: usize, base: &Path) -> std::result::Result<Mask<f64>, String> {
    match src {
        MaskSource::Rect { rect: [r0, c0, r1, c1] } => {
            if r0 >= r1 || c0 >= c1 || *r1 > h || *c1 > w {
                return Err(format!("rectangle [{r0}, {c0}, {r1}, {c1}] is empty or leaves the {h}×{w} grid"));
            }
            Mask::rect(h, w, *r0, *c0, *r1, *c1).map_err(|e| e.to_string())
        }
        MaskSource::File { mask } => {
            let m = io::read_mask::<f64>(&base.join(mask)).map_err(|e| e.to_string())?;
            if m.dims() != (h, w) {
                let (mh, mw) = m.dims();
                return Err(format!("expected {h}×{w}, found {mh}×{mw}"));
            }
            if !m.is_binary() {
                return Err("mask is not binary".into());
            }
            Ok(m)
        }
    }
}

fn check_unique(ids: &[TokenId], field: &str, errors: &mut Vec<FieldError>) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            errors.push(FieldError::new(field, format!("token {id} listed twice")));
        }
    }
}

fn check_subset(ids: &[TokenId], prompt: &[TokenId], field: &str, which: &str, errors: &mut Vec<FieldError>) {
    for id in ids {
        if !prompt.contains(id) {
            errors.push(FieldError::new(field, format!("token {id} is not in the {which} prompt")));
        }
    }
}

/// Validates `config`, collecting every field-level problem.
pub fn validate(config: ScenarioConfig, base_dir: &Path) -> Result<EditScenario> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let (h, w, c) = (config.grid.height, config.grid.width, config.grid.channels);
    if h == 0 || w == 0 {
        errors.push(FieldError::new("grid", "height and width must be at least 1"));
    }
    if c == 0 {
        errors.push(FieldError::new("grid.channels", "must be at least 1"));
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }

    let source = match &config.grid.source {
        None => None,
        Some(p) => match io::read_grid::<f64>(&base_dir.join(p)) {
            Ok(g) if g.shape() == (h, w, c) => Some(g),
            Ok(g) => {
                let (gh, gw, gc) = g.shape();
                errors.push(FieldError::new("grid.source", format!("expected {h}×{w}×{c}, found {gh}×{gw}×{gc}")));
                None
            }
            Err(e) => {
                errors.push(FieldError::new("grid.source", e.to_string()));
                None
            }
        },
    };

    let mut panoptic = Vec::new();
    for (j, src) in config.grid.panoptic.iter().enumerate() {
        match load_mask(src, h, w, base_dir) {
            Ok(m) => panoptic.push(m),
            Err(e) => errors.push(FieldError::new(format!("grid.panoptic[{j}]"), e)),
        }
    }
    if panoptic.len() == config.grid.panoptic.len() {
        if let Err(e) = validate_panoptic(&panoptic, h, w) {
            errors.push(FieldError::new("grid.panoptic", e.to_string()));
        }
    }

    let s = config.schedule.steps;
    if s == 0 {
        errors.push(FieldError::new("schedule.steps", "must be at least 1"));
    }
    if s > config.schedule.train_steps {
        errors.push(FieldError::new("schedule.steps", format!("exceeds train_steps {}", config.schedule.train_steps)));
    }
    if !(config.schedule.beta_start > 0.0 && config.schedule.beta_start < config.schedule.beta_end && config.schedule.beta_end < 1.0)
    {
        errors.push(FieldError::new("schedule", "need 0 < beta_start < beta_end < 1"));
    }

    let prompts = &config.prompts;
    check_unique(&prompts.source, "prompts.source", &mut errors);
    check_unique(&prompts.edit, "prompts.edit", &mut errors);

    let mut objects = Vec::new();
    for (i, o) in config.objects.iter().enumerate() {
        let field = |name: &str| format!("objects[{i}].{name}");
        check_subset(&o.source_tokens, &prompts.source, &field("source_tokens"), "source", &mut errors);
        check_subset(&o.edit_tokens, &prompts.edit, &field("edit_tokens"), "edit", &mut errors);
        check_unique(&o.source_tokens, &field("source_tokens"), &mut errors);
        check_unique(&o.edit_tokens, &field("edit_tokens"), &mut errors);
        let mask = match load_mask(&o.mask, h, w, base_dir) {
            Ok(m) if m.is_empty() => {
                errors.push(FieldError::new(field("mask"), "object mask is empty"));
                None
            }
            Ok(m) => Some(m),
            Err(e) => {
                errors.push(FieldError::new(field("mask"), e));
                None
            }
        };
        let geometry = match (o.displacement, o.resize) {
            (Some(_), Some(_)) => {
                errors.push(FieldError::new(format!("objects[{i}]"), "an object takes either move or resize, not both"));
                None
            }
            (Some([dh, dw]), None) => Some(GeometricKind::Move { dh, dw }),
            (None, Some(scale)) => Some(GeometricKind::Resize { scale }),
            (None, None) => None,
        };
        if let Some(kind) = geometry {
            let name = if matches!(kind, GeometricKind::Move { .. }) { "move" } else { "resize" };
            if let Err(e) = (GeometricOp { object: i, kind }).validate(h, w) {
                errors.push(FieldError::new(field(name), e.to_string()));
            }
        }
        if let Some(mask) = mask {
            objects.push(ObjectEdit {
                source_tokens: o.source_tokens.clone(),
                edit_tokens: o.edit_tokens.clone(),
                mask,
                geometry,
            });
        }
    }

    let hp = &config.hyperparameters;
    let t_query = hp.t_query.unwrap_or_else(|| scaled_step(20, s));
    let t_key = hp.t_key.unwrap_or_else(|| scaled_step(40, s));
    if !(hp.eta > 0.0 && hp.eta < 1.0) {
        errors.push(FieldError::new("hyperparameters.eta", format!("{} outside (0, 1)", hp.eta)));
    }
    if !(hp.k > 0.0 && hp.k.is_finite()) {
        errors.push(FieldError::new("hyperparameters.k", "must be positive"));
    }
    for (name, t) in [("t_query", t_query), ("t_key", t_key)] {
        if s > 0 && !(1..=s).contains(&t) {
            errors.push(FieldError::new(format!("hyperparameters.{name}"), format!("{t} outside 1..={s}")));
        }
    }
    for (name, v) in [("guidance", hp.guidance), ("inversion_guidance", hp.inversion_guidance)] {
        if !v.is_finite() {
            errors.push(FieldError::new(format!("hyperparameters.{name}"), "must be finite"));
        }
    }
    if !(hp.fusion_step_size > 0.0 && hp.fusion_step_size.is_finite()) {
        errors.push(FieldError::new("hyperparameters.fusion_step_size", "must be positive"));
    }
    if !(hp.containment_ratio > 0.0 && hp.containment_ratio <= 1.0) {
        errors.push(FieldError::new("hyperparameters.containment_ratio", "must lie in (0, 1]"));
    }
    if !(hp.band_value >= 0.0 && hp.band_value <= 1.0) {
        errors.push(FieldError::new("hyperparameters.band_value", "must lie in [0, 1]"));
    }
    let sc = &config.substrate;
    if !(sc.key_jitter.is_finite() && sc.output_gain.is_finite() && sc.time_bias.is_finite() && sc.qk_scale > 0.0 && sc.qk_scale.is_finite())
        || sc.null_logit.is_some_and(|v| !v.is_finite())
    {
        errors.push(FieldError::new("substrate", "values must be finite and qk_scale positive"));
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }

    if !(0.25..=0.35).contains(&hp.eta) {
        warnings.push(format!("eta = {} outside the robust range [0.25, 0.35]", hp.eta));
    }
    if !(3.0..=8.0).contains(&hp.k) {
        warnings.push(format!("k = {} outside the robust range [3, 8]", hp.k));
    }
    for (name, t, lo, hi) in [("t_query", t_query, 15, 25), ("t_key", t_key, 35, 45)] {
        let (lo, hi) = (scaled_step(lo, s), scaled_step(hi, s));
        if !(lo..=hi).contains(&t) {
            warnings.push(format!("{name} = {t} outside the robust range [{lo}, {hi}] for {s} steps"));
        }
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }

    let hyper = Hyperparameters {
        eta: hp.eta,
        k: hp.k,
        t_query,
        t_key,
        guidance: hp.guidance,
        inversion_guidance: hp.inversion_guidance,
        fusion_step_size: hp.fusion_step_size,
        fusion_iterations: hp.fusion_iterations,
        containment_ratio: hp.containment_ratio,
        band_value: hp.band_value,
        band_radius: hp.band_radius,
    };
    Ok(EditScenario {
        height: h,
        width: w,
        channels: c,
        source,
        panoptic,
        source_prompt: prompts.source.clone(),
        edit_prompt: prompts.edit.clone(),
        objects,
        schedule: config.schedule,
        hyper,
        substrate: config.substrate,
        seed: config.seed.master,
        warnings,
        base_dir: base_dir.to_path_buf(),
        config,
    })
}
