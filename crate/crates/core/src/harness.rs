//! Scenario runs on disk: artifact emission, run manifests and golden-file
//! regression checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attention::SubstrateConfig;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::io;
use crate::layers::{run_pipeline, PipelineOptions, PipelineOutput, StageTimings};
use crate::scenario::{load_scenario_with, parse_config, EditScenario, Hyperparameters, MaskSource, Overrides, ScenarioConfig};
use crate::schedule::ScheduleConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFLICTS: &str = "conflicts.json";
pub const GOLDEN_INDEX: &str = "golden.json";

/// First 8 bytes of the SHA-256 of `bytes`, as 16 hex digits.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Which stage of a run failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Pipeline,
    Emit,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage:?} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    fn at(stage: Stage) -> impl FnOnce(Error) -> Self {
        move |source| Self { stage, source }
    }

    /// Machine-readable form for error output.
    pub fn to_json(&self) -> Value {
        let fields = match &self.source {
            Error::Validation(errs) => errs.iter().map(|e| json!({ "field": e.field, "message": e.message })).collect(),
            _ => Vec::new(),
        };
        json!({ "error": { "stage": self.stage, "message": self.source.to_string(), "fields": fields } })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub overrides: Overrides,
    /// Also write PGM previews.
    pub viz: bool,
    /// Also write `τ` after every denoising step.
    pub history: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSeconds {
    pub setup: f64,
    pub inversion: f64,
    pub decomposition: f64,
    pub denoising: f64,
    pub emit: f64,
    pub total: f64,
}

impl TimingSeconds {
    fn new(t: &StageTimings, emit: f64) -> Self {
        Self {
            setup: t.setup.as_secs_f64(),
            inversion: t.inversion.as_secs_f64(),
            decomposition: t.decomposition.as_secs_f64(),
            denoising: t.denoising.as_secs_f64(),
            emit,
            total: t.total().as_secs_f64() + emit,
        }
    }
}

/// Everything needed to reproduce a run, plus where its outputs went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub steps: usize,
    pub steps_run: usize,
    pub objects: usize,
    pub hyperparameters: Hyperparameters,
    pub schedule: ScheduleConfig,
    pub substrate: SubstrateConfig,
    /// The scenario after overrides were applied.
    pub scenario: ScenarioConfig,
    pub overrides: Overrides,
    pub warnings: Vec<String>,
    pub timings: TimingSeconds,
    /// Digest of every other emitted file, by file name.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub output: PipelineOutput<f64>,
}

/// Serializes a pipeline result into named files.
pub fn render_artifacts(output: &PipelineOutput<f64>, viz: bool, history: bool) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    files.insert("canvas.lgrd".to_string(), io::encode_grid(&output.canvas));
    for (i, layer) in output.layers.iter().enumerate() {
        files.insert(format!("layer_{i}.lgrd"), io::encode_grid(layer));
    }
    for i in 0..output.transparency.len() {
        files.insert(format!("tau_{}.lmsk", i + 1), io::encode_mask(&output.transparency.layer_mask(i)));
    }
    if history {
        for (step, tau) in output.history.iter().enumerate() {
            for i in 0..tau.len() {
                files.insert(format!("tau_step{step:03}_{}.lmsk", i + 1), io::encode_mask(&tau.layer_mask(i)));
            }
        }
    }
    let report = &output.conflicts;
    let mut conflict_files = Vec::new();
    for (i, m) in report.masks.iter().enumerate() {
        let name = format!("conflict_{}.lmsk", i + 1);
        files.insert(name.clone(), io::encode_mask(m));
        conflict_files.push(name);
    }
    let areas: Vec<f64> = report.masks.iter().map(|m| m.as_slice().iter().sum()).collect();
    let conflicts = json!({
        "eta": report.eta,
        "iou": report.iou,
        "masks": conflict_files,
        "areas": areas,
        "prompts": output.prompts,
    });
    files.insert(CONFLICTS.to_string(), pretty(&conflicts)?);
    if viz {
        files.insert("canvas.pgm".to_string(), io::encode_pgm(&output.canvas, 0)?);
        for (i, layer) in output.layers.iter().enumerate() {
            files.insert(format!("layer_{i}.pgm"), io::encode_pgm(layer, 0)?);
        }
        for i in 0..output.transparency.len() {
            files.insert(format!("tau_{}.pgm", i + 1), io::encode_pgm(&output.transparency.layer_grid(i), 0)?);
        }
    }
    Ok(files)
}

fn pretty<S: Serialize>(value: &S) -> Result<Vec<u8>> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::Format { kind: "json", reason: e.to_string() })?;
    text.push(b'\n');
    Ok(text)
}

fn pipeline(scenario: &EditScenario, history: bool) -> Result<PipelineOutput<f64>> {
    let options = PipelineOptions { record_history: history, ..Default::default() };
    run_pipeline(scenario, &options)
}

/// Loads the scenario at `config`, runs it and writes all artifacts to `out`.
pub fn run(config: &Path, out: &Path, options: &RunOptions) -> Result<RunSummary, StageError> {
    let scenario = load_scenario_with(config, &options.overrides).map_err(StageError::at(Stage::Load))?;
    let output = pipeline(&scenario, options.history).map_err(StageError::at(Stage::Pipeline))?;
    let start = Instant::now();
    let files = render_artifacts(&output, options.viz, options.history).map_err(StageError::at(Stage::Emit))?;
    for (name, bytes) in &files {
        io::write_bytes(&out.join(name), bytes).map_err(StageError::at(Stage::Emit))?;
    }
    let manifest = Manifest {
        seed: scenario.seed,
        steps: scenario.schedule.steps,
        steps_run: output.steps.len(),
        objects: scenario.object_count(),
        hyperparameters: scenario.hyper,
        schedule: scenario.schedule,
        substrate: scenario.substrate,
        scenario: scenario.config.clone(),
        overrides: options.overrides,
        warnings: scenario.warnings.clone(),
        timings: TimingSeconds::new(&output.timings, start.elapsed().as_secs_f64()),
        files: files.iter().map(|(k, v)| (k.clone(), digest(v))).collect(),
    };
    let bytes = pretty(&manifest).map_err(StageError::at(Stage::Emit))?;
    io::write_bytes(&out.join(MANIFEST), &bytes).map_err(StageError::at(Stage::Emit))?;
    Ok(RunSummary { manifest, output })
}

/// How closely a replay must match its captured files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToleranceClass {
    #[serde(rename = "bit-exact")]
    BitExact,
    #[serde(rename = "1e-9")]
    Tight,
    #[serde(rename = "1e-3")]
    Loose,
}

impl ToleranceClass {
    pub fn bound(self) -> f64 {
        match self {
            Self::BitExact => 0.0,
            Self::Tight => 1e-9,
            Self::Loose => 1e-3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BitExact => "bit-exact",
            Self::Tight => "1e-9",
            Self::Loose => "1e-3",
        }
    }
}

impl FromStr for ToleranceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bit-exact" => Ok(Self::BitExact),
            "1e-9" => Ok(Self::Tight),
            "1e-3" => Ok(Self::Loose),
            other => Err(Error::Parameter(format!("unknown tolerance class {other:?}, expected bit-exact, 1e-9 or 1e-3"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    /// Scenario file, relative to the golden directory.
    pub scenario: PathBuf,
    pub seed: u64,
    pub tolerance: ToleranceClass,
    /// Expected digest of every emitted file except the manifest.
    pub files: BTreeMap<String, String>,
}

impl GoldenCase {
    fn expected_dir(&self, dir: &Path) -> PathBuf {
        dir.join(&self.name).join("expected")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldenIndex {
    pub cases: Vec<GoldenCase>,
}

impl GoldenIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(GOLDEN_INDEX);
        let bytes = io::read_bytes(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format { kind: "golden index", reason: e.to_string() })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_bytes(&dir.join(GOLDEN_INDEX), &pretty(self)?)
    }
}

fn case_name(path: &Path, taken: &BTreeMap<String, ()>) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("case").to_string();
    let mut name = stem.clone();
    let mut n = 2;
    while taken.contains_key(&name) {
        name = format!("{stem}_{n}");
        n += 1;
    }
    name
}

fn copy_asset(from: &Path, base: &Path, case_dir: &Path, slot: &str) -> Result<PathBuf> {
    let src = base.join(from);
    let ext = from.extension().and_then(|e| e.to_str()).unwrap_or("bin");
    let rel = PathBuf::from("assets").join(format!("{slot}.{ext}"));
    io::write_bytes(&case_dir.join(&rel), &io::read_bytes(&src)?)?;
    Ok(rel)
}

/// Copies a scenario and every file it references into `case_dir`, rewriting
/// the references so the copy is self-contained.
fn vendor_scenario(path: &Path, case_dir: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(src) = &config.grid.source {
        config.grid.source = Some(copy_asset(src, &base, case_dir, "source")?);
    }
    for (i, m) in config.grid.panoptic.iter_mut().enumerate() {
        if let MaskSource::File { mask } = m {
            *mask = copy_asset(mask, &base, case_dir, &format!("panoptic_{i}"))?;
        }
    }
    for (i, obj) in config.objects.iter_mut().enumerate() {
        if let MaskSource::File { mask } = &mut obj.mask {
            *mask = copy_asset(mask, &base, case_dir, &format!("object_{i}"))?;
        }
    }
    let toml = toml::to_string(&config).map_err(|e| Error::Format { kind: "scenario", reason: e.to_string() })?;
    let target = case_dir.join("scenario.toml");
    io::write_bytes(&target, toml.as_bytes())?;
    Ok(target)
}

/// Runs every scenario once and stores its outputs under `dir` as a golden
/// case of the given tolerance class. Existing cases with other names are kept.
pub fn capture_goldens(scenarios: &[PathBuf], dir: &Path, tolerance: ToleranceClass) -> Result<GoldenIndex> {
    let mut index = if dir.join(GOLDEN_INDEX).exists() { GoldenIndex::load(dir)? } else { GoldenIndex::default() };
    let mut taken: BTreeMap<String, ()> = BTreeMap::new();
    let mut fresh = Vec::new();
    for path in scenarios {
        let name = case_name(path, &taken);
        taken.insert(name.clone(), ());
        let case_dir = dir.join(&name);
        if case_dir.exists() {
            fs::remove_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
        }
        let vendored = vendor_scenario(path, &case_dir)?;
        let scenario = load_scenario_with(&vendored, &Overrides::default())?;
        let output = pipeline(&scenario, false)?;
        let files = render_artifacts(&output, false, false)?;
        let case = GoldenCase {
            name: name.clone(),
            scenario: PathBuf::from(&name).join("scenario.toml"),
            seed: scenario.seed,
            tolerance,
            files: files.iter().map(|(k, v)| (k.clone(), digest(v))).collect(),
        };
        let expected = case.expected_dir(dir);
        for (file, bytes) in &files {
            io::write_bytes(&expected.join(file), bytes)?;
        }
        fresh.push(case);
    }
    index.cases.retain(|c| !taken.contains_key(&c.name));
    index.cases.extend(fresh);
    index.cases.sort_by(|a, b| a.name.cmp(&b.name));
    index.save(dir)?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileCheck {
    pub file: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub tolerance: ToleranceClass,
    pub files: Vec<FileCheck>,
    /// Set when the case could not be replayed at all.
    pub error: Option<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.files.iter().all(|f| f.passed)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldenReport {
    pub cases: Vec<CaseResult>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    /// One line per case and one per failing file.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:<10} {:>6} {:>6}  result", "case", "class", "files", "failed");
        for case in &self.cases {
            let failed = case.files.iter().filter(|f| !f.passed).count();
            let verdict = if case.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{:<24} {:<10} {:>6} {:>6}  {verdict}", case.name, case.tolerance.name(), case.files.len(), failed);
            if let Some(e) = &case.error {
                let _ = writeln!(out, "    error: {e}");
            }
            for f in case.files.iter().filter(|f| !f.passed) {
                let _ = writeln!(out, "    {}: {}", f.file, f.detail);
            }
        }
        out
    }
}

fn grid_diff(expected: &[u8], actual: &[u8]) -> Result<f64> {
    io::decode_grid::<f64>(expected)?.max_abs_diff(&io::decode_grid::<f64>(actual)?)
}

fn mask_diff(expected: &[u8], actual: &[u8]) -> Result<f64> {
    let (a, b): (Mask<f64>, Mask<f64>) = (io::decode_mask(expected)?, io::decode_mask(actual)?);
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Largest numeric difference between two JSON documents of the same shape.
fn json_diff(expected: &Value, actual: &Value) -> Result<f64> {
    let mismatch = || Error::Format { kind: "json", reason: "documents differ in structure".into() };
    match (expected, actual) {
        (Value::Number(a), Value::Number(b)) => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => Ok((x - y).abs()),
            _ => Err(mismatch()),
        },
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            a.iter().zip(b).try_fold(0.0, |m, (x, y)| Ok(f64::max(m, json_diff(x, y)?)))
        }
        (Value::Object(a), Value::Object(b)) if a.len() == b.len() => a.iter().try_fold(0.0, |m, (k, x)| {
            let y = b.get(k).ok_or_else(mismatch)?;
            Ok(f64::max(m, json_diff(x, y)?))
        }),
        (a, b) if a == b => Ok(0.0),
        _ => Err(mismatch()),
    }
}

fn compare_file(name: &str, expected: &[u8], actual: &[u8]) -> Result<f64> {
    match Path::new(name).extension().and_then(|e| e.to_str()) {
        Some("lgrd") => grid_diff(expected, actual),
        Some("lmsk") => mask_diff(expected, actual),
        Some("json") => {
            let parse = |b: &[u8]| serde_json::from_slice::<Value>(b).map_err(|e| Error::Format { kind: "json", reason: e.to_string() });
            json_diff(&parse(expected)?, &parse(actual)?)
        }
        _ => Err(Error::Parameter(format!("no numeric comparison for {name}"))),
    }
}

fn check_file(case: &GoldenCase, dir: &Path, name: &str, want: &str, actual: Option<&Vec<u8>>) -> FileCheck {
    let check = |passed: bool, detail: String| FileCheck { file: name.to_string(), passed, detail };
    let Some(bytes) = actual else {
        return check(false, "not produced by the replay".into());
    };
    let got = digest(bytes);
    if got == want {
        return check(true, "digest match".into());
    }
    if case.tolerance == ToleranceClass::BitExact {
        return check(false, format!("digest {got} != {want}"));
    }
    let expected = match io::read_bytes(&case.expected_dir(dir).join(name)) {
        Ok(b) if digest(&b) == want => b,
        Ok(_) => return check(false, "stored expected file does not match its digest".into()),
        Err(e) => return check(false, e.to_string()),
    };
    match compare_file(name, &expected, bytes) {
        Ok(diff) if diff <= case.tolerance.bound() => check(true, format!("max diff {diff:.3e}")),
        Ok(diff) => check(false, format!("max diff {diff:.3e} exceeds {}", case.tolerance.name())),
        Err(e) => check(false, e.to_string()),
    }
}

fn replay(case: &GoldenCase, dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let overrides = Overrides { seed: Some(case.seed), ..Default::default() };
    let scenario = load_scenario_with(&dir.join(&case.scenario), &overrides)?;
    render_artifacts(&pipeline(&scenario, false)?, false, false)
}

/// Re-runs every case under `dir` and compares it with the captured files.
/// Only a missing or unreadable index is an error; everything else is
/// reported per case.
pub fn verify_goldens(dir: &Path) -> Result<GoldenReport> {
    let index = GoldenIndex::load(dir)?;
    let cases = index
        .cases
        .iter()
        .map(|case| match replay(case, dir) {
            Err(e) => CaseResult { name: case.name.clone(), tolerance: case.tolerance, files: Vec::new(), error: Some(e.to_string()) },
            Ok(actual) => {
                let mut files: Vec<FileCheck> =
                    case.files.iter().map(|(name, want)| check_file(case, dir, name, want, actual.get(name))).collect();
                files.extend(actual.keys().filter(|k| !case.files.contains_key(*k)).map(|k| FileCheck {
                    file: k.clone(),
                    passed: false,
                    detail: "not present in the capture".into(),
                }));
                CaseResult { name: case.name.clone(), tolerance: case.tolerance, files, error: None }
            }
        })
        .collect();
    Ok(GoldenReport { cases })
}
