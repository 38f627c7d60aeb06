#![allow(dead_code)]

use std::path::Path;

use layeredit::grid::{FeatureGrid, Mask};
use layeredit::scenario::{parse_scenario, EditScenario};

/// 16×16×32 scene with two objects on two panoptic regions. `edit` is the
/// edit prompt; object 1 edits token 2 into `edit[1]`.
pub fn two_objects(edit: &[u32], extra: &str) -> EditScenario {
    let text = format!(
        r#"
[grid]
height = 16
width = 16
channels = 32
panoptic = [{{ rect = [2, 2, 7, 8] }}, {{ rect = [9, 8, 14, 14] }}]
[prompts]
source = [1, 2, 3, 4]
edit = {edit:?}
[[objects]]
source_tokens = [2]
edit_tokens = [{e}]
mask = {{ rect = [2, 2, 7, 8] }}
[[objects]]
source_tokens = [3]
edit_tokens = [3]
mask = {{ rect = [9, 8, 14, 14] }}
{extra}
"#,
        e = edit[1]
    );
    parse_scenario(&text, Path::new(".")).unwrap()
}

pub fn identity(extra: &str) -> EditScenario {
    two_objects(&[1, 2, 3, 4], extra)
}

pub fn replace(extra: &str) -> EditScenario {
    two_objects(&[1, 5, 3, 4], extra)
}

/// Scene with `n` objects in a row of small squares, no edits.
pub fn row_of_objects(n: usize, size: usize, extra: &str) -> EditScenario {
    let mut text = format!("[grid]\nheight = {size}\nwidth = {size}\nchannels = 32\n");
    let ids: Vec<u32> = (1..=n as u32 + 1).collect();
    text += &format!("[prompts]\nsource = {ids:?}\nedit = {ids:?}\n");
    let cell = size / n.max(1);
    for i in 0..n {
        let c0 = i * cell;
        text += &format!(
            "[[objects]]\nsource_tokens = [{t}]\nedit_tokens = [{t}]\nmask = {{ rect = [2, {c0}, {r1}, {c1}] }}\n",
            t = i + 2,
            r1 = size - 2,
            c1 = c0 + cell,
        );
    }
    text += extra;
    parse_scenario(&text, Path::new(".")).unwrap()
}

/// `‖a − b‖ / ‖b‖` over the cells where `m` is set.
pub fn region_diff(a: &FeatureGrid<f64>, b: &FeatureGrid<f64>, m: &Mask<f64>) -> f64 {
    let c = a.channels();
    let (mut num, mut den) = (0.0, 0.0);
    for p in 0..a.pixels() {
        if m.as_slice()[p] > 0.0 {
            for k in 0..c {
                let (x, y) = (a.as_slice()[p * c + k], b.as_slice()[p * c + k]);
                num += (x - y) * (x - y);
                den += y * y;
            }
        }
    }
    (num / den).sqrt()
}
