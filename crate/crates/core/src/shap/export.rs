//! Attribution export: one JSON document plus a stacked-area force plot per
//! policy output (positive contributions above the base value, negative
//! below, step number along the x-axis).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, ShapError, StepExplanation};
use crate::env::FEATURE_NAMES;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcePlotFeature {
    pub index: usize,
    pub name: String,
    /// Raw (unnormalized) feature value.
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcePlotStep {
    pub step: usize,
    pub output: usize,
    pub base_value: f64,
    pub features: Vec<ForcePlotFeature>,
}

impl ForcePlotStep {
    pub fn output_value(&self) -> f64 {
        self.base_value + self.features.iter().map(|f| f.phi).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcePlotDocument {
    /// Base value of each output, indexed by output.
    pub base_value: Vec<f64>,
    pub estimator: super::Estimator,
    pub per_step: Vec<ForcePlotStep>,
}

impl ForcePlotDocument {
    pub fn from_explanations<T: Scalar>(steps: &[StepExplanation<T>]) -> Result<Self> {
        let first = steps
            .first()
            .and_then(|s| s.attributions.first())
            .ok_or_else(|| ShapError::InvalidArgument("nothing to export".into()))?;
        let base_value = steps[0].attributions.iter().map(|a| a.phi0.as_f64()).collect();
        let per_step = steps
            .iter()
            .flat_map(|s| {
                s.attributions.iter().map(move |a| ForcePlotStep {
                    step: s.step,
                    output: a.output_index,
                    base_value: a.phi0.as_f64(),
                    features: a
                        .phi
                        .iter()
                        .enumerate()
                        .map(|(i, p)| ForcePlotFeature {
                            index: i,
                            name: FEATURE_NAMES.get(i).map_or_else(|| format!("x{i}"), |n| n.to_string()),
                            value: s.raw.get(i).copied().unwrap_or(f64::NAN),
                            phi: p.as_f64(),
                        })
                        .collect(),
                })
            })
            .collect();
        Ok(Self { base_value, estimator: first.estimator, per_step })
    }

    pub fn outputs(&self) -> usize {
        self.base_value.len()
    }

    pub fn steps_for(&self, output: usize) -> Vec<&ForcePlotStep> {
        self.per_step.iter().filter(|s| s.output == output).collect()
    }
}

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const POSITIVE_FILL: &str = "#ff0051";
const NEGATIVE_FILL: &str = "#008bfb";

/// Stacked-area force plot of one output over an episode.
pub fn force_plot_svg(steps: &[&ForcePlotStep], title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        "<style>.pos{{fill:{POSITIVE_FILL};fill-opacity:0.75;stroke:white;stroke-width:0.3}}\
         .neg{{fill:{NEGATIVE_FILL};fill-opacity:0.75;stroke:white;stroke-width:0.3}}\
         .base{{stroke:#333;stroke-width:1.5;stroke-dasharray:4 3;fill:none}}\
         .output{{stroke:#000;stroke-width:1.5;fill:none}}\
         .axis{{stroke:#666;stroke-width:1}}text{{font-family:sans-serif;font-size:12px}}</style>"
    );
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="24">{}</text>"#, escape(title));
    if steps.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let m = steps[0].features.len();
    let n = steps.len();

    // cumulative stacks per step: pos[t][j] is the top of the j-th positive band
    let mut order: Vec<usize> = (0..m).collect();
    let mean_abs = |i: usize| steps.iter().map(|s| s.features[i].phi.abs()).sum::<f64>();
    order.sort_by(|&a, &b| mean_abs(b).total_cmp(&mean_abs(a)).then(a.cmp(&b)));
    let mut pos = vec![vec![0.0; m + 1]; n];
    let mut neg = vec![vec![0.0; m + 1]; n];
    for (t, s) in steps.iter().enumerate() {
        for (j, &i) in order.iter().enumerate() {
            let p = s.features[i].phi;
            pos[t][j + 1] = pos[t][j] + p.max(0.0);
            neg[t][j + 1] = neg[t][j] + p.min(0.0);
        }
    }
    let base = |t: usize| steps[t].base_value;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        lo = lo.min(base(t) + neg[t][m]);
        hi = hi.max(base(t) + pos[t][m]);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (x0, x1) = if n == 1 {
        (steps[0].step as f64 - 0.5, steps[0].step as f64 + 0.5)
    } else {
        (steps[0].step as f64, steps[n - 1].step as f64)
    };
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);
    // x positions of the polygon vertices; a single step becomes a bar
    let xs: Vec<f64> = if n == 1 { vec![x0, x1] } else { steps.iter().map(|s| s.step as f64).collect() };
    let at = |t: usize| if n == 1 { 0 } else { t };

    let band = |svg: &mut String, stack: &[Vec<f64>], j: usize, class: &str, name: &str| {
        if (0..n).all(|t| stack[t][j + 1] == stack[t][j]) {
            return;
        }
        let mut d = String::new();
        for (v, &x) in xs.iter().enumerate() {
            let t = at(v);
            let _ = write!(d, "{}{:.2},{:.2} ", if v == 0 { "M" } else { "L" }, px(x), py(base(t) + stack[t][j + 1]));
        }
        for (v, &x) in xs.iter().enumerate().rev() {
            let t = at(v);
            let _ = write!(d, "L{:.2},{:.2} ", px(x), py(base(t) + stack[t][j]));
        }
        let _ = writeln!(svg, r#"<path class="{class}" d="{}Z"><title>{}</title></path>"#, d.trim_end(), escape(name));
    };
    for (j, &i) in order.iter().enumerate() {
        let name = &steps[0].features[i].name;
        band(&mut svg, &pos, j, "pos", name);
        band(&mut svg, &neg, j, "neg", name);
    }

    let polyline = |f: &dyn Fn(usize) -> f64| {
        xs.iter()
            .enumerate()
            .map(|(v, &x)| format!("{:.2},{:.2}", px(x), py(f(at(v)))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(svg, r#"<polyline class="base" points="{}"/>"#, polyline(&|t| base(t)));
    let _ = writeln!(svg, r#"<polyline class="output" points="{}"/>"#, polyline(&|t| steps[t].output_value()));

    // axes and labels
    let (bx, by) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<line class="axis" x1="{bx}" y1="{by}" x2="{}" y2="{by}"/>"#, WIDTH - MARGIN);
    let _ = writeln!(svg, r#"<line class="axis" x1="{bx}" y1="{MARGIN}" x2="{bx}" y2="{by}"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">step</text>"#, WIDTH / 2.0, HEIGHT - 20.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{x0}</text>"#, px(x0) - 4.0, by + 16.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{x1}</text>"#, px(x1) - 8.0, by + 16.0);
    let _ = writeln!(svg, r#"<text x="4" y="{:.2}">{hi:.3}</text>"#, py(hi) + 4.0);
    let _ = writeln!(svg, r#"<text x="4" y="{:.2}">{lo:.3}</text>"#, py(lo) + 4.0);
    for (rank, &i) in order.iter().take(4).enumerate() {
        if mean_abs(i) == 0.0 {
            break;
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}. {}</text>"#,
            WIDTH - 220.0,
            24.0 + 14.0 * rank as f64,
            rank + 1,
            escape(&steps[0].features[i].name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `attributions.json` and one `force_a<k>.svg` per output into `dir`.
pub fn export_force_plot<T: Scalar>(steps: &[StepExplanation<T>], dir: &Path) -> Result<Vec<PathBuf>> {
    let doc = ForcePlotDocument::from_explanations(steps)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join("attributions.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| ShapError::InvalidArgument(e.to_string()))?;
    fs::write(&json_path, text)?;
    written.push(json_path);
    for k in 0..doc.outputs() {
        let path = dir.join(format!("force_a{}.svg", k + 1));
        fs::write(&path, force_plot_svg(&doc.steps_for(k), &format!("action a{}", k + 1)))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_force_plot(path: &Path) -> Result<ForcePlotDocument> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ShapError::InvalidArgument(format!("{}: {e}", path.display())))
}
