//! Figure emission: each figure is one delimited-text data file plus one
//! SVG rendered purely from that data, so the data files alone regenerate
//! every figure byte-for-byte.

use super::report::Report;
use super::ExperimentError;
use std::fmt::Write as _;
use std::path::Path;

const PALETTE: [&str; 4] = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 62.0; // left margin
const MR: f64 = 62.0;
const MT: f64 = 40.0;
const MB: f64 = 52.0;

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Round coordinates to keep the SVG readable; 3 decimals is far below one
/// pixel.
fn px(v: f64) -> String {
    format!("{:.3}", v)
}

struct Scale {
    lo: f64,
    hi: f64,
    span_px: f64,
    offset_px: f64,
    invert: bool,
}

impl Scale {
    fn x(lo: f64, hi: f64) -> Self {
        Self { lo, hi, span_px: W - ML - MR, offset_px: ML, invert: false }
    }

    fn y(lo: f64, hi: f64) -> Self {
        Self { lo, hi, span_px: H - MT - MB, offset_px: MT, invert: true }
    }

    fn map(&self, v: f64) -> f64 {
        let frac = if self.hi == self.lo { 0.5 } else { (v - self.lo) / (self.hi - self.lo) };
        if self.invert {
            self.offset_px + (1.0 - frac) * self.span_px
        } else {
            self.offset_px + frac * self.span_px
        }
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
    }
}

fn pad_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

struct SvgDoc {
    body: String,
}

impl SvgDoc {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
            W / 2.0,
            escape(title)
        );
        Self { body }
    }

    fn axes(&mut self, xs: &Scale, ys: &Scale, xlabel: &str, ylabel: &str) {
        let x0 = ML;
        let x1 = W - MR;
        let y0 = H - MB;
        let y1 = MT;
        let _ = write!(
            self.body,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
        );
        for t in xs.ticks() {
            let x = px(xs.map(t));
            let _ = write!(
                self.body,
                "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n\
                 <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                y0 + 5.0,
                y0 + 18.0,
                tick_label(t)
            );
        }
        for t in ys.ticks() {
            let y = px(ys.map(t));
            let _ = write!(
                self.body,
                "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n\
                 <text x=\"{}\" y=\"{y}\" text-anchor=\"end\" dominant-baseline=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                x0 - 5.0,
                x0 - 8.0,
                tick_label(t)
            );
        }
        let _ = write!(
            self.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            (ML + W - MR) / 2.0,
            H - 14.0,
            escape(xlabel),
            (MT + H - MB) / 2.0,
            (MT + H - MB) / 2.0,
            escape(ylabel)
        );
    }

    fn right_axis(&mut self, ys: &Scale, label: &str, color: &str) {
        let x = W - MR;
        let _ = write!(
            self.body,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{MT}\" stroke=\"{color}\"/>\n",
            H - MB
        );
        for t in ys.ticks() {
            let y = px(ys.map(t));
            let _ = write!(
                self.body,
                "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\"/>\n\
                 <text x=\"{}\" y=\"{y}\" text-anchor=\"start\" dominant-baseline=\"middle\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
                x + 5.0,
                x + 8.0,
                tick_label(t)
            );
        }
        let _ = write!(
            self.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\" transform=\"rotate(90 {} {})\">{}</text>\n",
            W - 14.0,
            (MT + H - MB) / 2.0,
            W - 14.0,
            (MT + H - MB) / 2.0,
            escape(label)
        );
    }

    fn polyline(&mut self, xs: &Scale, ys: &Scale, points: &[(f64, f64)], color: &str) {
        if points.is_empty() {
            return;
        }
        let coords: Vec<String> =
            points.iter().map(|(x, y)| format!("{},{}", px(xs.map(*x)), px(ys.map(*y)))).collect();
        let _ = write!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
            coords.join(" ")
        );
        for (x, y) in points {
            let _ = write!(
                self.body,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.4\" fill=\"{color}\"/>\n",
                px(xs.map(*x)),
                px(ys.map(*y))
            );
        }
    }

    fn error_bars(&mut self, xs: &Scale, ys: &Scale, points: &[(f64, f64)], sds: &[f64], color: &str) {
        for ((x, y), sd) in points.iter().zip(sds) {
            if *sd <= 0.0 {
                continue;
            }
            let xm = px(xs.map(*x));
            let ylo = px(ys.map(y - sd));
            let yhi = px(ys.map(y + sd));
            let _ = write!(
                self.body,
                "<line x1=\"{xm}\" y1=\"{ylo}\" x2=\"{xm}\" y2=\"{yhi}\" stroke=\"{color}\" stroke-width=\"1\"/>\n"
            );
        }
    }

    fn bars(&mut self, xs: &Scale, ys: &Scale, bins: &[(f64, f64, f64)], color: &str, shift: f64, width_frac: f64) {
        for (lo, hi, count) in bins {
            let span = xs.map(*hi) - xs.map(*lo);
            let bw = span * width_frac;
            let x = xs.map(*lo) + span * shift;
            let y = ys.map(*count);
            let y0 = ys.map(0.0);
            let _ = write!(
                self.body,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
                px(x),
                px(y),
                px(bw.max(0.5)),
                px((y0 - y).max(0.0))
            );
        }
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        let mut y = MT + 8.0;
        for (label, color) in entries {
            let _ = write!(
                self.body,
                "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n\
                 <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                ML + 10.0,
                y,
                ML + 26.0,
                y + 10.0,
                escape(label)
            );
            y += 18.0;
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    format!("{r}")
}

// --- figure data tables ------------------------------------------------------

pub(crate) struct HistData {
    pub bins: Vec<(f64, f64, f64, f64)>, // lo, hi, member, non-member
}

pub(crate) struct RocData {
    pub points: Vec<(f64, f64)>,
}

pub(crate) struct CurveData {
    /// step, mean, sd per series
    pub rows: Vec<(f64, f64, f64, f64, f64)>,
    pub left_label: String,
    pub right_label: String,
}

pub(crate) struct ScatterData {
    pub rows: Vec<(f64, f64, f64)>, // x, y, step
    pub xlabel: String,
    pub ylabel: String,
}

fn histogram(scores_member: &[f64], scores_other: &[f64], bins: usize) -> HistData {
    let (lo, hi) = pad_range(scores_member.iter().chain(scores_other).copied());
    let width = (hi - lo) / bins as f64;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let blo = lo + b as f64 * width;
        let bhi = blo + width;
        let count = |xs: &[f64]| {
            xs.iter()
                .filter(|&&v| v >= blo && (v < bhi || (b == bins - 1 && v <= bhi)))
                .count() as f64
        };
        out.push((blo, bhi, count(scores_member), count(scores_other)));
    }
    HistData { bins: out }
}

fn render_histogram(title: &str, xlabel: &str, data: &HistData) -> String {
    let mut doc = SvgDoc::new(title);
    let xs = Scale::x(data.bins.first().map(|b| b.0).unwrap_or(0.0), data.bins.last().map(|b| b.1).unwrap_or(1.0));
    let max_count = data.bins.iter().map(|b| b.2.max(b.3)).fold(1.0f64, f64::max);
    let ys = Scale::y(0.0, max_count * 1.05);
    doc.axes(&xs, &ys, xlabel, "count");
    let members: Vec<(f64, f64, f64)> = data.bins.iter().map(|b| (b.0, b.1, b.2)).collect();
    let others: Vec<(f64, f64, f64)> = data.bins.iter().map(|b| (b.0, b.1, b.3)).collect();
    doc.bars(&xs, &ys, &members, PALETTE[0], 0.05, 0.42);
    doc.bars(&xs, &ys, &others, PALETTE[2], 0.53, 0.42);
    doc.legend(&[("members", PALETTE[0]), ("non-members", PALETTE[2])]);
    doc.finish()
}

fn render_roc(title: &str, data: &RocData) -> String {
    let mut doc = SvgDoc::new(title);
    let xs = Scale::x(0.0, 1.0);
    let ys = Scale::y(0.0, 1.0);
    doc.axes(&xs, &ys, "false positive rate", "true positive rate");
    doc.polyline(&xs, &ys, &[(0.0, 0.0), (1.0, 1.0)], "#bbbbbb");
    doc.polyline(&xs, &ys, &data.points, PALETTE[0]);
    doc.finish()
}

fn render_dual_curve(title: &str, xlabel: &str, data: &CurveData) -> String {
    let mut doc = SvgDoc::new(title);
    let xs = Scale::x(
        data.rows.first().map(|r| r.0).unwrap_or(0.0),
        data.rows.last().map(|r| r.0).unwrap_or(1.0),
    );
    let (llo, lhi) = pad_range(data.rows.iter().flat_map(|r| [r.1 - r.2, r.1 + r.2]));
    let (rlo, rhi) = pad_range(data.rows.iter().flat_map(|r| [r.3 - r.4, r.3 + r.4]));
    let ys_left = Scale::y(llo, lhi);
    let ys_right = Scale::y(rlo, rhi);
    doc.axes(&xs, &ys_left, xlabel, &data.left_label);
    doc.right_axis(&ys_right, &data.right_label, PALETTE[1]);
    let left: Vec<(f64, f64)> = data.rows.iter().map(|r| (r.0, r.1)).collect();
    let left_sd: Vec<f64> = data.rows.iter().map(|r| r.2).collect();
    let right: Vec<(f64, f64)> = data.rows.iter().map(|r| (r.0, r.3)).collect();
    let right_sd: Vec<f64> = data.rows.iter().map(|r| r.4).collect();
    doc.polyline(&xs, &ys_left, &left, PALETTE[0]);
    doc.error_bars(&xs, &ys_left, &left, &left_sd, PALETTE[0]);
    doc.polyline(&xs, &ys_right, &right, PALETTE[1]);
    doc.error_bars(&xs, &ys_right, &right, &right_sd, PALETTE[1]);
    doc.legend(&[(data.left_label.as_str(), PALETTE[0]), (data.right_label.as_str(), PALETTE[1])]);
    doc.finish()
}

fn render_scatter_path(title: &str, data: &ScatterData) -> String {
    let mut doc = SvgDoc::new(title);
    let (xlo, xhi) = pad_range(data.rows.iter().map(|r| r.0));
    let (ylo, yhi) = pad_range(data.rows.iter().map(|r| r.1));
    let xs = Scale::x(xlo, xhi);
    let ys = Scale::y(ylo, yhi);
    doc.axes(&xs, &ys, &data.xlabel, &data.ylabel);
    let pts: Vec<(f64, f64)> = data.rows.iter().map(|r| (r.0, r.1)).collect();
    doc.polyline(&xs, &ys, &pts, PALETTE[3]);
    for (x, y, step) in &data.rows {
        let _ = write!(
            doc.body,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\" fill=\"#555555\">{}</text>\n",
            px(xs.map(*x) + 4.0),
            px(ys.map(*y) - 4.0),
            fmt(*step)
        );
    }
    doc.finish()
}

// --- tsv encode/decode --------------------------------------------------------

fn write_tsv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<(), ExperimentError> {
    let mut text = String::new();
    text.push_str(header);
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
        text.push_str(&cells.join("\t"));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| ExperimentError::stage("figures", format!("{}: {e}", path.display())))
}

fn read_tsv(path: &Path) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::stage("figures", format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split('\t').map(|c| c.parse::<f64>()).collect();
        rows.push(row.map_err(|e| ExperimentError::stage("figures", format!("{}: {e}", path.display())))?);
    }
    Ok(rows)
}

// --- the seven figures ----------------------------------------------------------

pub(crate) const FIGURES: [&str; 7] = [
    "hist_discriminator",
    "hist_generator",
    "roc_discriminator",
    "roc_generator",
    "fidelity_vs_step",
    "privacy_utility_vs_step",
    "privacy_vs_utility",
];

/// Writes the 7 data TSVs derived from `report`.
pub(crate) fn write_figure_data(report: &Report, dir: &Path) -> Result<Vec<String>, ExperimentError> {
    let mut manifest = Vec::new();
    let missing =
        |section: &str| ExperimentError::stage("figures", format!("report lacks section {section}"));

    for (name, section, attack) in [
        ("hist_discriminator", "discriminator_attack", report.discriminator_attack.as_ref()),
        ("hist_generator", "generator_attack", report.generator_attack.as_ref()),
    ] {
        let attack = attack.ok_or_else(|| missing(section))?;
        let members: Vec<f64> = attack.samples.iter().filter(|s| s.member).map(|s| s.score).collect();
        let others: Vec<f64> = attack.samples.iter().filter(|s| !s.member).map(|s| s.score).collect();
        let hist = histogram(&members, &others, 20);
        let rows: Vec<Vec<f64>> = hist.bins.iter().map(|b| vec![b.0, b.1, b.2, b.3]).collect();
        let file = format!("data_{name}.tsv");
        write_tsv(&dir.join(&file), "bin_lo\tbin_hi\tmember_count\tnonmember_count", &rows)?;
        manifest.push(file);
    }

    for (name, section, attack) in [
        ("roc_discriminator", "discriminator_attack", report.discriminator_attack.as_ref()),
        ("roc_generator", "generator_attack", report.generator_attack.as_ref()),
    ] {
        let attack = attack.ok_or_else(|| missing(section))?;
        let rows: Vec<Vec<f64>> = attack.roc.points.iter().map(|(f, t)| vec![*f, *t]).collect();
        let file = format!("data_{name}.tsv");
        write_tsv(&dir.join(&file), "fpr\ttpr", &rows)?;
        manifest.push(file);
    }

    let rows: Vec<Vec<f64>> = report
        .curve
        .iter()
        .map(|p| {
            vec![
                p.step as f64,
                p.correlation_accuracy_mean,
                p.correlation_accuracy_sd,
                p.correlation_mse_mean,
                p.correlation_mse_sd,
            ]
        })
        .collect();
    write_tsv(
        &dir.join("data_fidelity_vs_step.tsv"),
        "step\tcorr_accuracy_mean\tcorr_accuracy_sd\tcorr_mse_mean\tcorr_mse_sd",
        &rows,
    )?;
    manifest.push("data_fidelity_vs_step.tsv".into());

    let rows: Vec<Vec<f64>> = report
        .curve
        .iter()
        .map(|p| vec![p.step as f64, p.privacy_mean, p.privacy_sd, p.utility_mean, p.utility_sd])
        .collect();
    write_tsv(
        &dir.join("data_privacy_utility_vs_step.tsv"),
        "step\tprivacy_mean\tprivacy_sd\tutility_mean\tutility_sd",
        &rows,
    )?;
    manifest.push("data_privacy_utility_vs_step.tsv".into());

    let rows: Vec<Vec<f64>> = report
        .curve
        .iter()
        .map(|p| vec![p.utility_mean, p.privacy_mean, p.step as f64])
        .collect();
    write_tsv(&dir.join("data_privacy_vs_utility.tsv"), "utility\tprivacy\tstep", &rows)?;
    manifest.push("data_privacy_vs_utility.tsv".into());

    Ok(manifest)
}

/// Renders one figure SVG from its data file.
pub fn render_figure_from_data(name: &str, dir: &Path) -> Result<String, ExperimentError> {
    let data = read_tsv(&dir.join(format!("data_{name}.tsv")))?;
    let svg = match name {
        "hist_discriminator" | "hist_generator" => {
            let hist = HistData { bins: data.iter().map(|r| (r[0], r[1], r[2], r[3])).collect() };
            let which = if name.ends_with("discriminator") { "discriminator" } else { "generator" };
            render_histogram(
                &format!("{which} attack score distributions"),
                if which == "discriminator" { "critic score" } else { "negated minimum reconstruction loss" },
                &hist,
            )
        }
        "roc_discriminator" | "roc_generator" => {
            let roc = RocData { points: data.iter().map(|r| (r[0], r[1])).collect() };
            let which = if name.ends_with("discriminator") { "discriminator" } else { "generator" };
            render_roc(&format!("{which} attack ROC"), &roc)
        }
        "fidelity_vs_step" => render_dual_curve(
            "fidelity during training",
            "step",
            &CurveData {
                rows: data.iter().map(|r| (r[0], r[1], r[2], r[3], r[4])).collect(),
                left_label: "correlation accuracy".into(),
                right_label: "correlation MSE".into(),
            },
        ),
        "privacy_utility_vs_step" => render_dual_curve(
            "privacy and utility during training",
            "step",
            &CurveData {
                rows: data.iter().map(|r| (r[0], r[1], r[2], r[3], r[4])).collect(),
                left_label: "privacy protection".into(),
                right_label: "utility (DSC)".into(),
            },
        ),
        "privacy_vs_utility" => render_scatter_path(
            "privacy vs utility",
            &ScatterData {
                rows: data.iter().map(|r| (r[0], r[1], r[2])).collect(),
                xlabel: "utility (DSC)".into(),
                ylabel: "privacy protection".into(),
            },
        ),
        other => return Err(ExperimentError::stage("figures", format!("unknown figure {other}"))),
    };
    Ok(svg)
}

/// Emits the 7 data files and 7 SVGs into `out_dir`, returning the file
/// manifest (data files first, then figures).
pub fn emit_figures(report: &Report, out_dir: &Path) -> Result<Vec<String>, ExperimentError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| ExperimentError::stage("figures", format!("{}: {e}", out_dir.display())))?;
    let mut manifest = write_figure_data(report, out_dir)?;
    for name in FIGURES {
        let svg = render_figure_from_data(name, out_dir)?;
        let file = format!("fig_{name}.svg");
        std::fs::write(out_dir.join(&file), svg)
            .map_err(|e| ExperimentError::stage("figures", format!("{file}: {e}")))?;
        manifest.push(file);
    }
    Ok(manifest)
}
