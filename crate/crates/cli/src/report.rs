//! Report bundle: figure analogs, tables and the summary JSON.

use std::fmt::Write as _;

use dapper_core::inversion::load_latent_table;
use dapper_core::semdir::{sweep_strip, DirectionVector};
use dapper_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::{ensure_parent, Artifact, Pipeline, Stage};
use crate::stages::{
    degree_coefficients, eval_latents, load_gan, read_json, write_json, DirectionMetrics, GradcamSummary,
    ProjectionSummary, SweepSummary,
};

/// Monotone fraction required of the pose traversal.
pub const MIN_MONOTONE: f64 = 0.70;
/// Identity preservation required under a one-unit traversal.
pub const MIN_IDENTITY: f64 = 0.60;
/// Accuracy the augmented reduced-data arm may trail the full raw arm by.
pub const ACCURACY_SLACK: f64 = 0.01;
pub const REDUCED_FRACTION: f64 = 0.7;
pub const PAIRED_FRACTIONS: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationCheck {
    pub monotone_fraction: f64,
    pub min_monotone: f64,
    pub identity_preservation: f64,
    pub min_identity: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedFraction {
    pub fraction: f64,
    pub raw: Option<f64>,
    pub augmented: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenefitCheck {
    pub policy: String,
    pub raw_full: Option<f64>,
    pub augmented_reduced: Option<f64>,
    pub slack: f64,
    /// Augmented reduced-data accuracy relative to the full raw arm.
    pub relative_change: Option<f64>,
    pub reduced_pass: Option<bool>,
    pub paired: Vec<PairedFraction>,
    /// `None` when a required cell was not part of the sweep.
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub semantic_rotation: RotationCheck,
    pub augmentation_benefit: BenefitCheck,
    /// Reported, not gated.
    pub on_object_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hashes: Vec<(String, String)>,
    pub projection: ProjectionSummary,
    pub direction: DirectionOverview,
    pub sweep: SweepSummary,
    pub gradcam: GradcamSummary,
    pub acceptance: Acceptance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionOverview {
    pub oracle_val_mae: f64,
    pub probe_r2: f64,
    pub kept_dims: usize,
    pub degrees_per_unit: f64,
    pub strip_degrees: Vec<f64>,
    pub strip_coefficients: Vec<f64>,
    pub monotone_fraction: f64,
    pub identity_preservation: f64,
}

pub fn rotation_check(m: &DirectionMetrics) -> RotationCheck {
    RotationCheck {
        monotone_fraction: m.monotone_fraction,
        min_monotone: MIN_MONOTONE,
        identity_preservation: m.identity_preservation,
        min_identity: MIN_IDENTITY,
        pass: m.monotone_fraction >= MIN_MONOTONE && m.identity_preservation >= MIN_IDENTITY,
    }
}

/// Augmented-vs-raw comparison for `policy`, from repeat-averaged cells.
pub fn benefit_check(s: &SweepSummary, policy: &str) -> BenefitCheck {
    let mean = |f: f64, p: &str| s.cell(f, p).and_then(|c| c.mean);
    let raw_full = mean(1.0, "none");
    let augmented_reduced = mean(REDUCED_FRACTION, policy);
    let reduced_pass = raw_full.zip(augmented_reduced).map(|(r, a)| a >= r - ACCURACY_SLACK);
    let paired: Vec<PairedFraction> = PAIRED_FRACTIONS
        .iter()
        .map(|&f| {
            let (raw, augmented) = (mean(f, "none"), mean(f, policy));
            PairedFraction {
                fraction: f,
                raw,
                augmented,
                pass: raw.zip(augmented).map(|(r, a)| a >= r),
            }
        })
        .collect();
    let pass = paired
        .iter()
        .map(|p| p.pass)
        .chain([reduced_pass])
        .collect::<Option<Vec<bool>>>()
        .map(|v| v.into_iter().all(|b| b));
    BenefitCheck {
        policy: policy.to_string(),
        raw_full,
        augmented_reduced,
        slack: ACCURACY_SLACK,
        relative_change: raw_full.zip(augmented_reduced).map(|(r, a)| (a - r) / r),
        reduced_pass,
        paired,
        pass,
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Accuracy against real-data fraction, one polyline per policy with
/// ±1 std bars over repeats.
pub fn accuracy_svg(s: &SweepSummary) -> String {
    let (w, h) = (480.0, 320.0);
    let (left, right, top, bottom) = (56.0, 120.0, 20.0, 44.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let fmin = s.fractions.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = s.fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let accs: Vec<f64> = s
        .cells
        .iter()
        .filter_map(|c| c.mean.map(|m| (m, c.std.unwrap_or(0.0))))
        .flat_map(|(m, sd)| [m - sd, m + sd])
        .collect();
    let lo = (accs.iter().copied().fold(f64::INFINITY, f64::min) * 20.0).floor() / 20.0;
    let hi = (accs.iter().copied().fold(f64::NEG_INFINITY, f64::max) * 20.0).ceil() / 20.0;
    let (lo, hi) = if accs.is_empty() { (0.0, 1.0) } else { (lo.max(0.0), hi.min(1.0).max(lo + 0.05)) };
    let fspan = if fmax > fmin { fmax - fmin } else { 1.0 };
    let x = |f: f64| left + (f - fmin) / fspan * pw;
    let y = |a: f64| top + (1.0 - (a - lo) / (hi - lo)) * ph;

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(o, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for &f in &s.fractions {
        let _ = writeln!(
            o,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{f}</text>"#,
            x(f),
            top + ph,
            top + ph + 4.0,
            top + ph + 16.0
        );
    }
    let ticks = ((hi - lo) / 0.05).round() as usize;
    for i in 0..=ticks {
        let a = lo + i as f64 * 0.05;
        let _ = writeln!(
            o,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#dddddd"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{a:.2}</text>"##,
            left,
            y(a),
            left + pw,
            left - 4.0,
            y(a) + 4.0
        );
    }
    let _ = writeln!(
        o,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">fraction of real training data</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        o,
        r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">5-fold accuracy</text>"#,
        top + ph / 2.0
    );
    for (pi, policy) in s.policies.iter().enumerate() {
        let color = PALETTE[pi % PALETTE.len()];
        let mut pts: Vec<(f64, f64, f64)> = s
            .cells
            .iter()
            .filter(|c| &c.policy == policy)
            .filter_map(|c| c.mean.map(|m| (c.fraction, m, c.std.unwrap_or(0.0))))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let line: Vec<String> = pts.iter().map(|&(f, m, _)| format!("{:.1},{:.1}", x(f), y(m))).collect();
        let _ = writeln!(
            o,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            line.join(" ")
        );
        for &(f, m, sd) in &pts {
            let _ = writeln!(
                o,
                r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}"/><circle cx="{0:.1}" cy="{3:.1}" r="2.5" fill="{color}"/>"#,
                x(f),
                y(m - sd),
                y(m + sd),
                y(m)
            );
        }
        let ly = top + 12.0 + pi as f64 * 16.0;
        let _ = writeln!(
            o,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="{color}" stroke-width="2"/><text x="{3:.1}" y="{4:.1}">{policy}</text>"#,
            left + pw + 10.0,
            ly,
            left + pw + 28.0,
            left + pw + 32.0,
            ly + 4.0
        );
    }
    o.push_str("</svg>\n");
    o
}

#[derive(Debug, Serialize)]
struct CellRow<'a> {
    fraction: f64,
    policy: &'a str,
    mean: Option<f64>,
    std: Option<f64>,
    n_real: usize,
    n_synth: usize,
}

fn cells_csv(s: &SweepSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &s.cells {
        w.serialize(CellRow {
            fraction: c.fraction,
            policy: &c.policy,
            mean: c.mean,
            std: c.std,
            n_real: c.n_real,
            n_synth: c.n_synth,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub(crate) fn report(p: &Pipeline) -> Result<()> {
    let projection: ProjectionSummary = read_json(&p.path(Artifact::ProjectionSummary))?;
    let metrics: DirectionMetrics = read_json(&p.path(Artifact::DirectionMetrics))?;
    let sweep: SweepSummary = read_json(&p.path(Artifact::SweepSummary))?;
    let gradcam: GradcamSummary = read_json(&p.path(Artifact::GradcamSummary))?;
    let direction = DirectionVector::load(&p.path(Artifact::Direction))?;

    let bundle = load_gan(p)?;
    let table = load_latent_table(&p.path(Artifact::Latents))?;
    let latents = eval_latents(p, &table)?;
    let shown = &latents[..latents.len().min(p.cfg.report.strip_latents)];
    let strip_degrees = p.cfg.report.strip_coefficients.clone();
    let coefs = degree_coefficients(&direction, &strip_degrees)?;
    let strip_path = p.path(Artifact::ReportStrip);
    ensure_parent(&strip_path)?;
    sweep_strip(p.exec, &bundle, &direction, shown, &coefs)?.save_png(&strip_path)?;

    let svg_path = p.path(Artifact::ReportCurves);
    std::fs::write(&svg_path, accuracy_svg(&sweep)).map_err(|e| Error::io(&svg_path, e))?;
    let cells_path = p.path(Artifact::ReportCells);
    std::fs::write(&cells_path, cells_csv(&sweep)?).map_err(|e| Error::io(&cells_path, e))?;
    for (from, name) in [
        (Artifact::GradcamOverlays, "gradcam_overlays.png"),
        (Artifact::GradcamMetrics, "gradcam_metrics.csv"),
        (Artifact::SweepCsv, "sweep_folds.csv"),
    ] {
        let to = p.out.join("report").join(name);
        std::fs::copy(p.path(from), &to).map_err(|e| Error::io(&to, e))?;
    }

    let policy = p.cfg.gradcam.policy.name();
    let summary = ReportSummary {
        schema_version: p.cfg.schema_version,
        seed: p.cfg.seed,
        config_hashes: Stage::ALL
            .iter()
            .map(|&s| (s.name().to_string(), p.config_hash(s)))
            .collect(),
        projection,
        direction: DirectionOverview {
            oracle_val_mae: metrics.oracle.val_mae,
            probe_r2: metrics.probe_r2,
            kept_dims: metrics.kept_dims,
            degrees_per_unit: metrics.degrees_per_unit,
            strip_degrees,
            strip_coefficients: coefs,
            monotone_fraction: metrics.monotone_fraction,
            identity_preservation: metrics.identity_preservation,
        },
        acceptance: Acceptance {
            semantic_rotation: rotation_check(&metrics),
            augmentation_benefit: benefit_check(&sweep, policy),
            on_object_delta: gradcam.delta,
        },
        sweep,
        gradcam,
    };
    write_json(&p.path(Artifact::ReportSummary), &summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stages::AggregateCell;

    fn summary(cells: &[(f64, &str, f64)]) -> SweepSummary {
        SweepSummary {
            repeats: 3,
            folds: 5,
            fractions: vec![1.0, 0.9, 0.7, 0.5],
            policies: vec!["none".into(), "perturb".into()],
            cells: cells
                .iter()
                .map(|&(f, p, m)| AggregateCell {
                    fraction: f,
                    policy: p.into(),
                    mean: Some(m),
                    std: Some(0.01),
                    repeat_means: vec![Some(m); 3],
                    n_real: 0,
                    n_synth: 0,
                    error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn benefit_check_applies_slack_and_pairs() {
        let s = summary(&[
            (1.0, "none", 0.80),
            (0.9, "none", 0.78),
            (0.7, "none", 0.74),
            (0.5, "none", 0.70),
            (1.0, "perturb", 0.82),
            (0.9, "perturb", 0.80),
            (0.7, "perturb", 0.795),
            (0.5, "perturb", 0.72),
        ]);
        let b = benefit_check(&s, "perturb");
        assert_eq!(b.reduced_pass, Some(true));
        assert_eq!(b.pass, Some(true));
        assert!((b.relative_change.unwrap() - (-0.00625)).abs() < 1e-12);

        let mut worse = s.clone();
        worse.cells[6].mean = Some(0.785);
        assert_eq!(benefit_check(&worse, "perturb").reduced_pass, Some(false));
        let mut unpaired = s.clone();
        unpaired.cells[7].mean = Some(0.69);
        let b = benefit_check(&unpaired, "perturb");
        assert_eq!(b.paired[0].pass, Some(false));
        assert_eq!(b.pass, Some(false));
        // A missing cell leaves the verdict open.
        assert_eq!(benefit_check(&s, "traverse").pass, None);
    }

    #[test]
    fn svg_has_one_line_per_policy() {
        let s = summary(&[(1.0, "none", 0.8), (0.5, "none", 0.7), (1.0, "perturb", 0.82), (0.5, "perturb", 0.75)]);
        let svg = accuracy_svg(&s);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg, accuracy_svg(&s));
    }
}
