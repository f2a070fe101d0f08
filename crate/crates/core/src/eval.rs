//! Scoring, ROC curves and report files.
//!
//! Three cohorts are scored. Train and validation: every participant's
//! samples from that split against its own codeword (genuine) and against
//! every other participant's codeword (imposter). Unseen: participants' test
//! samples against their own codeword (genuine), and every sample of every
//! non-participant against every participant codeword (imposter). FPR is
//! pooled over all imposter attempts.

use std::fmt::{self, Write as _};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::datagen::{ClientDataset, Population, Split};
use crate::error::{Error, Result};
use crate::fedua::embed;
use crate::nn::Model;
use crate::UserId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Train,
    Validation,
    Unseen,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Train, Cohort::Validation, Cohort::Unseen];

    pub fn as_str(&self) -> &'static str {
        match self {
            Cohort::Train => "train",
            Cohort::Validation => "validation",
            Cohort::Unseen => "unseen",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Cohort::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown cohort {s:?}")))
    }
}

/// Genuine and imposter scores of one cohort. Imposter entries carry the
/// claimed identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub cohort: Cohort,
    pub genuine: Vec<(UserId, f64)>,
    pub imposter: Vec<(UserId, f64)>,
}

impl ScoreSet {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.genuine.iter().map(|g| g.1).collect()
    }

    pub fn imposter_scores(&self) -> Vec<f64> {
        self.imposter.iter().map(|g| g.1).collect()
    }
}

/// `(claimed user, score)` pairs.
type Attempts = Vec<(UserId, f64)>;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scores of `owner`'s samples from `split`: genuine against its own codeword
/// when `owner` is a participant, imposter against every other claimed codeword.
fn score_user(
    model: &Model,
    data: &ClientDataset,
    split: Split,
    claimed: &[(UserId, Vec<f64>)],
) -> Result<(Attempts, Attempts)> {
    let samples = data.split(split);
    if samples.rows() == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let predictions = embed(model, samples)?;
    let mut genuine = Vec::new();
    let mut imposter = Vec::new();
    for p in &predictions {
        for (id, y) in claimed {
            let e = squared_distance(y, p);
            if *id == data.user_id {
                genuine.push((*id, e));
            } else {
                imposter.push((*id, e));
            }
        }
    }
    Ok((genuine, imposter))
}

/// Scores one cohort. Users are processed in parallel; the result is in
/// population order regardless of scheduling.
pub fn score_population(
    model: &Model,
    codebook: &Codebook,
    population: &Population,
    cohort: Cohort,
) -> Result<ScoreSet> {
    let claimed: Vec<(UserId, Vec<f64>)> = population
        .participants
        .iter()
        .map(|p| {
            codebook
                .get(p.user_id)
                .map(|e| (p.user_id, e.to_f64()))
                .ok_or_else(|| Error::arg(format!("codebook has no embedding for user {}", p.user_id)))
        })
        .collect::<Result<_>>()?;
    if let Some((_, y)) = claimed.first() {
        if y.len() != model.config().embedding_length {
            return Err(Error::arg(format!(
                "codebook embeddings have {} bits, the model outputs {}",
                y.len(),
                model.config().embedding_length
            )));
        }
    }
    let jobs: Vec<(&ClientDataset, Split)> = match cohort {
        Cohort::Train => population.participants.iter().map(|p| (p, Split::Train)).collect(),
        Cohort::Validation => population.participants.iter().map(|p| (p, Split::Validation)).collect(),
        Cohort::Unseen => population
            .participants
            .iter()
            .map(|p| (p, Split::Test))
            .chain(population.unseen.iter().map(|u| (u, Split::Test)))
            .collect(),
    };
    let parts: Vec<_> = jobs
        .par_iter()
        .map(|&(data, split)| {
            let (genuine, imposter) = score_user(model, data, split, &claimed)?;
            // In the unseen cohort participants only contribute genuine attempts.
            let participant = population.participant(data.user_id).is_some();
            Ok(if cohort == Cohort::Unseen && participant {
                (genuine, Vec::new())
            } else {
                (genuine, imposter)
            })
        })
        .collect::<Result<_>>()?;
    let mut set = ScoreSet {
        cohort,
        genuine: Vec::new(),
        imposter: Vec::new(),
    };
    for (g, i) in parts {
        set.genuine.extend(g);
        set.imposter.extend(i);
    }
    Ok(set)
}

/// Mean genuine and mean imposter score per participant of a score set, as
/// `(user, mean genuine, mean imposter)` with the imposter mean taken over
/// attempts claiming that user. Users missing either side are skipped.
pub fn per_user_means(set: &ScoreSet) -> Vec<(UserId, f64, f64)> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<UserId, [f64; 4]> = BTreeMap::new();
    for &(u, e) in &set.genuine {
        let a = acc.entry(u).or_default();
        a[0] += e;
        a[1] += 1.0;
    }
    for &(u, e) in &set.imposter {
        let a = acc.entry(u).or_default();
        a[2] += e;
        a[3] += 1.0;
    }
    acc.into_iter()
        .filter(|(_, a)| a[1] > 0.0 && a[3] > 0.0)
        .map(|(u, a)| (u, a[0] / a[1], a[2] / a[3]))
        .collect()
}

/// ROC curve: `(FPR, TPR)` at every candidate threshold, starting from the
/// point that accepts nothing (threshold `-inf`) and ending at `(1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// Sweeps the threshold over the sorted distinct scores; a score `e` is
/// accepted at threshold `t` iff `e <= t`.
pub fn roc_curve(genuine: &[f64], imposter: &[f64]) -> Result<RocCurve> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(Error::arg("a ROC curve needs genuine and imposter scores"));
    }
    if genuine.iter().chain(imposter).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score is NaN".into()));
    }
    let mut g = genuine.to_vec();
    let mut i = imposter.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = g.iter().chain(&i).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::NEG_INFINITY];
    let (mut a, mut b) = (0, 0);
    for t in cuts {
        while a < g.len() && g[a] <= t {
            a += 1;
        }
        while b < i.len() && i[b] <= t {
            b += 1;
        }
        points.push((b as f64 / ni, a as f64 / ng));
        thresholds.push(t);
    }
    let auc = trapezoid(&points);
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}

/// ROC of a score set.
pub fn roc_of(set: &ScoreSet) -> Result<RocCurve> {
    roc_curve(&set.genuine_scores(), &set.imposter_scores())
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Smallest FPR among curve points whose TPR reaches `tpr_target`.
pub fn fpr_at_tpr(curve: &RocCurve, tpr_target: f64) -> Result<f64> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::arg(format!("target TPR {tpr_target} must lie in (0, 1]")));
    }
    curve
        .points
        .iter()
        .filter(|p| p.1 >= tpr_target)
        .map(|p| p.0)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::arg("curve never reaches the target TPR"))
}

/// Options for [`export_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    /// Caption of the plot, e.g. the embedding length.
    pub title: String,
    /// Logarithmic FPR axis from 1e-4 to 1.
    pub log_x: bool,
    /// TPR levels for the summary table.
    pub tpr_targets: Vec<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            title: String::new(),
            log_x: false,
            tpr_targets: vec![0.8, 0.9],
        }
    }
}

/// One file per cohort, `roc_<cohort>.csv` with header `threshold,fpr,tpr`.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for (t, (f, p)) in curve.thresholds.iter().zip(&curve.points) {
        writeln!(s, "{t},{f},{p}").expect("writing to a string");
    }
    s
}

/// Parses a file written by [`roc_csv`]; the AUC is recomputed.
pub fn read_roc_csv<R: Read>(reader: R) -> Result<RocCurve> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| Error::Format {
        what: "roc",
        reason: e.to_string(),
    })?;
    if headers != vec!["threshold", "fpr", "tpr"] {
        return Err(Error::Format {
            what: "roc",
            reason: format!("unexpected header {headers:?}"),
        });
    }
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    for (i, row) in r.deserialize::<(f64, f64, f64)>().enumerate() {
        let (t, f, p) = row.map_err(|e| Error::Parse {
            line: i + 2,
            reason: e.to_string(),
        })?;
        thresholds.push(t);
        points.push((f, p));
    }
    if points.is_empty() {
        return Err(Error::Format {
            what: "roc",
            reason: "no points".into(),
        });
    }
    let auc = trapezoid(&points);
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}

/// `cohort,auc,fpr_at_tpr_<target>...` for every cohort.
pub fn summary_csv(curves: &[(Cohort, RocCurve)], tpr_targets: &[f64]) -> Result<String> {
    let mut s = String::from("cohort,auc");
    for t in tpr_targets {
        write!(s, ",fpr_at_tpr_{t}").expect("writing to a string");
    }
    s.push('\n');
    for (cohort, curve) in curves {
        write!(s, "{cohort},{}", curve.auc).expect("writing to a string");
        for &t in tpr_targets {
            write!(s, ",{}", fpr_at_tpr(curve, t)?).expect("writing to a string");
        }
        s.push('\n');
    }
    Ok(s)
}

const PLOT_W: f64 = 480.0;
const PLOT_H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const LOG_FLOOR: f64 = 1e-4;

fn cohort_color(c: Cohort) -> &'static str {
    match c {
        Cohort::Train => "#1f77b4",
        Cohort::Validation => "#ff7f0e",
        Cohort::Unseen => "#2ca02c",
    }
}

fn x_pos(fpr: f64, log_x: bool) -> f64 {
    let u = if log_x {
        let lo = LOG_FLOOR.log10();
        (fpr.max(LOG_FLOOR).log10() - lo) / -lo
    } else {
        fpr
    };
    MARGIN + u * PLOT_W
}

fn y_pos(tpr: f64) -> f64 {
    MARGIN + (1.0 - tpr) * PLOT_H
}

/// ROC overlay: one polyline per cohort over unit axes.
pub fn roc_svg(curves: &[(Cohort, RocCurve)], options: &ReportOptions) -> String {
    let (w, h) = (PLOT_W + 2.0 * MARGIN, PLOT_H + 2.0 * MARGIN);
    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line(format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    ));
    line(format!(r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#));
    line(format!(
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        MARGIN / 2.0,
        escape(&options.title)
    ));
    line(format!(
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    ));
    let ticks: Vec<f64> = if options.log_x {
        vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    } else {
        vec![0.0, 0.25, 0.5, 0.75, 1.0]
    };
    for t in &ticks {
        let x = x_pos(*t, options.log_x);
        line(format!(
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            MARGIN + PLOT_H + 18.0
        ));
    }
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        line(format!(
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#,
            MARGIN - 6.0,
            y_pos(t) + 4.0
        ));
    }
    line(format!(
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">FPR{}</text>"#,
        MARGIN + PLOT_W / 2.0,
        h - 14.0,
        if options.log_x { " (log)" } else { "" }
    ));
    line(format!(
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">TPR</text>"#,
        MARGIN + PLOT_H / 2.0,
        MARGIN + PLOT_H / 2.0
    ));
    for (k, (cohort, curve)) in curves.iter().enumerate() {
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|&(f, t)| format!("{:.2},{:.2}", x_pos(f, options.log_x), y_pos(t)))
            .collect();
        line(format!(
            r#"<polyline class="roc" data-cohort="{cohort}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            cohort_color(*cohort),
            pts.join(" ")
        ));
        let ly = MARGIN + 20.0 + 16.0 * k as f64;
        line(format!(
            r#"<text x="{:.2}" y="{ly:.2}" fill="{}" text-anchor="end">{cohort} (AUC {:.4})</text>"#,
            MARGIN + PLOT_W - 8.0,
            cohort_color(*cohort),
            curve.auc
        ));
    }
    line("</svg>".to_string());
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `roc_<cohort>.csv` per cohort, `summary.csv` and `roc.svg` into
/// `dir` (created if missing). Returns the written paths.
pub fn export_report(curves: &[(Cohort, RocCurve)], dir: &Path, options: &ReportOptions) -> Result<Vec<PathBuf>> {
    if curves.is_empty() {
        return Err(Error::arg("a report needs at least one cohort"));
    }
    let mut seen = Vec::new();
    for (c, _) in curves {
        if seen.contains(c) {
            return Err(Error::arg(format!("cohort {c} listed twice")));
        }
        seen.push(*c);
    }
    let summary = summary_csv(curves, &options.tpr_targets)?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (cohort, curve) in curves {
        let path = dir.join(format!("roc_{cohort}.csv"));
        std::fs::write(&path, roc_csv(curve))?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, summary)?;
    written.push(path);
    let path = dir.join("roc.svg");
    std::fs::write(&path, roc_svg(curves, options))?;
    written.push(path);
    Ok(written)
}

/// Scores every cohort that has both genuine and imposter attempts.
pub fn evaluate_cohorts(
    model: &Model,
    codebook: &Codebook,
    population: &Population,
) -> Result<Vec<(Cohort, ScoreSet, RocCurve)>> {
    let mut out = Vec::new();
    for cohort in Cohort::ALL {
        let set = score_population(model, codebook, population, cohort)?;
        if set.genuine.is_empty() || set.imposter.is_empty() {
            continue;
        }
        let curve = roc_of(&set)?;
        out.push((cohort, set, curve));
    }
    Ok(out)
}
