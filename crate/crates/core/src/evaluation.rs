//! Stratified k-fold cross-validation, classification metrics, the
//! ablation runner and the 3-D PCA embedding export.
//!
//! Zero-denominator metrics follow the common convention and evaluate to
//! 0; weighted averages use the true-class supports as weights, which
//! makes weighted recall equal accuracy by definition.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SourceImage, ViewKind};
use crate::features::{
    feature_vector, pair_mixed, select_features, FeatureCombo, FeatureVector, FeatureView,
    LbpParams,
};
use crate::learners::{train, EnsembleParams};
use crate::patching::{extract_patch_grid, GridParams};
use crate::{Error, Result};

/// How samples are grouped when the folds are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingMode {
    /// Stratify individual patches (the reference behavior). Patches of
    /// one image may straddle the train/test boundary.
    PerPatch,
    /// Keep all patches of one stone fragment inside one fold, trading
    /// exact stratification for leak-free splits.
    PerStone,
}

impl std::str::FromStr for GroupingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-patch" | "patch" => Ok(GroupingMode::PerPatch),
            "per-stone" | "stone" => Ok(GroupingMode::PerStone),
            _ => Err(Error::UnknownToken {
                kind: "grouping mode",
                token: s.to_string(),
            }),
        }
    }
}

/// Disjoint index sets partitioning a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
    pub mode: GroupingMode,
}

/// Draws a stratified k-fold split.
///
/// Per-patch mode deals each class's shuffled indices round-robin, so
/// every fold's class counts sit within one sample of the exact
/// proportion. Per-stone mode assigns whole stones to the currently
/// lightest fold of their class (largest stones first).
pub fn stratified_kfold(
    labels: &[usize],
    stone_ids: &[String],
    k: usize,
    mode: GroupingMode,
    seed: u64,
) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidParams(format!("k must be >= 2, got {k}")));
    }
    if labels.len() != stone_ids.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels vs {} stone ids",
            labels.len(),
            stone_ids.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    match mode {
        GroupingMode::PerPatch => {
            for (class, mut idxs) in by_class {
                if idxs.len() < k {
                    return Err(Error::ClassTooSmall {
                        class: class.to_string(),
                        available: idxs.len(),
                        unit: "samples",
                        k,
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (class as u64).wrapping_mul(0x2545F4914F6CDD1D),
                );
                idxs.shuffle(&mut rng);
                // Rotate the starting fold per class so remainders spread.
                for (j, idx) in idxs.into_iter().enumerate() {
                    folds[(j + class) % k].push(idx);
                }
            }
        }
        GroupingMode::PerStone => {
            for (class, idxs) in by_class {
                let mut stones: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for &i in &idxs {
                    stones.entry(stone_ids[i].as_str()).or_default().push(i);
                }
                if stones.len() < k {
                    return Err(Error::ClassTooSmall {
                        class: class.to_string(),
                        available: stones.len(),
                        unit: "stones",
                        k,
                    });
                }
                let mut stone_list: Vec<(&str, Vec<usize>)> = stones.into_iter().collect();
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (class as u64).wrapping_mul(0x2545F4914F6CDD1D),
                );
                stone_list.shuffle(&mut rng);
                stone_list.sort_by_key(|(_, v)| std::cmp::Reverse(v.len()));
                let mut class_load = vec![0usize; k];
                for (_, members) in stone_list {
                    let target = (0..k).min_by_key(|&f| (class_load[f], f)).unwrap();
                    class_load[target] += members.len();
                    folds[target].extend(members);
                }
            }
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldSplit { folds, mode })
}

/// Per-class precision, recall, F1 and support.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Evaluation report: confusion matrix (rows = true class), per-class and
/// support-weighted metrics, optional per-fold breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: usize,
    pub folds: Vec<EvalReport>,
}

/// Confusion matrix and precision/recall/F1 metrics for one prediction
/// set. Empty denominators yield 0.
pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    classes: &[String],
) -> Result<EvalReport> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty label vectors ({} vs {})",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = classes.len();
    for &label in y_true.iter().chain(y_pred) {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: k,
            });
        }
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let total = y_true.len();
    let mut per_class = Vec::with_capacity(k);
    let mut weighted_precision = 0.0;
    let mut weighted_recall = 0.0;
    let mut weighted_f1 = 0.0;
    #[allow(clippy::needless_range_loop)] // c indexes rows and columns
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let weight = support as f64 / total as f64;
        weighted_precision += weight * precision;
        weighted_recall += weight * recall;
        weighted_f1 += weight * f1;
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = trace as f64 / total as f64;
    debug_assert!(
        (weighted_recall - accuracy).abs() < 1e-12,
        "weighted recall must equal accuracy by definition"
    );
    Ok(EvalReport {
        classes: classes.to_vec(),
        confusion,
        per_class,
        weighted_precision,
        weighted_recall,
        weighted_f1,
        accuracy,
        total,
        folds: Vec::new(),
    })
}

/// Trains one model per fold on the remaining folds and evaluates it on
/// the held-out fold. The aggregate report pools every held-out
/// prediction; the per-fold reports are retained under `folds`.
pub fn cross_validate(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    params: &EnsembleParams,
    split: &FoldSplit,
) -> Result<EvalReport> {
    let n = x.len();
    let mut seen = vec![false; n];
    for fold in &split.folds {
        for &i in fold {
            if i >= n || seen[i] {
                return Err(Error::InvalidInput(
                    "folds must partition the dataset".into(),
                ));
            }
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::InvalidInput("folds must cover every sample".into()));
    }

    let mut pooled_true = Vec::with_capacity(n);
    let mut pooled_pred = Vec::with_capacity(n);
    let mut fold_reports = Vec::with_capacity(split.folds.len());
    for held_out in &split.folds {
        let train_idx: Vec<usize> = (0..n).filter(|i| !held_out.contains(i)).collect();
        let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let train_y: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
        let model = train(&train_x, &train_y, classes, params)?;
        let test_x: Vec<Vec<f64>> = held_out.iter().map(|&i| x[i].clone()).collect();
        let pred = model.predict(&test_x)?;
        let truth: Vec<usize> = held_out.iter().map(|&i| y[i]).collect();
        fold_reports.push(compute_metrics(&truth, &pred, classes)?);
        pooled_true.extend(truth);
        pooled_pred.extend(pred);
    }
    let mut report = compute_metrics(&pooled_true, &pooled_pred, classes)?;
    report.folds = fold_reports;
    Ok(report)
}

/// Axes of the ablation sweep.
#[derive(Clone, Debug)]
pub struct AblationAxes {
    pub combos: Vec<FeatureCombo>,
    pub patch_sides: Vec<u32>,
    pub views: Vec<FeatureView>,
}

/// One ablation cell: the axis values and the cross-validated report.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub combo: FeatureCombo,
    pub patch_side: u32,
    pub view: FeatureView,
    pub report: EvalReport,
}

/// Extracts patches per requested size, featurizes per view, and
/// cross-validates every (combo, size, view) cell.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    sources: &[SourceImage],
    axes: &AblationAxes,
    grid: &GridParams,
    lbp: &LbpParams,
    params: &EnsembleParams,
    k: usize,
    grouping: GroupingMode,
    seed: u64,
) -> Result<Vec<AblationCell>> {
    if axes.combos.is_empty() || axes.patch_sides.is_empty() || axes.views.is_empty() {
        return Err(Error::InvalidParams("empty ablation axis".into()));
    }
    let mut cells = Vec::new();
    for &side in &axes.patch_sides {
        let side_grid = GridParams {
            patch_side: side,
            ..*grid
        };
        let mut surface = Vec::new();
        let mut section = Vec::new();
        for source in sources {
            for rec in extract_patch_grid(source, &side_grid)? {
                let v = feature_vector(&rec, lbp)?;
                match rec.view {
                    ViewKind::Surface => surface.push(v),
                    ViewKind::Section => section.push(v),
                }
            }
        }
        for &view in &axes.views {
            let vectors: Vec<FeatureVector> = match view {
                FeatureView::Surface => surface.clone(),
                FeatureView::Section => section.clone(),
                FeatureView::Mixed => pair_mixed(&surface, &section, seed)?,
            };
            if vectors.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no {view} vectors at patch side {side}"
                )));
            }
            for &combo in &axes.combos {
                let selected: Vec<FeatureVector> = vectors
                    .iter()
                    .map(|v| select_features(v, combo))
                    .collect::<Result<_>>()?;
                let (x, y, classes, stones) = feature_matrix(&selected);
                let split = stratified_kfold(&y, &stones, k, grouping, seed)?;
                let report = cross_validate(&x, &y, &classes, params, &split)?;
                cells.push(AblationCell {
                    combo,
                    patch_side: side,
                    view,
                    report,
                });
            }
        }
    }
    Ok(cells)
}

/// Splits feature vectors into the matrix/label/stone-id triple the
/// learners and fold drawers consume. Class indices follow
/// [`crate::dataset::ClassLabel::ALL`].
pub fn feature_matrix(
    vectors: &[FeatureVector],
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<String>, Vec<String>) {
    let x: Vec<Vec<f64>> = vectors.iter().map(|v| v.components.clone()).collect();
    let y: Vec<usize> = vectors.iter().map(|v| v.class.index()).collect();
    let classes: Vec<String> = crate::dataset::ClassLabel::ALL
        .iter()
        .map(|c| c.to_string())
        .collect();
    let stones: Vec<String> = vectors.iter().map(|v| v.stone_id.clone()).collect();
    (x, y, classes, stones)
}

/// 3-D embedding of a feature set, substituting PCA for the stochastic
/// graph embedding used upstream; the role (visual inspection of class
/// separability) is unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingExport {
    /// Per-sample projected coordinates, `out_dim` each.
    pub coords: Vec<Vec<f64>>,
    pub classes: Vec<String>,
    pub views: Vec<String>,
    /// Explained-variance ratios of the kept components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Set when the data rank fell short of `out_dim`; missing components
    /// are zero-padded.
    pub rank_deficient: bool,
    /// Mean vector and principal axes, for reconstruction.
    pub mean: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
}

/// Mean-centered principal-component projection onto `out_dim` axes,
/// ordered by decreasing eigenvalue. Sign convention: the
/// largest-magnitude loading of each axis is positive.
pub fn pca_project(vectors: &[FeatureVector], out_dim: usize) -> Result<EmbeddingExport> {
    if vectors.len() < out_dim + 1 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least {} samples, got {}",
            out_dim + 1,
            vectors.len()
        )));
    }
    let d = vectors[0].components.len();
    if d < out_dim {
        return Err(Error::InvalidInput(format!(
            "PCA to {out_dim} components needs dimensionality >= {out_dim}, got {d}"
        )));
    }
    if vectors.iter().any(|v| v.components.len() != d) {
        return Err(Error::InvalidInput("inconsistent vector lengths".into()));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, &c) in mean.iter_mut().zip(&v.components) {
            *m += c;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for v in vectors {
        let centered: Vec<f64> = v.components.iter().zip(&mean).map(|(c, m)| c - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
    });
    let total_var: f64 = eigen.eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    let rank_tol = eigen.eigenvalues[order[0]].max(0.0) * 1e-12;

    let mut axes = Vec::with_capacity(out_dim);
    let mut explained = Vec::with_capacity(out_dim);
    let mut rank_deficient = false;
    for &col in order.iter().take(out_dim) {
        let eigenvalue = eigen.eigenvalues[col].max(0.0);
        if eigenvalue <= rank_tol {
            rank_deficient = true;
            axes.push(vec![0.0; d]);
            explained.push(0.0);
            continue;
        }
        let mut axis: Vec<f64> = eigen.eigenvectors.column(col).iter().cloned().collect();
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if axis[lead] < 0.0 {
            for a in &mut axis {
                *a = -*a;
            }
        }
        axes.push(axis);
        explained.push(if total_var > 0.0 {
            eigenvalue / total_var
        } else {
            0.0
        });
    }

    let coords: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            axes.iter()
                .map(|axis| {
                    v.components
                        .iter()
                        .zip(&mean)
                        .zip(axis)
                        .map(|((c, m), a)| (c - m) * a)
                        .sum()
                })
                .collect()
        })
        .collect();

    Ok(EmbeddingExport {
        coords,
        classes: vectors.iter().map(|v| v.class.to_string()).collect(),
        views: vectors.iter().map(|v| v.view.to_string()).collect(),
        explained_variance: explained,
        rank_deficient,
        mean,
        axes,
    })
}

impl EmbeddingExport {
    /// Reconstructs sample `i` from its projected coordinates.
    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (coord, axis) in self.coords[i].iter().zip(&self.axes) {
            for (o, a) in out.iter_mut().zip(axis) {
                *o += coord * a;
            }
        }
        out
    }
}

const REPORT_VERSION: &str = "lithoscan-report v1";

/// Renders a report as a tab-separated table with a versioned header:
/// one row per class plus the weighted summary row, then the confusion
/// matrix as a K x K integer grid.
pub fn render_report(report: &EvalReport, metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {REPORT_VERSION}");
    for (key, value) in metadata {
        let _ = writeln!(out, "# {key}={value}");
    }
    let _ = writeln!(out, "# zero-denominator metrics evaluate to 0");
    let _ = writeln!(out, "class\tprecision\trecall\tf1\tsupport");
    for (class, m) in report.classes.iter().zip(&report.per_class) {
        let _ = writeln!(
            out,
            "{class}\t{:.6}\t{:.6}\t{:.6}\t{}",
            m.precision, m.recall, m.f1, m.support
        );
    }
    let _ = writeln!(
        out,
        "WEIGHTED\t{:.6}\t{:.6}\t{:.6}\t{}",
        report.weighted_precision, report.weighted_recall, report.weighted_f1, report.total
    );
    let _ = writeln!(out, "# confusion matrix (rows = true class)");
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    out
}

/// Renders the ablation table: one line per cell carrying the axis
/// values, the per-class precision/recall/F1 triplets and the weighted
/// metrics.
pub fn render_ablation_table(cells: &[AblationCell], metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {REPORT_VERSION} (ablation)");
    for (key, value) in metadata {
        let _ = writeln!(out, "# {key}={value}");
    }
    let class_cols = cells.first().map_or(String::new(), |c| {
        c.report
            .classes
            .iter()
            .map(|name| format!("{name}_precision\t{name}_recall\t{name}_f1"))
            .collect::<Vec<_>>()
            .join("\t")
    });
    let _ = writeln!(
        out,
        "combo\tpatch_side\tview\t{class_cols}\tweighted_precision\tweighted_recall\tweighted_f1\taccuracy"
    );
    for cell in cells {
        let per_class = cell
            .report
            .per_class
            .iter()
            .map(|m| format!("{:.6}\t{:.6}\t{:.6}", m.precision, m.recall, m.f1))
            .collect::<Vec<_>>()
            .join("\t");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{per_class}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            cell.combo,
            cell.patch_side,
            cell.view,
            cell.report.weighted_precision,
            cell.report.weighted_recall,
            cell.report.weighted_f1,
            cell.report.accuracy
        );
    }
    out
}

/// Renders the embedding export as a TSV. The header records that the
/// embedding is a PCA substitute for the stochastic method it replaces.
pub fn render_embedding(export: &EmbeddingExport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {REPORT_VERSION} (embedding)");
    let _ = writeln!(
        out,
        "# method=pca (linear substitute for the UMAP visualisation; same role: class-separability inspection)"
    );
    let evr: Vec<String> = export
        .explained_variance
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect();
    let _ = writeln!(out, "# explained_variance_ratios={}", evr.join(","));
    if export.rank_deficient {
        let _ = writeln!(out, "# rank_deficient=true (zero-padded components)");
    }
    let dim = export.coords.first().map_or(0, |c| c.len());
    let cols: Vec<String> = (1..=dim).map(|i| format!("pc{i}")).collect();
    let _ = writeln!(out, "class\tview\t{}", cols.join("\t"));
    for ((coords, class), view) in export.coords.iter().zip(&export.classes).zip(&export.views) {
        let vals: Vec<String> = coords.iter().map(|c| format!("{c:.9e}")).collect();
        let _ = writeln!(out, "{class}\t{view}\t{}", vals.join("\t"));
    }
    out
}

/// Simple SVG line plot of (x, y) points, used for the patch-size sweep.
pub fn render_line_plot_svg(
    title: &str,
    points: &[(f64, f64)],
    x_label: &str,
    y_label: &str,
) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (0.0f64, ys.iter().cloned().fold(1.0, f64::max));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-9) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-9) * (h - 2.0 * pad);
    let mut path = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(
            path,
            "{}{:.1},{:.1} ",
            if i == 0 { "M" } else { "L" },
            sx(*x),
            sy(*y)
        );
    }
    let mut marks = String::new();
    for (x, y) in points {
        let _ = write!(
            marks,
            r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#1f77b4"/>"##,
            sx(*x),
            sy(*y)
        );
    }
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>
<line x1="{pad}" y1="{yaxis}" x2="{xend}" y2="{yaxis}" stroke="black"/>
<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{yaxis}" stroke="black"/>
<text x="{tx}" y="{xl}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>
<text x="16" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {ty})">{y_label}</text>
<path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>
{marks}
</svg>
"##,
        tx = w / 2.0,
        yaxis = h - pad,
        xend = w - pad,
        xl = h - pad / 3.0,
        ty = h / 2.0,
    )
}

/// Simple SVG bar chart, used for per-class metric bars.
pub fn render_bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let n = bars.len().max(1) as f64;
    let bw = (w - 2.0 * pad) / n * 0.7;
    let step = (w - 2.0 * pad) / n;
    let mut rects = String::new();
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = pad + i as f64 * step + (step - bw) / 2.0;
        let bh = value.clamp(0.0, 1.0) * (h - 2.0 * pad);
        let y = h - pad - bh;
        let _ = write!(
            rects,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{bh:.1}" fill="#2ca02c"/>
<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{label}</text>
<text x="{lx:.1}" y="{vy:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{value:.3}</text>
"##,
            lx = x + bw / 2.0,
            ly = h - pad / 2.0,
            vy = y - 6.0,
        );
    }
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>
<line x1="{pad}" y1="{base}" x2="{xend}" y2="{base}" stroke="black"/>
{rects}
</svg>
"##,
        tx = w / 2.0,
        base = h - pad,
        xend = w - pad,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel;
    use crate::learners::{EnsembleKind, Preset};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("C{c}")).collect()
    }

    #[test]
    fn kfold_exact_divisibility() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let stones: Vec<String> = (0..40).map(|i| format!("s{i}")).collect();
        let split = stratified_kfold(&labels, &stones, 5, GroupingMode::PerPatch, 1).unwrap();
        assert_eq!(split.folds.len(), 5);
        for fold in &split.folds {
            assert_eq!(fold.len(), 8);
            for c in 0..4 {
                let count = fold.iter().filter(|&&i| labels[i] == c).count();
                assert_eq!(count, 2, "exactly 2 per class per fold");
            }
        }
    }

    #[test]
    fn kfold_partition_and_stratification_bound() {
        let labels: Vec<usize> = (0..53).map(|i| (i * 7) % 3).collect();
        let stones: Vec<String> = (0..53).map(|i| format!("s{i}")).collect();
        let split = stratified_kfold(&labels, &stones, 4, GroupingMode::PerPatch, 9).unwrap();
        let mut seen = [false; 53];
        for fold in &split.folds {
            for &i in fold {
                assert!(!seen[i], "folds must be disjoint");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "folds must cover all samples");
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count();
            let per_fold: Vec<usize> = split
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
                .collect();
            let lo = total / 4;
            let hi = lo + 1;
            assert!(
                per_fold.iter().all(|&n| n == lo || n == hi),
                "class {c}: {per_fold:?}"
            );
        }
    }

    #[test]
    fn kfold_class_too_small() {
        let labels = vec![0, 0, 0, 1];
        let stones: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        assert!(matches!(
            stratified_kfold(&labels, &stones, 2, GroupingMode::PerPatch, 0),
            Err(Error::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn kfold_per_stone_keeps_stones_whole() {
        // 6 stones of 7 patches each, 2 classes.
        let mut labels = Vec::new();
        let mut stones = Vec::new();
        for s in 0..6 {
            for _ in 0..7 {
                labels.push(s % 2);
                stones.push(format!("stone{s}"));
            }
        }
        let split = stratified_kfold(&labels, &stones, 3, GroupingMode::PerStone, 5).unwrap();
        for fold in &split.folds {
            let mut in_fold: std::collections::BTreeSet<&str> = Default::default();
            for &i in fold {
                in_fold.insert(stones[i].as_str());
            }
            for stone in &in_fold {
                let members: Vec<usize> = stones
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.as_str() == *stone)
                    .map(|(i, _)| i)
                    .collect();
                assert!(
                    members.iter().all(|i| fold.contains(i)),
                    "stone {stone} split across folds"
                );
            }
        }
    }

    #[test]
    fn kfold_deterministic() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let stones: Vec<String> = (0..30).map(|i| format!("s{i}")).collect();
        let a = stratified_kfold(&labels, &stones, 5, GroupingMode::PerPatch, 77).unwrap();
        let b = stratified_kfold(&labels, &stones, 5, GroupingMode::PerPatch, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_perfect_prediction() {
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let report = compute_metrics(&y, &y, &names(3)).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.weighted_f1, 1.0);
        for (c, m) in report.per_class.iter().enumerate() {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
            assert_eq!(report.confusion[c][c], m.support);
        }
    }

    #[test]
    fn metrics_all_one_class_predictor() {
        // 4 balanced classes, everything predicted as class 0.
        let y_true: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let y_pred = vec![0usize; 40];
        let report = compute_metrics(&y_true, &y_pred, &names(4)).unwrap();
        assert_eq!(report.per_class[0].recall, 1.0);
        for c in 1..4 {
            assert_eq!(report.per_class[c].recall, 0.0);
            assert_eq!(report.per_class[c].precision, 0.0, "never predicted -> 0");
        }
        assert_eq!(report.weighted_recall, 0.25);
        assert_eq!(report.accuracy, 0.25);
    }

    #[test]
    fn metrics_label_outside_class_list() {
        assert!(matches!(
            compute_metrics(&[0, 5], &[0, 0], &names(3)),
            Err(Error::LabelOutOfRange { label: 5, .. })
        ));
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        let y_true: Vec<usize> = (0..37).map(|i| (i * 5) % 4).collect();
        let y_pred: Vec<usize> = (0..37).map(|i| (i * 3) % 4).collect();
        let report = compute_metrics(&y_true, &y_pred, &names(4)).unwrap();
        assert!((report.weighted_recall - report.accuracy).abs() < 1e-12);
        let trace: usize = (0..4).map(|c| report.confusion[c][c]).sum();
        assert_eq!(trace as f64 / 37.0, report.accuracy);
    }

    fn cluster_features(per: usize) -> Vec<FeatureVector> {
        let mut out = Vec::new();
        for (ci, class) in ClassLabel::ALL.iter().enumerate() {
            for i in 0..per {
                let mut components = vec![0.1; 8];
                components[ci] = 5.0 + (i as f64 * 0.29).sin() * 0.5;
                components[ci + 4] = -3.0 + (i as f64 * 0.17).cos() * 0.5;
                out.push(FeatureVector {
                    components,
                    view: FeatureView::Surface,
                    class: *class,
                    stone_id: format!("{class}-{}", i / 3),
                });
            }
        }
        out
    }

    #[test]
    fn cross_validate_separable_features() {
        let vectors = cluster_features(10);
        let (x, y, classes, stones) = feature_matrix(&vectors);
        let split = stratified_kfold(&y, &stones, 5, GroupingMode::PerPatch, 3).unwrap();
        let mut params = EnsembleParams::preset(EnsembleKind::RandomForest, Preset::Desk, 3);
        params.n_estimators = 20;
        let report = cross_validate(&x, &y, &classes, &params, &split).unwrap();
        assert!(report.weighted_f1 >= 0.95, "F1 = {}", report.weighted_f1);
        assert_eq!(report.folds.len(), 5);
        assert_eq!(report.total, 40);
    }

    #[test]
    fn cross_validate_duplicate_halves_symmetric() {
        // Two identical halves with k = 2: both folds carry one copy of
        // every sample, so the per-fold reports coincide.
        let mut vectors = cluster_features(4);
        let copy = vectors.clone();
        vectors.extend(copy);
        let (x, y, classes, _) = feature_matrix(&vectors);
        let n = x.len();
        let half: Vec<usize> = (0..n / 2).collect();
        let other: Vec<usize> = (n / 2..n).collect();
        let split = FoldSplit {
            folds: vec![half, other],
            mode: GroupingMode::PerPatch,
        };
        let mut params = EnsembleParams::preset(EnsembleKind::RandomForest, Preset::Desk, 1);
        params.n_estimators = 10;
        let report = cross_validate(&x, &y, &classes, &params, &split).unwrap();
        assert_eq!(report.folds[0], report.folds[1]);
    }

    #[test]
    fn cross_validate_deterministic() {
        let vectors = cluster_features(6);
        let (x, y, classes, stones) = feature_matrix(&vectors);
        let mut params = EnsembleParams::preset(EnsembleKind::GradientBoosting, Preset::Desk, 5);
        params.n_estimators = 5;
        let run = || {
            let split = stratified_kfold(&y, &stones, 3, GroupingMode::PerPatch, 11).unwrap();
            cross_validate(&x, &y, &classes, &params, &split).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pca_recovers_three_dim_subspace() {
        // 40-D points lying in a 3-D affine subspace; the three basis
        // vectors use distinct frequencies so they are linearly
        // independent.
        let basis: Vec<Vec<f64>> = (0..3)
            .map(|b| {
                (0..40)
                    .map(|j| (j as f64 * (0.4 + 0.9 * b as f64) + b as f64).sin())
                    .collect()
            })
            .collect();
        let vectors: Vec<FeatureVector> = (0..25)
            .map(|i| {
                let coef = [
                    (i as f64 * 0.31).sin() * 3.0,
                    (i as f64 * 0.47).cos() * 2.0,
                    (i as f64 * 0.13).sin() * 1.5,
                ];
                let mut components = vec![0.5; 40];
                for (j, c) in components.iter_mut().enumerate() {
                    for b in 0..3 {
                        *c += coef[b] * basis[b][j];
                    }
                }
                FeatureVector {
                    components,
                    view: FeatureView::Surface,
                    class: ClassLabel::WW,
                    stone_id: format!("s{i}"),
                }
            })
            .collect();
        let export = pca_project(&vectors, 3).unwrap();
        assert!(!export.rank_deficient);
        for (i, v) in vectors.iter().enumerate() {
            let rec = export.reconstruct(i);
            let err: f64 = rec
                .iter()
                .zip(&v.components)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-6, "sample {i} reconstruction error {err}");
        }
        for pair in export.explained_variance.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12);
        }
    }

    #[test]
    fn pca_duplicate_point_rank_deficient() {
        let vectors: Vec<FeatureVector> = (0..8)
            .map(|i| FeatureVector {
                components: vec![1.0, 2.0, 3.0, 4.0],
                view: FeatureView::Surface,
                class: ClassLabel::UA,
                stone_id: format!("s{i}"),
            })
            .collect();
        let export = pca_project(&vectors, 3).unwrap();
        assert!(export.rank_deficient);
        for coords in &export.coords {
            assert!(coords.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn pca_isotropic_data_near_equal_ratios() {
        // Deterministic spherical-ish cloud in 3-D.
        let vectors: Vec<FeatureVector> = (0..300)
            .map(|i| {
                let a = i as f64 * 2.39996; // golden angle
                let z = -1.0 + 2.0 * (i as f64 + 0.5) / 300.0;
                let r = (1.0 - z * z).sqrt();
                FeatureVector {
                    components: vec![r * a.cos(), r * a.sin(), z],
                    view: FeatureView::Surface,
                    class: ClassLabel::WW,
                    stone_id: format!("s{i}"),
                }
            })
            .collect();
        let export = pca_project(&vectors, 3).unwrap();
        let evr = &export.explained_variance;
        for &r in evr {
            assert!((r - 1.0 / 3.0).abs() < 0.05, "ratios {evr:?}");
        }
    }

    #[test]
    fn pca_order_invariant_up_to_sign() {
        // Distinct per-axis scales keep the spectrum simple, so the
        // principal axes are stable under permutation of the samples.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let vectors: Vec<FeatureVector> = (0..60)
            .map(|i| FeatureVector {
                components: (0..6)
                    .map(|j| rng.random_range(-1.0..1.0) * (6.0 - j as f64))
                    .collect(),
                view: FeatureView::Surface,
                class: ClassLabel::WW,
                stone_id: format!("s{i}"),
            })
            .collect();
        let mut reversed = vectors.clone();
        reversed.reverse();
        let a = pca_project(&vectors, 3).unwrap();
        let b = pca_project(&reversed, 3).unwrap();
        let n = vectors.len();
        for i in 0..n {
            for c in 0..3 {
                let d = (a.coords[i][c] - b.coords[n - 1 - i][c]).abs();
                assert!(d < 1e-6, "sample {i} component {c} differs by {d}");
            }
        }
    }

    #[test]
    fn ablation_axes_validated_and_reports_shaped() {
        let sources = crate::synthcorpus::generate_source_images(
            &crate::synthcorpus::standard_recipes(2),
            &crate::synthcorpus::CorpusSpec {
                image_size: 96,
                seed: 5,
                with_instrument: false,
            },
        );
        let axes = AblationAxes {
            combos: vec!["eh".parse().unwrap(), FeatureCombo::ALL],
            patch_sides: vec![24],
            views: vec![FeatureView::Surface],
        };
        let grid = GridParams {
            patch_side: 24,
            max_overlap: 4,
            max_non_stone_fraction: 0.10,
            seed: 2,
        };
        let mut params = EnsembleParams::preset(EnsembleKind::RandomForest, Preset::Desk, 2);
        params.n_estimators = 10;
        let cells = run_ablation(
            &sources,
            &axes,
            &grid,
            &LbpParams::default(),
            &params,
            2,
            GroupingMode::PerPatch,
            7,
        )
        .unwrap();
        assert_eq!(cells.len(), 2);
        for cell in &cells {
            assert!(cell.report.total > 0);
        }
        let empty = AblationAxes {
            combos: vec![],
            patch_sides: vec![24],
            views: vec![FeatureView::Surface],
        };
        assert!(run_ablation(
            &sources,
            &empty,
            &grid,
            &LbpParams::default(),
            &params,
            2,
            GroupingMode::PerPatch,
            7,
        )
        .is_err());
    }

    #[test]
    fn report_rendering_contains_rows() {
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let report = compute_metrics(&y, &y, &names(3)).unwrap();
        let text = render_report(&report, &[("seed".into(), "7".into())]);
        assert!(text.contains("lithoscan-report v1"));
        assert!(text.contains("WEIGHTED\t1.000000"));
        assert!(text.contains("seed=7"));
        let svg = render_bar_chart_svg("per-class F1", &[("WW".into(), 0.9)]);
        assert!(svg.starts_with("<svg"));
        let svg = render_line_plot_svg("sweep", &[(64.0, 0.8), (256.0, 0.95)], "side", "accuracy");
        assert!(svg.contains("path"));
    }
}
