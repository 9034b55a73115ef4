//! Implementations of the pipeline subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use lithoscan::dataset::{
    load_image_pair, load_patches, save_patches, CorpusManifest, SourceImage, ViewKind,
};
use lithoscan::evaluation::{
    cross_validate, feature_matrix, pca_project, render_ablation_table, render_bar_chart_svg,
    render_embedding, render_line_plot_svg, render_report, run_ablation, stratified_kfold,
    AblationAxes, GroupingMode,
};
use lithoscan::features::{
    feature_vector, load_features, pair_mixed, save_features, select_features, FeatureCombo,
    FeatureVector, FeatureView, LbpParams,
};
use lithoscan::learners::{EnsembleKind, EnsembleParams, Preset};
use lithoscan::patching::{
    balance as balance_records, extract_patch_grid, BalanceMode, GridParams,
};
use lithoscan::synthcorpus::{generate_corpus, standard_recipes, CorpusSpec};

use crate::meta::write_sidecar;
use crate::{
    AblateArgs, BalanceArgs, EmbedArgs, EvaluateArgs, ExtractArgs, FeaturizeArgs, LearnerArgs,
    SynthArgs, TrainArgs,
};

fn default_out(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| crate::out_root().join(name))
}

/// Smallest patch side the feature extractor accepts (LBP window floor).
const FEATURE_MIN_SIDE: u32 = 5;

fn load_manifest_warned(path: &Path) -> Result<CorpusManifest> {
    let manifest =
        CorpusManifest::load(path).with_context(|| format!("loading {}", path.display()))?;
    if manifest.is_empty() {
        eprintln!("warning: manifest {} contains no entries", path.display());
    }
    Ok(manifest)
}

fn load_sources_parallel(manifest: &CorpusManifest, base: &Path) -> Result<Vec<SourceImage>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let (image, mask) = load_image_pair(e, base)?;
            Ok(SourceImage {
                image,
                mask,
                class: e.class,
                view: e.view,
                stone_id: e.stone_id.clone(),
            })
        })
        .collect::<lithoscan::Result<Vec<_>>>()
        .map_err(anyhow::Error::from)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.images == 0 {
        bail!("--images must be >= 1");
    }
    let out = default_out(args.out, "corpus");
    let spec = CorpusSpec {
        image_size: args.image_size,
        seed: args.seed,
        with_instrument: args.with_instrument,
    };
    let recipes = standard_recipes(args.images);
    let manifest = generate_corpus(&recipes, &spec, &out)?;
    let manifest_path = out.join("manifest.tsv");
    write_sidecar(
        &manifest_path,
        "synth",
        args.seed,
        json!({
            "images_per_class_per_view": args.images,
            "image_size": args.image_size,
            "with_instrument": args.with_instrument,
        }),
        &[],
    )?;
    println!(
        "wrote {} entries to {}",
        manifest.len(),
        manifest_path.display()
    );
    Ok(())
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    if args.patch_side < FEATURE_MIN_SIDE {
        bail!(
            "--patch-side {} below feature minimum {FEATURE_MIN_SIDE}",
            args.patch_side
        );
    }
    let grid = GridParams {
        patch_side: args.patch_side,
        max_overlap: args.max_overlap,
        max_non_stone_fraction: args.max_nonstone,
        seed: args.seed,
    };
    grid.validate()?;
    let manifest = load_manifest_warned(&args.manifest)?;
    let base = args
        .manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let sources = load_sources_parallel(&manifest, &base)?;
    let per_source = sources
        .par_iter()
        .map(|s| extract_patch_grid(s, &grid))
        .collect::<lithoscan::Result<Vec<_>>>()?;
    let records: Vec<_> = per_source.into_iter().flatten().collect();
    let out = default_out(args.out, "patches");
    let n = save_patches(&records, &out)?;
    write_sidecar(
        &out.join("index.tsv"),
        "extract",
        args.seed,
        json!({
            "manifest": args.manifest.display().to_string(),
            "patch_side": args.patch_side,
            "max_overlap": args.max_overlap,
            "max_non_stone_fraction": args.max_nonstone,
        }),
        std::slice::from_ref(&args.manifest),
    )?;
    println!("extracted {n} patches to {}", out.display());
    Ok(())
}

pub fn balance(args: BalanceArgs) -> Result<()> {
    let mode = match args.mode.to_ascii_lowercase().as_str() {
        "over" | "oversample" | "over-sample" => BalanceMode::OverSample,
        "under" | "undersample" | "under-sample" => BalanceMode::UnderSample,
        other => bail!("unknown balance mode `{other}` (expected `over` or `under`)"),
    };
    let grid = GridParams {
        patch_side: args.patch_side,
        max_overlap: args.max_overlap,
        max_non_stone_fraction: args.max_nonstone,
        seed: args.seed,
    };
    grid.validate()?;
    let records = load_patches(&args.patches)
        .with_context(|| format!("loading patches from {}", args.patches.display()))?;
    let sources = match (&args.manifest, mode) {
        (Some(path), BalanceMode::OverSample) => {
            let manifest = load_manifest_warned(path)?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            load_sources_parallel(&manifest, &base)?
        }
        (None, BalanceMode::OverSample) => {
            bail!("over-sampling draws new patches from the source images; pass --manifest")
        }
        (_, BalanceMode::UnderSample) => Vec::new(),
    };
    let balanced = balance_records(records, mode, &sources, &grid)?;
    let out = default_out(args.out, "balanced");
    let n = save_patches(&balanced, &out)?;
    let mut inputs = vec![args.patches.join("index.tsv")];
    if let Some(m) = &args.manifest {
        inputs.push(m.clone());
    }
    write_sidecar(
        &out.join("index.tsv"),
        "balance",
        args.seed,
        json!({
            "patches": args.patches.display().to_string(),
            "mode": args.mode,
            "patch_side": args.patch_side,
        }),
        &inputs,
    )?;
    println!("balanced to {n} patches in {}", out.display());
    Ok(())
}

pub fn featurize(args: FeaturizeArgs) -> Result<()> {
    let view: FeatureView = args.view.parse()?;
    let combo: FeatureCombo = args.combo.parse()?;
    let lbp = LbpParams {
        window_side: args.lbp_window,
    };
    lbp.validate()?;
    let records = load_patches(&args.patches)
        .with_context(|| format!("loading patches from {}", args.patches.display()))?;
    let have_surface = records.iter().any(|r| r.view == ViewKind::Surface);
    let have_section = records.iter().any(|r| r.view == ViewKind::Section);
    match view {
        FeatureView::Surface if !have_surface => bail!("no surface patches in input"),
        FeatureView::Section if !have_section => bail!("no section patches in input"),
        FeatureView::Mixed if !(have_surface && have_section) => {
            bail!("mixed view requires both surface and section patches in input")
        }
        _ => {}
    }
    let wanted = |v: ViewKind| match view {
        FeatureView::Surface => v == ViewKind::Surface,
        FeatureView::Section => v == ViewKind::Section,
        FeatureView::Mixed => true,
    };
    let vectors = records
        .par_iter()
        .filter(|r| wanted(r.view))
        .map(|r| feature_vector(r, &lbp))
        .collect::<lithoscan::Result<Vec<_>>>()?;
    let vectors: Vec<FeatureVector> = if view == FeatureView::Mixed {
        let (surface, section): (Vec<_>, Vec<_>) = vectors
            .into_iter()
            .partition(|v| v.view == FeatureView::Surface);
        pair_mixed(&surface, &section, args.seed)?
    } else {
        vectors
    };
    let vectors = vectors
        .iter()
        .map(|v| select_features(v, combo))
        .collect::<lithoscan::Result<Vec<_>>>()?;
    let out = default_out(
        args.out,
        &format!("features-{}.tsv", args.view.to_lowercase()),
    );
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_features(&vectors, combo, &lbp, &out)?;
    write_sidecar(
        &out,
        "featurize",
        args.seed,
        json!({
            "patches": args.patches.display().to_string(),
            "view": args.view,
            "combo": combo.to_string(),
            "lbp_window": args.lbp_window,
        }),
        &[args.patches.join("index.tsv")],
    )?;
    println!("wrote {} vectors to {}", vectors.len(), out.display());
    Ok(())
}

fn learner_params(args: &LearnerArgs) -> Result<EnsembleParams> {
    let kind: EnsembleKind = args.kind.parse()?;
    let preset: Preset = args.preset.parse()?;
    let mut params = EnsembleParams::preset(kind, preset, args.seed);
    if let Some(n) = args.n_estimators {
        params.n_estimators = n;
    }
    if let Some(d) = args.max_depth {
        params.tree.max_depth = d;
    }
    if let Some(lr) = args.learning_rate {
        params.learning_rate = lr;
    }
    params.validate()?;
    Ok(params)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let params = learner_params(&args.learner)?;
    let file = load_features(&args.features)
        .with_context(|| format!("loading features from {}", args.features.display()))?;
    if file.vectors.is_empty() {
        bail!("feature file {} holds no vectors", args.features.display());
    }
    let (x, y, classes, _) = feature_matrix(&file.vectors);
    let model = lithoscan::learners::train(&x, &y, &classes, &params)?;
    let out = default_out(args.out, "model.json");
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    model.save(&out)?;
    write_sidecar(
        &out,
        "train",
        args.learner.seed,
        json!({
            "features": args.features.display().to_string(),
            "kind": params.kind.to_string(),
            "preset": args.learner.preset,
            "n_estimators": params.n_estimators,
            "max_depth": params.tree.max_depth,
            "learning_rate": params.learning_rate,
        }),
        std::slice::from_ref(&args.features),
    )?;
    println!(
        "trained {} with {} trees on {} samples -> {}",
        params.kind,
        model.trees.len(),
        x.len(),
        out.display()
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let params = learner_params(&args.learner)?;
    let grouping: GroupingMode = args.grouping.parse()?;
    let file = load_features(&args.features)
        .with_context(|| format!("loading features from {}", args.features.display()))?;
    if file.vectors.is_empty() {
        bail!("feature file {} holds no vectors", args.features.display());
    }
    let (x, y, classes, stones) = feature_matrix(&file.vectors);
    let split = stratified_kfold(&y, &stones, args.k, grouping, args.learner.seed)?;
    let report = cross_validate(&x, &y, &classes, &params, &split)?;
    let out = default_out(args.out, "report");
    fs::create_dir_all(&out)?;
    let metadata = vec![
        ("command".to_string(), "evaluate".to_string()),
        ("features".to_string(), args.features.display().to_string()),
        ("kind".to_string(), params.kind.to_string()),
        ("preset".to_string(), args.learner.preset.clone()),
        ("k".to_string(), args.k.to_string()),
        ("grouping".to_string(), args.grouping.clone()),
        ("seed".to_string(), args.learner.seed.to_string()),
        ("combo".to_string(), file.combo.to_string()),
    ];
    let report_path = out.join("report.tsv");
    fs::write(&report_path, render_report(&report, &metadata))?;
    let bars: Vec<(String, f64)> = report
        .classes
        .iter()
        .zip(&report.per_class)
        .map(|(c, m)| (c.clone(), m.f1))
        .collect();
    fs::write(
        out.join("per_class_f1.svg"),
        render_bar_chart_svg("Per-class F1 (pooled folds)", &bars),
    )?;
    let mut summary = format!(
        "pooled weighted precision {:.4}, recall {:.4}, F1 {:.4}, accuracy {:.4} over {} samples\n",
        report.weighted_precision,
        report.weighted_recall,
        report.weighted_f1,
        report.accuracy,
        report.total
    );
    for (i, fold) in report.folds.iter().enumerate() {
        summary.push_str(&format!(
            "fold {i}: weighted F1 {:.4} ({} samples)\n",
            fold.weighted_f1, fold.total
        ));
    }
    fs::write(out.join("summary.txt"), &summary)?;
    write_sidecar(
        &report_path,
        "evaluate",
        args.learner.seed,
        json!({
            "features": args.features.display().to_string(),
            "kind": params.kind.to_string(),
            "preset": args.learner.preset,
            "k": args.k,
            "grouping": args.grouping,
        }),
        std::slice::from_ref(&args.features),
    )?;
    print!("{summary}");
    println!("report written to {}", report_path.display());
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let params = learner_params(&args.learner)?;
    let grouping: GroupingMode = args.grouping.parse()?;
    let combos = args
        .combos
        .split(',')
        .map(|c| c.trim().parse())
        .collect::<lithoscan::Result<Vec<FeatureCombo>>>()?;
    let patch_sides = args
        .patch_sides
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .with_context(|| format!("bad patch side `{s}`"))
        })
        .collect::<Result<Vec<u32>>>()?;
    if let Some(&small) = patch_sides.iter().find(|&&s| s < FEATURE_MIN_SIDE) {
        bail!("--patch-sides {small} below feature minimum {FEATURE_MIN_SIDE}");
    }
    let views = args
        .views
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<lithoscan::Result<Vec<FeatureView>>>()?;
    let axes = AblationAxes {
        combos,
        patch_sides,
        views,
    };
    let manifest = load_manifest_warned(&args.manifest)?;
    let base = args
        .manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let sources = load_sources_parallel(&manifest, &base)?;
    let grid = GridParams {
        patch_side: axes.patch_sides[0],
        max_overlap: args.max_overlap,
        max_non_stone_fraction: args.max_nonstone,
        seed: args.learner.seed,
    };
    let lbp = LbpParams {
        window_side: args.lbp_window,
    };
    lbp.validate()?;
    let cells = run_ablation(
        &sources,
        &axes,
        &grid,
        &lbp,
        &params,
        args.k,
        grouping,
        args.learner.seed,
    )?;
    let out = default_out(args.out, "ablation");
    fs::create_dir_all(&out)?;
    let metadata = vec![
        ("kind".to_string(), params.kind.to_string()),
        ("preset".to_string(), args.learner.preset.clone()),
        ("k".to_string(), args.k.to_string()),
        ("seed".to_string(), args.learner.seed.to_string()),
    ];
    let table_path = out.join("table.tsv");
    fs::write(&table_path, render_ablation_table(&cells, &metadata))?;
    // Accuracy-vs-patch-side curves, one per (combo, view), when the
    // sweep covers several sizes.
    if axes.patch_sides.len() > 1 {
        for &combo in &axes.combos {
            for &view in &axes.views {
                let mut points: Vec<(f64, f64)> = cells
                    .iter()
                    .filter(|c| c.combo == combo && c.view == view)
                    .map(|c| (c.patch_side as f64, c.report.accuracy))
                    .collect();
                points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let name = format!("accuracy_vs_side_{combo}_{view}.svg")
                    .replace('+', "-")
                    .to_lowercase();
                fs::write(
                    out.join(name),
                    render_line_plot_svg(
                        &format!("Accuracy vs patch side ({combo}, {view})"),
                        &points,
                        "patch side (px)",
                        "accuracy",
                    ),
                )?;
            }
        }
    }
    for cell in &cells {
        if cell.combo == FeatureCombo::ALL {
            let bars: Vec<(String, f64)> = cell
                .report
                .classes
                .iter()
                .zip(&cell.report.per_class)
                .map(|(c, m)| (c.clone(), m.f1))
                .collect();
            let name = format!(
                "per_class_f1_{}_{}.svg",
                cell.view.to_string().to_lowercase(),
                cell.patch_side
            );
            fs::write(
                out.join(name),
                render_bar_chart_svg(
                    &format!("Per-class F1 ({}, side {})", cell.view, cell.patch_side),
                    &bars,
                ),
            )?;
        }
    }
    write_sidecar(
        &table_path,
        "ablate",
        args.learner.seed,
        json!({
            "manifest": args.manifest.display().to_string(),
            "combos": args.combos,
            "patch_sides": args.patch_sides,
            "views": args.views,
            "kind": params.kind.to_string(),
            "preset": args.learner.preset,
            "k": args.k,
        }),
        std::slice::from_ref(&args.manifest),
    )?;
    println!("{} ablation cells -> {}", cells.len(), table_path.display());
    Ok(())
}

pub fn embed(args: EmbedArgs) -> Result<()> {
    let file = load_features(&args.features)
        .with_context(|| format!("loading features from {}", args.features.display()))?;
    if file.vectors.is_empty() {
        bail!("feature file {} holds no vectors", args.features.display());
    }
    let export = pca_project(&file.vectors, args.dim)?;
    let out = default_out(args.out, "embedding.tsv");
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, render_embedding(&export))?;
    write_sidecar(
        &out,
        "embed",
        0,
        json!({
            "features": args.features.display().to_string(),
            "dim": args.dim,
        }),
        std::slice::from_ref(&args.features),
    )?;
    let evr: Vec<String> = export
        .explained_variance
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect();
    println!(
        "embedded {} samples; explained variance ratios [{}] -> {}",
        export.coords.len(),
        evr.join(", "),
        out.display()
    );
    if export.rank_deficient {
        eprintln!(
            "warning: data rank below {}; zero-padded components",
            args.dim
        );
    }
    Ok(())
}
