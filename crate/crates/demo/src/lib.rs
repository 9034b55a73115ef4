//! Browser demo for the patch-classification pipeline.
//!
//! Three interactive operations, each deterministic in the seed so the
//! page can re-derive the same image across calls without holding state:
//!
//! 1. render a synthetic stone image (class, view, seed),
//! 2. overlay the extracted patch grid with accept/reject status,
//! 3. compute the 40-component descriptor of one grid patch.
//!
//! Build with `wasm-pack build crates/demo --target web` (or
//! `cargo build -p lithoscan-demo --target wasm32-unknown-unknown` plus
//! `wasm-bindgen`); `crates/demo/www/index.html` is the page.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use lithoscan::dataset::{ClassLabel, PatchRecord, SourceImage, ViewKind};
use lithoscan::features::{feature_vector, LbpParams, BINS};
use lithoscan::patching::{detect_instrument, grid_anchors, non_stone_fraction, GridParams};
use lithoscan::synthcorpus::{generate_image, standard_recipes, CorpusSpec};

fn parse_class(token: &str) -> Result<ClassLabel, lithoscan::Error> {
    token.parse()
}

fn parse_view(token: &str) -> Result<ViewKind, lithoscan::Error> {
    token.parse()
}

fn source(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
) -> Result<SourceImage, lithoscan::Error> {
    let class = parse_class(class)?;
    let view = parse_view(view)?;
    let spec = CorpusSpec {
        image_size: size,
        seed: seed as u64,
        with_instrument,
    };
    let recipe = standard_recipes(1)
        .into_iter()
        .find(|r| r.class == class)
        .expect("all four classes have a recipe");
    Ok(generate_image(&recipe, &spec, view, 0, with_instrument))
}

/// RGBA byte buffer of a synthetic stone image (row-major, 4 bytes per
/// pixel), ready for an ImageData canvas upload.
pub fn stone_rgba(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
) -> Result<Vec<u8>, lithoscan::Error> {
    let src = source(class, view, seed, size, with_instrument)?;
    let mut rgba = Vec::with_capacity((size as usize) * (size as usize) * 4);
    for y in 0..size {
        for x in 0..size {
            let [r, g, b] = src.image.get(x, y);
            rgba.extend_from_slice(&[r, g, b, 255]);
        }
    }
    Ok(rgba)
}

#[derive(Serialize)]
struct GridCell {
    x: u32,
    y: u32,
    accepted: bool,
    non_stone_fraction: f64,
    instrument_fraction: f64,
}

#[derive(Serialize)]
struct GridReport {
    patch_side: u32,
    stride: u32,
    anchors_x: Vec<u32>,
    anchors_y: Vec<u32>,
    accepted: usize,
    cells: Vec<GridCell>,
}

/// Patch grid of a synthetic image: every candidate cell with its
/// rejection statistics, JSON-encoded.
#[allow(clippy::too_many_arguments)]
pub fn patch_grid_report(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
    patch_side: u32,
    max_overlap: u32,
    max_non_stone_fraction: f64,
) -> Result<String, lithoscan::Error> {
    let src = source(class, view, seed, size, with_instrument)?;
    let params = GridParams {
        patch_side,
        max_overlap,
        max_non_stone_fraction,
        seed: seed as u64,
    };
    params.validate()?;
    let (anchors_x, anchors_y) = grid_anchors(&src.mask, &params).unwrap_or_default();
    let mut cells = Vec::new();
    let mut accepted = 0;
    for &y in &anchors_y {
        for &x in &anchors_x {
            let non_stone = non_stone_fraction(&src.mask, (x, y), patch_side);
            let patch = cut(&src, (x, y), patch_side);
            let instrument = detect_instrument(&patch.patch);
            let ok = non_stone <= max_non_stone_fraction && instrument <= max_non_stone_fraction;
            if ok {
                accepted += 1;
            }
            cells.push(GridCell {
                x,
                y,
                accepted: ok,
                non_stone_fraction: non_stone,
                instrument_fraction: instrument,
            });
        }
    }
    let report = GridReport {
        patch_side,
        stride: params.stride(),
        anchors_x,
        anchors_y,
        accepted,
        cells,
    };
    Ok(serde_json::to_string(&report).expect("grid report serializes"))
}

fn cut(src: &SourceImage, origin: (u32, u32), side: u32) -> PatchRecord {
    use lithoscan::raster::RgbImage;
    let patch = RgbImage::from_fn(side, side, |dx, dy| {
        let x = origin.0 as u64 + dx as u64;
        let y = origin.1 as u64 + dy as u64;
        if x < src.image.width() as u64 && y < src.image.height() as u64 {
            src.image.get(x as u32, y as u32)
        } else {
            [0, 0, 0]
        }
    });
    PatchRecord {
        patch,
        origin,
        class: src.class,
        view: src.view,
        stone_id: src.stone_id.clone(),
        synthetic: false,
    }
}

#[derive(Serialize)]
struct FeatureReport {
    class: String,
    view: String,
    origin: (u32, u32),
    eh: Vec<f64>,
    es: Vec<f64>,
    ev: Vec<f64>,
    lbp: Vec<f64>,
}

/// The 40-component descriptor of the grid patch anchored at
/// `(origin_x, origin_y)`, split into its four named blocks.
#[allow(clippy::too_many_arguments)]
pub fn patch_feature_report(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
    patch_side: u32,
    origin_x: u32,
    origin_y: u32,
) -> Result<String, lithoscan::Error> {
    let src = source(class, view, seed, size, with_instrument)?;
    let rec = cut(&src, (origin_x, origin_y), patch_side);
    let v = feature_vector(&rec, &LbpParams::default())?;
    let block = |i: usize| v.components[i * BINS..(i + 1) * BINS].to_vec();
    let report = FeatureReport {
        class: v.class.to_string(),
        view: view.to_uppercase(),
        origin: rec.origin,
        eh: block(0),
        es: block(1),
        ev: block(2),
        lbp: block(3),
    };
    Ok(serde_json::to_string(&report).expect("feature report serializes"))
}

fn to_js<T>(r: Result<T, lithoscan::Error>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Canvas-ready RGBA pixels of a synthetic stone image.
#[wasm_bindgen]
pub fn render_stone(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
) -> Result<Vec<u8>, JsValue> {
    to_js(stone_rgba(class, view, seed, size, with_instrument))
}

/// JSON grid report for the same image (see [`patch_grid_report`]).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn extract_grid(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
    patch_side: u32,
    max_overlap: u32,
    max_non_stone_fraction: f64,
) -> Result<String, JsValue> {
    to_js(patch_grid_report(
        class,
        view,
        seed,
        size,
        with_instrument,
        patch_side,
        max_overlap,
        max_non_stone_fraction,
    ))
}

/// JSON feature histograms of one grid patch.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn compute_features(
    class: &str,
    view: &str,
    seed: u32,
    size: u32,
    with_instrument: bool,
    patch_side: u32,
    origin_x: u32,
    origin_y: u32,
) -> Result<String, JsValue> {
    to_js(patch_feature_report(
        class,
        view,
        seed,
        size,
        with_instrument,
        patch_side,
        origin_x,
        origin_y,
    ))
}
