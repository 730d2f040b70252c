use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pantcr_core::cloud::noise::derive_seed;
use pantcr_core::cloud::scene::generate_scene;
use pantcr_core::cloud::{
    apply_scattering, generate_cloud_field, synth_dataset, CloudSpec, Manifest, Morphology,
    SourceScene, MANIFEST_FILE,
};
use pantcr_core::freq::swap_amplitude;
use pantcr_core::metrics::{psnr, MetricReport};
use pantcr_core::raster::{bicubic_resample, ScaleFactor};
use pantcr_core::{Error, MultiBandRaster, Result};
use pantcr_net::budget::count_params_flops;
use pantcr_net::checkpoint::load_checkpoint;
use pantcr_net::gradcheck::{gradcheck, BLOCKS};
use pantcr_net::train::train as train_model;
use pantcr_net::{AblationRow, PanTcr};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::visuals::{display_bands, error_image, mse_map, side_by_side};
use crate::{write_json, Command};

pub const DEFAULT_MSE_MAX: f64 = 0.01;
pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TRAIN_SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.json";

pub fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Value> {
    match cmd {
        Command::Synth { .. } => synth(cfg, out),
        Command::Train { data } => train(cfg, data, out),
        Command::Eval {
            data,
            checkpoint,
            split,
            save_visuals,
            mse_max,
        } => {
            let visuals = save_visuals.then_some(*mse_max);
            eval(data, checkpoint.as_deref(), split, visuals, out)
        }
        Command::Ablate { data, rows } => ablate(cfg, data, rows.as_deref(), out),
        Command::FreqDemo { data, split, index } => {
            freq_demo(cfg, data.as_deref(), split, *index, out)
        }
        Command::Gradcheck { blocks } => run_gradcheck(cfg, blocks.as_deref(), out),
        Command::Budget { size } => budget(cfg, *size, out),
    }
}

pub fn source_scenes(cfg: &RunConfig) -> Result<Vec<SourceScene>> {
    let side = cfg.synth.scene_size;
    (0..cfg.scenes)
        .map(|i| {
            let (hrmsi, pan) =
                generate_scene(derive_seed(cfg.seed, &format!("scene{i}")), side, side)?;
            Ok(SourceScene {
                name: format!("scene{i:02}"),
                hrmsi,
                pan,
            })
        })
        .collect()
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<Value> {
    if cfg.scenes == 0 {
        return Err(Error::Argument("need at least one source scene".into()));
    }
    let manifest = synth_dataset(&source_scenes(cfg)?, &cfg.counts, &cfg.synth, out)?;
    let counts: serde_json::Map<String, Value> = manifest
        .splits
        .iter()
        .map(|(k, v)| (k.clone(), json!(v.len())))
        .collect();
    Ok(json!({ "manifest": out.join(MANIFEST_FILE), "r": manifest.r, "counts": counts }))
}

fn load_manifest(data: &Path, r: usize) -> Result<Manifest> {
    let m = Manifest::load(data.join(MANIFEST_FILE))?;
    if m.r != r {
        return Err(Error::Validation(format!(
            "dataset ratio {} differs from net.scale_ratio {r}",
            m.r
        )));
    }
    Ok(m)
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Value> {
    let manifest = load_manifest(data, cfg.net.scale_ratio)?;
    let (model, summary) = train_model(&manifest, data, &cfg.net, &cfg.train, out)?;
    let value = json!({ "params": model.param_count(), "summary": summary });
    write_json(&out.join(TRAIN_SUMMARY_FILE), &value)?;
    Ok(value)
}

/// Directory name for an ablation row, e.g. `w/o-IFC` -> `w-o-ifc`.
pub fn row_slug(row: AblationRow) -> String {
    let mut slug = String::new();
    for ch in row.name().chars() {
        if ch.is_ascii_alphanumeric() {
            slug.push(ch.to_ascii_lowercase());
        } else if !slug.ends_with('-') {
            slug.push('-');
        }
    }
    slug.trim_matches('-').to_string()
}

pub fn parse_rows(rows: Option<&str>) -> Result<Vec<AblationRow>> {
    let rows: Vec<AblationRow> = match rows {
        None => AblationRow::ALL
            .into_iter()
            .filter(|r| *r != AblationRow::UnifiedToTwoStage)
            .collect(),
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?,
    };
    if rows.is_empty() {
        return Err(Error::Argument("no ablation rows selected".into()));
    }
    Ok(rows)
}

fn ablate(cfg: &RunConfig, data: &Path, rows: Option<&str>, out: &Path) -> Result<Value> {
    let rows = parse_rows(rows)?;
    // Resolve every row before spending time on training.
    let nets = rows
        .iter()
        .map(|&r| cfg.net.clone().with_ablation(r))
        .collect::<Result<Vec<_>>>()?;
    let manifest = load_manifest(data, cfg.net.scale_ratio)?;
    let mut results = Vec::new();
    for (row, net) in rows.iter().zip(nets) {
        let dir = row_dir(out, *row);
        let (model, summary) = train_model(&manifest, data, &net, &cfg.train, &dir)?;
        let value = json!({ "params": model.param_count(), "summary": summary });
        write_json(&dir.join(TRAIN_SUMMARY_FILE), &value)?;
        results.push(json!({
            "row": row.name(),
            "dir": dir,
            "params": model.param_count(),
            "best_val_psnr": summary.best_val_psnr,
        }));
    }
    let value = json!({ "rows": results });
    write_json(&out.join(ABLATION_FILE), &value)?;
    Ok(value)
}

#[derive(Debug, Serialize)]
struct ItemReport {
    id: String,
    #[serde(flatten)]
    metrics: MetricReport,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    split: String,
    model: String,
    items: Vec<ItemReport>,
    mean: MetricReport,
}

fn mean_report(items: &[ItemReport]) -> MetricReport {
    let avg = |f: fn(&MetricReport) -> Option<f64>| {
        let vals: Vec<f64> = items.iter().filter_map(|i| f(&i.metrics)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    MetricReport {
        psnr_db: avg(|m| m.psnr_db),
        ssim: avg(|m| m.ssim),
        sam_deg: avg(|m| m.sam_deg),
        ergas: avg(|m| m.ergas),
        d_lambda: avg(|m| m.d_lambda),
        d_s: avg(|m| m.d_s),
        hqnr: avg(|m| m.hqnr),
    }
}

fn csv_row(id: &str, m: &MetricReport) -> String {
    let mut row = id.to_string();
    for v in [
        m.psnr_db, m.ssim, m.sam_deg, m.ergas, m.d_lambda, m.d_s, m.hqnr,
    ] {
        match v {
            Some(v) => write!(row, ",{v:.6}").unwrap(),
            None => row.push(','),
        }
    }
    row
}

enum Method {
    Bicubic,
    Net(Box<PanTcr>),
}

impl Method {
    fn fuse(
        &self,
        lrmsi: &MultiBandRaster,
        pan: &MultiBandRaster,
        r: usize,
    ) -> Result<MultiBandRaster> {
        match self {
            Method::Bicubic => {
                Ok(bicubic_resample(lrmsi, ScaleFactor::up(r as u32)?)?.with_gsd(pan.gsd_m()))
            }
            Method::Net(m) => m.infer(lrmsi, pan),
        }
    }
}

fn eval(
    data: &Path,
    checkpoint: Option<&Path>,
    split: &str,
    visuals: Option<f64>,
    out: &Path,
) -> Result<Value> {
    let manifest = Manifest::load(data.join(MANIFEST_FILE))?;
    let r = manifest.r;
    let (method, label) = match checkpoint {
        None => (Method::Bicubic, "bicubic".to_string()),
        Some(dir) => {
            let model = load_checkpoint(dir)?;
            if model.cfg.scale_ratio != r {
                return Err(Error::Validation(format!(
                    "checkpoint ratio {} differs from dataset ratio {r}",
                    model.cfg.scale_ratio
                )));
            }
            // Path-free label so reports from different run directories compare equal.
            let label = format!("pantcr ({} params)", model.param_count());
            (Method::Net(Box::new(model)), label)
        }
    };
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(Error::Validation(format!(
            "split `{split}` is empty or unknown"
        )));
    }
    let vis_dir = out.join("visuals");
    if visuals.is_some() {
        fs::create_dir_all(&vis_dir)?;
    }
    let mut items = Vec::new();
    for e in entries {
        let s = manifest.load_sample(data, e)?;
        let pred = method.fuse(&s.cloudy_lrmsi, &s.cloudy_pan, r)?;
        let mut metrics = MetricReport::reduced(&pred, &s.clean_hrmsi, r)?;
        if split == "test_full" {
            let q = MetricReport::full(&pred, &s.cloudy_lrmsi, &s.cloudy_pan, r)?;
            metrics = MetricReport {
                d_lambda: q.d_lambda,
                d_s: q.d_s,
                hqnr: q.hqnr,
                ..metrics
            };
        }
        if let Some(vmax) = visuals {
            let map = mse_map(&pred, &s.clean_hrmsi)?;
            error_image(&map, vmax, pred.gsd_m())?
                .save_png(vis_dir.join(format!("{}_mse.png", e.id)), &[0])?;
            pred.save_png(
                vis_dir.join(format!("{}_pred.png", e.id)),
                &display_bands(&pred),
            )?;
        }
        items.push(ItemReport {
            id: e.id.clone(),
            metrics,
        });
    }
    let mean = mean_report(&items);
    let mut csv = String::from("id,psnr_db,ssim,sam_deg,ergas,d_lambda,d_s,hqnr\n");
    for i in &items {
        csv.push_str(&csv_row(&i.id, &i.metrics));
        csv.push('\n');
    }
    csv.push_str(&csv_row("mean", &mean));
    csv.push('\n');
    fs::write(out.join(SUMMARY_CSV), csv)?;
    let report = EvalReport {
        split: split.to_string(),
        model: label,
        items,
        mean,
    };
    write_json(&out.join(METRICS_FILE), &report)?;
    Ok(json!({
        "split": report.split,
        "model": report.model,
        "checkpoint": checkpoint,
        "n": report.items.len(),
        "mean": report.mean,
    }))
}

/// A clean HR-MSI and the same scene under cloud.
fn demo_pair(
    cfg: &RunConfig,
    data: Option<&Path>,
    split: &str,
    index: usize,
) -> Result<(MultiBandRaster, MultiBandRaster)> {
    let (clean, cloud) = match data {
        Some(dir) => {
            let m = Manifest::load(dir.join(MANIFEST_FILE))?;
            let entries = m.split(split);
            let e = entries.get(index).ok_or_else(|| {
                Error::Argument(format!(
                    "split `{split}` has {} entries, index {index} requested",
                    entries.len()
                ))
            })?;
            (m.load_sample(dir, e)?.clean_hrmsi, e.cloud)
        }
        None => {
            let side = cfg.synth.reduced_size;
            let (hr, _) = generate_scene(derive_seed(cfg.seed, "freq-demo"), side, side)?;
            let spec = CloudSpec {
                seed: derive_seed(cfg.seed, "freq-demo-cloud"),
                morphology: Morphology::ALL[index % Morphology::ALL.len()],
                thickness: 0.5 * (cfg.synth.thickness_min + cfg.synth.thickness_max),
            };
            (hr, spec)
        }
    };
    let field = generate_cloud_field(
        cloud.seed,
        cloud.morphology,
        cloud.thickness,
        (clean.height(), clean.width()),
    )?;
    let cloudy = apply_scattering(&clean, &field)?;
    Ok((clean, cloudy))
}

fn freq_demo(
    cfg: &RunConfig,
    data: Option<&Path>,
    split: &str,
    index: usize,
    out: &Path,
) -> Result<Value> {
    let (clean, cloudy) = demo_pair(cfg, data, split, index)?;
    // Cloudy amplitude on clean phase, and clean amplitude on cloudy phase.
    let amp_swapped = swap_amplitude(&cloudy, &clean)?;
    let pha_swapped = swap_amplitude(&clean, &cloudy)?;
    let bands = display_bands(&clean);
    let amp_png = out.join("amplitude_swap.png");
    let pha_png = out.join("phase_swap.png");
    side_by_side(&[&clean, &cloudy, &amp_swapped])?.save_png(&amp_png, &bands)?;
    side_by_side(&[&clean, &cloudy, &pha_swapped])?.save_png(&pha_png, &bands)?;
    let value = json!({
        "panels": ["clean", "cloudy", "swapped"],
        "amplitude_swap": {
            "png": amp_png,
            "psnr_vs_clean_db": psnr(&amp_swapped, &clean)?,
            "psnr_vs_cloudy_db": psnr(&amp_swapped, &cloudy)?,
        },
        "phase_swap": {
            "png": pha_png,
            "psnr_vs_clean_db": psnr(&pha_swapped, &clean)?,
            "psnr_vs_cloudy_db": psnr(&pha_swapped, &cloudy)?,
        },
        "cloudy_psnr_db": psnr(&cloudy, &clean)?,
    });
    write_json(&out.join("freq_demo.json"), &value)?;
    Ok(value)
}

fn run_gradcheck(cfg: &RunConfig, blocks: Option<&str>, out: &Path) -> Result<Value> {
    let blocks: Vec<String> = match blocks {
        None => BLOCKS.iter().map(|b| b.to_string()).collect(),
        Some(list) => list
            .split(',')
            .map(|b| b.trim().to_string())
            .filter(|b| !b.is_empty())
            .collect(),
    };
    if let Some(bad) = blocks.iter().find(|b| !BLOCKS.contains(&b.as_str())) {
        return Err(Error::Argument(format!(
            "unknown block `{bad}`; expected one of {}",
            BLOCKS.join(", ")
        )));
    }
    let reports = blocks
        .iter()
        .map(|b| gradcheck(b, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.block.as_str())
        .collect();
    let value = json!({
        "passed": failed.is_empty(),
        "blocks": reports.iter().map(|r| json!({
            "block": r.block, "max_rel_err": r.max_rel_err, "passed": r.passed,
        })).collect::<Vec<_>>(),
    });
    write_json(&out.join("gradcheck.json"), &reports)?;
    if !failed.is_empty() {
        return Err(Error::Numeric(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )));
    }
    Ok(value)
}

fn budget(cfg: &RunConfig, size: usize, out: &Path) -> Result<Value> {
    if size == 0 || size % cfg.net.scale_ratio != 0 {
        return Err(Error::Argument(format!(
            "size {size} is not a positive multiple of {}",
            cfg.net.scale_ratio
        )));
    }
    let b = count_params_flops(&cfg.net, size);
    write_json(&out.join("budget.json"), &b)?;
    Ok(json!({
        "input": format!("{size}x{size}"),
        "Param (M)": b.params as f64 / 1e6,
        "FLOPs (G)": b.flops / 1e9,
        "params": b.params,
        "flops": b.flops,
    }))
}

/// Paths `ablate` writes for one row.
pub fn row_dir(out: &Path, row: AblationRow) -> PathBuf {
    out.join(row_slug(row))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_distinct_and_path_safe() {
        let slugs: std::collections::BTreeSet<String> =
            AblationRow::ALL.iter().map(|&r| row_slug(r)).collect();
        assert_eq!(slugs.len(), AblationRow::ALL.len());
        assert!(slugs
            .iter()
            .all(|s| s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')));
        assert_eq!(row_slug(AblationRow::WithoutIfc), "w-o-ifc");
    }

    #[test]
    fn default_rows_skip_the_two_stage_stub() {
        let rows = parse_rows(None).unwrap();
        assert_eq!(rows.len(), AblationRow::ALL.len() - 1);
        assert!(!rows.contains(&AblationRow::UnifiedToTwoStage));
        assert!(parse_rows(Some("w/o-IFC,bogus"))
            .unwrap_err()
            .is_validation());
    }
}
