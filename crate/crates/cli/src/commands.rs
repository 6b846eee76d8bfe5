use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use octpipe::augment::{augment_set, AugmentConfig, Sample};
use octpipe::backends::{ExternalBackend, OracleBackend, SegmentationBackend, ThresholdBackend};
use octpipe::eval::{
    make_folds, parse_csv, render_csv, render_report, run_experiment, synth_phantom, write_inventory, FluidSpec,
    Inventory, VolumeScore,
};
use octpipe::patch_engine::spill::{read_patch_batch, read_prediction_batch, write_patch_batch, BatchIndex};
use octpipe::patch_engine::{extract, labelize, stitch, DepthMode, PatchPrediction};
use octpipe::preprocess::{filter_slices, preprocess_intensity, resize_volume};
use octpipe::volume_io::{prob_path, read_header, read_volume, vendor_of, volume_id_from_path, write_volume};
use octpipe::{Error, LabelVolume, Vendor};

use crate::config::{BackendKind, RunConfig};
use crate::data::{image_path, labels_path, load_case, load_inventory, load_labels, vendor_lookup, INVENTORY_FILE};
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! emit {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

pub const RUN_CONFIG_FILE: &str = "run_config.txt";

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Pipeline(Error::Io { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// Creates `dir` and stores the resolved configuration beside its artifacts.
fn artifact_dir(cfg: &RunConfig, dir: PathBuf) -> CliResult<PathBuf> {
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    write_text(&dir.join(RUN_CONFIG_FILE), &cfg.render())?;
    Ok(dir)
}

fn output(cfg: &RunConfig, sub: &str) -> CliResult<PathBuf> {
    artifact_dir(cfg, cfg.output_dir.join(sub))
}

fn data_root(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.data_root().map_err(CliError::Usage)
}

fn mode_tag(mode: DepthMode) -> &'static str {
    match mode {
        DepthMode::D2 => "2d",
        DepthMode::D25 { .. } => "2.5d",
        DepthMode::D3 => "3d",
    }
}

pub fn info(cfg: &RunConfig, paths: &[PathBuf]) -> CliResult {
    let root = cfg.data_root().ok();
    let inv = root.as_deref().and_then(|r| load_inventory(r).ok());
    let vendor_name = |id: &str, dims| {
        inv.as_ref()
            .and_then(|i| vendor_lookup(i, id))
            .or_else(|| vendor_of(dims))
            .map_or("unknown", Vendor::name)
    };
    if !paths.is_empty() {
        for p in paths {
            let dims = read_header(p)?.dims3()?;
            emit!("{} {dims}", vendor_name(&volume_id_from_path(p), dims));
        }
        return Ok(());
    }
    let root = data_root(cfg)?;
    for (_, ids) in load_inventory(&root)? {
        for id in ids {
            let dims = read_header(&image_path(&root, &id))?.dims3()?;
            emit!("{} {dims} {id}", vendor_name(&id, dims));
        }
    }
    Ok(())
}

fn all_ids(inv: &Inventory) -> Vec<(Vendor, String)> {
    inv.iter().flat_map(|(&v, ids)| ids.iter().map(move |id| (v, id.clone()))).collect()
}

pub fn preprocess(cfg: &RunConfig, only: &[String]) -> CliResult {
    let root = data_root(cfg)?;
    let inv = load_inventory(&root)?;
    let mut work = all_ids(&inv);
    if !only.is_empty() {
        for id in only {
            if !work.iter().any(|(_, w)| w == id) {
                return Err(CliError::Pipeline(Error::Lookup(format!("{id} is not in the inventory"))));
            }
        }
        work.retain(|(_, id)| only.contains(id));
    }
    let out = output(cfg, "volumes")?;
    let target = cfg.experiment.target();
    let pre = &cfg.experiment.preprocess;
    work.par_iter().enumerate().try_for_each(|(i, (vendor, id))| -> CliResult {
        let (image, labels) = load_case(&root, id)?;
        let image = preprocess_intensity(&image, target, pre).map_err(|e| e.in_stage(id, "preprocess"))?;
        let labels = resize_volume(&labels, target).map_err(|e| e.in_stage(id, "preprocess"))?;
        write_volume(&image, &image_path(&out, id))?;
        write_volume(&labels, &labels_path(&out, id))?;
        let slices = filter_slices(&labels, pre.slice_policy_for(Some(*vendor)));
        let list: String = slices.iter().map(|z| format!("{z}\n")).collect();
        write_text(&out.join(format!("{id}_slices.txt")), &list)?;
        if cfg.augment.copies_per_sample > 0 {
            let aug = AugmentConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.augment.clone() };
            let sample = Sample::new(image.voxels.clone(), labels.voxels().clone())?;
            let copies = augment_set(&[sample], &aug).map_err(|e| e.in_stage(id, "augment"))?;
            for (c, s) in copies.into_iter().enumerate().skip(1) {
                let name = format!("{id}_aug{c}");
                write_volume(&image.with_voxels(s.image), &image_path(&out, &name))?;
                write_volume(&LabelVolume::new(name.clone(), s.labels)?, &labels_path(&out, &name))?;
            }
        }
        Ok(())
    })?;
    emit!("preprocessed {} volumes into {}", work.len(), out.display());
    Ok(())
}

pub fn folds(cfg: &RunConfig) -> CliResult {
    let root = data_root(cfg)?;
    let inv = load_inventory(&root)?;
    let plan = make_folds(&inv, cfg.folds, cfg.seed)?;
    let out = output(cfg, "folds")?;
    let path = out.join("folds.csv");
    let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
    plan.write_csv(f)?;
    for (i, f) in plan.folds.iter().enumerate() {
        let sizes = |m: &BTreeMap<Vendor, Vec<String>>| {
            m.iter().map(|(v, ids)| format!("{v} {}", ids.len())).collect::<Vec<_>>().join(", ")
        };
        emit!("fold {i}: test {} | train {}", sizes(&f.test), sizes(&f.train));
    }
    Ok(())
}

pub fn patchify(cfg: &RunConfig, volume: &Path) -> CliResult {
    let image = read_volume(volume)?;
    let id = image.id.clone();
    let d = image.dims();
    let mut e = cfg.experiment.clone();
    e.preprocess.target_2d = (d.width, d.height);
    e.preprocess.target_vol = (d.width, d.height);
    let grid = e.grid()?;
    let out = output(cfg, &format!("patches/{id}"))?;
    let slices: Vec<usize> = if grid.depth_mode == DepthMode::D3 { vec![0] } else { (0..d.depth).collect() };
    slices.par_iter().try_for_each(|&z| -> CliResult {
        let patches = extract(&image.voxels, &grid, z).map_err(|err| err.in_stage(&id, "extract"))?;
        let name = match grid.depth_mode {
            DepthMode::D3 => format!("{id}_3d"),
            _ => format!("{id}_z{z:04}"),
        };
        write_patch_batch(&out, &name, &id, d, &grid, &patches)?;
        Ok(())
    })?;
    emit!(
        "wrote {} batches of {} patches ({}) to {}",
        slices.len(),
        grid.len(),
        mode_tag(grid.depth_mode),
        out.display()
    );
    Ok(())
}

fn build_backend(cfg: &RunConfig, truth: impl FnOnce() -> CliResult<Vec<LabelVolume>>) -> CliResult<Box<dyn SegmentationBackend<f32>>> {
    Ok(match cfg.backend.kind {
        BackendKind::Oracle => Box::new(OracleBackend::from_volumes(truth()?)),
        BackendKind::Threshold => Box::new(ThresholdBackend::new(cfg.backend.bands.map(|b| b as f32))?),
        BackendKind::External => {
            let dir = cfg.backend.predictions.clone().ok_or_else(|| {
                CliError::Usage("backend.predictions is required for the external backend".into())
            })?;
            Box::new(ExternalBackend::<f32>::new(dir, cfg.backend.model.clone()))
        }
    })
}

fn collect_indices(inputs: &[PathBuf], ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().and_then(|x| x.to_str()) == Some(ext))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no .{ext} inputs given")));
    }
    Ok(out)
}

pub fn stitch_cmd(cfg: &RunConfig, inputs: &[PathBuf]) -> CliResult {
    let files = collect_indices(inputs, "idx")?;
    let mut header: Option<BatchIndex> = None;
    let mut preds: Vec<PatchPrediction<f32>> = Vec::new();
    let mut backend: Option<Box<dyn SegmentationBackend<f32>>> = None;
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| io(f, e))?;
        let idx = BatchIndex::parse(&text)?;
        if let Some(h) = &header {
            if (h.volume_id.as_str(), h.volume_dims, h.patch, h.depth_mode) != (idx.volume_id.as_str(), idx.volume_dims, idx.patch, idx.depth_mode)
                || h.overlap != idx.overlap
            {
                return Err(CliError::Usage(format!("{} belongs to a different volume or grid", f.display())));
            }
        }
        if idx.channels == 1 {
            if backend.is_none() {
                let id = idx.volume_id.clone();
                backend = Some(build_backend(cfg, || Ok(vec![load_labels(&data_root(cfg)?, &id)?]))?);
            }
            let b = backend.as_deref().expect("set above");
            let (idx, patches) = read_patch_batch(f)?;
            let batch: Vec<PatchPrediction<f32>> = patches
                .par_iter()
                .map(|p| {
                    let req = octpipe::backends::PredictRequest {
                        volume_id: &idx.volume_id,
                        volume_dims: idx.volume_dims,
                        depth_mode: idx.depth_mode,
                        patch: p,
                    };
                    b.predict(&req).map_err(|e| e.in_stage(&idx.volume_id, "predict"))
                })
                .collect::<octpipe::Result<_>>()?;
            preds.extend(batch);
        } else {
            preds.extend(read_prediction_batch(f)?.1);
        }
        header.get_or_insert(idx);
    }
    let h = header.expect("at least one input");
    let grid = h.grid()?;
    let id = h.volume_id.clone();
    let mut field = stitch(&preds, &grid, h.volume_dims).map_err(|e| e.in_stage(&id, "stitch"))?;
    field.id = id.clone();
    let out = output(cfg, "predictions")?;
    write_volume(&field, &prob_path(&out, &id))?;
    let mut labels = labelize(&field);
    labels.id = id.clone();
    write_volume(&labels, &out.join(format!("{id}_pred.mhd")))?;
    emit!("stitched {} predictions for {id} into {}", preds.len(), out.display());
    Ok(())
}

fn report_stem(cfg: &RunConfig) -> String {
    format!("dice_{}_{}_{}", mode_tag(cfg.experiment.depth_mode), cfg.model_tag(), cfg.variant())
}

fn volume_rows(scores: &[(usize, VolumeScore)]) -> String {
    let mut s = String::from("fold,volume_id,vendor,fluid,tp,fp,fn,tn,dice\n");
    for (fold, v) in scores {
        for (k, fluid) in octpipe::FluidClass::FLUIDS.into_iter().enumerate() {
            let c = v.counts[k];
            s.push_str(&format!(
                "{fold},{},{},{fluid},{},{},{},{},{}\n",
                v.volume_id,
                v.vendor,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                v.dice()[k]
            ));
        }
    }
    s
}

pub fn evaluate(cfg: &RunConfig, only_fold: Option<usize>) -> CliResult {
    let root = data_root(cfg)?;
    let inv = load_inventory(&root)?;
    let plan = make_folds(&inv, cfg.folds, cfg.seed)?;
    let folds: Vec<usize> = match only_fold {
        Some(f) if f >= plan.folds.len() => {
            return Err(CliError::Usage(format!("fold {f} out of range for k = {}", plan.folds.len())))
        }
        Some(f) => vec![f],
        None => (0..plan.folds.len()).collect(),
    };
    let mut records = Vec::new();
    let mut scores = Vec::new();
    for i in folds {
        let test: Vec<(Vendor, String)> = plan.folds[i].test_ids().map(|(v, id)| (v, id.to_string())).collect();
        let backend = build_backend(cfg, || {
            test.par_iter()
                .map(|(_, id)| load_labels(&root, id).map_err(|e| CliError::Pipeline(e.in_stage(id, "load"))))
                .collect()
        })?;
        let res = run_experiment(&cfg.experiment, backend.as_ref(), &test, |id| load_case(&root, id), i)?;
        records.extend(res.records);
        scores.extend(res.scores.into_iter().map(|s| (i, s)));
    }
    let out = output(cfg, "reports")?;
    let stem = report_stem(cfg);
    let rendered = render_report(&records)?;
    write_text(&out.join(format!("{stem}.csv")), &rendered.csv)?;
    write_text(&out.join(format!("{stem}.md")), &rendered.markdown)?;
    write_text(&out.join(format!("{stem}_volumes.csv")), &volume_rows(&scores))?;
    emit!("{}", rendered.markdown.trim_end());
    Ok(())
}

pub fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> CliResult {
    let files: Vec<PathBuf> = collect_indices(inputs, "csv")?
        .into_iter()
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            !name.ends_with("_volumes.csv") && name != "report.csv"
        })
        .collect();
    let mut records = Vec::new();
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| io(f, e))?;
        let rows = parse_csv(&text).map_err(|e| Error::Format(format!("{}: {e}", f.display())))?;
        records.extend(rows);
    }
    let rendered = render_report(&records)?;
    let out = output(cfg, "reports")?;
    write_text(&out.join("report.md"), &rendered.markdown)?;
    write_text(&out.join("report.csv"), &render_csv(&records)?)?;
    emit!("{}", rendered.markdown.trim_end());
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> CliResult {
    let root = data_root(cfg)?;
    let root = artifact_dir(cfg, root)?;
    let dims = cfg.synth.dims;
    let mut inv = Inventory::new();
    let mut work = Vec::new();
    for (vendor, &n) in Vendor::ALL.into_iter().zip(&cfg.synth.per_vendor) {
        for i in 0..n {
            let id = format!("{}_{i:03}", vendor.name().to_ascii_lowercase());
            inv.entry(vendor).or_default().push(id.clone());
            work.push(id);
        }
    }
    work.par_iter().enumerate().try_for_each(|(i, id)| -> CliResult {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let spec = FluidSpec::random(seed, dims, cfg.synth.blobs_per_class)?;
        let (image, labels) = synth_phantom(seed, dims, &spec, id)?;
        write_volume(&image, &image_path(&root, id))?;
        write_volume(&labels, &labels_path(&root, id))?;
        Ok(())
    })?;
    let path = root.join(INVENTORY_FILE);
    let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
    write_inventory(&inv, f)?;
    emit!("wrote {} phantom volumes ({dims}) to {}", work.len(), root.display());
    Ok(())
}
