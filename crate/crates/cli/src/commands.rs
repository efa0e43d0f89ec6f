use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};

use radarfuse::config::Config;
use radarfuse::dataset::{
    crop_range, format_detections, list_frames, load_calib, load_labels, load_pointcloud,
    parse_detections, write_calib, write_labels, write_pointcloud, Box3D, FramePaths,
};
use radarfuse::eval::{
    ap_table_csv, blur_curves, blur_curves_csv, class_ratio_table, classify_blur_points,
    evaluate_frames, instance_ratios, pr_curve_csv, ratio_table_csv, tau_grid, BlurPointClass,
    EvalFrame, Mask, Regime, Region2D,
};
use radarfuse::nn::pyramid::parse_netpbm;
use radarfuse::nn::FeaturePyramid;
use radarfuse::pipeline::{load_frames, model_range, Frame, Model};
use radarfuse::semantic::{assign_foreground_labels, scores_csv};
use radarfuse::synth::generate_scene_with;
use radarfuse::{Error, Result};

use crate::manifest::{FrameRecord, Manifest};

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ingest(cfg: &Config, out: &Path) -> Result<()> {
    let root = cfg
        .data
        .root
        .as_ref()
        .ok_or_else(|| Error::Config("ingest needs data.root".into()))?;
    let ids = if cfg.data.frames.is_empty() {
        list_frames(root)?
    } else {
        cfg.data.frames.clone()
    };
    let classes = cfg.class_list();
    let range = model_range(cfg);
    let mut csv = String::from("frame,points,in_range,labels,with_2d,rejected,pyramid_levels\n");
    for id in &ids {
        let paths = FramePaths::new(root, id);
        let cloud = load_pointcloud(&paths.points, cfg.data.schema.schema())?;
        load_calib(&paths.calib, Some(cfg.image.image_size))?;
        let labels = if paths.labels.exists() {
            load_labels(&paths.labels, &classes)?
        } else {
            Default::default()
        };
        let levels = if paths.pyramid.exists() {
            FeaturePyramid::load(&paths.pyramid)?.n_levels()
        } else {
            warn!(
                "frame {id}: no image pyramid at {}",
                paths.pyramid.display()
            );
            0
        };
        let _ = writeln!(
            csv,
            "{id},{},{},{},{},{},{levels}",
            cloud.len(),
            crop_range(&cloud, &range).len(),
            labels.labels.len(),
            labels.labels.iter().filter(|l| l.region.is_some()).count(),
            labels.rejected.join(";"),
        );
    }
    write(&out.join("ingest.csv"), &csv)?;
    println!("ingested {} frames from {}", ids.len(), root.display());
    Ok(())
}

pub fn forward(cfg: &Config, out: &Path) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let frames = load_frames(cfg)?;
    let classes = cfg.class_list();
    let mut manifest = Manifest::new("forward", cfg);
    for frame in &frames {
        let res = model.forward(frame)?;
        info!(
            "frame {}: bev {}x{}x{}",
            frame.id, res.bev.h, res.bev.w, res.bev.c
        );
        manifest.write(
            out,
            &format!("bev/{}.pyr", frame.id),
            &res.bev.to_pyramid()?.to_bytes(),
        )?;
        if let Some(h) = &res.head {
            let labels = assign_foreground_labels(&h.centroids, &frame.boxes());
            let csv = scores_csv(&h.coords, &h.scores, Some(&labels));
            manifest.write(out, &format!("scores/{}.csv", frame.id), csv.as_bytes())?;
        }
        let dets = format_detections(&res.detections, &classes);
        manifest.write(
            out,
            &format!("detections/{}.txt", frame.id),
            dets.as_bytes(),
        )?;
        manifest.frames.push(FrameRecord {
            id: frame.id.clone(),
            points: frame.cloud.len(),
            stage_voxels: res.stage_sizes,
            bev_shape: [res.bev.h, res.bev.w, res.bev.c],
            head_voxels: res.head.as_ref().map(|h| h.coords.len()),
        });
    }
    let hash = manifest.save(out)?;
    println!("forward: {} frames, manifest sha256 {hash}", frames.len());
    Ok(())
}

fn frame_mask(cfg: &Config, frame: &Frame) -> Result<Option<Mask>> {
    let Some(root) = &cfg.data.root else {
        return Ok(None);
    };
    let path = root.join("masks").join(format!("{}.pgm", frame.id));
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let r = parse_netpbm(&bytes)?;
    Ok(Some(Mask {
        width: r.width,
        height: r.height,
        data: r.luma.iter().map(|&v| v > 0.5).collect(),
    }))
}

pub fn analyze_blur(cfg: &Config, out: &Path) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let frames = load_frames(cfg)?;
    let classes = cfg.class_list();
    let mut all_scores = Vec::new();
    let mut all_classes = Vec::new();
    let mut instances = Vec::new();
    let mut any_region = false;
    let mut counts = String::from("frame,background,fore2d_blurred,fore3d\n");
    for frame in &frames {
        let mut regions: Vec<Region2D> = frame
            .labels
            .iter()
            .filter_map(|l| l.region)
            .map(Region2D::Box)
            .collect();
        if let Some(m) = frame_mask(cfg, frame)? {
            regions.push(Region2D::Mask(m));
        }
        any_region |= !regions.is_empty();
        let points = frame.cloud.positions();
        let cls = classify_blur_points(&points, &regions, &frame.boxes(), &frame.calib);
        let n = |c: BlurPointClass| cls.iter().filter(|&&x| x == c).count();
        let _ = writeln!(
            counts,
            "{},{},{},{}",
            frame.id,
            n(BlurPointClass::Background),
            n(BlurPointClass::Fore2dBlurred),
            n(BlurPointClass::Fore3d)
        );
        let res = model.forward(frame)?;
        let scores = match &res.head {
            Some(h) => h.point_scores(&points),
            None => vec![None; points.len()],
        };
        all_scores.extend(scores);
        all_classes.extend(cls);
        instances.extend(instance_ratios(&points, &frame.labels, &frame.calib));
    }
    if !any_region {
        return Err(Error::Invalid(
            "no 2D regions: labels carry no image boxes and no masks were found".into(),
        ));
    }
    if !cfg.model.semantic_head || cfg.model.n_fusion == 0 {
        warn!("the model has no semantic head; every point is unscored");
    }
    write(&out.join("blur_point_counts.csv"), &counts)?;
    write(
        &out.join("ratio_table.csv"),
        &ratio_table_csv(&class_ratio_table(&instances), &classes),
    )?;
    match blur_curves(&all_scores, &all_classes, &tau_grid())? {
        Some(c) => {
            write(&out.join("blur_curves.csv"), &blur_curves_csv(&c))?;
            println!(
                "analyze-blur: {} 2D-foreground points over {} frames",
                c.n_fore2d,
                frames.len()
            );
        }
        None => println!("analyze-blur: no 2D-foreground points; curves undefined"),
    }
    Ok(())
}

fn frame_detections(cfg: &Config, frame: &Frame, stub: &[Box3D]) -> Result<Vec<Box3D>> {
    match &cfg.data.detections {
        Some(dir) => {
            let path = dir.join(format!("{}.txt", frame.id));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            parse_detections(&text, &path.display().to_string(), &cfg.class_list())
        }
        None => Ok(stub.to_vec()),
    }
}

pub fn eval(cfg: &Config, out: &Path) -> Result<()> {
    let classes = cfg.class_list();
    let stub = parse_detections(
        &cfg.model.stub_detections.join("\n"),
        "model.stub_detections",
        &classes,
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    let frames = load_frames(cfg)?;
    let eval_frames = frames
        .iter()
        .map(|f| {
            Ok(EvalFrame {
                dets: frame_detections(cfg, f, &stub)?,
                gts: f.boxes(),
                calib: f.calib.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &points in &cfg.eval.ap_points {
        for regime in [Regime::Eaa, Regime::Dc] {
            let mut ec = cfg.eval_config(points)?;
            ec.regime = regime;
            let aps = evaluate_frames(&eval_frames, &ec)?;
            if points == cfg.eval.ap_points[0] {
                let name = format!("pr_curves_{}.csv", regime.name().to_ascii_lowercase());
                write(&out.join(name), &pr_curve_csv(&aps, &classes))?;
            }
            rows.push((regime, points, aps));
        }
    }
    let table = ap_table_csv(&rows, &classes);
    write(&out.join("ap_table.csv"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn synth(cfg: &Config, out: &Path) -> Result<()> {
    let calib = radarfuse::pipeline::synthetic_calibration(cfg.image.image_size)?;
    let spec = radarfuse::synth::SceneSpec {
        range: model_range(cfg),
        pyramid: cfg.image.synthetic_spec(),
        n_classes: cfg.data.classes.len(),
        ..Default::default()
    };
    let s = cfg.data.synthetic;
    let classes = cfg.class_list();
    let mut ids = Vec::new();
    for k in 0..s.n_frames as u64 {
        let scene = generate_scene_with(
            cfg.seed.wrapping_add(k),
            s.n_boxes,
            s.n_points,
            &calib,
            &spec,
        );
        let id = format!("{:06}", k);
        let paths = FramePaths::new(out, &id);
        paths.create_dirs()?;
        write_pointcloud(&paths.points, &scene.cloud)?;
        write_calib(&paths.calib, &calib)?;
        write_labels(&paths.labels, &scene.labels, &classes)?;
        scene.pyramid.save(&paths.pyramid)?;
        ids.push(id);
    }
    let mut dataset_cfg = cfg.clone();
    let root = std::fs::canonicalize(out).map_err(|e| Error::io(out, e))?;
    dataset_cfg.data.root = Some(root);
    dataset_cfg.data.frames = ids.clone();
    write(&out.join("config.json"), &(dataset_cfg.to_json() + "\n"))?;
    println!("synth: wrote {} frames to {}", ids.len(), out.display());
    Ok(())
}

pub fn dump_weights(cfg: &Config, out: &Path) -> Result<()> {
    let model = Model::from_config(cfg)?;
    let store = model.weights();
    let path = out.join("weights.bin");
    store.save(&path)?;
    let mut index = String::from("name,shape,count\n");
    let mut total = 0;
    for t in store.iter() {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(index, "{},{},{}", t.name, shape.join("x"), t.data.len());
        total += t.data.len();
    }
    write(&out.join("weights.csv"), &index)?;
    println!(
        "dump-weights: {} tensors, {total} parameters -> {}",
        store.len(),
        path.display()
    );
    Ok(())
}
