use std::path::PathBuf;

use tiersplat::arp::plan;
use tiersplat::geometry::{BoundingBox, Camera, CameraSet};
use tiersplat::pipeline::*;
use tiersplat::scenario::ScenarioFile;
use tiersplat::splat2d::{CanvasFrame, ImageBuffer, View};
use tiersplat::Error;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn reference() -> ScenarioFile {
    ScenarioFile::load(data("reference_scenario.json"))
        .unwrap()
        .unwrap()
}

fn image() -> ImageBuffer {
    ImageBuffer::load_pgm(data("reference_128.pgm")).unwrap()
}

fn light() -> ScenarioFile {
    let mut f = reference();
    f.splat.gaussians_per_device = 8;
    f.splat.iterations = 15;
    f.splat.crop_px = 16;
    f
}

#[test]
fn views_stay_on_the_canvas() {
    let frame = CanvasFrame {
        world: BoundingBox::new(-10.0, 0.0, 10.0, 20.0),
        width: 40,
        height: 30,
    };
    let cams: CameraSet = [(-10.0, 0.0), (10.0, 20.0), (0.0, 10.0), (-9.9, 19.9)]
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| Camera::new(i as u32, x, y))
        .collect();
    let views = camera_views(&cams, &frame, 16);
    assert_eq!(views.len(), 4);
    for v in &views {
        assert!(v.fits((40, 30)), "{v:?}");
        assert_eq!((v.width, v.height), (16, 16));
    }
    // The centre camera is centred: canvas (20, 15) -> origin (12, 7).
    assert_eq!((views[2].x, views[2].y), (12, 7));
    assert_eq!((views[0].x, views[0].y), (0, 0));
    assert_eq!((views[1].x, views[1].y), (24, 14));

    let tiny = camera_views(&cams, &frame, 100);
    assert!(tiny.iter().all(|v| *v == View::new(0, 0, 40, 30)));
}

#[test]
fn model_set_round_trips() {
    let f = light();
    let s = f.to_scenario().unwrap();
    let p = plan(&s).unwrap();
    let img = image();
    let frame = frame_for(&p.partition, &img);
    let devices = fit_devices(&p, &img, &frame, &f.splat, 3).unwrap();
    assert_eq!(devices.len(), 8);
    let set = ModelSet {
        frame,
        partition: p.partition.clone(),
        devices,
    };
    let dir = tempfile::tempdir().unwrap();
    set.save(dir.path()).unwrap();
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("edge2_device1.model").exists());
    assert_eq!(ModelSet::load(dir.path()).unwrap(), set);
}

#[test]
fn device_models_have_disjoint_ids() {
    let f = light();
    let s = f.to_scenario().unwrap();
    let p = plan(&s).unwrap();
    let img = image();
    let frame = frame_for(&p.partition, &img);
    let devices = fit_devices(&p, &img, &frame, &f.splat, 3).unwrap();
    let mut ids: Vec<u64> = devices
        .iter()
        .flat_map(|d| d.model.gaussians.iter().map(|g| g.id))
        .collect();
    let n = ids.len();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), n);
    for d in &devices {
        let cams = &p.per_edge[&d.edge_id].sub_regions[&d.device_id];
        assert_eq!(d.views.len(), cams.len());
    }
}

#[test]
fn light_run_reports_every_metric() {
    let f = light();
    let img = image();
    let out = run_end_to_end(
        &f,
        &img,
        &RunOptions {
            epochs: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let m = &out.metrics;
    assert_eq!(m.fusion, Fusion::Aggregate);
    assert!(m.psnr.is_finite() && m.psnr > 10.0, "{m:?}");
    assert!(m.ssim > 0.0 && m.ssim <= 1.0);
    assert!(m.strip_psnr.is_some() && m.strip_ssim.is_some());
    assert_eq!(m.gaussians, out.model.len());
    assert_eq!(m.end_to_end, out.report.end_to_end);
    assert!(
        m.end_to_end
            > out
                .report
                .per_edge
                .values()
                .map(|t| t.total)
                .fold(0.0, f64::max)
    );

    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    for file in [PLAN_FILE, REPORT_FILE, MODEL_FILE, METRICS_FILE] {
        assert!(dir.path().join(file).exists(), "{file}");
    }

    let even = run_end_to_end(
        &f,
        &img,
        &RunOptions {
            even: true,
            epochs: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(even.metrics.end_to_end >= m.end_to_end);
}

#[test]
fn merge_run_ends_at_the_straggler() {
    let f = light();
    let opts = RunOptions {
        fusion: Fusion::Merge,
        epochs: 2,
        ..Default::default()
    };
    let out = run_end_to_end(&f, &image(), &opts).unwrap();
    let straggler = out
        .report
        .per_edge
        .values()
        .map(|t| t.total)
        .fold(0.0, f64::max);
    assert_eq!(out.metrics.end_to_end, straggler);
    assert_eq!(out.metrics.fusion, Fusion::Merge);
}

#[test]
fn failures_name_their_stage() {
    let img = image();
    let mut f = light();
    f.params.step_d = -1.0;
    let err = run_end_to_end(&f, &img, &RunOptions::default()).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Stage {
                stage: "validate",
                ..
            }
        ),
        "{err}"
    );

    // Enough capacity overall, but not for an even quarter on edge 0.
    let mut f = light();
    for d in &mut f.edges[0].devices {
        d.max_cameras = 10;
    }
    let opts = RunOptions {
        even: true,
        ..Default::default()
    };
    let err = run_end_to_end(&f, &img, &opts).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "plan", .. }), "{err}");
    assert!(err.to_string().starts_with("plan stage failed"), "{err}");
}

#[test]
fn fusion_names_parse() {
    assert_eq!("merge".parse::<Fusion>().unwrap(), Fusion::Merge);
    assert_eq!("aggregate".parse::<Fusion>().unwrap(), Fusion::Aggregate);
    assert!("average".parse::<Fusion>().is_err());
    assert_eq!(Fusion::Aggregate.to_string(), "aggregate");
}
