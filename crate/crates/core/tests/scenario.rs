use serde_json::{json, Value};
use tiersplat::scenario::{Diagnostic, ScenarioFile, Severity};

fn reference_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/reference_scenario.json")
}

fn reference() -> Value {
    serde_json::from_str(&std::fs::read_to_string(reference_path()).unwrap()).unwrap()
}

fn small() -> Value {
    json!({
        "bounding_box": {"min_x": 0.0, "min_y": 0.0, "max_x": 10.0, "max_y": 10.0},
        "cameras": [{"id": 0, "x": 1.0, "y": 1.0}, {"id": 1, "x": 9.0, "y": 9.0}, {"id": 2, "x": 5.0, "y": 5.0}],
        "edges": [{
            "id": 0, "x": 5.0, "y": 5.0, "bandwidth_mb_s": 10.0,
            "aggregate_curve": [[1, 1.0], [10, 5.0]],
            "devices": [{
                "id": 0, "bandwidth_mb_s": 5.0, "max_cameras": 10,
                "train_curve": [[1, 2.0], [10, 20.0]],
                "init_curve": [[1, 0.5], [10, 5.0]],
                "size_curve": [[1, 1.0], [10, 10.0]]
            }]
        }],
        "params": {"step_d": 1.0, "threshold_s": 0.5}
    })
}

fn diagnose(doc: &Value) -> Vec<Diagnostic> {
    match ScenarioFile::parse(&doc.to_string()) {
        Ok(f) => f.validate(),
        Err(d) => vec![d],
    }
}

fn errors(doc: &Value) -> Vec<Diagnostic> {
    diagnose(doc)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect()
}

#[test]
fn reference_scenario_is_valid() {
    let diags = diagnose(&reference());
    assert!(diags.is_empty(), "{diags:?}");
    let s = ScenarioFile::load(reference_path())
        .unwrap()
        .unwrap()
        .to_scenario()
        .unwrap();
    assert_eq!(s.edges.len(), 4);
    assert!(s.cloud_aggregate_curve.is_some());
}

#[test]
fn defaults_fill_optional_params() {
    let f = ScenarioFile::parse(&small().to_string()).unwrap();
    assert_eq!(f.params.max_iterations, 200);
    assert_eq!(f.params.retrain_epochs, 10);
    assert_eq!(f.params.seed, 0);
    assert_eq!(f.splat.strip_px, 8);
    assert!(f.validate().is_empty());
}

#[test]
fn duplicate_camera_names_both_occurrences() {
    let mut doc = small();
    doc["cameras"][2]["id"] = json!(0);
    let errs = errors(&doc);
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].path, "/cameras/2/id");
    assert!(
        errs[0].message.contains("/cameras/0/id"),
        "{}",
        errs[0].message
    );
}

#[test]
fn non_monotone_samples_cite_the_pair() {
    let mut doc = small();
    doc["edges"][0]["devices"][0]["train_curve"] = json!([[1, 2.0], [5, 9.0], [10, 4.0]]);
    let errs = errors(&doc);
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].path, "/edges/0/devices/0/train_curve/2");
    assert!(
        errs[0].message.contains("(5, 9)") && errs[0].message.contains("(10, 4)"),
        "{}",
        errs[0].message
    );
}

#[test]
fn schema_errors_carry_a_pointer() {
    let mut doc = small();
    doc["edges"][0]["devices"][0]["max_cameras"] = json!("lots");
    let errs = errors(&doc);
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].path, "/edges/0/devices/0/max_cameras");

    let mut doc = small();
    doc["params"]["stepd"] = json!(1.0);
    let errs = errors(&doc);
    assert!(errs[0].message.contains("stepd"), "{}", errs[0].message);
}

#[test]
fn every_problem_is_reported() {
    let mut doc = small();
    doc["cameras"][1]["x"] = json!(11.0);
    doc["edges"][0]["bandwidth_mb_s"] = json!(0.0);
    doc["edges"][0]["devices"][0]["max_cameras"] = json!(0);
    doc["params"]["step_d"] = json!(-1.0);
    let diags = diagnose(&doc);
    let paths: Vec<(&str, Severity)> = diags
        .iter()
        .map(|d| (d.path.as_str(), d.severity))
        .collect();
    assert_eq!(
        paths,
        vec![
            ("/cameras/1", Severity::Error),
            ("/edges/0/bandwidth_mb_s", Severity::Error),
            ("/edges", Severity::Error),
            ("/params/step_d", Severity::Error),
            ("/edges/0/devices/0/max_cameras", Severity::Warning),
        ]
    );
    assert!(ScenarioFile::parse(&doc.to_string())
        .unwrap()
        .to_scenario()
        .is_err());
}

#[test]
fn diagnostics_render_with_level_and_path() {
    let mut doc = small();
    doc["cameras"][2]["id"] = json!(1);
    let d = &errors(&doc)[0];
    assert!(
        d.to_string()
            .starts_with("error: /cameras/2/id: duplicate camera id 1"),
        "{d}"
    );
}

#[test]
fn converts_to_scenario() {
    let s = ScenarioFile::parse(&small().to_string())
        .unwrap()
        .to_scenario()
        .unwrap();
    assert_eq!(s.cameras.len(), 3);
    let cam = s.cameras.iter().find(|c| c.id == 1).unwrap();
    assert_eq!((cam.position.x, cam.position.y), (9.0, 9.0));
    let d = &s.edges[0].devices[0];
    assert_eq!(d.train_curve.eval(10), 20.0);
    assert_eq!(d.bandwidth, 5.0);
    assert_eq!(s.step_d, 1.0);
    assert_eq!(s.threshold, 0.5);
}
