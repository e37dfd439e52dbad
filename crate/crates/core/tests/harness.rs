use bimp_core::data::idx::encode_idx;
use bimp_core::data::load_idx;
use bimp_core::grid::{parse_grid, run_grid};
use bimp_core::report::*;
use bimp_core::Error;

const BASE: &str = r#"
[base]
pipeline = "bimp"
[base.model]
kind = "mlp"
hidden = [6]
[base.data.source]
kind = "blobs"
n_samples = 48
n_classes = 3
noise = 1.0
[base.train]
epochs = 12
batch_size = 16
[base.train.schedule]
kind = "linear"
lr = 0.05
[base.retrain]
scheme = "llr"
epochs = 2
[base.prune]
target = 0.8
"#;

#[test]
fn one_cell_two_seeds_has_std() {
    let grid = parse_grid(&format!("seeds = [1, 2]\n{BASE}\n[base.bimp]\ninitial_epochs = 4\n")).unwrap();
    let out = run_grid(&grid, 2, None, None).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.runs.len(), 2);
    assert!(out.rows[0].accuracy_std.is_some());
    let single = parse_grid(&format!("seeds = [1]\n{BASE}\n[base.bimp]\ninitial_epochs = 4\n")).unwrap();
    assert!(run_grid(&single, 1, None, None).unwrap().rows[0].accuracy_std.is_none());
}

fn t0_grid() -> bimp_core::grid::GridSpec {
    parse_grid(&format!(
        "seeds = [0, 1]\n{BASE}\n[base.bimp]\ninitial_epochs = 2\n[overrides]\n\"bimp.initial_epochs\" = [2, 6, 10]\n"
    ))
    .unwrap()
}

#[test]
fn three_t0_values_two_seeds() {
    let grid = t0_grid();
    let dir = tempfile::tempdir().unwrap();
    let out = run_grid(&grid, 3, None, Some(dir.path())).unwrap();
    assert_eq!(out.runs.len(), 6);
    assert_eq!(out.rows.len(), 3);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 12);
    let cycles: Vec<f64> = out.rows.iter().map(|r| r.retrain_epochs / 2.0).collect();
    assert_eq!(cycles, vec![5.0, 3.0, 1.0]);
    for r in &out.runs {
        let res = r.result.as_ref().unwrap();
        assert_eq!(res.total_steps(), 12 * res.steps_per_epoch as u64);
    }
}

#[test]
fn grid_is_deterministic_and_order_free() {
    let grid = t0_grid();
    let a = run_grid(&grid, 1, None, None).unwrap();
    let b = run_grid(&grid, 4, None, None).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.best, b.best);
    let best = a.rows[a.best].accuracy_mean.unwrap();
    assert!(a.rows.iter().all(|r| r.accuracy_mean.unwrap() <= best));
}

#[test]
fn failing_cells_are_recorded() {
    let grid = parse_grid(&format!(
        "seeds = [0]\n{BASE}\n[base.bimp]\ninitial_epochs = 4\n[overrides]\n\"train.schedule.lr\" = [0.05, 1e9]\n"
    ))
    .unwrap();
    let out = run_grid(&grid, 2, None, None).unwrap();
    assert_eq!(out.rows.iter().map(|r| r.failures).sum::<usize>(), 1);
    assert_eq!(out.rows[out.best].failures, 0);

    let all_bad = parse_grid(&format!(
        "seeds = [0]\n{BASE}\n[base.bimp]\ninitial_epochs = 4\n[overrides]\n\"train.schedule.lr\" = [1e9]\n"
    ))
    .unwrap();
    assert!(run_grid(&all_bad, 1, None, None).is_err());
}

#[test]
fn invalid_cell_rejected_up_front() {
    let grid = parse_grid(&format!(
        "seeds = [0]\n{BASE}\n[base.bimp]\ninitial_epochs = 4\n[overrides]\n\"bimp.initial_epochs\" = [4, 5]\n"
    ))
    .unwrap();
    assert!(matches!(grid.cells(), Err(Error::Config { .. })));
}

fn row(target: f64, retrain: f64, acc: f64) -> ResultRow {
    ResultRow {
        config_hash: format!("{target}-{retrain}"),
        overrides: String::new(),
        pipeline: "one_shot".into(),
        scheme: Some("llr".into()),
        criterion: Some("global".into()),
        target_sparsity: Some(target),
        seeds: vec![0, 1],
        failures: 0,
        accuracy_mean: Some(acc),
        accuracy_std: Some(0.012345678),
        speedup: Some(1.0 / (1.0 - target)),
        sparsity: Some(target),
        total_epochs: 100.0 + retrain,
        dense_epochs: 100.0,
        retrain_epochs: retrain,
        gmp_epochs: 0.0,
    }
}

#[test]
fn plotdata_has_one_envelope_per_sparsity() {
    let rows = vec![row(0.9, 100.0, 0.90), row(0.9, 50.0, 0.92), row(0.7, 10.0, 0.95)];
    let pts = plotdata(&rows);
    let env: Vec<_> = pts.iter().filter(|p| p.plot == "retrain_budget_envelope").collect();
    let mut series: Vec<_> = env.iter().map(|p| p.series.clone()).collect();
    series.dedup();
    assert_eq!(series.len(), 2);
    let s90: Vec<(f64, f64)> = env.iter().filter(|p| p.series == "sparsity=0.9").map(|p| (p.x, p.y)).collect();
    // Brute-force oracle: best accuracy among runs with budget <= x.
    for &(x, y) in &s90 {
        let best = rows
            .iter()
            .filter(|r| r.target_sparsity == Some(0.9) && r.retrain_epochs <= x)
            .map(|r| r.accuracy_mean.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(y, best);
    }
    assert_eq!(s90, vec![(50.0, 0.92), (100.0, 0.92)]);
}

#[test]
fn csv_round_trips() {
    let rows = vec![row(0.9, 100.0, 0.9123456789), row(0.5, 5.0, 1.0 / 3.0)];
    let dir = tempfile::tempdir().unwrap();
    let path = emit_report(&rows, ReportFormat::Csv, dir.path()).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("accuracy_mean,speedup,sparsity,"));
    let back = csv_to_rows(&text).unwrap();
    for (a, b) in rows.iter().zip(&back) {
        for (x, y) in [
            (a.accuracy_mean.unwrap(), b.accuracy_mean.unwrap()),
            (a.speedup.unwrap(), b.speedup.unwrap()),
            (a.sparsity.unwrap(), b.sparsity.unwrap()),
        ] {
            assert!(((x - y) / x).abs() < 5e-7);
        }
    }
    let json = emit_report(&rows, ReportFormat::Json, dir.path()).unwrap();
    assert_eq!(read_rows_jsonl(&std::fs::read_to_string(json).unwrap()).unwrap(), rows);
    assert!(emit_report(&[], ReportFormat::Csv, dir.path()).is_err());
}

#[test]
fn idx_images_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
    std::fs::write(dir.path().join("img"), encode_idx(&[4, 2, 2], &pixels)).unwrap();
    std::fs::write(dir.path().join("lab"), encode_idx(&[4], &[0, 1, 2, 1])).unwrap();
    let d = load_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
    assert_eq!(d.inputs.shape(), &[4, 1, 2, 2]);
    assert_eq!(d.labels.len(), 4);
    assert_eq!(d.n_classes, 3);
    assert_eq!(d.inputs.data()[15], 1.0);
    assert_eq!(d.inputs.data()[1], 17.0 / 255.0);

    let mut bad = encode_idx(&[4, 2, 2], &pixels);
    bad.truncate(18);
    std::fs::write(dir.path().join("bad"), bad).unwrap();
    assert!(matches!(
        load_idx(&dir.path().join("bad"), &dir.path().join("lab")),
        Err(Error::Format { .. })
    ));
}
