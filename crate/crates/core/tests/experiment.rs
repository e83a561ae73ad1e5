use milab_core::*;
use std::fs;

fn tiny_config(dir: Option<std::path::PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        spec: SynthSpec::new(MilConfig::new(10, 1, 2.0, 20).unwrap(), 0.8, 0),
        train: TrainConfig { epochs: 2000, learning_rates: vec![1e-2], ..TrainConfig::default() },
        seeds: vec![0, 1],
        output_dir: dir,
        ..ExperimentConfig::default()
    }
}

#[test]
fn table1_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Some(dir.path().to_path_buf()));
    let table = run_table1(&cfg).unwrap();
    assert_eq!(table.cells.len(), 4);
    for cell in &table.cells {
        assert!(!cell.failed);
        assert_eq!(cell.seeds.len(), 2);
        let (lo, mean, hi) = (cell.min_ap.unwrap(), cell.mean_ap.unwrap(), cell.max_ap.unwrap());
        assert!(lo <= mean && mean <= hi);
    }
    let back: Table1 = experiment::read_json(&dir.path().join("table1.json")).unwrap();
    assert_eq!(back, table);
    let manifest: experiment::Manifest = experiment::read_json(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.config_digest, cfg.digest());
    assert_eq!(manifest.seeds, vec![0, 1]);
    for f in &manifest.files {
        assert!(dir.path().join(f).exists(), "{f} listed but missing");
    }
    let run = dir.path().join("runs/si_two_layer_seed1");
    for f in ["checkpoint.json", "pr.csv", "heatmap.csv", "heatmap.pgm"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let pgm = fs::read(run.join("heatmap.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n200 200\n255\n"));
    assert_eq!(pgm.len(), b"P5\n200 200\n255\n".len() + 200 * 200);
    assert!(fs::read_to_string(dir.path().join("table1.txt")).unwrap().contains("two_layer"));
}

#[test]
fn digest_ignores_output_location() {
    let a = tiny_config(None);
    let b = tiny_config(Some("/somewhere/else".into()));
    assert_eq!(a.digest(), b.digest());
    let c = ExperimentConfig { seeds: vec![5], ..a.clone() };
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn precisions_agree_on_the_table() {
    let cfg = ExperimentConfig { losses: vec![LossKind::Si], archs: vec![ArchKind::Linear], seeds: vec![0], ..tiny_config(None) };
    let t32 = run_table1(&cfg).unwrap();
    let t64 = run_table1(&ExperimentConfig { precision: Precision::F64, ..cfg }).unwrap();
    let (a, b) = (t32.cells[0].mean_ap.unwrap(), t64.cells[0].mean_ap.unwrap());
    assert!((a - b).abs() < 0.02, "{a} vs {b}");
}

#[test]
fn heatmap_shows_the_positive_line() {
    let cfg = ExperimentConfig {
        losses: vec![LossKind::Si],
        archs: vec![ArchKind::TwoLayer],
        seeds: vec![0],
        spec: SynthSpec::new(MilConfig::new(10, 1, 2.0, 20).unwrap(), 0.5, 0),
        train: TrainConfig { epochs: 4000, learning_rates: vec![1e-2], ..TrainConfig::default() },
        ..tiny_config(None)
    };
    let (_, models) = experiment::run_table1_with::<f64>(&cfg).unwrap();
    let spec = HeatmapSpec { x_range: [-2.0, 2.0], y_range: [-0.5, 4.5], resolution: (5, 6) };
    let grid = render_heatmap(&models[0].trained.model, &spec).unwrap();
    assert!(grid.values.iter().all(|v| (0.0..=1.0).contains(v)));
    // Row 0 is y = -0.5; columns 1 and 3 are x = -1 and x = 1.
    for i in [1, 3] {
        for j in 1..6 {
            assert!(grid.at(i, 0) > grid.at(i, j) + 0.3, "column {i}, row {j}");
        }
    }
}

#[test]
fn theory_report_for_default_data() {
    let r = run_theory_report(&SynthSpec::default()).unwrap();
    assert_eq!(r.mixing_optimum, 99.0 / 2099.0);
    assert_eq!(r.value_on_positive, 1.0);
    assert!((r.mixing_optimum_approx - 1.0 / 21.0).abs() < 1e-12);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"verdict\""));
}

#[test]
fn toy_dataset_layout() {
    let cfg = ToyConfig::default();
    let data = experiment::toy_dataset::<f64>(&cfg).unwrap();
    let (k, m) = (data.n_labels, data.bag_size);
    assert_eq!(data.dim, 2 * k);
    assert_eq!(data.features.len(), data.n_bags() * m * data.dim);
    // A bag is positive for label z exactly when one of its instances sits on
    // the positive line in that label's dimensions.
    for b in 0..data.n_bags() {
        for z in 0..k {
            let hit = (0..m).any(|j| data.features[(b * m + j) * data.dim + 2 * z + 1] == -0.5);
            assert_eq!(hit, data.labels[b * k + z]);
        }
    }
    let positives = data.labels.iter().filter(|&&y| y).count();
    assert_eq!(positives, k * cfg.spec.config.p);
}

#[test]
fn bag_size_sweep_reports_each_size() {
    let spec = SynthSpec::new(MilConfig::new(10, 1, 1.0, 5).unwrap(), 0.8, 0);
    let cfg = TrainConfig { epochs: 50, learning_rates: vec![1e-2], ..TrainConfig::default() };
    let pts = run_bag_size_sweep::<f32>(&spec, &[1.0, 4.0], &cfg, &[0, 1]).unwrap();
    assert_eq!(pts.iter().map(|p| p.b).collect::<Vec<_>>(), vec![1.0, 4.0]);
    for p in &pts {
        assert_eq!(p.ap.len(), 2);
        assert!((p.mean_ap - (p.ap[0] + p.ap[1]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = tiny_config(None);
    cfg.seeds.clear();
    assert!(run_table1(&cfg).is_err());
    let mut cfg = tiny_config(None);
    cfg.spec.skew = 1.5;
    assert!(run_table1(&cfg).is_err());
}
