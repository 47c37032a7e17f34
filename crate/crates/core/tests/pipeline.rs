//! End-to-end runs through the public API.

use std::collections::BTreeMap;
use std::fs;

use faircil_core::datasets::{ColorBiasConfig, CsvOptions, DataFormat, ToyConfig, ToyVariant};
use faircil_core::harness::{
    load_stream, run_experiment, write_stream_csv, DataSource, DatasetSpec, ExperimentConfig,
    IngestSpec,
};
use faircil_core::{FairnessMeasure, Method};

fn small(dir: &std::path::Path, dataset: DatasetSpec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset,
        seeds: vec![0, 1, 2],
        output_dir: dir.to_path_buf(),
        ..Default::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.train.buffer_per_group = 8;
    cfg
}

#[test]
fn aggregate_is_recomputable_from_per_seed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), DatasetSpec::Toy(ToyConfig::new(60)));
    run_experiment(&cfg).unwrap();

    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(dir.path().join("per_seed.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        groups
            .entry((rec[0].to_string(), rec[2].to_string(), rec[3].to_string()))
            .or_default()
            .push(rec[4].parse().unwrap());
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let v = &groups[&(rec[0].to_string(), rec[1].to_string(), rec[2].to_string())];
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((rec[3].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((rec[4].parse::<f64>().unwrap() - std).abs() < 1e-12);
        assert_eq!(rec[5].parse::<usize>().unwrap(), 3);
        seen += 1;
    }
    assert_eq!(seen, groups.len());
    // four methods, each with two per-task accuracies plus three run-level rows
    assert_eq!(seen, 4 * 5);
}

#[test]
fn ingested_csv_matches_the_generated_stream() {
    let dir = tempfile::tempdir().unwrap();
    let toy = ToyConfig {
        variant: ToyVariant::LabelAndSensitive,
        ..ToyConfig::new(30)
    };
    let stream = load_stream(&DatasetSpec::Toy(toy), 4).unwrap();
    write_stream_csv(&stream, dir.path()).unwrap();

    let source = |name: &str| DataSource {
        path: dir.path().join(name),
        format: DataFormat::Csv(CsvOptions {
            has_sensitive: true,
            ..Default::default()
        }),
    };
    let spec = DatasetSpec::Ingest(IngestSpec {
        train: source("train.csv"),
        test: source("test.csv"),
        num_tasks: 2,
    });
    let loaded = load_stream(&spec, 0).unwrap();
    assert_eq!(loaded.all_classes, stream.all_classes);
    assert_eq!(loaded.sensitive_values, stream.sensitive_values);
    for (a, b) in loaded.tasks.iter().zip(&stream.tasks) {
        assert_eq!(a.classes, b.classes);
        assert_eq!(a.samples.len(), b.samples.len());
    }

    let out = dir.path().join("out");
    let mut cfg = small(&out, spec);
    cfg.seeds = vec![0];
    cfg.methods = vec![Method::Fsw, Method::UniformReplay];
    cfg.train.fsw.measure = FairnessMeasure::Eo;
    let report = run_experiment(&cfg).unwrap();
    let fsw = report.run(Method::Fsw, 0).unwrap();
    assert!(fsw.report.eo_disp.is_some());
    assert!(fsw.report.dp_disp.is_some());
}

#[test]
fn color_biased_stream_runs_under_every_measure() {
    let color = ColorBiasConfig {
        n_per_class: 30,
        n_test_per_class: 20,
        n_classes: 4,
        num_tasks: 2,
        ..Default::default()
    };
    for measure in [
        FairnessMeasure::Eer,
        FairnessMeasure::Eo,
        FairnessMeasure::Dp,
    ] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path(), DatasetSpec::ColorBiased(color.clone()));
        cfg.seeds = vec![7];
        cfg.methods = vec![Method::Fsw];
        cfg.train.fsw.measure = measure;
        let report = run_experiment(&cfg).unwrap();
        let run = report.run(Method::Fsw, 7).unwrap();
        assert_eq!(run.history.accuracy.len(), 2);
        assert!(run.report.disparity(measure).unwrap() >= 0.0);
        for d in &run.history.diagnostics {
            assert!(d.objective_at_optimum <= d.objective_at_ones + 1e-9);
        }
    }
}

#[test]
fn config_file_round_trip_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let cfg = small(&first, DatasetSpec::Toy(ToyConfig::new(40)));
    run_experiment(&cfg).unwrap();

    // rerun from the echoed config, redirected to a new directory
    let mut echoed = ExperimentConfig::load(&first.join("config.toml")).unwrap();
    let second = dir.path().join("b");
    echoed.output_dir = second.clone();
    run_experiment(&echoed).unwrap();
    for name in [
        "per_seed.csv",
        "aggregate.csv",
        "fsw_weight_histogram.csv",
        "fsw_diagnostics.csv",
    ] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
}
