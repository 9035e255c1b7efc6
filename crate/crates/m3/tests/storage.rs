use std::path::Path;

use m3::bench::{emit_csv, read_csv, run_kmeans, run_logreg, BenchRecord, KmeansJob, LogregJob, RunConfig, CSV_HEADER};
use m3::corpus::generate_dataset;
use m3::mmatrix::{LabelFile, MappedMatrix, Mode};
use m3::ThreadPoolExecutor;
use m3_core::generator::{Generator, GeneratorSpec};
use m3_core::ChunkPlan;
use proptest::prelude::*;

fn small_dataset(dir: &Path, rows: u64, cols: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("d.m3mx");
    let labels = dir.join("d.m3lb");
    let spec = GeneratorSpec { rows, cols, seed, ..Default::default() };
    generate_dataset(&spec, &data, &labels, &ThreadPoolExecutor::new(2).unwrap()).unwrap();
    (data, labels)
}

fn run_config(mode: Mode, chunk_rows: usize) -> RunConfig {
    RunConfig { mode, plan: ChunkPlan::new(chunk_rows).unwrap(), seed: 4, advise: None }
}

#[test]
fn mapped_and_inram_views_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (data, labels) = small_dataset(dir.path(), 300, 17, 9);
    let mapped = MappedMatrix::open(&data, Mode::Mapped, None).unwrap();
    let inram = MappedMatrix::open(&data, Mode::InRam, None).unwrap();
    assert!(mapped.is_mapped() && !inram.is_mapped());
    assert_eq!(mapped.as_slice(), inram.as_slice());
    let la = LabelFile::open(&labels, Mode::Mapped, None).unwrap();
    let lb = LabelFile::open(&labels, Mode::InRam, Some(100)).unwrap();
    assert_eq!(&la.as_slice()[..100], lb.as_slice());
}

#[test]
fn training_leaves_mapped_file_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (data, labels) = small_dataset(dir.path(), 2000, 30, 1);
    let before = std::fs::read(&data).unwrap();
    let mtime = std::fs::metadata(&data).unwrap().modified().unwrap();
    let exec = ThreadPoolExecutor::new(2).unwrap();
    let run = run_config(Mode::Mapped, 256);
    run_logreg(&LogregJob { iterations: 3, ..LogregJob::new(&data, &labels) }, &run, &exec).unwrap();
    run_kmeans(&KmeansJob { iterations: 3, ..KmeansJob::new(&data) }, &run, &exec).unwrap();
    assert_eq!(std::fs::read(&data).unwrap(), before);
    assert_eq!(std::fs::metadata(&data).unwrap().modified().unwrap(), mtime);
}

#[test]
fn modes_and_thread_counts_agree_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (data, labels) = small_dataset(dir.path(), 3000, 40, 2);
    let job = LogregJob { iterations: 5, ..LogregJob::new(&data, &labels) };
    let kjob = KmeansJob { k: 4, ..KmeansJob::new(&data) };

    let mut fits = Vec::new();
    let mut clusterings = Vec::new();
    for (mode, threads) in [(Mode::Mapped, 1), (Mode::InRam, 1), (Mode::Mapped, 8), (Mode::InRam, 3)] {
        let exec = ThreadPoolExecutor::new(threads).unwrap();
        let run = run_config(mode, 257);
        let out = run_logreg(&job, &run, &exec).unwrap();
        assert_eq!(out.record.mode, mode);
        assert_eq!(out.record.threads, threads);
        assert_eq!(out.fit.report.trace.len(), 5);
        fits.push(out.fit.model.to_bytes());
        let km = run_kmeans(&kjob, &run, &exec).unwrap().model;
        clusterings.push((km.centroids.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), km.assignments));
    }
    assert!(fits.windows(2).all(|w| w[0] == w[1]));
    assert!(clusterings.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn record_fields_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (data, labels) = small_dataset(dir.path(), 500, 12, 3);
    let exec = ThreadPoolExecutor::new(1).unwrap();
    let inram = run_logreg(&LogregJob::new(&data, &labels), &run_config(Mode::InRam, 128), &exec).unwrap().record;
    assert_eq!(inram.data_bytes, inram.rows * inram.cols * 8);
    assert!(inram.wall_ms > 0.0 && inram.load_ms > 0.0);
    assert_eq!(inram.iterations, 10);
    let mapped = run_kmeans(&KmeansJob::new(&data), &run_config(Mode::Mapped, 128), &exec).unwrap().record;
    assert_eq!(mapped.load_ms, 0.0);
    assert_eq!(mapped.metric_name, "inertia");
    assert!(mapped.timestamp.ends_with('Z'));
}

#[test]
fn regeneration_is_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec { rows: 5000, cols: 9, seed: 42, ..Default::default() };
    for (dir, threads) in [(&a, 1), (&b, 4)] {
        let exec = ThreadPoolExecutor::new(threads).unwrap();
        generate_dataset(&spec, dir.path().join("x.m3mx"), dir.path().join("x.m3lb"), &exec).unwrap();
    }
    for name in ["x.m3mx", "x.m3lb"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn csv_parses_with_a_standard_reader() {
    let dir = tempfile::tempdir().unwrap();
    let (data, labels) = small_dataset(dir.path(), 200, 5, 8);
    let exec = ThreadPoolExecutor::new(1).unwrap();
    let run = run_config(Mode::InRam, 64);
    let records = vec![
        run_logreg(&LogregJob::new(&data, &labels), &run, &exec).unwrap().record,
        run_kmeans(&KmeansJob::new(&data), &run, &exec).unwrap().record,
    ];
    let csv_path = dir.path().join("out.csv");
    emit_csv(&records, &csv_path).unwrap();

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>().join(","), CSV_HEADER);
    for (row, expected) in reader.records().zip(&records) {
        let row = row.unwrap();
        assert_eq!(&row[0], expected.algo.as_str());
        assert_eq!(row[1].parse::<u64>().unwrap(), expected.rows);
        assert_eq!(row[6].parse::<f64>().unwrap().to_bits(), expected.wall_ms.to_bits());
        assert_eq!(row[9].parse::<f64>().unwrap().to_bits(), expected.metric_value.to_bits());
        assert_eq!(&row[13], expected.timestamp);
    }
    assert_eq!(read_csv(&csv_path).unwrap(), records);
}

#[test]
fn empty_record_list_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    emit_csv(&[], &path).unwrap();
    emit_csv(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{CSV_HEADER}\n"));
    assert!(read_csv(&path).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn file_rows_match_generator(seed: u64, rows in 1u64..300, cols in 1usize..12, pick in 0usize..1000) {
        let dir = tempfile::tempdir().unwrap();
        let (data, labels) = small_dataset(dir.path(), rows, cols, seed);
        let m = MappedMatrix::open_mapped(&data, false).unwrap();
        let gen = Generator::new(GeneratorSpec { rows, cols, seed, ..Default::default() }).unwrap();
        let i = pick % rows as usize;
        let mut expected = vec![0.0; cols];
        gen.fill_row(i as u64, &mut expected);
        prop_assert_eq!(m.row(i), &expected[..]);
        let l = LabelFile::open(&labels, Mode::Mapped, None).unwrap();
        prop_assert_eq!(usize::from(l.as_slice()[i]), i % 10);
    }

    #[test]
    fn csv_line_round_trips(wall in 1e-3f64..1e9, metric: f64, rows in 0u64..u64::MAX / 8, seed: u64) {
        let record = BenchRecord {
            algo: m3::bench::Algo::Kmeans,
            rows,
            cols: 1,
            data_bytes: rows * 8,
            mode: Mode::Mapped,
            iterations: 10,
            wall_ms: wall,
            load_ms: 0.0,
            metric_name: "inertia".into(),
            metric_value: metric,
            chunk_rows: 65_536,
            threads: 2,
            seed,
            timestamp: "2025-06-01T00:00:00.000Z".into(),
        };
        let parsed = BenchRecord::parse_csv_line(&record.to_csv_line()).unwrap();
        prop_assert_eq!(parsed.metric_value.to_bits(), metric.to_bits());
        prop_assert_eq!(parsed.wall_ms.to_bits(), wall.to_bits());
        prop_assert_eq!(parsed.seed, seed);
    }
}
