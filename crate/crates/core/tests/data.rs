use approx::assert_abs_diff_eq;
use ncssl::data::*;
use ncssl::eval::auroc;
use ncssl::Error;
use proptest::prelude::*;

fn schema() -> Schema {
    Schema::new(
        &[
            ("id", ColumnKind::Drop),
            ("dur", ColumnKind::Numeric),
            ("proto", ColumnKind::Categorical),
            ("bytes", ColumnKind::Numeric),
            ("label", ColumnKind::Label),
        ],
        &["normal"],
    )
    .unwrap()
}

fn read(text: &str) -> ncssl::Result<RawTable> {
    read_csv(text.as_bytes(), &schema())
}

#[test]
fn well_formed_file_loads() {
    let t = read("id,dur,proto,bytes,label\n1,0.5,tcp,10,normal\n2,1.5,udp,20,dos\n3,2,tcp,5,normal\n").unwrap();
    assert_eq!(t.n_rows(), 3);
    assert_eq!(t.labels, vec![0, 1, 0]);
    assert_eq!(t.columns.len(), 3);
    assert_eq!(t.columns[0].data, ColumnData::Numeric(vec![0.5, 1.5, 2.0]));
    assert!(t.rejects.rejected.is_empty());
}

#[test]
fn malformed_rows_are_rejected_and_counted() {
    let mut s = schema();
    s.max_reject_fraction = 0.5;
    let text = "id,dur,proto,bytes,label\n\
                1,0.5,tcp,10,normal\n\
                2,abc,udp,20,dos\n\
                3,2,tcp,5\n\
                4,1,tcp,7,normal\n\
                5,1,tcp,,normal\n\
                6,3,udp,1e3,\n\
                7,inf,udp,4,dos\n\
                8,4,icmp,9,exploit\n";
    let t = read_csv(text.as_bytes(), &s).unwrap();
    // Lines 2 (text), 3 (short), 6 (no label) and 7 (infinite) are malformed;
    // the empty cell on line 5 is a missing value, not a reject.
    let lines: Vec<usize> = t.rejects.rejected.iter().map(|r| r.0).collect();
    assert_eq!(lines, vec![2, 3, 6, 7]);
    assert_eq!(t.rejects.rows_read, 8);
    assert_abs_diff_eq!(t.rejects.fraction(), 0.5);
    assert_eq!(t.n_rows(), 4);
    assert_eq!(t.labels, vec![0, 0, 0, 1]);

    s.max_reject_fraction = 0.4;
    assert!(matches!(read_csv(text.as_bytes(), &s), Err(Error::Data(_))));
}

#[test]
fn header_and_file_errors() {
    assert!(matches!(read("id,dur,proto,label,bytes\n"), Err(Error::Schema(_))));
    assert!(matches!(
        load_csv(std::path::Path::new("/nonexistent/x.csv"), &schema()),
        Err(Error::Data(_))
    ));
    let two_labels = Schema::new(&[("a", ColumnKind::Label), ("b", ColumnKind::Label)], &["0"]);
    assert!(matches!(two_labels, Err(Error::Schema(_))));
}

#[test]
fn schema_toml() {
    let text = r#"
version = 1
name = "toy"
normal_labels = ["0"]
columns = [
  { name = "a", kind = "numeric" },
  { name = "b", kind = "categorical" },
  { name = "y", kind = "label" },
]
"#;
    let s = Schema::from_toml(text).unwrap();
    assert_eq!(s.columns.len(), 3);
    assert_eq!(s.label_index(), 2);
    assert!(Schema::from_toml(&text.replace("version = 1", "version = 9")).is_err());
}

#[test]
fn shipped_schemas_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    for name in ["unsw_nb15.toml", "5g_nidd.toml"] {
        let s = Schema::load(&dir.join(name)).unwrap();
        assert!(s.columns.len() > 10, "{name}");
    }
    let unsw = Schema::load(&dir.join("unsw_nb15.toml")).unwrap();
    let numeric = unsw.columns.iter().filter(|c| c.kind == ColumnKind::Numeric).count();
    assert_eq!(numeric, 39);
}

#[test]
fn preprocessing_steps() {
    let text = "id,dur,proto,bytes,label\n\
                1,2,tcp,2,normal\n\
                2,4,udp,4,dos\n\
                3,4,udp,4,dos\n\
                4,6,icmp,6,normal\n\
                5,,tcp,1,normal\n";
    let ds = preprocess(&read(text).unwrap()).unwrap();
    // Missing cell, duplicate row and duplicate column are all removed.
    assert_eq!(ds.report.missing_rows, 1);
    assert_eq!(ds.report.duplicate_rows, 1);
    assert_eq!(ds.report.duplicate_columns, vec!["bytes".to_string()]);
    assert_eq!(ds.names, vec!["dur", "proto=icmp", "proto=tcp", "proto=udp"]);
    assert_eq!(ds.labels, vec![0, 1, 0]);
    assert_eq!(ds.layout.groups[0].categories, vec!["icmp", "tcp", "udp"]);
    for row in ds.features.data().chunks(4) {
        assert_eq!(row[1] + row[2] + row[3], 1.0);
    }

    let scaler = MinMaxScaler::fit(&ds.features, &[0, 1, 2], &ds.layout.numeric).unwrap();
    let scaled = scaler.transform(&ds.features).unwrap();
    let col: Vec<f64> = (0..3).map(|i| scaled.at(&[i, 0])).collect();
    assert_eq!(col, vec![0.0, 0.5, 1.0]);
}

#[test]
fn constant_columns_are_dropped() {
    let text = "id,dur,proto,bytes,label\n1,1,tcp,2,normal\n2,1,tcp,3,dos\n3,1,tcp,5,normal\n";
    let ds = preprocess(&read(text).unwrap()).unwrap();
    assert_eq!(ds.names, vec!["bytes"]);
    assert_eq!(ds.report.constant_columns, vec!["dur".to_string(), "proto".to_string()]);
}

#[test]
fn preprocess_is_idempotent() {
    let ds = synth_generate(60, 20, 12, 2.0, 4).unwrap();
    let again = preprocess(&to_raw(&ds).unwrap()).unwrap();
    assert_eq!(again.features, ds.features);
    assert_eq!(again.labels, ds.labels);
    assert_eq!(again.layout, ds.layout);
    assert_eq!(again.names, ds.names);
}

#[test]
fn split_protocol() {
    let ds = synth_generate(100, 40, 20, 3.0, 1).unwrap();
    let s = protocol_split(&ds, 0.5, 9).unwrap();
    assert_eq!(s.train_rows.len(), 50);
    assert!(s.train_rows.iter().all(|&r| ds.labels[r] == 0));
    let normals_in_test = s.test_labels.iter().filter(|&&l| l == 0).count();
    assert_eq!(s.train_rows.len() + normals_in_test, 100);
    assert_eq!(s.test_labels.iter().filter(|&&l| l == 1).count(), 40);
    assert_eq!(s.train.shape(), &[50, ds.n_features()]);
    for &c in &ds.layout.numeric {
        let col: Vec<f64> = (0..50).map(|i| s.train.at(&[i, c])).collect();
        assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(col.contains(&0.0) && col.contains(&1.0));
    }
    assert_eq!(protocol_split(&ds, 0.5, 9).unwrap(), s);
    assert_ne!(protocol_split(&ds, 0.5, 10).unwrap().train_rows, s.train_rows);

    let odd = synth_generate(101, 5, 12, 1.0, 2).unwrap();
    let n = protocol_split(&odd, 0.5, 0).unwrap().train_rows.len();
    assert!((50..=51).contains(&n));
}

#[test]
fn split_errors() {
    let ds = synth_generate(0, 30, 12, 1.0, 1).unwrap();
    assert!(matches!(protocol_split(&ds, 0.5, 0), Err(Error::Data(_))));
    let ds = synth_generate(10, 3, 12, 1.0, 1).unwrap();
    assert!(matches!(protocol_split(&ds, 0.0, 0), Err(Error::Config(_))));
}

#[test]
fn scaler_uses_training_rows_only() {
    let mut ds = synth_generate(40, 10, 12, 2.0, 3).unwrap();
    let attack = ds.labels.iter().position(|&l| l == 1).unwrap();
    let w = ds.n_features();
    ds.features.data_mut()[attack * w] = 1e6;
    let s = protocol_split(&ds, 0.5, 0).unwrap();
    let train_max = s
        .train_rows
        .iter()
        .map(|&r| ds.features.data()[r * w])
        .fold(f64::MIN, f64::max);
    assert_eq!(s.scaler.max[0], train_max);
    let pos = s.test_rows.iter().position(|&r| r == attack).unwrap();
    assert!(s.test.at(&[pos, 0]) > 1e3);
}

#[test]
fn synthetic_counts_and_layout() {
    let ds = synth_generate(2000, 500, 20, 4.0, 0).unwrap();
    assert_eq!(ds.n_samples(), 2500);
    assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 500);
    assert_eq!(ds.n_features(), 20);
    assert_eq!(ds.layout.numeric.len(), 14);
    assert_eq!(ds.layout.groups.len(), 2);
    assert!(matches!(synth_generate(10, 10, 5, 1.0, 0), Err(Error::Config(_))));
    assert!(matches!(synth_generate(10, 10, 20, -1.0, 0), Err(Error::Config(_))));
}

/// Distance of each test row to the mean training row.
fn raw_distance_auroc(separation: f64) -> f64 {
    let ds = synth_generate(2000, 2000, 20, separation, 11).unwrap();
    let s = protocol_split(&ds, 0.5, 0).unwrap();
    let (n, w) = s.train.dims2().unwrap();
    let mean: Vec<f64> = (0..w)
        .map(|j| (0..n).map(|i| s.train.at(&[i, j])).sum::<f64>() / n as f64)
        .collect();
    let scores: Vec<f64> = s
        .test
        .data()
        .chunks(w)
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    auroc(&scores, &s.test_labels).unwrap()
}

#[test]
fn synthetic_separation_controls_difficulty() {
    let none = raw_distance_auroc(0.0);
    assert!((none - 0.5).abs() < 0.05, "{none}");
    let far = raw_distance_auroc(6.0);
    assert!(far > 0.99, "{far}");
}

#[test]
fn cache_round_trip() {
    let ds = synth_generate(30, 10, 14, 2.0, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    write_cache(&ds, &path).unwrap();
    assert_eq!(read_cache(&path).unwrap(), ds);
    std::fs::write(&path, b"garbage!").unwrap();
    assert!(read_cache(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn split_is_a_partition(seed in any::<u64>(), frac in 0.1f64..1.0) {
        let ds = synth_generate(50, 15, 12, 1.0, seed).unwrap();
        let s = protocol_split(&ds, frac, seed).unwrap();
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.n_samples()).collect::<Vec<_>>());
        prop_assert!(s.train_rows.iter().all(|&r| ds.labels[r] == 0));
    }
}

#[test]
fn tables_concatenate() {
    let mut a = read("id,dur,proto,bytes,label\n1,0.5,tcp,10,normal\n").unwrap();
    let b = read("id,dur,proto,bytes,label\n2,1.5,udp,20,dos\n3,x,udp,1,dos\n");
    assert!(b.is_err());
    let mut s = schema();
    s.max_reject_fraction = 0.5;
    let b = read_csv(
        "id,dur,proto,bytes,label\n2,1.5,udp,20,dos\n3,x,udp,1,dos\n".as_bytes(),
        &s,
    )
    .unwrap();
    a.append(b).unwrap();
    assert_eq!(a.labels, vec![0, 1]);
    assert_eq!(
        a.columns[1].data,
        ColumnData::Categorical(vec![Some("tcp".into()), Some("udp".into())])
    );
    assert_eq!(a.rejects.rows_read, 3);
    assert_eq!(a.rejects.rejected[0].0, 3);
    let other = Schema::new(&[("x", ColumnKind::Numeric), ("label", ColumnKind::Label)], &["normal"]).unwrap();
    let c = read_csv("x,label\n1,normal\n".as_bytes(), &other).unwrap();
    assert!(matches!(a.append(c), Err(Error::Schema(_))));
}

#[test]
fn stratified_subsample() {
    let ds = synth_generate(200, 100, 12, 1.0, 3).unwrap();
    let small = subsample(&ds, 0.1, 5).unwrap();
    assert_eq!(small.labels.iter().filter(|&&l| l == 0).count(), 20);
    assert_eq!(small.labels.iter().filter(|&&l| l == 1).count(), 10);
    assert_eq!(small.layout, ds.layout);
    assert_eq!(subsample(&ds, 0.1, 5).unwrap(), small);
    assert_eq!(subsample(&ds, 1.0, 0).unwrap(), ds);
    assert!(matches!(subsample(&ds, 0.0, 0), Err(Error::Config(_))));
}
