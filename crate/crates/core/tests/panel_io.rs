use ssgraph::data::{generate_synthetic, load_panel, make_windows, write_panel_csv, CsvFormat, FollowerSpec, SyntheticSpec};

#[test]
fn synthetic_panel_survives_csv_and_gives_same_windows() {
    let spec = SyntheticSpec {
        n_stocks: 6,
        n_days: 80,
        followers: vec![
            FollowerSpec { follower: 1, leader: 0, lag: 1, beta: 0.8 },
            FollowerSpec { follower: 3, leader: 2, lag: 2, beta: 0.5 },
        ],
        leaders: vec![0, 2],
        ..SyntheticSpec::default()
    };
    let panel = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    write_panel_csv(&panel, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_panel(&path, &CsvFormat::default()).unwrap();
    assert_eq!(back.symbols, panel.symbols);
    assert_eq!(back.dates, panel.dates);
    let close_err = (&back.close() - &panel.close()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(close_err < 1e-9, "{close_err}");

    let a = make_windows(&panel, 20).unwrap();
    let b = make_windows(&back, 20).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.stocks, y.stocks);
        let err = (&x.x - &y.x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn same_seed_writes_identical_bytes() {
    let spec = SyntheticSpec { n_stocks: 4, n_days: 40, ..SyntheticSpec::default() };
    let write = || {
        let mut buf = Vec::new();
        write_panel_csv(&generate_synthetic(&spec).unwrap(), &mut buf).unwrap();
        buf
    };
    assert_eq!(write(), write());
}
