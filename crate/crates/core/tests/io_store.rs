use fragility::config::BiasConfig;
use fragility::io::{canonical_json, read_result, write_result, ResultDocument, SCHEMA_VERSION};
use fragility::metrics::{MetricName, MetricSpec};
use fragility::program::Sense;
use fragility::solver::{BoundsResult, SolveStatus, SolverOptions, SweepPoint, SweepResult};
use fragility::table::{read_table, ObservedTable};
use fragility::Error;
use proptest::prelude::*;

fn config() -> BiasConfig {
    BiasConfig::from_json(include_str!("../../../configs/proxy.json")).unwrap()
}

fn table() -> ObservedTable {
    ObservedTable::from_counts([400, 300, 100, 200, 400, 300, 100, 200]).unwrap()
}

fn bounds(lo: f64, hi: f64) -> BoundsResult {
    BoundsResult {
        lower: Some(lo),
        upper: Some(hi),
        incumbent_lo: Some(lo + 1e-4),
        incumbent_hi: Some(hi - 1e-4),
        gap: Some(1e-4),
        nodes: 17,
        status: SolveStatus::Optimal,
        witness_lo: None,
        witness_hi: None,
    }
}

fn sweep_result(deltas: &[f64]) -> SweepResult {
    let points: Vec<SweepPoint> = deltas
        .iter()
        .map(|&d| SweepPoint { delta: d, delta2: None, bounds: Some(bounds(-0.1 - d / 3.0, 0.1 + d * 0.7)), error: None })
        .collect();
    SweepResult {
        metric: MetricSpec::new(MetricName::PPP),
        sense: Sense::Both,
        deltas: deltas.to_vec(),
        raw: points.clone(),
        points,
        nested: true,
        config_hash: String::new(),
        table_hash: String::new(),
        options: SolverOptions::default(),
    }
}

#[test]
fn empty_sweep_document() {
    let doc = ResultDocument::from_sweep(&config(), &table(), &sweep_result(&[]));
    let back = read_result(&write_result(&doc)).unwrap();
    assert_eq!(back, doc);
    assert!(back.deltas.is_empty() && back.points.is_empty());
    assert_eq!(back.schema_version, SCHEMA_VERSION);
}

#[test]
fn six_point_round_trip() {
    let mut r = sweep_result(&[0.0, 0.01, 0.02, 0.05, 0.1, 0.2]);
    r.points[3].bounds = None;
    r.points[3].error = Some("program is infeasible".into());
    let doc = ResultDocument::from_sweep(&config(), &table(), &r);
    let text = write_result(&doc);
    let back = read_result(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(write_result(&back), text);
    // the embedded config and table are enough to re-run
    assert_eq!(back.config, config());
    assert_eq!(back.table, table());
}

#[test]
fn tampered_document_fails() {
    let doc = ResultDocument::from_sweep(&config(), &table(), &sweep_result(&[0.0, 0.05]));
    let text = write_result(&doc);
    let edited = text.replacen("\"nodes\":17", "\"nodes\":18", 1);
    assert_ne!(edited, text);
    assert!(matches!(read_result(&edited), Err(Error::HashMismatch { .. })));

    let mut forged = doc.clone();
    forged.config.constraints.push("P(Z = 1) <= D".into());
    forged.seal();
    assert!(matches!(read_result(&write_result(&forged)), Err(Error::HashMismatch { .. })));

    let wrong = text.replacen(&format!("\"schema_version\":{SCHEMA_VERSION}"), "\"schema_version\":99", 1);
    assert!(matches!(read_result(&wrong), Err(Error::SchemaVersion { found: 99, .. })));
}

#[test]
fn table_csv_rules() {
    let full = include_str!("../../../data/synthetic.csv");
    let t = read_table(full).unwrap();
    assert_eq!(t.total(), 2000);
    assert_eq!(read_table(&t.to_csv()).unwrap(), t);

    let partial = read_table("A,Y,Yhat,count\n0,0,0,5\n1,1,1,7\n0,1,0,2\n1,0,1,1\n").unwrap();
    assert_eq!(partial.total(), 15);
    assert_eq!(partial.count(1, 1, 0), 0);

    assert!(read_table("A,Y,Yhat,count\n0,0,0,1\n0,0,0,2\n").is_err());
    assert!(read_table("A,Yhat,Y,count\n0,0,0,1\n").is_err());
    assert!(read_table("A,Y,Yhat,count\n0,0,0,1.5\n").is_err());
    assert!(read_table("A,Y,Yhat,count\n0,2,0,1\n").is_err());
}

proptest! {
    #[test]
    fn canonical_floats_round_trip(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..20)) {
        let text = canonical_json(&v).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn documents_round_trip(lo in -1.0f64..0.0, hi in 0.0f64..1.0, n in 0usize..8) {
        let deltas: Vec<f64> = (0..n).map(|i| i as f64 * 0.013).collect();
        let mut r = sweep_result(&deltas);
        for p in &mut r.points {
            p.bounds = Some(bounds(lo * (1.0 + p.delta), hi * (1.0 + p.delta)));
        }
        let doc = ResultDocument::from_sweep(&config(), &table(), &r);
        let text = write_result(&doc);
        let back = read_result(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(write_result(&back), text);
    }
}
