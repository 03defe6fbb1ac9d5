//! The repository ships a synthetic exposure sample; the full ingest +
//! copula pipeline must run end-to-end on it.

use mixselect::copula::*;
use mixselect::ingest::*;
use std::path::Path;

fn data_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn bundled_sample_loads_and_fits() {
    let schema = TableSchema::from_json_file(&data_dir().join("schema.json")).unwrap();
    let table = load_exposure_table(&data_dir().join("nhanes_synthetic.csv"), &schema).unwrap();
    assert_eq!(table.n(), 214);
    assert_eq!(table.j(), 12);

    let table = impute_below_lod(&table).unwrap();
    let panel = standardize_panel(&table).unwrap();
    panel.validate().unwrap();

    let spearman = spearman_corr(&panel).unwrap();
    spearman.validate().unwrap();
    // parabens co-occur; DEHP metabolites cluster tightly
    let idx = |n: &str| panel.index_of(n).unwrap();
    assert!(spearman.0[[idx("MPB"), idx("PPB")]] > 0.5);
    assert!(spearman.0[[idx("MHH"), idx("MOH")]] > 0.8);

    let u = pseudo_observations(&panel);
    let marginals: Vec<MarginalKde> = (0..panel.j())
        .map(|k| MarginalKde::fit(&panel.column(k)).unwrap())
        .collect();
    let cmp = compare_families(&u, &marginals, &panel.names).unwrap();
    assert_eq!(cmp.ranked[0].family, CopulaFamily::StudentT, "t family should win on this sample");
    assert!(cmp.loglik_diff > 0.0);
    let nu = cmp.ranked[0].nu.unwrap();
    assert!((2.1..=100.0).contains(&nu), "nu {nu}");
}
