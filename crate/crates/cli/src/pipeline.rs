//! The five pipeline stages behind the CLI subcommands.

use crate::config::RunConfig;
use crate::outputs::*;
use crate::plot;
use crate::tasks::{run_tasks, Manifest, TaskSpec, TaskStatus};
use mixselect::copula::{
    compare_families, pseudo_observations, sample_panel, scale_dependence, CopulaModel,
    MarginalKde,
};
use mixselect::dgp::{generate_dataset, DgpModel, Scenario, SimDataset};
use mixselect::error::{Error, Result};
use mixselect::ingest::{
    export_panel_csv, impute_below_lod, load_exposure_table, spearman_corr, standardize_panel,
    TableSchema,
};
use mixselect::method::{MethodKind, MethodOutput};
use mixselect::metrics::{
    curve_accuracy, per_replication_rows, summarize_curves, CurveAccuracy, MetricsRow,
};
use mixselect::rng::derive_rng;
use std::collections::BTreeMap;

/// Ingest the raw table, fit and compare both copula families, and write
/// the model, the comparison report, and the dependence heat maps.
pub fn fit_copula_step(cfg: &RunConfig) -> Result<CopulaModel> {
    let layout = OutputLayout::new(&cfg.out);
    let schema = TableSchema::from_json_file(&cfg.schema)?;
    let table = load_exposure_table(&cfg.data, &schema)?;
    let table = impute_below_lod(&table)?;
    let panel = standardize_panel(&table)?;
    panel.validate()?;
    let observed = spearman_corr(&panel)?;
    let u = pseudo_observations(&panel);
    let marginals: Vec<MarginalKde> = (0..panel.j())
        .map(|k| MarginalKde::fit(&panel.column(k)))
        .collect::<Result<_>>()?;
    let cmp = compare_families(&u, &marginals, &panel.names)?;
    let best = cmp.ranked[0].clone();

    if let Some(parent) = layout.copula_model().parent() {
        std::fs::create_dir_all(parent)?;
    }
    export_panel_csv(&panel, &layout.copula_panel())?;
    write_atomic(&layout.copula_model(), &best.to_json()?)?;
    let report = serde_json::json!({
        "ranked": cmp.ranked.iter().map(|m| {
            serde_json::json!({"family": m.family, "loglik": m.loglik, "nu": m.nu})
        }).collect::<Vec<_>>(),
        "loglik_diff": cmp.loglik_diff,
    });
    write_atomic(
        &layout.copula_comparison(),
        &serde_json::to_string_pretty(&report)?,
    )?;

    // Dependence heat maps: observed and simulated, full and halved.
    let half = scale_dependence(&best, 0.5)?;
    let mut rng = derive_rng(cfg.master_seed, "heatmap-sample", &[0]);
    let sim_full = sample_panel(&best, 10_000, &mut rng)?;
    let mut rng = derive_rng(cfg.master_seed, "heatmap-sample", &[1]);
    let sim_half = sample_panel(&half, 10_000, &mut rng)?;
    let pairs = [
        ("observed", observed.0.clone()),
        ("simulated", spearman_corr(&sim_full)?.0),
        ("observed_half", observed.0.mapv(|v| v * 0.5)),
        ("simulated_half", spearman_corr(&sim_half)?.0),
    ];
    for (name, mut matrix) in pairs {
        for i in 0..matrix.nrows() {
            matrix[[i, i]] = 1.0;
        }
        let svg = plot::heatmap_svg(
            &format!("Spearman correlation ({name})"),
            &panel.names,
            &matrix,
        );
        write_atomic(&layout.heatmap(name), &svg)?;
    }
    Ok(best)
}

/// Load the fitted copula, running the fit step if needed.
pub fn load_or_fit_copula(cfg: &RunConfig) -> Result<CopulaModel> {
    let layout = OutputLayout::new(&cfg.out);
    match std::fs::read_to_string(layout.copula_model()) {
        Ok(text) => CopulaModel::from_json(&text),
        Err(_) => fit_copula_step(cfg),
    }
}

/// Calibrate every DGP the scenario set touches (shapes and noise).
pub fn build_dgp_models(
    cfg: &RunConfig,
    copula: &CopulaModel,
    scenarios: &[Scenario],
) -> Result<BTreeMap<String, DgpModel>> {
    let mut models = BTreeMap::new();
    for s in scenarios {
        let key = s.dgp.id();
        if !models.contains_key(&key) {
            let model = DgpModel::build(s.dgp, copula, cfg.master_seed, cfg.shape_params)?;
            models.insert(key, model);
        }
    }
    Ok(models)
}

/// Export the shared replicated datasets (one file per DGP and rep).
pub fn simulate_step(cfg: &RunConfig, copula: &CopulaModel) -> Result<usize> {
    let layout = OutputLayout::new(&cfg.out);
    let scenarios = cfg.resolve_scenarios()?;
    let models = build_dgp_models(cfg, copula, &scenarios)?;
    // Full panels are shared across model sizes: export at J = 12.
    let mut written = 0;
    for s in &scenarios {
        let key = s.dgp.id();
        if s.j_total != 12 && scenarios.iter().any(|t| t.dgp == s.dgp && t.j_total == 12) {
            continue;
        }
        let model = &models[&key];
        let mut full = s.clone();
        full.j_total = 12;
        for rep in 0..cfg.reps {
            let data = generate_dataset(model, &full, rep)?;
            let path = layout.dataset(s.dgp, rep);
            if path.exists() {
                continue;
            }
            write_atomic(&path, &dataset_csv(&data, &full, rep))?;
            written += 1;
        }
    }
    Ok(written)
}

fn method_index(method: MethodKind) -> u64 {
    MethodKind::ALL.iter().position(|m| *m == method).unwrap() as u64
}

/// Run one method on one dataset with its derived generator.
pub fn run_method_on(
    cfg: &RunConfig,
    data: &SimDataset,
    method: MethodKind,
) -> Result<MethodOutput> {
    let s = &data.scenario;
    let mut rng = derive_rng(
        cfg.master_seed,
        "method",
        &[
            s.dgp.index(),
            s.j_total as u64,
            data.rep as u64,
            method_index(method),
        ],
    );
    match method {
        MethodKind::Lasso => mixselect::lasso::run_lasso(data, &cfg.lasso_config(), &mut rng),
        MethodKind::Bkmr => {
            let config = cfg.bkmr_config(s.dgp.shape, s.dgp.snr);
            mixselect::bkmr::run_bkmr(data, &config, &mut rng).map(|(_, o)| o)
        }
        MethodKind::Bart => {
            mixselect::bart::run_bart(data, &cfg.bart_config(), &mut rng).map(|(_, o)| o)
        }
        MethodKind::Ssgam => {
            mixselect::ssgam::run_ssgam(data, &cfg.ssgam_config(), &mut rng).map(|(_, o)| o)
        }
        MethodKind::Oracle => mixselect::oracle::run_oracle(data),
    }
}

struct RunPayload {
    scenario: Scenario,
    rep: usize,
    method: MethodKind,
    skip: bool,
}

/// Dispatch all (scenario, rep, method) tasks and write result records.
pub fn run_step(cfg: &RunConfig, copula: &CopulaModel) -> Result<Manifest> {
    let layout = OutputLayout::new(&cfg.out);
    let scenarios = cfg.resolve_scenarios()?;
    let methods = cfg.resolve_methods()?;
    let models = build_dgp_models(cfg, copula, &scenarios)?;
    let copula_json = copula.to_json()?;
    let hash = cfg.config_hash(Some(&copula_json));
    // resumability: matching prior runs allow output reuse
    let resumable = Manifest::load(&layout.manifest())
        .map(|m| m.config_hash == hash)
        .unwrap_or(false);

    let mut specs = Vec::new();
    for s in &scenarios {
        for method in &methods {
            for rep in 0..cfg.reps {
                let id = format!("{}/{}/rep{rep:03}", s.id(), method.id());
                let seed_stream = mixselect::rng::stream_id(
                    cfg.master_seed,
                    "method",
                    &[s.dgp.index(), s.j_total as u64, rep as u64, method_index(*method)],
                );
                let skip = resumable && layout.result(&s.id(), *method, rep).exists();
                specs.push(TaskSpec {
                    id,
                    seed_stream,
                    payload: RunPayload {
                        scenario: s.clone(),
                        rep,
                        method: *method,
                        skip,
                    },
                });
            }
        }
    }

    let entries = run_tasks(specs, cfg.workers, |payload: &RunPayload| {
        if payload.skip {
            return Ok(false);
        }
        let model = &models[&payload.scenario.dgp.id()];
        let data = generate_dataset(model, &payload.scenario, payload.rep)?;
        let mut output = run_method_on(cfg, &data, payload.method)?;
        let traces = output.traces.take();
        if cfg.traces {
            if let Some(traces) = &traces {
                write_atomic(
                    &layout.trace(&payload.scenario.id(), payload.method, payload.rep),
                    &trace_csv(traces),
                )?;
            }
        }
        let record = MethodRecord {
            scenario: payload.scenario.id(),
            rep: payload.rep,
            method: payload.method,
            truth: data.truth.clone(),
            output,
        };
        write_record(
            &layout.result(&payload.scenario.id(), payload.method, payload.rep),
            &record,
        )?;
        Ok(true)
    });

    let mut manifest = Manifest::new(&hash, cfg.master_seed);
    manifest.tasks = entries;
    manifest.save(&layout.manifest())?;
    Ok(manifest)
}

/// Aggregate all stored records into the metrics tables.
pub fn evaluate_step(cfg: &RunConfig) -> Result<(Vec<MetricsRow>, Vec<CurveMetricRow>)> {
    let layout = OutputLayout::new(&cfg.out);
    let scenarios = cfg.resolve_scenarios()?;
    let methods = cfg.resolve_methods()?;
    let mut selection_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for s in &scenarios {
        let sid = s.id();
        let mut per_method: BTreeMap<MethodKind, Vec<MethodRecord>> = BTreeMap::new();
        for method in &methods {
            let mut records = Vec::new();
            for rep in 0..cfg.reps {
                let path = layout.result(&sid, *method, rep);
                if path.exists() {
                    records.push(read_record(&path)?);
                }
            }
            if !records.is_empty() {
                per_method.insert(*method, records);
            }
        }
        // oracle curve summary is the MSE-ratio denominator
        let oracle_summary = per_method.get(&MethodKind::Oracle).and_then(|records| {
            let accs: Vec<CurveAccuracy> = records
                .iter()
                .map(|r| curve_accuracy(&r.output.curves))
                .collect();
            summarize_curves(&accs)
        });
        for method in MethodKind::ALL {
            let Some(records) = per_method.get(&method) else {
                continue;
            };
            let truth = records[0].truth.clone();
            let outputs: Vec<MethodOutput> =
                records.iter().map(|r| r.output.clone()).collect();
            if method != MethodKind::Oracle {
                selection_rows.extend(per_replication_rows(&sid, &outputs, &truth));
            }
            let accs: Vec<CurveAccuracy> = records
                .iter()
                .map(|r| curve_accuracy(&r.output.curves))
                .collect();
            if let Some(summary) = summarize_curves(&accs) {
                curve_rows.push(CurveMetricRow {
                    scenario: sid.clone(),
                    method: method.id().into(),
                    metric: "mse".into(),
                    value: summary.mse,
                    n_points: summary.n_points,
                });
                curve_rows.push(CurveMetricRow {
                    scenario: sid.clone(),
                    method: method.id().into(),
                    metric: "coverage90".into(),
                    value: summary.coverage,
                    n_points: summary.n_points,
                });
                for (pct, mse) in &summary.mse_by_percentile {
                    curve_rows.push(CurveMetricRow {
                        scenario: sid.clone(),
                        method: method.id().into(),
                        metric: format!("mse_p{pct}"),
                        value: *mse,
                        n_points: summary.n_points,
                    });
                }
                if method != MethodKind::Oracle {
                    if let Some(oracle) = &oracle_summary {
                        curve_rows.push(CurveMetricRow {
                            scenario: sid.clone(),
                            method: method.id().into(),
                            metric: "mse_ratio".into(),
                            value: summary.mse / oracle.mse,
                            n_points: summary.n_points,
                        });
                        for ((pct, mse), (opct, omse)) in summary
                            .mse_by_percentile
                            .iter()
                            .zip(&oracle.mse_by_percentile)
                        {
                            debug_assert_eq!(pct, opct);
                            curve_rows.push(CurveMetricRow {
                                scenario: sid.clone(),
                                method: method.id().into(),
                                metric: format!("mse_ratio_p{pct}"),
                                value: mse / omse,
                                n_points: summary.n_points,
                            });
                        }
                    }
                }
            }
        }
    }
    write_atomic(&layout.selection_metrics(), &selection_csv(&selection_rows))?;
    write_atomic(&layout.curve_metrics(), &curves_csv(&curve_rows))?;
    Ok((selection_rows, curve_rows))
}

/// Figures: metric boxplots and per-scenario curve panels.
pub fn plot_step(cfg: &RunConfig) -> Result<()> {
    let layout = OutputLayout::new(&cfg.out);
    let (selection_rows, _) = evaluate_rows_from_disk(cfg)?;
    for metric in ["f1", "sensitivity", "specificity"] {
        let rows: Vec<MetricsRow> = selection_rows
            .iter()
            .filter(|r| r.metric == metric)
            .cloned()
            .collect();
        if !rows.is_empty() {
            write_atomic(
                &layout.plot(&format!("boxplot_{metric}")),
                &plot::boxplot_svg(metric, &rows),
            )?;
        }
    }
    // estimated curves for the first replication, strongest exposure
    let scenarios = cfg.resolve_scenarios()?;
    let methods = cfg.resolve_methods()?;
    for s in &scenarios {
        let sid = s.id();
        let mut panels = Vec::new();
        for method in MethodKind::ALL {
            if !methods.contains(&method) {
                continue;
            }
            let path = layout.result(&sid, method, 0);
            if !path.exists() {
                continue;
            }
            let record = read_record(&path)?;
            if let Some(curve) = record
                .output
                .curves
                .iter()
                .find(|c| c.exposure == "MPB")
                .cloned()
            {
                panels.push((method.id().to_string(), curve));
            }
        }
        if !panels.is_empty() {
            write_atomic(
                &layout.plot(&format!("curves_{sid}")),
                &plot::curves_svg(&format!("{sid}: MPB"), &panels),
            )?;
        }
    }
    Ok(())
}

fn evaluate_rows_from_disk(cfg: &RunConfig) -> Result<(Vec<MetricsRow>, Vec<CurveMetricRow>)> {
    // Re-read the stored CSV when present; otherwise aggregate records.
    let layout = OutputLayout::new(&cfg.out);
    if layout.selection_metrics().exists() {
        let text = std::fs::read_to_string(layout.selection_metrics())?;
        let mut rows = Vec::new();
        for line in text.lines().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 8 {
                return Err(Error::Schema(format!("bad metrics row '{line}'")));
            }
            let parse = |s: &str| -> Option<f64> { s.parse::<f64>().ok() };
            rows.push(MetricsRow {
                scenario: cells[0].into(),
                method: cells[1].into(),
                metric: cells[2].into(),
                mean: parse(cells[3]),
                median: parse(cells[4]),
                q1: parse(cells[5]),
                q3: parse(cells[6]),
                n_defined: cells[7].parse().unwrap_or(0),
            });
        }
        return Ok((rows, Vec::new()));
    }
    evaluate_step(cfg)
}

/// The chained pipeline behind `all`.
pub fn all_steps(cfg: &RunConfig) -> Result<Manifest> {
    let copula = fit_copula_step(cfg)?;
    simulate_step(cfg, &copula)?;
    let manifest = run_step(cfg, &copula)?;
    evaluate_step(cfg)?;
    plot_step(cfg)?;
    Ok(manifest)
}

pub fn exit_code_for(manifest: &Manifest) -> i32 {
    if manifest.failed() > 0 {
        1
    } else {
        0
    }
}

pub use crate::tasks::TaskStatus as Status;

#[allow(unused)]
fn status_is_ok(s: &TaskStatus) -> bool {
    !matches!(s, TaskStatus::Failed { .. })
}
