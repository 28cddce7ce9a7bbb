use std::collections::BTreeMap;

use transport_core::{
    find_crossing, fit_nuisance, generate, load_dataset, positivity_diagnostics, run_grid, true_values,
    validate_structure, NuisanceModels, SensitivityGridResult, StudyDataset,
};

use crate::config::RunConfig;
use crate::error::{core, CliError};
use crate::output::{self, Outputs, ResultsFile};
use crate::plot;

/// Console summary; a closed stdout (e.g. piped into `head`) must not abort the run.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn load(cfg: &RunConfig) -> Result<StudyDataset, CliError> {
    let path = cfg.data_path()?;
    let ds = load_dataset(path, &cfg.data.schema, cfg.design).map_err(core)?;
    let summary = &ds.load_summary;
    if summary.dropped > 0 {
        log::warn!("data: dropped {} of {} rows with missing values", summary.dropped, summary.rows_read);
    }
    for w in &summary.warnings {
        log::warn!("data: {w}");
    }
    let report = validate_structure(&ds);
    for w in &report.warnings {
        log::warn!("data: {w}");
    }
    if !report.is_valid() {
        let list: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(CliError::usage("data", list.join("; ")));
    }
    log::info!(
        "data: n = {}, treated = {}, control = {}, target = {}",
        ds.n(),
        report.counts.treated,
        report.counts.control,
        report.counts.target
    );
    Ok(ds)
}

fn fit(cfg: &RunConfig, ds: &StudyDataset) -> Result<NuisanceModels, CliError> {
    let nm = fit_nuisance(ds, &cfg.models).map_err(core)?;
    match positivity_diagnostics(ds, &nm, cfg.positivity_threshold) {
        Ok(report) if report.flagged() > 0 => log::warn!(
            "positivity: {} rows outside [{t}, {}] (participation range {:.4}..{:.4})",
            report.flagged(),
            1.0 - cfg.positivity_threshold,
            report.participation_min,
            report.participation_max,
            t = cfg.positivity_threshold
        ),
        Ok(_) => {}
        Err(e) => return Err(core(e)),
    }
    Ok(nm)
}

fn analyze(cfg: &RunConfig, u0: Option<(f64, f64)>) -> Result<SensitivityGridResult, CliError> {
    cfg.validate()?;
    let ds = load(cfg)?;
    let nm = fit(cfg, &ds)?;
    let grid = match u0 {
        Some((u0, delta)) => {
            let single = RunConfig {
                grid: crate::config::GridConfig {
                    u0: vec![u0],
                    delta: vec![delta],
                    modulation: cfg.grid.modulation.clone(),
                },
                ..cfg.clone()
            };
            single.bias_grid(&ds.covariate_names)?
        }
        None => cfg.bias_grid(&ds.covariate_names)?,
    };
    run_grid(&ds, &cfg.models, &nm, &grid, &cfg.estimators(), &cfg.inference).map_err(core)
}

fn results_file(command: &str, result: &SensitivityGridResult, with_crossings: bool) -> ResultsFile {
    let crossings = with_crossings.then(|| {
        result
            .estimators
            .iter()
            .map(|e| (e.name().to_string(), find_crossing(result, *e)))
            .collect::<BTreeMap<_, _>>()
    });
    let mut modulation: Vec<String> = result.cells.iter().map(|c| c.modulation.clone()).collect();
    modulation.dedup();
    ResultsFile {
        command: command.to_string(),
        design: result.design,
        target: result.target,
        rows: output::rows(result),
        crossings,
        modulation,
        metadata: result.metadata.clone(),
    }
}

fn stage_results(cfg: &RunConfig, stem: &str, file: &ResultsFile, out: &mut Outputs) -> Result<(), CliError> {
    let dir = &cfg.output.dir;
    if cfg.output.csv {
        out.add(dir.join(format!("{stem}.csv")), output::csv_bytes(&file.rows)?);
    }
    if cfg.output.json {
        out.add(dir.join(format!("{stem}.json")), output::json_bytes(file)?);
    }
    Ok(())
}

fn report(written: &[std::path::PathBuf]) {
    for p in written {
        say!("wrote {}", p.display());
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn estimate(cfg: &RunConfig, u0: f64, delta: f64) -> Result<(), CliError> {
    let result = analyze(cfg, Some((u0, delta)))?;
    let file = results_file("estimate", &result, false);
    say!("{:<16} {:<8} {:>12} {:>10} {:>24}", "estimator", "estimand", "estimate", "se", "interval");
    for r in &file.rows {
        let ci = match (r.ci_lo, r.ci_hi) {
            (Some(lo), Some(hi)) => format!("({lo:.4}, {hi:.4})"),
            _ => "-".to_string(),
        };
        say!("{:<16} {:<8} {:>12.4} {:>10} {:>24}", r.estimator, r.estimand, r.estimate, fmt_opt(r.se), ci);
    }
    let mut out = Outputs::default();
    stage_results(cfg, "estimates", &file, &mut out)?;
    report(&out.commit(&cfg.output.dir)?);
    Ok(())
}

pub fn sensitivity(cfg: &RunConfig) -> Result<(), CliError> {
    let result = analyze(cfg, None)?;
    let file = results_file("sensitivity", &result, true);
    let mut out = Outputs::default();
    stage_results(cfg, "sensitivity", &file, &mut out)?;
    if cfg.output.plot {
        for e in &result.estimators {
            out.add(cfg.output.dir.join(format!("sensitivity_{}.svg", e.name())), plot::render(&result, *e).into_bytes());
        }
    }
    for (estimator, rows) in file.crossings.iter().flatten() {
        for c in rows {
            match c.delta_star {
                Some(d) => say!("{estimator}: u0 = {}: ATE changes sign at delta = {d:.4}", c.u0),
                None => say!("{estimator}: u0 = {}: no sign change in the delta range", c.u0),
            }
        }
    }
    report(&out.commit(&cfg.output.dir)?);
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let dgp = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::usage("config", "simulate needs a \"simulation\" section"))?;
    let ds = generate(dgp).map_err(core)?;
    let truths = true_values(dgp).map_err(core)?;
    let mut csv = Vec::new();
    ds.write_csv(&mut csv).map_err(core)?;
    let sidecar = serde_json::json!({ "config": dgp, "truths": truths });
    let mut out = Outputs::default();
    out.add(cfg.output.dir.join("data.csv"), csv);
    out.add(cfg.output.dir.join("truths.json"), output::json_bytes(&sidecar)?);
    say!(
        "simulated n = {} ({} participants); true ATE in S=0: {:.6}",
        ds.n(),
        ds.n_trial(),
        truths.target_ate
    );
    report(&out.commit(&cfg.output.dir)?);
    Ok(())
}

pub fn check_positivity(cfg: &RunConfig) -> Result<(), CliError> {
    if !(cfg.positivity_threshold > 0.0 && cfg.positivity_threshold < 0.5) {
        return Err(CliError::usage(
            "positivity",
            format!("threshold {} must lie in (0, 0.5)", cfg.positivity_threshold),
        ));
    }
    let ds = load(cfg)?;
    let nm = fit_nuisance(&ds, &cfg.models).map_err(core)?;
    let report_data = positivity_diagnostics(&ds, &nm, cfg.positivity_threshold).map_err(core)?;
    say!(
        "participation probability range [{:.6}, {:.6}]; {} of {} rows flagged at threshold {}",
        report_data.participation_min,
        report_data.participation_max,
        report_data.flagged(),
        ds.n(),
        report_data.threshold
    );
    let mut out = Outputs::default();
    out.add(cfg.output.dir.join("positivity.json"), output::json_bytes(&report_data)?);
    report(&out.commit(&cfg.output.dir)?);
    Ok(())
}
