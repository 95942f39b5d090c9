//! One function per subcommand.

use gmmb::data::{load_csv, validate, CsvData};
use gmmb::diagnostics::sweep;
use gmmb::ecm::marginal_transform_params;
use gmmb::mixture::log_density_original;
use gmmb::transform::{forward, inverse, log_jacobian};
use gmmb::{fit, BoundsSpec, FitConfig, FitResult, ModelCode};
use nalgebra::DVector;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bundle::{write_atomic, write_json, Summary};
use crate::config::RunConfig;
use crate::CliError;

/// Column names of a CSV file without loading the numeric payload.
fn peek_columns(path: &Path, has_header: bool) -> Result<Vec<String>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    if has_header {
        Ok(reader
            .headers()
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            .iter()
            .map(|s| s.to_string())
            .collect())
    } else {
        let mut records = reader.records();
        let first = records
            .next()
            .ok_or_else(|| CliError::config(format!("{}: no data rows", path.display())))?
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok((0..first.len()).map(|j| format!("V{}", j + 1)).collect())
    }
}

/// Loads the configured data, applies the optional boundary nudge, and
/// validates strict interiority.
fn load_run_data(
    config: &RunConfig,
) -> Result<(CsvData, BoundsSpec, Vec<Option<f64>>), CliError> {
    let names = match &config.columns {
        Some(c) => c.clone(),
        None => peek_columns(&config.data, config.has_header)?,
    };
    let (bounds, fixed) = config.bounds_for(&names)?;
    let mut csv_data = load_csv(&config.data, config.has_header, &bounds, &config.selection())?;
    if config.nudge_boundary {
        let nudged = csv_data.dataset.nudge_boundary(&bounds)?;
        if !nudged.is_empty() {
            eprintln!(
                "note: nudged {} boundary value(s) strictly inside the support",
                nudged.len()
            );
        }
    }
    let report = validate(&csv_data.dataset, &bounds)?;
    if !report.passes() {
        let cells: Vec<String> = report
            .violations
            .iter()
            .take(10)
            .map(|v| format!("row {}, column {} (value {})", v.row + 1, v.col + 1, v.value))
            .collect();
        return Err(CliError::Validation(format!(
            "{} value(s) outside the declared open support{}: {}{}",
            report.violations.len(),
            if config.nudge_boundary {
                ""
            } else {
                " (use --nudge-boundary for values sitting exactly on a bound)"
            },
            cells.join("; "),
            if report.violations.len() > 10 { "; ..." } else { "" },
        )));
    }
    Ok((csv_data, bounds, fixed))
}

fn fit_config(config: &RunConfig, g: usize, model: ModelCode, fixed: &[Option<f64>]) -> FitConfig {
    let mut fc = FitConfig::new(g, model);
    fc.tol = config.tol;
    fc.max_iter = config.max_iter;
    fc.rng_seed = config.seed;
    if fixed.iter().any(|f| f.is_some()) {
        fc.fixed_lambda = fixed.to_vec();
    }
    fc
}

fn observations_csv(r: &FitResult) -> String {
    let g = r.params.g();
    let mut out = String::from("row,classification,uncertainty,entropy");
    for k in 1..=g {
        let _ = write!(out, ",z{k}");
    }
    out.push('\n');
    for i in 0..r.z.n() {
        let _ = write!(
            out,
            "{},{},{},{}",
            i + 1,
            r.classification[i],
            r.uncertainty[i],
            r.entropy[i]
        );
        for k in 0..g {
            let _ = write!(out, ",{}", r.z.matrix()[(i, k)]);
        }
        out.push('\n');
    }
    out
}

pub fn cmd_fit(config: &RunConfig) -> Result<(), CliError> {
    if config.models.len() != 1 || config.g_range.len() != 1 {
        return Err(CliError::config(
            "fit expects exactly one model (--model) and one component count (--G); use sweep for grids",
        ));
    }
    let (csv_data, bounds, fixed) = load_run_data(config)?;
    let data = &csv_data.dataset;
    let fc = fit_config(config, config.g_range[0], config.models[0], &fixed);
    let r = fit(data, &bounds, &fc)?;

    let summary = Summary::build(&r, data, &bounds, config.seed);
    write_json(&config.out.join("summary.json"), &summary)?;
    write_atomic(&config.out.join("observations.csv"), &observations_csv(&r))?;

    println!(
        "model={} G={} n={} loglik={:.4} df={} BIC={:.4} ICL={:.4} NEC={:.4} iterations={} converged={}",
        r.params.model,
        r.params.g(),
        data.n(),
        r.loglik,
        r.df,
        r.bic,
        r.icl,
        r.nec,
        r.n_iter,
        r.converged
    );
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig) -> Result<(), CliError> {
    if config.models.is_empty() || config.g_range.is_empty() {
        return Err(CliError::config("sweep needs --model CODE[,CODE...] and --G RANGE"));
    }
    let (csv_data, bounds, fixed) = load_run_data(config)?;
    let base = fit_config(config, config.g_range[0], config.models[0], &fixed);
    let result = sweep(
        &csv_data.dataset,
        &bounds,
        &config.g_range,
        &config.models,
        &base,
    )?;

    let mut table =
        String::from("model,G,loglik,df,bic,icl,nec,converged,best_bic,best_icl,status\n");
    for (i, entry) in result.entries.iter().enumerate() {
        let best_bic = result.best_by_bic == Some(i);
        let best_icl = result.best_by_icl == Some(i);
        match &entry.result {
            Ok(r) => {
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{},{},{},{},{},ok",
                    entry.model,
                    entry.g,
                    r.loglik,
                    r.df,
                    r.bic,
                    r.icl,
                    r.nec,
                    r.converged,
                    best_bic,
                    best_icl
                );
            }
            Err(msg) => {
                let _ = writeln!(
                    table,
                    "{},{},,,,,,,false,false,\"{}\"",
                    entry.model,
                    entry.g,
                    msg.replace('"', "'")
                );
            }
        }
    }
    write_atomic(&config.out.join("sweep.csv"), &table)?;

    let best = &result.entries[result.best_by_bic.expect("sweep returned no winner")];
    let best_fit = best.result.as_ref().expect("winner has a result");
    let summary = Summary::build(best_fit, &csv_data.dataset, &bounds, config.seed);
    write_json(&config.out.join("summary.json"), &summary)?;
    write_atomic(
        &config.out.join("observations.csv"),
        &observations_csv(best_fit),
    )?;
    println!(
        "best by BIC: model={} G={} loglik={:.4} df={} BIC={:.4}  ({} of {} fits succeeded)",
        best.model,
        best.g,
        best_fit.loglik,
        best_fit.df,
        best_fit.bic,
        result.entries.iter().filter(|e| e.result.is_ok()).count(),
        result.entries.len()
    );
    Ok(())
}

pub fn cmd_density(
    fit_file: &Path,
    min: f64,
    max: f64,
    points: usize,
    out: &Path,
) -> Result<(), CliError> {
    let summary = Summary::load(fit_file)?;
    if summary.columns.len() != 1 {
        return Err(CliError::config(
            "density grids are only supported for univariate fits",
        ));
    }
    if points < 2 || !(min < max) {
        return Err(CliError::config("need min < max and at least two grid points"));
    }
    let bounds = summary.bounds_spec()?;
    let bound = bounds.get(0);
    let params = summary.mixture_params()?;
    let tparams = summary.transform_params();
    let cache = params.density_cache()?;

    let mut table = String::from("x,density");
    for k in 1..=summary.g {
        let _ = write!(table, ",component{k}");
    }
    table.push('\n');
    for i in 0..points {
        let x = min + (max - min) * i as f64 / (points - 1) as f64;
        if !bound.contains(x) {
            return Err(CliError::Validation(format!(
                "grid point {x} lies outside the open support"
            )));
        }
        let total = log_density_original(&[x], &params, &tparams, &bounds)?.exp();
        let logjac = log_jacobian(&[x], &bounds, &tparams)?;
        let y = DVector::from_element(1, forward(x, bound, tparams.lambda[0])?);
        let _ = write!(table, "{x},{total}");
        for k in 0..summary.g {
            let fk = (cache.log_component(k, &y) + logjac).exp() * params.weights[k];
            let _ = write!(table, ",{fk}");
        }
        table.push('\n');
    }
    write_atomic(out, &table)?;
    println!("wrote {} grid points to {}", points, out.display());
    Ok(())
}

pub fn cmd_profiles(fit_file: &Path, out: &Path) -> Result<(), CliError> {
    let summary = Summary::load(fit_file)?;
    let bounds = summary.bounds_spec()?;
    let tparams = summary.transform_params();
    let mut table = String::from("variable,cluster,transformed_mean,original_mean,defined,data_mean\n");
    for (j, name) in summary.columns.iter().enumerate() {
        for k in 0..summary.g {
            let mu = summary.means[k][j];
            let back = inverse(mu, bounds.get(j), tparams.lambda[j]);
            let (value, defined) = match back {
                Ok(v) => (format!("{v}"), true),
                Err(_) => (String::new(), false),
            };
            let _ = writeln!(
                table,
                "{},{},{},{},{},{}",
                name,
                k + 1,
                mu,
                value,
                defined,
                summary.data_means[j]
            );
        }
    }
    write_atomic(out, &table)?;
    println!("wrote cluster profiles to {}", out.display());
    Ok(())
}

pub fn cmd_transform(config: &RunConfig) -> Result<(), CliError> {
    let (csv_data, bounds, fixed) = load_run_data(config)?;
    let data = &csv_data.dataset;
    let model = if data.d() == 1 {
        ModelCode::V
    } else {
        ModelCode::VVV
    };
    let fc = fit_config(config, 1, model, &fixed);
    let tparams = marginal_transform_params(data, &bounds, &fc)?;

    let mut table = data.column_names().join(",");
    table.push('\n');
    for i in 0..data.n() {
        for j in 0..data.d() {
            if j > 0 {
                table.push(',');
            }
            let y = forward(data.get(i, j), bounds.get(j), tparams.lambda[j])?;
            let _ = write!(table, "{y}");
        }
        table.push('\n');
    }
    write_atomic(&config.out.join("transformed.csv"), &table)?;

    #[derive(serde::Serialize)]
    struct Lambdas<'a> {
        columns: &'a [String],
        lambda: &'a [f64],
        fixed: &'a [bool],
    }
    write_json(
        &config.out.join("lambdas.json"),
        &Lambdas {
            columns: data.column_names(),
            lambda: &tparams.lambda,
            fixed: &tparams.fixed,
        },
    )?;
    for (name, (lam, fix)) in data
        .column_names()
        .iter()
        .zip(tparams.lambda.iter().zip(&tparams.fixed))
    {
        println!(
            "{name}: lambda = {lam:.4}{}",
            if *fix { " (fixed)" } else { "" }
        );
    }
    Ok(())
}

pub fn cmd_classify(
    fit_file: &Path,
    data_path: &Path,
    has_header: bool,
    out: &Path,
) -> Result<(), CliError> {
    let summary = Summary::load(fit_file)?;
    let bounds = summary.bounds_spec()?;
    let params = summary.mixture_params()?;
    let tparams = summary.transform_params();

    let selection = if has_header {
        gmmb::data::ColumnSelection::ByName(summary.columns.clone())
    } else {
        gmmb::data::ColumnSelection::All
    };
    let csv_data = load_csv(data_path, has_header, &bounds, &selection)?;
    let report = validate(&csv_data.dataset, &bounds)?;
    report.into_result().map_err(CliError::from)?;

    let (z, _) = gmmb::ecm::e_step(&csv_data.dataset, &bounds, &params, &tparams)?;
    let (labels, uncertainty) = gmmb::diagnostics::map_classify(&z);

    let mut table = String::from("row,classification,uncertainty");
    for k in 1..=summary.g {
        let _ = write!(table, ",z{k}");
    }
    table.push('\n');
    for i in 0..z.n() {
        let _ = write!(table, "{},{},{}", i + 1, labels[i], uncertainty[i]);
        for k in 0..summary.g {
            let _ = write!(table, ",{}", z.matrix()[(i, k)]);
        }
        table.push('\n');
    }
    write_atomic(out, &table)?;
    println!(
        "classified {} row(s) into {} component(s); wrote {}",
        z.n(),
        summary.g,
        out.display()
    );
    Ok(())
}

pub fn default_out_file(out: &Option<PathBuf>, name: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => PathBuf::from("gmmb-out").join(name),
    }
}
