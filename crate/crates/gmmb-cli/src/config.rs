//! Run configuration: TOML file plus command-line overrides.

use gmmb::data::{Bound, ColumnSelection};
use gmmb::{BoundsSpec, ModelCode};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Contents of a configuration file. Every field is optional so a file can
/// carry only the parts not given on the command line; unknown keys are
/// rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub has_header: Option<bool>,
    pub columns: Option<Vec<String>>,
    #[serde(default)]
    pub bounds: Vec<BoundDecl>,
    pub models: Option<Vec<String>>,
    #[serde(rename = "G")]
    pub g: Option<GSpec>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub nudge_boundary: Option<bool>,
    pub out: Option<PathBuf>,
}

/// Per-column bounds declaration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundDecl {
    pub column: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub fixed_lambda: Option<f64>,
}

/// Number-of-components grid: a single value, an explicit list, or "a..b".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GSpec {
    One(usize),
    Many(Vec<usize>),
    Range(String),
}

impl GSpec {
    pub fn expand(&self) -> Result<Vec<usize>, CliError> {
        let gs = match self {
            GSpec::One(g) => vec![*g],
            GSpec::Many(v) => v.clone(),
            GSpec::Range(s) => parse_g_range(s)?,
        };
        if gs.is_empty() || gs.iter().any(|&g| g == 0) {
            return Err(CliError::config("G must list positive component counts"));
        }
        Ok(gs)
    }
}

pub fn parse_g_range(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::config(format!("cannot parse G specification {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect()
    }
}

/// "col:lower=0", "col:lower=0,upper=1", or "col:none".
pub fn parse_bound_flag(s: &str) -> Result<BoundDecl, CliError> {
    let (col, rest) = s
        .split_once(':')
        .ok_or_else(|| CliError::config(format!("--bounds {s:?}: expected \"column:spec\"")))?;
    let mut decl = BoundDecl {
        column: col.trim().to_string(),
        lower: None,
        upper: None,
        fixed_lambda: None,
    };
    if rest.trim() == "none" {
        return Ok(decl);
    }
    for part in rest.split(',') {
        let (k, v) = part.split_once('=').ok_or_else(|| {
            CliError::config(format!("--bounds {s:?}: expected key=value, got {part:?}"))
        })?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("--bounds {s:?}: bad number {v:?}")))?;
        match k.trim() {
            "lower" => decl.lower = Some(v),
            "upper" => decl.upper = Some(v),
            "fixed_lambda" => decl.fixed_lambda = Some(v),
            other => {
                return Err(CliError::config(format!(
                    "--bounds {s:?}: unknown key {other:?}"
                )))
            }
        }
    }
    if decl.upper.is_some() && decl.lower.is_none() {
        return Err(CliError::config(format!(
            "--bounds {s:?}: upper bound requires a lower bound"
        )));
    }
    Ok(decl)
}

/// A fully resolved run: file values with command-line overrides applied.
#[derive(Debug)]
pub struct RunConfig {
    pub data: PathBuf,
    pub has_header: bool,
    pub columns: Option<Vec<String>>,
    pub bounds: Vec<BoundDecl>,
    pub models: Vec<ModelCode>,
    pub g_range: Vec<usize>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub nudge_boundary: bool,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, args: &crate::RunArgs) -> Result<Self, CliError> {
        let data = args
            .data
            .clone()
            .or(file.data)
            .ok_or_else(|| CliError::config("no data file given (--data or `data` key)"))?;

        let columns = match &args.columns {
            Some(list) => Some(list.split(',').map(|s| s.trim().to_string()).collect()),
            None => file.columns,
        };

        let mut bounds = file.bounds;
        for flag in &args.bounds {
            let decl = parse_bound_flag(flag)?;
            bounds.retain(|b| b.column != decl.column); // flag overrides file
            bounds.push(decl);
        }

        let model_names: Vec<String> = match &args.model {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
            None => file.models.unwrap_or_default(),
        };
        let models = model_names
            .iter()
            .map(|name| {
                ModelCode::from_str(name)
                    .map_err(|_| CliError::config(format!("unknown model code {name:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let g_range = match &args.g {
            Some(s) => parse_g_range(s)?,
            None => file.g.map(|g| g.expand()).transpose()?.unwrap_or_default(),
        };

        Ok(RunConfig {
            data,
            has_header: !args.no_header && file.has_header.unwrap_or(true),
            columns,
            bounds,
            models,
            g_range,
            seed: args.seed.or(file.seed).unwrap_or(0),
            tol: args.tol.or(file.tol).unwrap_or(1e-8),
            max_iter: args.max_iter.or(file.max_iter).unwrap_or(1000),
            nudge_boundary: args.nudge_boundary || file.nudge_boundary.unwrap_or(false),
            out: args
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("gmmb-out")),
        })
    }

    pub fn selection(&self) -> ColumnSelection {
        match &self.columns {
            Some(names) => ColumnSelection::ByName(names.clone()),
            None => ColumnSelection::All,
        }
    }

    /// Bounds and fixed-lambda settings in the order of the loaded columns.
    /// Columns without a declaration are unbounded. Declarations naming
    /// unknown columns are an error.
    pub fn bounds_for(
        &self,
        column_names: &[String],
    ) -> Result<(BoundsSpec, Vec<Option<f64>>), CliError> {
        for decl in &self.bounds {
            if !column_names.contains(&decl.column) {
                return Err(CliError::config(format!(
                    "bounds declared for unknown column {:?} (have {:?})",
                    decl.column, column_names
                )));
            }
        }
        let mut bs = Vec::with_capacity(column_names.len());
        let mut fixed = Vec::with_capacity(column_names.len());
        for name in column_names {
            let decl = self.bounds.iter().find(|b| &b.column == name);
            let b = match decl {
                Some(BoundDecl {
                    lower: Some(l),
                    upper: Some(u),
                    ..
                }) => Bound::DoublyBounded {
                    lower: *l,
                    upper: *u,
                },
                Some(BoundDecl {
                    lower: Some(l),
                    upper: None,
                    ..
                }) => Bound::LowerBounded { lower: *l },
                _ => Bound::Unbounded,
            };
            bs.push(b);
            fixed.push(decl.and_then(|d| d.fixed_lambda));
        }
        let spec = BoundsSpec::new(bs).map_err(CliError::from)?;
        Ok((spec, fixed))
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))
        }
    }
}
