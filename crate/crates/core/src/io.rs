//! Text formats: data CSV, flat `key=value` configs, option spec strings,
//! and the JSON/CSV outputs of the command line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::location::CenterSpec;
use crate::matrix::{DataMatrix, SymmetricPd};
use crate::population::{EllipticalModel, NamedModel, Radial, TableRow};
use crate::tuning::{Criterion, CvCurve};

/// Comma-separated numeric rows, one observation per row. A first row in
/// which no field reads as a number is taken as a header. Blank lines are
/// skipped.
pub fn parse_csv(text: &str) -> Result<(Option<Vec<String>>, DataMatrix)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let line = |r: &csv::StringRecord| r.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(idx + 1),
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, String> = record
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(format!("non-finite value '{f}'")),
                Err(_) => Err(format!("'{f}' is not a number")),
            })
            .collect();
        match parsed {
            Ok(row) => {
                match width {
                    None => width = Some(row.len()),
                    Some(w) if w != row.len() => {
                        return Err(Error::Parse {
                            line: line(&record),
                            message: format!("expected {w} fields, found {}", row.len()),
                        })
                    }
                    _ => {}
                }
                rows.push(row);
            }
            Err(message) => {
                if rows.is_empty() && header.is_none() && record.iter().all(|f| f.parse::<f64>().is_err()) {
                    let names: Vec<String> = record.iter().map(str::to_string).collect();
                    width = Some(names.len());
                    header = Some(names);
                } else {
                    return Err(Error::Parse { line: line(&record), message });
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }
    Ok((header, DataMatrix::from_rows(rows)?))
}

/// Round-trippable CSV (shortest exact float formatting).
pub fn write_csv(x: &DataMatrix, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Necessary).from_writer(Vec::new());
        if w.write_record(h).is_ok() {
            if let Ok(bytes) = w.into_inner() {
                out.push_str(&String::from_utf8_lossy(&bytes));
            }
        }
    }
    for r in x.rows() {
        let fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Flat `key = value` lines. `#` starts a comment; keys are lower-cased and
/// `_` is read as `-`. Duplicate keys are an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key=value, got '{line}'") })?;
        let key = k.trim().to_ascii_lowercase().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse { line: i + 1, message: "empty key".into() });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Parse { line: i + 1, message: format!("duplicate key '{key}'") });
        }
    }
    Ok(out)
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(|c| c == ',' || c == ' ' || c == ';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let t = t.trim();
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::InvalidInput(format!("'{t}' is not a finite number"))),
            }
        })
        .collect()
}

/// `spatial`, `marginal`, `pairwise` or `known=a,b,...`.
pub fn parse_center(s: &str) -> Result<CenterSpec> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("known=") {
        let v = parse_f64_list(rest)?;
        if v.is_empty() {
            return Err(Error::InvalidInput("known center needs coordinates".into()));
        }
        return Ok(CenterSpec::Known(v));
    }
    match s.to_ascii_lowercase().as_str() {
        "spatial" | "spatial-median" | "spatial_median" => Ok(CenterSpec::SpatialMedian),
        "marginal" | "marginal-median" | "marginal_median" => Ok(CenterSpec::MarginalMedian),
        "pairwise" | "pairwise-differences" => Ok(CenterSpec::PairwiseDifferences),
        other => Err(Error::InvalidInput(format!("unknown center '{other}'"))),
    }
}

/// Penalty target before it is resolved against data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Identity,
    Sigma2,
    File(String),
}

/// `identity`, `sigma2` or `file=path`.
pub fn parse_target(s: &str) -> Result<TargetSpec> {
    let s = s.trim();
    if let Some(path) = s.strip_prefix("file=") {
        if path.is_empty() {
            return Err(Error::InvalidInput("target file path is empty".into()));
        }
        return Ok(TargetSpec::File(path.to_string()));
    }
    match s.to_ascii_lowercase().as_str() {
        "identity" | "i" => Ok(TargetSpec::Identity),
        "sigma2" => Ok(TargetSpec::Sigma2),
        other => Err(Error::InvalidInput(format!("unknown target '{other}'"))),
    }
}

/// A square symmetric positive definite matrix in CSV form.
pub fn parse_matrix(text: &str) -> Result<SymmetricPd> {
    let (_, m) = parse_csv(text)?;
    if m.n() != m.q() {
        return Err(Error::DimensionMismatch { expected: m.q(), found: m.n() });
    }
    SymmetricPd::new(m.to_matrix())
}

/// `normal`, `t=dof` or `point=r`.
pub fn parse_radial(s: &str) -> Result<Radial> {
    let s = s.trim().to_ascii_lowercase();
    let num = |v: &str| {
        v.parse::<f64>().map_err(|_| Error::InvalidInput(format!("'{v}' is not a number")))
    };
    if s == "normal" {
        Ok(Radial::Normal)
    } else if let Some(v) = s.strip_prefix("t=") {
        Ok(Radial::StudentT { dof: num(v)? })
    } else if let Some(v) = s.strip_prefix("point=") {
        Ok(Radial::PointMass { r: num(v)? })
    } else {
        Err(Error::InvalidInput(format!("unknown radial law '{s}'")))
    }
}

/// `1`/`spiked` (eigenvalues 10,1,...,1), `2`/`linear` (10 down to 1 evenly)
/// or `diag=l1,l2,...`.
pub fn parse_model(s: &str, q: usize, radial: Radial) -> Result<NamedModel> {
    let s = s.trim();
    let eigenvalues = if let Some(rest) = s.strip_prefix("diag=") {
        parse_f64_list(rest)?
    } else {
        if q == 0 {
            return Err(Error::Parameter("q must be positive".into()));
        }
        match s.to_ascii_lowercase().as_str() {
            "1" | "spiked" | "model1" => EllipticalModel::spiked(q)?.sigma_o_eigenvalues,
            "2" | "linear" | "model2" => EllipticalModel::linear(q)?.sigma_o_eigenvalues,
            other => return Err(Error::InvalidInput(format!("unknown model '{other}'"))),
        }
    };
    let model = EllipticalModel::new(eigenvalues, radial)?;
    Ok(NamedModel { name: s.to_string(), model })
}

/// Models separated by `;`.
pub fn parse_models(s: &str, q: usize, radial: Radial) -> Result<Vec<NamedModel>> {
    let parts: Vec<&str> = s.split(';').filter(|p| !p.trim().is_empty()).collect();
    let parts = if parts.len() == 1 && !parts[0].contains('=') {
        parts[0].split(',').collect()
    } else {
        parts
    };
    parts.into_iter().map(|p| parse_model(p, q, radial)).collect()
}

fn rows_of(m: &SymmetricPd) -> Vec<Vec<f64>> {
    let a = m.matrix();
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

/// Output of `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: String,
    pub parameters: BTreeMap<String, f64>,
    pub center_used: String,
    /// Row-major.
    pub sigma: Vec<Vec<f64>>,
    pub v: Option<Vec<Vec<f64>>>,
    pub shape: Vec<Vec<f64>>,
    pub condition_number: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed: Option<u64>,
}

impl EstimateRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: &str,
        parameters: BTreeMap<String, f64>,
        center_used: String,
        sigma: &SymmetricPd,
        v: Option<&SymmetricPd>,
        converged: bool,
        iterations: usize,
        seed: Option<u64>,
    ) -> Self {
        let shape = crate::matrix::shape_of(sigma);
        Self {
            method: method.to_string(),
            parameters,
            center_used,
            sigma: rows_of(sigma),
            v: v.map(rows_of),
            condition_number: shape.condition_number(),
            shape: rows_of(&shape),
            converged,
            iterations,
            seed,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_else(|| "NA".into())
}

/// One row per grid point with a column per criterion, followed by
/// `selected_beta` and `selected_cn` footer rows. `NA` marks missing values.
pub fn curves_csv(curve: &CvCurve, selected_cn: &[Option<f64>]) -> String {
    let mut out = String::from("beta");
    for c in Criterion::ALL {
        let _ = write!(out, ",{}", c.name());
    }
    out.push('\n');
    for (i, b) in curve.grid.iter().enumerate() {
        let _ = write!(out, "{b:?}");
        for c in Criterion::ALL {
            let _ = write!(out, ",{}", fmt_opt(curve.scores(c)[i]));
        }
        out.push('\n');
    }
    out.push_str("selected_beta");
    for c in Criterion::ALL {
        let _ = write!(out, ",{}", fmt_opt(curve.selected(c)));
    }
    out.push('\n');
    out.push_str("selected_cn");
    for c in Criterion::ALL {
        let _ = write!(out, ",{}", fmt_opt(selected_cn.get(c.index()).copied().flatten()));
    }
    out.push('\n');
    out
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("model,q,kappa,gamma,cn,cn_v,cn_se,cn_v_se,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{},{},{},{},{}",
            r.model,
            r.q,
            r.kappa,
            r.gamma,
            fmt_opt(r.cn),
            fmt_opt(r.cn_v),
            fmt_opt(r.cn_se),
            fmt_opt(r.cn_v_se),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}
