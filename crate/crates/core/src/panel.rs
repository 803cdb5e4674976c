//! Panel datasets: DMU × period × variable tensors loaded from long-format CSV.
//!
//! The on-disk format is UTF-8 CSV with the exact header
//! `dmu,period,variable,value`. An empty `value` field, or a cell that is
//! absent from the file, is a missing cell. Missing cells are allowed at load
//! time and rejected when a dataset is validated for DEA.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dea::DeaSpec;

pub const CSV_HEADER: [&str; 4] = ["dmu", "period", "variable", "value"];

/// Headroom factor used by [`TransformMethod::MaxMinus`].
pub const MAX_MINUS_HEADROOM: f64 = 1.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DeaInput,
    DeaOutput,
    Indicator,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Desirable,
    Undesirable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDef {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub direction: Direction,
}

impl VariableDef {
    pub fn new(name: impl Into<String>, role: Role, direction: Direction) -> Self {
        Self {
            name: name.into(),
            role,
            direction,
        }
    }

    pub fn input(name: impl Into<String>) -> Self {
        Self::new(name, Role::DeaInput, Direction::Desirable)
    }

    pub fn output(name: impl Into<String>) -> Self {
        Self::new(name, Role::DeaOutput, Direction::Desirable)
    }

    pub fn indicator(name: impl Into<String>) -> Self {
        Self::new(name, Role::Indicator, Direction::Desirable)
    }

    pub fn undesirable(mut self) -> Self {
        self.direction = Direction::Undesirable;
        self
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("bad header: expected `dmu,period,variable,value`, found `{0}`")]
    Header(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: variable `{name}` is not in the schema")]
    UnknownVariable { line: u64, name: String },
    #[error("line {line}: duplicate cell ({dmu}, {period}, {variable})")]
    Duplicate {
        line: u64,
        dmu: String,
        period: String,
        variable: String,
    },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error at ({dmu}, {period}, {variable}): value {value} is not strictly positive")]
    Domain {
        dmu: String,
        period: String,
        variable: String,
        value: f64,
    },
    #[error("period `{0}` not found in panel")]
    PeriodNotFound(String),
    #[error("invalid cross-section: {0}")]
    Invalid(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense DMU × period × variable tensor. `None` is the missing marker.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    dmus: Vec<String>,
    periods: Vec<String>,
    variables: Vec<VariableDef>,
    values: Vec<Option<f64>>,
}

fn check_unique<'a>(what: &str, items: impl IntoIterator<Item = &'a str>) -> Result<(), PanelError> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item) {
            return Err(PanelError::Schema(format!("duplicate {what} `{item}`")));
        }
    }
    Ok(())
}

pub(crate) fn check_schema(schema: &[VariableDef]) -> Result<(), PanelError> {
    check_unique("variable", schema.iter().map(|v| v.name.as_str()))?;
    if let Some(v) = schema
        .iter()
        .find(|v| v.role == Role::DeaInput && v.direction == Direction::Undesirable)
    {
        return Err(PanelError::Schema(format!(
            "input `{}` cannot be undesirable",
            v.name
        )));
    }
    Ok(())
}

impl PanelDataset {
    /// Builds a dataset from a flat `(dmu, period, variable)`-ordered vector.
    pub fn new(
        dmus: Vec<String>,
        periods: Vec<String>,
        variables: Vec<VariableDef>,
        values: Vec<Option<f64>>,
    ) -> Result<Self, PanelError> {
        check_unique("dmu", dmus.iter().map(String::as_str))?;
        check_unique("period", periods.iter().map(String::as_str))?;
        check_schema(&variables)?;
        let expected = dmus.len() * periods.len() * variables.len();
        if values.len() != expected {
            return Err(PanelError::Shape(format!(
                "{} values for a {}×{}×{} panel",
                values.len(),
                dmus.len(),
                periods.len(),
                variables.len()
            )));
        }
        Ok(Self {
            dmus,
            periods,
            variables,
            values,
        })
    }

    pub fn dmus(&self) -> &[String] {
        &self.dmus
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn variables(&self) -> &[VariableDef] {
        &self.variables
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dmus.len(), self.periods.len(), self.variables.len())
    }

    fn offset(&self, d: usize, p: usize, v: usize) -> usize {
        (d * self.periods.len() + p) * self.variables.len() + v
    }

    pub fn get(&self, d: usize, p: usize, v: usize) -> Option<f64> {
        self.values[self.offset(d, p, v)]
    }

    pub fn set(&mut self, d: usize, p: usize, v: usize, value: Option<f64>) {
        let i = self.offset(d, p, v);
        self.values[i] = value;
    }

    pub fn dmu_index(&self, name: &str) -> Option<usize> {
        self.dmus.iter().position(|d| d == name)
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == label)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn variable(&self, name: &str) -> Option<&VariableDef> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Values of one variable across all (dmu, period) pairs, dmu-major.
    pub fn column(&self, v: usize) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(self.dmus.len() * self.periods.len());
        for d in 0..self.dmus.len() {
            for p in 0..self.periods.len() {
                out.push(self.get(d, p, v));
            }
        }
        out
    }
}

/// Reads a long-format panel. DMUs and periods keep first-appearance order.
pub fn load_panel<R: Read>(source: R, schema: &[VariableDef]) -> Result<PanelDataset, PanelError> {
    check_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header = reader.headers().map_err(|e| PanelError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(PanelError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let var_index: HashMap<&str, usize> = schema
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();

    let mut dmus: Vec<String> = Vec::new();
    let mut dmu_index: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut period_index: HashMap<String, usize> = HashMap::new();
    // (dmu, period, var) -> value
    let mut cells: HashMap<(usize, usize, usize), Option<f64>> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| PanelError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let (dmu, period, variable, value) = (&record[0], &record[1], &record[2], &record[3]);
        if dmu.is_empty() || period.is_empty() {
            return Err(PanelError::Parse {
                line,
                message: "empty dmu or period".into(),
            });
        }
        let Some(&v) = var_index.get(variable) else {
            return Err(PanelError::UnknownVariable {
                line,
                name: variable.to_string(),
            });
        };
        let value = if value.is_empty() {
            None
        } else {
            let x: f64 = value.trim().parse().map_err(|_| PanelError::Parse {
                line,
                message: format!("`{value}` is not a decimal number"),
            })?;
            Some(x)
        };
        let d = *dmu_index.entry(dmu.to_string()).or_insert_with(|| {
            dmus.push(dmu.to_string());
            dmus.len() - 1
        });
        let p = *period_index.entry(period.to_string()).or_insert_with(|| {
            periods.push(period.to_string());
            periods.len() - 1
        });
        if cells.insert((d, p, v), value).is_some() {
            return Err(PanelError::Duplicate {
                line,
                dmu: dmu.to_string(),
                period: period.to_string(),
                variable: variable.to_string(),
            });
        }
    }

    let nv = schema.len();
    let mut values = vec![None; dmus.len() * periods.len() * nv];
    for ((d, p, v), x) in cells {
        values[(d * periods.len() + p) * nv + v] = x;
    }
    PanelDataset::new(dmus, periods, schema.to_vec(), values)
}

/// Writes the panel in long format, one row per cell; missing cells get an
/// empty value field.
pub fn write_panel<W: Write>(panel: &PanelDataset, sink: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| PanelError::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for (d, dmu) in panel.dmus.iter().enumerate() {
        for (p, period) in panel.periods.iter().enumerate() {
            for (v, var) in panel.variables.iter().enumerate() {
                let value = panel.get(d, p, v).map(|x| x.to_string()).unwrap_or_default();
                w.write_record([dmu.as_str(), period.as_str(), var.name.as_str(), value.as_str()])
                    .map_err(io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    UnknownVariable,
    RoleMismatch,
    EmptySpec,
    Overlap,
    Missing,
    NonFinite,
    Nonpositive,
    Discrimination,
    UndesirableOutput,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dmu: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
    pub location: Location,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has_warning(&self, code: IssueCode) -> bool {
        self.warnings.iter().any(|w| w.code == code)
    }

    pub fn has_error(&self, code: IssueCode) -> bool {
        self.errors.iter().any(|w| w.code == code)
    }

    fn error(&mut self, code: IssueCode, message: String, location: Location) {
        self.errors.push(Issue {
            code,
            message,
            location,
        });
    }

    fn warn(&mut self, code: IssueCode, message: String, location: Location) {
        self.warnings.push(Issue {
            code,
            message,
            location,
        });
    }
}

fn var_location(name: &str) -> Location {
    Location {
        dmu: None,
        period: None,
        variable: Some(name.to_string()),
    }
}

/// Checks that `spec` can be run on `panel`: every referenced variable exists
/// with the right role, and every DEA cell is present, finite and positive.
pub fn validate_for_dea(panel: &PanelDataset, spec: &DeaSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.inputs.is_empty() || spec.outputs.is_empty() {
        report.error(
            IssueCode::EmptySpec,
            "a DEA model needs at least one input and one output".into(),
            Location {
                dmu: None,
                period: None,
                variable: None,
            },
        );
    }
    let mut checked = Vec::new();
    for (name, role) in spec
        .inputs
        .iter()
        .map(|n| (n, Role::DeaInput))
        .chain(spec.outputs.iter().map(|n| (n, Role::DeaOutput)))
    {
        if role == Role::DeaOutput && spec.inputs.contains(name) {
            report.error(
                IssueCode::Overlap,
                format!("`{name}` is both an input and an output"),
                var_location(name),
            );
        }
        let Some(v) = panel.variable_index(name) else {
            report.error(
                IssueCode::UnknownVariable,
                format!("unknown variable `{name}`"),
                var_location(name),
            );
            continue;
        };
        let def = &panel.variables[v];
        if def.role != role {
            report.error(
                IssueCode::RoleMismatch,
                format!("`{name}` has role {:?}, used as {:?}", def.role, role),
                var_location(name),
            );
        }
        if role == Role::DeaOutput && def.direction == Direction::Undesirable {
            report.warn(
                IssueCode::UndesirableOutput,
                format!("output `{name}` is undesirable (less is better) and has not been transformed"),
                var_location(name),
            );
        }
        checked.push(v);
    }
    for &v in &checked {
        let name = &panel.variables[v].name;
        for (d, dmu) in panel.dmus.iter().enumerate() {
            for (p, period) in panel.periods.iter().enumerate() {
                let loc = || Location {
                    dmu: Some(dmu.clone()),
                    period: Some(period.clone()),
                    variable: Some(name.clone()),
                };
                match panel.get(d, p, v) {
                    None => report.error(
                        IssueCode::Missing,
                        format!("missing `{name}` for ({dmu}, {period})"),
                        loc(),
                    ),
                    Some(x) if !x.is_finite() => report.error(
                        IssueCode::NonFinite,
                        format!("non-finite `{name}` for ({dmu}, {period})"),
                        loc(),
                    ),
                    Some(x) if x <= 0.0 => report.error(
                        IssueCode::Nonpositive,
                        format!("`{name}` = {x} for ({dmu}, {period}) is not strictly positive"),
                        loc(),
                    ),
                    Some(_) => {}
                }
            }
        }
    }
    let products = spec.inputs.len() * spec.outputs.len();
    if panel.dmus.len() <= products {
        report.warn(
            IssueCode::Discrimination,
            format!(
                "{} DMUs is not more than inputs × outputs = {} × {} = {products}; discrimination between efficient and inefficient DMUs will be weak",
                panel.dmus.len(),
                spec.inputs.len(),
                spec.outputs.len()
            ),
            Location {
                dmu: None,
                period: None,
                variable: None,
            },
        );
    }
    report
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMethod {
    Reciprocal,
    #[default]
    MaxMinus,
}

/// Turns an undesirable variable into a more-is-better one and marks it
/// desirable. `MaxMinus` works per period: `x' = 1.01 · max_j x_j − x`.
pub fn transform_undesirable(
    panel: &PanelDataset,
    variable: &str,
    method: TransformMethod,
) -> Result<PanelDataset, PanelError> {
    let v = panel
        .variable_index(variable)
        .ok_or_else(|| PanelError::Usage(format!("unknown variable `{variable}`")))?;
    if panel.variables[v].direction != Direction::Undesirable {
        return Err(PanelError::Usage(format!(
            "variable `{variable}` is not marked undesirable"
        )));
    }
    let mut out = panel.clone();
    for p in 0..panel.periods.len() {
        for d in 0..panel.dmus.len() {
            if let Some(x) = panel.get(d, p, v) {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(PanelError::Domain {
                        dmu: panel.dmus[d].clone(),
                        period: panel.periods[p].clone(),
                        variable: variable.to_string(),
                        value: x,
                    });
                }
            }
        }
        match method {
            TransformMethod::Reciprocal => {
                for d in 0..panel.dmus.len() {
                    if let Some(x) = panel.get(d, p, v) {
                        out.set(d, p, v, Some(1.0 / x));
                    }
                }
            }
            TransformMethod::MaxMinus => {
                let max = (0..panel.dmus.len())
                    .filter_map(|d| panel.get(d, p, v))
                    .fold(f64::NEG_INFINITY, f64::max);
                for d in 0..panel.dmus.len() {
                    if let Some(x) = panel.get(d, p, v) {
                        out.set(d, p, v, Some(MAX_MINUS_HEADROOM * max - x));
                    }
                }
            }
        }
    }
    out.variables[v].direction = Direction::Desirable;
    Ok(out)
}

/// One period of a panel, restricted to a DEA model's variables.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub period: String,
    pub dmus: Vec<String>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// dmu × input
    pub inputs: Vec<Vec<f64>>,
    /// dmu × output
    pub outputs: Vec<Vec<f64>>,
}

impl CrossSection {
    pub fn new(
        period: impl Into<String>,
        dmus: Vec<String>,
        input_names: Vec<String>,
        output_names: Vec<String>,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<Vec<f64>>,
    ) -> Result<Self, PanelError> {
        if inputs.len() != dmus.len() || outputs.len() != dmus.len() {
            return Err(PanelError::Invalid("row count differs from DMU count".into()));
        }
        if dmus.is_empty() || input_names.is_empty() || output_names.is_empty() {
            return Err(PanelError::Invalid("empty cross-section".into()));
        }
        for (d, (xi, yi)) in inputs.iter().zip(&outputs).enumerate() {
            if xi.len() != input_names.len() || yi.len() != output_names.len() {
                return Err(PanelError::Invalid(format!("row {d} has the wrong width")));
            }
            if xi.iter().chain(yi).any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(PanelError::Invalid(format!(
                    "DMU `{}` has a non-positive or non-finite value",
                    dmus[d]
                )));
            }
        }
        Ok(Self {
            period: period.into(),
            dmus,
            input_names,
            output_names,
            inputs,
            outputs,
        })
    }

    /// Unlabelled cross-section, handy for ad-hoc and test instances.
    pub fn from_matrices(inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self, PanelError> {
        let n = inputs.len();
        let m = inputs.first().map_or(0, Vec::len);
        let s = outputs.first().map_or(0, Vec::len);
        Self::new(
            "",
            (0..n).map(|i| format!("D{i}")).collect(),
            (0..m).map(|i| format!("x{i}")).collect(),
            (0..s).map(|i| format!("y{i}")).collect(),
            inputs,
            outputs,
        )
    }

    pub fn len(&self) -> usize {
        self.dmus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dmus.is_empty()
    }
}

/// Projects one period onto the variables of `spec`.
pub fn slice_period(panel: &PanelDataset, period: &str, spec: &DeaSpec) -> Result<CrossSection, PanelError> {
    let p = panel
        .period_index(period)
        .ok_or_else(|| PanelError::PeriodNotFound(period.to_string()))?;
    let lookup = |names: &[String]| -> Result<Vec<usize>, PanelError> {
        names
            .iter()
            .map(|n| {
                panel
                    .variable_index(n)
                    .ok_or_else(|| PanelError::Invalid(format!("unknown variable `{n}`")))
            })
            .collect()
    };
    let iv = lookup(&spec.inputs)?;
    let ov = lookup(&spec.outputs)?;
    let row = |d: usize, vars: &[usize]| -> Result<Vec<f64>, PanelError> {
        vars.iter()
            .map(|&v| {
                panel.get(d, p, v).ok_or_else(|| {
                    PanelError::Invalid(format!(
                        "missing `{}` for ({}, {period})",
                        panel.variables[v].name, panel.dmus[d]
                    ))
                })
            })
            .collect()
    };
    let mut inputs = Vec::with_capacity(panel.dmus.len());
    let mut outputs = Vec::with_capacity(panel.dmus.len());
    for d in 0..panel.dmus.len() {
        inputs.push(row(d, &iv)?);
        outputs.push(row(d, &ov)?);
    }
    CrossSection::new(
        period,
        panel.dmus.clone(),
        spec.inputs.clone(),
        spec.outputs.clone(),
        inputs,
        outputs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dea::{Orientation, ReturnsToScale};

    fn schema_x() -> Vec<VariableDef> {
        vec![VariableDef::input("x")]
    }

    #[test]
    fn single_cell_round_trip() {
        let csv = "dmu,period,variable,value\nA,1998,x,2.0\n";
        let p = load_panel(csv.as_bytes(), &schema_x()).unwrap();
        assert_eq!(p.dims(), (1, 1, 1));
        assert_eq!(p.get(0, 0, 0), Some(2.0));
    }

    #[test]
    fn duplicate_key_names_second_line() {
        let csv = "dmu,period,variable,value\nA,1998,x,2.0\nA,1998,x,3.0\n";
        match load_panel(csv.as_bytes(), &schema_x()) {
            Err(PanelError::Duplicate { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_variable_and_bad_number() {
        let csv = "dmu,period,variable,value\nA,1998,z,2.0\n";
        assert!(matches!(
            load_panel(csv.as_bytes(), &schema_x()),
            Err(PanelError::UnknownVariable { line: 2, .. })
        ));
        let csv = "dmu,period,variable,value\nA,1998,x,two\n";
        assert!(matches!(
            load_panel(csv.as_bytes(), &schema_x()),
            Err(PanelError::Parse { line: 2, .. })
        ));
        let csv = "dmu,period,variable,value\nA,1998,x\n";
        assert!(matches!(load_panel(csv.as_bytes(), &schema_x()), Err(PanelError::Parse { .. })));
        let csv = "dmu;period;variable;value\n";
        assert!(matches!(load_panel(csv.as_bytes(), &schema_x()), Err(PanelError::Header(_))));
    }

    #[test]
    fn absent_and_empty_cells_are_missing() {
        let schema = vec![VariableDef::input("x"), VariableDef::output("y")];
        let csv = "dmu,period,variable,value\nA,1,x,1\nA,1,y,\nB,1,x,2\n";
        let p = load_panel(csv.as_bytes(), &schema).unwrap();
        assert_eq!(p.get(0, 0, 1), None);
        assert_eq!(p.get(1, 0, 1), None);
        assert_eq!(p.missing_count(), 2);
    }

    #[test]
    fn undesirable_input_rejected() {
        let schema = vec![VariableDef::input("x").undesirable()];
        assert!(matches!(
            load_panel("dmu,period,variable,value\n".as_bytes(), &schema),
            Err(PanelError::Schema(_))
        ));
    }

    fn one_period(values: &[f64]) -> PanelDataset {
        let n = values.len();
        PanelDataset::new(
            (0..n).map(|i| format!("D{i}")).collect(),
            vec!["1998".into()],
            vec![VariableDef::output("m").undesirable()],
            values.iter().map(|&v| Some(v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn reciprocal_transform() {
        let p = transform_undesirable(&one_period(&[2.0, 4.0]), "m", TransformMethod::Reciprocal).unwrap();
        assert_eq!(p.get(0, 0, 0), Some(0.5));
        assert_eq!(p.get(1, 0, 0), Some(0.25));
        assert_eq!(p.variables()[0].direction, Direction::Desirable);
    }

    #[test]
    fn max_minus_transform() {
        let p = transform_undesirable(&one_period(&[10.0, 107.0]), "m", TransformMethod::MaxMinus).unwrap();
        assert!((p.get(0, 0, 0).unwrap() - 98.07).abs() < 1e-12);
        assert!((p.get(1, 0, 0).unwrap() - 1.07).abs() < 1e-12);
        // second application is refused
        assert!(matches!(
            transform_undesirable(&p, "m", TransformMethod::MaxMinus),
            Err(PanelError::Usage(_))
        ));
    }

    #[test]
    fn reciprocal_of_zero_is_domain_error() {
        assert!(matches!(
            transform_undesirable(&one_period(&[0.0, 4.0]), "m", TransformMethod::Reciprocal),
            Err(PanelError::Domain { .. })
        ));
    }

    fn spec(inputs: &[&str], outputs: &[&str]) -> DeaSpec {
        DeaSpec::new(inputs, outputs, ReturnsToScale::Crs, Orientation::Input)
    }

    #[test]
    fn zero_input_is_nonpositive_error_with_location() {
        let schema = vec![VariableDef::input("x"), VariableDef::output("y")];
        let csv = "dmu,period,variable,value\nA,1998,x,0.0\nA,1998,y,1\nB,1998,x,1\nB,1998,y,1\n";
        let p = load_panel(csv.as_bytes(), &schema).unwrap();
        let r = validate_for_dea(&p, &spec(&["x"], &["y"]));
        assert!(!r.is_admissible());
        let e = &r.errors[0];
        assert_eq!(e.code, IssueCode::Nonpositive);
        assert_eq!(e.location.dmu.as_deref(), Some("A"));
        assert_eq!(e.location.period.as_deref(), Some("1998"));
    }

    #[test]
    fn unknown_period_lookup() {
        let p = one_period(&[1.0]);
        assert!(matches!(
            slice_period(&p, "2008", &spec(&["m"], &["m"])),
            Err(PanelError::PeriodNotFound(_))
        ));
    }
}
