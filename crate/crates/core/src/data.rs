//! Observational datasets with column roles, validation, CSV ingestion and the
//! wide per-subject view used by the longitudinal estimators.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Outcome,
    Treatment,
    CovariateX,
    ProxyZ,
    ProxyW,
    SubjectId,
    TimeIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Point,
    Longitudinal { periods: usize },
}

/// Column-name → role assignments plus the layout, as read from a role config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub layout: Layout,
    pub roles: BTreeMap<String, ColumnRole>,
}

/// Unvalidated named numeric columns, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.push(name, values);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.names.push(name.into());
        self.columns.push(values);
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// A validated dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_rows: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    roles: BTreeMap<String, ColumnRole>,
    layout: Layout,
}

/// Checks a raw table against role assignments and a layout, reporting every
/// violation found.
pub fn validate_dataset(
    raw: RawTable,
    roles: &BTreeMap<String, ColumnRole>,
    layout: Layout,
) -> Result<Dataset> {
    if raw.names.is_empty() || raw.n_rows() == 0 {
        return Err(Error::InvalidArgument("table is empty".into()));
    }
    let n = raw.n_rows();
    let mut violations = Vec::new();

    let mut seen = BTreeSet::new();
    for (name, col) in raw.names.iter().zip(&raw.columns) {
        if !seen.insert(name.as_str()) {
            violations.push(Violation::RoleConflict {
                column: name.clone(),
                reason: "duplicate column name".into(),
            });
        }
        if col.len() != n {
            violations.push(Violation::RoleConflict {
                column: name.clone(),
                reason: format!("has {} rows, expected {n}", col.len()),
            });
        }
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            violations.push(Violation::NonFiniteValue {
                column: name.clone(),
                row,
            });
        }
    }

    for column in roles.keys() {
        if !raw.names.iter().any(|n| n == column) {
            violations.push(Violation::MissingColumn {
                column: column.clone(),
            });
        }
    }

    let with_role = |role: ColumnRole| -> Vec<&String> {
        roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(c, _)| c)
            .collect()
    };
    let outcomes = with_role(ColumnRole::Outcome);
    if outcomes.len() != 1 {
        violations.push(Violation::RoleConflict {
            column: outcomes
                .first()
                .map_or_else(|| "<outcome>".to_string(), |c| c.to_string()),
            reason: format!("exactly one outcome column required, found {}", outcomes.len()),
        });
    }
    let treatments = with_role(ColumnRole::Treatment);
    if treatments.is_empty() {
        violations.push(Violation::RoleConflict {
            column: "<treatment>".into(),
            reason: "at least one treatment column required".into(),
        });
    }

    match layout {
        Layout::Point => {
            for c in with_role(ColumnRole::TimeIndex) {
                violations.push(Violation::RoleConflict {
                    column: c.clone(),
                    reason: "time_index is only valid in a longitudinal layout".into(),
                });
            }
        }
        Layout::Longitudinal { periods } => {
            if periods < 2 {
                violations.push(Violation::RoleConflict {
                    column: "<layout>".into(),
                    reason: format!("longitudinal layout needs at least 2 periods, got {periods}"),
                });
            }
            if treatments.len() > 1 {
                violations.push(Violation::RoleConflict {
                    column: treatments[1].clone(),
                    reason: "longitudinal data take exactly one treatment column (one value per period)"
                        .into(),
                });
            }
            let ids = with_role(ColumnRole::SubjectId);
            let times = with_role(ColumnRole::TimeIndex);
            for (role, found) in [("subject_id", &ids), ("time_index", &times)] {
                if found.len() != 1 {
                    violations.push(Violation::RoleConflict {
                        column: format!("<{role}>"),
                        reason: format!("exactly one {role} column required, found {}", found.len()),
                    });
                }
            }
            if violations.is_empty() {
                check_panel(&raw, ids[0], times[0], periods, &mut violations);
            }
        }
    }

    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(Dataset {
        n_rows: n,
        names: raw.names,
        columns: raw.columns,
        roles: roles.clone(),
        layout,
    })
}

fn check_panel(
    raw: &RawTable,
    id_col: &str,
    time_col: &str,
    periods: usize,
    violations: &mut Vec<Violation>,
) {
    let get = |name: &str| {
        let k = raw.names.iter().position(|n| n == name).expect("role column exists");
        &raw.columns[k]
    };
    let ids = get(id_col);
    let times = get(time_col);
    for (name, col) in [(id_col, ids), (time_col, times)] {
        if let Some(row) = col.iter().position(|v| v.fract() != 0.0) {
            violations.push(Violation::RoleConflict {
                column: name.to_string(),
                reason: format!("non-integer value at row {row}"),
            });
            return;
        }
    }

    let mut seen: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (id, t) in ids.iter().zip(times) {
        let (id, t) = (*id as i64, *t as i64);
        let counts = seen.entry(id).or_insert_with(|| vec![0; periods]);
        if t < 0 || t as usize >= periods {
            violations.push(Violation::DuplicateSubjectTime {
                subject: id,
                time: t,
                problem: format!("is outside 0..{periods}"),
            });
            continue;
        }
        counts[t as usize] += 1;
    }
    for (id, counts) in &seen {
        for (t, c) in counts.iter().enumerate() {
            if *c == 0 {
                violations.push(Violation::DuplicateSubjectTime {
                    subject: *id,
                    time: t as i64,
                    problem: "is missing".into(),
                });
            } else if *c > 1 {
                violations.push(Violation::DuplicateSubjectTime {
                    subject: *id,
                    time: t as i64,
                    problem: format!("appears {c} times"),
                });
            }
        }
    }
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn roles(&self) -> &BTreeMap<String, ColumnRole> {
        &self.roles
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name).ok_or_else(|| {
            Error::Validation(vec![Violation::MissingColumn {
                column: name.to_string(),
            }])
        })
    }

    /// Columns with `role`, in table order.
    pub fn names_with_role(&self, role: ColumnRole) -> Vec<&str> {
        self.names
            .iter()
            .filter(|n| self.roles.get(*n) == Some(&role))
            .map(String::as_str)
            .collect()
    }

    pub fn outcome_name(&self) -> &str {
        self.names_with_role(ColumnRole::Outcome)[0]
    }

    pub fn to_raw(&self) -> RawTable {
        RawTable {
            names: self.names.clone(),
            columns: self.columns.clone(),
        }
    }

    /// Same data under different role assignments (revalidated).
    pub fn with_roles(&self, roles: BTreeMap<String, ColumnRole>) -> Result<Dataset> {
        validate_dataset(self.to_raw(), &roles, self.layout)
    }

    /// Rows `rows` (repeats allowed) as a new point dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Dataset {
            n_rows: rows.len(),
            names: self.names.clone(),
            columns,
            roles: self.roles.clone(),
            layout: self.layout,
        }
    }

    /// Builds a longitudinal dataset from whole subject trajectories. Subjects
    /// are given by their position in [`Panel::subjects`]; the k-th pick is
    /// relabeled as subject k so repeated draws stay distinct.
    pub fn select_subjects(&self, panel: &Panel, picks: &[usize]) -> Result<Dataset> {
        let id_col = self.names_with_role(ColumnRole::SubjectId);
        let id_idx = self
            .names
            .iter()
            .position(|n| n == id_col.first().copied().unwrap_or(""))
            .ok_or_else(|| Error::Layout("dataset has no subject_id column".into()))?;
        let rows: Vec<(usize, usize)> = picks
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| panel.rows[s].iter().map(move |&r| (k, r)))
            .collect();
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| {
                rows.iter()
                    .map(|&(k, r)| if c == id_idx { k as f64 } else { col[r] })
                    .collect()
            })
            .collect();
        Ok(Dataset {
            n_rows: rows.len(),
            names: self.names.clone(),
            columns,
            roles: self.roles.clone(),
            layout: self.layout,
        })
    }

    /// Matrix view of a point-layout dataset.
    pub fn point_view(&self) -> Result<PointView> {
        if self.layout != Layout::Point {
            return Err(Error::Layout("expected a point-treatment dataset".into()));
        }
        let treatments = self.names_with_role(ColumnRole::Treatment);
        if treatments.len() != 1 {
            return Err(Error::Unsupported(format!(
                "point estimators take a single treatment column, found {}",
                treatments.len()
            )));
        }
        let n = self.n_rows;
        let block = |role| -> Result<(Vec<String>, DMatrix<f64>)> {
            let names: Vec<String> = self
                .names_with_role(role)
                .into_iter()
                .map(str::to_string)
                .collect();
            let cols = names
                .iter()
                .map(|c| self.require(c))
                .collect::<Result<Vec<_>>>()?;
            Ok((names, DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])))
        };
        let (x_names, x) = block(ColumnRole::CovariateX)?;
        let (z_names, z) = block(ColumnRole::ProxyZ)?;
        let (w_names, w) = block(ColumnRole::ProxyW)?;
        Ok(PointView {
            y: DVector::from_column_slice(self.require(self.outcome_name())?),
            a: DVector::from_column_slice(self.require(treatments[0])?),
            x,
            z,
            w,
            outcome_name: self.outcome_name().to_string(),
            treatment_name: treatments[0].to_string(),
            x_names,
            z_names,
            w_names,
        })
    }

    /// Pivots a longitudinal dataset to one record per subject, sorted by
    /// (subject_id, time_index).
    pub fn panel(&self) -> Result<Panel> {
        let Layout::Longitudinal { periods } = self.layout else {
            return Err(Error::Layout("expected a longitudinal dataset".into()));
        };
        let ids = self.require(self.names_with_role(ColumnRole::SubjectId)[0])?;
        let times = self.require(self.names_with_role(ColumnRole::TimeIndex)[0])?;
        let mut by_subject: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for r in 0..self.n_rows {
            by_subject
                .entry(ids[r] as i64)
                .or_insert_with(|| vec![usize::MAX; periods])[times[r] as usize] = r;
        }
        let subjects: Vec<i64> = by_subject.keys().copied().collect();
        let rows: Vec<Vec<usize>> = by_subject.into_values().collect();
        let n = rows.len();

        let treatment_name = self.names_with_role(ColumnRole::Treatment)[0].to_string();
        let a_col = self.require(&treatment_name)?;
        let y_col = self.require(self.outcome_name())?;
        let names_of = |role| -> Vec<String> {
            self.names_with_role(role)
                .into_iter()
                .map(str::to_string)
                .collect()
        };
        let x_names = names_of(ColumnRole::CovariateX);
        let z_names = names_of(ColumnRole::ProxyZ);
        let w_names = names_of(ColumnRole::ProxyW);
        let per_period = |names: &[String]| -> Result<Vec<DMatrix<f64>>> {
            let cols = names
                .iter()
                .map(|c| self.require(c))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..periods)
                .map(|j| DMatrix::from_fn(n, cols.len(), |i, k| cols[k][rows[i][j]]))
                .collect())
        };

        Ok(Panel {
            periods,
            y: (0..n).map(|i| y_col[rows[i][periods - 1]]).collect(),
            a: (0..periods)
                .map(|j| (0..n).map(|i| a_col[rows[i][j]]).collect())
                .collect(),
            x: per_period(&x_names)?,
            z: per_period(&z_names)?,
            w: per_period(&w_names)?,
            subjects,
            rows,
            treatment_name,
            x_names,
            z_names,
            w_names,
        })
    }
}

/// Point-treatment data as vectors and matrices.
#[derive(Debug, Clone)]
pub struct PointView {
    pub y: DVector<f64>,
    pub a: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub outcome_name: String,
    pub treatment_name: String,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub w_names: Vec<String>,
}

impl PointView {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Wide per-subject records. Period-indexed vectors are `[j][subject]`.
#[derive(Debug, Clone)]
pub struct Panel {
    pub periods: usize,
    pub subjects: Vec<i64>,
    /// Source row of each (subject, period).
    pub rows: Vec<Vec<usize>>,
    /// Outcome, taken from the subject's last-period row.
    pub y: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub x: Vec<DMatrix<f64>>,
    pub z: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub treatment_name: String,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub w_names: Vec<String>,
}

impl Panel {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
}

const MISSING_TOKENS: [&str; 5] = ["", "NA", "NaN", "nan", "null"];

/// Reads a headed CSV and applies a role config. Non-numeric columns are one-hot
/// encoded (reference level = first observed level, dropped); the generated
/// indicator columns `<col>_<level>` inherit the source column's role.
/// Non-numeric subject ids are coded by order of first appearance.
pub fn read_csv<R: Read>(reader: R, config: &RoleConfig) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in rdr.records() {
        let record = record?;
        for (k, field) in record.iter().enumerate() {
            cells[k].push(field.trim().to_string());
        }
    }

    let mut raw = RawTable::new();
    let mut roles = BTreeMap::new();
    let mut violations = Vec::new();
    for (name, values) in header.iter().zip(cells) {
        let role = config.roles.get(name).copied();
        let numeric: Option<Vec<f64>> = values
            .iter()
            .map(|v| {
                if MISSING_TOKENS.contains(&v.as_str()) {
                    Some(f64::NAN)
                } else {
                    v.parse::<f64>().ok()
                }
            })
            .collect();
        match (numeric, role) {
            (Some(col), _) => {
                raw.push(name.clone(), col);
                if let Some(r) = role {
                    roles.insert(name.clone(), r);
                }
            }
            (None, Some(ColumnRole::SubjectId)) => {
                let mut codes: HashMap<&str, f64> = HashMap::new();
                let col = values
                    .iter()
                    .map(|v| {
                        let next = codes.len() as f64;
                        *codes.entry(v.as_str()).or_insert(next)
                    })
                    .collect();
                raw.push(name.clone(), col);
                roles.insert(name.clone(), ColumnRole::SubjectId);
            }
            (None, Some(r @ (ColumnRole::Outcome | ColumnRole::Treatment | ColumnRole::TimeIndex))) => {
                violations.push(Violation::RoleConflict {
                    column: name.clone(),
                    reason: format!("{r:?} column must be numeric"),
                });
            }
            (None, role) => {
                let mut levels: Vec<&str> = Vec::new();
                for v in &values {
                    if MISSING_TOKENS.contains(&v.as_str()) {
                        let row = values.iter().position(|x| x == v).unwrap_or(0);
                        violations.push(Violation::NonFiniteValue {
                            column: name.clone(),
                            row,
                        });
                        break;
                    }
                    if !levels.contains(&v.as_str()) {
                        levels.push(v);
                    }
                }
                for level in levels.iter().skip(1) {
                    let dummy = format!("{name}_{level}");
                    raw.push(
                        dummy.clone(),
                        values.iter().map(|v| f64::from(v == level)).collect(),
                    );
                    if let Some(r) = role {
                        roles.insert(dummy, r);
                    }
                }
            }
        }
    }
    for column in config.roles.keys() {
        if !header.contains(column) {
            violations.push(Violation::MissingColumn {
                column: column.clone(),
            });
        }
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    validate_dataset(raw, &roles, config.layout)
}

/// Writes every column with a header row. Values use Rust's shortest
/// round-trip float formatting, so reading the file back is lossless.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(&data.names)?;
    for r in 0..data.n_rows {
        wtr.write_record(data.columns.iter().map(|c| format_value(c[r])))?;
    }
    wtr.flush()?;
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// A categorical variable in a discrete joint law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVariable {
    pub name: String,
    pub levels: usize,
}

/// Full joint probability table over categorical variables. Cells are stored
/// row-major with the last variable varying fastest.
///
/// Solvers look variables up by name: `U`, `Z`, `W`, `A`, `Y` and optional `X`.
/// A law without `Z` is treated as having a single Z level. Outcome level k
/// carries the numeric value `outcome_values[k]` (default k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJointLaw {
    variables: Vec<DiscreteVariable>,
    probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outcome_values: Option<Vec<f64>>,
}

impl DiscreteJointLaw {
    pub fn new(variables: Vec<DiscreteVariable>, probabilities: Vec<f64>) -> Result<Self> {
        let law = Self {
            variables,
            probabilities,
            outcome_values: None,
        };
        law.check()?;
        Ok(law)
    }

    /// Re-checks invariants, e.g. after deserialization.
    pub fn check(&self) -> Result<()> {
        let cells: usize = self.variables.iter().map(|v| v.levels).product();
        if self.variables.is_empty() || self.variables.iter().any(|v| v.levels == 0) {
            return Err(Error::InvalidLaw("every variable needs at least one level".into()));
        }
        let mut names = BTreeSet::new();
        if !self.variables.iter().all(|v| names.insert(v.name.as_str())) {
            return Err(Error::InvalidLaw("variable names must be unique".into()));
        }
        if self.probabilities.len() != cells {
            return Err(Error::InvalidLaw(format!(
                "table has {} cells, variables imply {cells}",
                self.probabilities.len()
            )));
        }
        if self.probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidLaw("probabilities must be nonnegative".into()));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}")));
        }
        if let Some(values) = &self.outcome_values {
            if Some(values.len()) != self.levels("Y") {
                return Err(Error::InvalidLaw("outcome_values must match the levels of Y".into()));
            }
        }
        Ok(())
    }

    /// Assigns numeric values to the outcome levels.
    pub fn with_outcome_values(mut self, values: Vec<f64>) -> Result<Self> {
        self.outcome_values = Some(values);
        self.check()?;
        Ok(self)
    }

    pub fn variables(&self) -> &[DiscreteVariable] {
        &self.variables
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn levels(&self, name: &str) -> Option<usize> {
        self.index_of(name).map(|k| self.variables[k].levels)
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::InvalidLaw(format!("law has no variable `{name}`")))
    }

    /// Decodes a flat cell index into per-variable levels.
    pub fn cell_levels(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.variables.len()];
        for (k, v) in self.variables.iter().enumerate().rev() {
            out[k] = cell % v.levels;
            cell /= v.levels;
        }
        out
    }

    /// P(variable_k = level_k for every constraint).
    pub fn mass(&self, constraints: &[(usize, usize)]) -> f64 {
        (0..self.probabilities.len())
            .filter(|&c| {
                let lv = self.cell_levels(c);
                constraints.iter().all(|&(k, l)| lv[k] == l)
            })
            .map(|c| self.probabilities[c])
            .sum()
    }

    fn value_of(&self, var: usize, level: usize) -> f64 {
        match &self.outcome_values {
            Some(v) if self.variables[var].name == "Y" => v[level],
            _ => level as f64,
        }
    }

    /// Σ value(`target`) · P(cell) over cells matching `constraints`.
    pub fn weighted_mass(&self, target: usize, constraints: &[(usize, usize)]) -> f64 {
        (0..self.probabilities.len())
            .filter_map(|c| {
                let lv = self.cell_levels(c);
                constraints
                    .iter()
                    .all(|&(k, l)| lv[k] == l)
                    .then(|| self.value_of(target, lv[target]) * self.probabilities[c])
            })
            .sum()
    }

    /// Law of the remaining variables after summing `name` out.
    pub fn marginalize(&self, name: &str) -> Result<Self> {
        let k = self.require(name)?;
        if self.variables.len() == 1 {
            return Err(Error::InvalidLaw("cannot marginalize the only variable".into()));
        }
        let mut variables = self.variables.clone();
        variables.remove(k);
        let cells: usize = variables.iter().map(|v| v.levels).product();
        let mut probabilities = vec![0.0; cells];
        for (c, p) in self.probabilities.iter().enumerate() {
            let mut lv = self.cell_levels(c);
            lv.remove(k);
            let flat = lv
                .iter()
                .zip(&variables)
                .fold(0, |acc, (l, v)| acc * v.levels + l);
            probabilities[flat] += p;
        }
        Ok(Self {
            variables,
            probabilities,
            outcome_values: self.outcome_values.clone().filter(|_| name != "Y"),
        })
    }

    /// Conditioning constraints for (A = a, X = x); `x` is ignored when the law has no X.
    pub(crate) fn ax_constraints(&self, a: usize, x: Option<usize>) -> Result<Vec<(usize, usize)>> {
        let mut c = vec![(self.require("A")?, a)];
        if let (Some(k), Some(x)) = (self.index_of("X"), x) {
            c.push((k, x));
        }
        Ok(c)
    }

    /// Constraint sets for each Z slice given (a, x).
    fn z_slices(&self, a: usize, x: Option<usize>) -> Result<Vec<Vec<(usize, usize)>>> {
        let base = self.ax_constraints(a, x)?;
        if self.mass(&base) <= 0.0 {
            return Err(Error::ZeroMassCell(format!("A={a}, X={x:?}")));
        }
        let Some(kz) = self.index_of("Z") else {
            return Ok(vec![base]);
        };
        (0..self.variables[kz].levels)
            .map(|z| {
                let mut c = base.clone();
                c.push((kz, z));
                if self.mass(&c) <= 0.0 {
                    return Err(Error::ZeroMassCell(format!("Z={z}, A={a}, X={x:?}")));
                }
                Ok(c)
            })
            .collect()
    }

    /// The d_w × d_z matrix P(W = w | Z = z, A = a, X = x).
    pub fn w_given_z(&self, a: usize, x: Option<usize>) -> Result<DMatrix<f64>> {
        let kw = self.require("W")?;
        let dw = self.variables[kw].levels;
        let slices = self.z_slices(a, x)?;
        let mut m = DMatrix::zeros(dw, slices.len());
        for (z, cz) in slices.iter().enumerate() {
            let denom = self.mass(cz);
            for w in 0..dw {
                let mut cw = cz.clone();
                cw.push((kw, w));
                m[(w, z)] = self.mass(&cw) / denom;
            }
        }
        Ok(m)
    }

    /// E(Y | Z = z, A = a, X = x) for each z.
    pub fn y_given_z(&self, a: usize, x: Option<usize>) -> Result<DVector<f64>> {
        let ky = self.require("Y")?;
        let slices = self.z_slices(a, x)?;
        Ok(DVector::from_iterator(
            slices.len(),
            slices
                .iter()
                .map(|cz| self.weighted_mass(ky, cz) / self.mass(cz)),
        ))
    }

    /// E(Y | W = w, A = a, X = x) for each w.
    pub fn y_given_w(&self, a: usize, x: Option<usize>) -> Result<DVector<f64>> {
        let (kw, ky) = (self.require("W")?, self.require("Y")?);
        let base = self.ax_constraints(a, x)?;
        let dw = self.variables[kw].levels;
        let mut out = DVector::zeros(dw);
        for w in 0..dw {
            let mut c = base.clone();
            c.push((kw, w));
            let denom = self.mass(&c);
            if denom <= 0.0 {
                return Err(Error::ZeroMassCell(format!("W={w}, A={a}, X={x:?}")));
            }
            out[w] = self.weighted_mass(ky, &c) / denom;
        }
        Ok(out)
    }

    pub fn marginal_of(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.require(name)?;
        Ok((0..self.variables[k].levels)
            .map(|l| self.mass(&[(k, l)]))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessCheck {
    pub rank: usize,
    pub passes: bool,
    pub singular_values: Vec<f64>,
}

/// Numerical rank of P(W | Z, A = a, X = x). Passes when the rank reaches the
/// number of levels of a declared `U`, or otherwise min(d_w, d_z).
pub fn completeness_rank_check(
    law: &DiscreteJointLaw,
    a: usize,
    x: Option<usize>,
) -> Result<CompletenessCheck> {
    completeness_rank_check_with_tol(law, a, x, crate::linalg::DEFAULT_RANK_TOL)
}

pub fn completeness_rank_check_with_tol(
    law: &DiscreteJointLaw,
    a: usize,
    x: Option<usize>,
    tol: f64,
) -> Result<CompletenessCheck> {
    let m = law.w_given_z(a, x)?;
    let singular: Vec<f64> = m.singular_values().iter().copied().collect();
    let s_max = singular.iter().cloned().fold(0.0_f64, f64::max);
    let rank = singular.iter().filter(|s| **s > tol * s_max).count();
    let passes = match law.levels("U") {
        Some(du) => rank >= du,
        None => rank == m.nrows().min(m.ncols()),
    };
    Ok(CompletenessCheck {
        rank,
        passes,
        singular_values: singular,
    })
}
