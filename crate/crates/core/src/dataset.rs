//! Tabular data: loading, preprocessing presets, splitting and subgroup selection.
//!
//! A [`Table`] is column-oriented and immutable once built. It always carries a
//! binary label column (stored numerically as 0/1, 1 being the adverse outcome)
//! and a categorical protected column whose values define the subgroups that
//! fairness comparisons are made over. Each row also keeps the id it was given
//! at load time, so lineage across splits and filters can be checked.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` is not declared in the schema")]
    UnexpectedColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("line {line}, column `{column}`: missing value")]
    MissingValue { line: u64, column: String },
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Unparseable {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: unknown level `{value}`")]
    UnknownLevel {
        line: u64,
        column: String,
        value: String,
    },
    #[error("row {row}: label value `{value}` is not 0 or 1")]
    NonBinaryLabel { row: u64, value: String },
    #[error("column `{0}` is not categorical")]
    NotCategorical(String),
    #[error("the {role} column `{column}` cannot be one-hot encoded in place")]
    ReservedColumn { role: &'static str, column: String },
    #[error("column `{column}` has {found} values, expected {expected}")]
    LengthMismatch {
        column: String,
        found: usize,
        expected: usize,
    },
    #[error("table is empty")]
    Empty,
    #[error("split ratio {0} is outside (0, 1)")]
    BadRatio(f64),
    #[error("protected groups must differ, both are `{0}`")]
    SameGroups(String),
    #[error("group `{group}` has no rows in column `{column}`")]
    MissingGroup { column: String, group: String },
    #[error("row {row}: cannot decode one-hot block for `{column}`")]
    BadOneHot { row: usize, column: String },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    fn take(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical { levels, codes } => ColumnData::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    /// Categorical column with levels taken in sorted order.
    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, values: &[S]) -> Self {
        let levels: Vec<String> = values
            .iter()
            .map(|v| v.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self::categorical_with_levels(name, levels, values).expect("levels cover values")
    }

    pub fn categorical_with_levels<S: AsRef<str>>(
        name: impl Into<String>,
        levels: Vec<String>,
        values: &[S],
    ) -> Result<Self> {
        let name = name.into();
        let index: HashMap<&str, u32> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        let codes = values
            .iter()
            .enumerate()
            .map(|(row, v)| {
                index
                    .get(v.as_ref())
                    .copied()
                    .ok_or_else(|| DatasetError::UnknownLevel {
                        line: row as u64 + 1,
                        column: name.clone(),
                        value: v.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Column {
            name,
            data: ColumnData::Categorical { levels, codes },
        })
    }

    pub fn kind(&self) -> ColumnKind {
        self.data.kind()
    }

    pub fn value(&self, row: usize) -> Value {
        match &self.data {
            ColumnData::Numeric(v) => Value::Num(v[row]),
            ColumnData::Categorical { levels, codes } => {
                Value::Cat(levels[codes[row] as usize].clone())
            }
        }
    }

    /// Levels of a categorical column.
    pub fn levels(&self) -> Option<&[String]> {
        match &self.data {
            ColumnData::Categorical { levels, .. } => Some(levels),
            ColumnData::Numeric(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<Column>,
    label: String,
    protected: String,
    row_ids: Vec<u64>,
}

impl Table {
    /// Builds a table, validating rectangularity, the binary label and the
    /// categorical protected column. Rows get ids `0..n`.
    pub fn new(columns: Vec<Column>, label: &str, protected: &str) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.data.len());
        Self::with_row_ids(columns, label, protected, (0..n as u64).collect())
    }

    pub fn with_row_ids(
        columns: Vec<Column>,
        label: &str,
        protected: &str,
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        let n = row_ids.len();
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(c.name.clone()));
            }
            if c.data.len() != n {
                return Err(DatasetError::LengthMismatch {
                    column: c.name.clone(),
                    found: c.data.len(),
                    expected: n,
                });
            }
        }
        let label_col = columns
            .iter()
            .find(|c| c.name == label)
            .ok_or_else(|| DatasetError::MissingColumn(label.to_string()))?;
        match &label_col.data {
            ColumnData::Numeric(v) => {
                if let Some(i) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
                    return Err(DatasetError::NonBinaryLabel {
                        row: i as u64 + 1,
                        value: v[i].to_string(),
                    });
                }
            }
            ColumnData::Categorical { .. } => {
                return Err(DatasetError::NonBinaryLabel {
                    row: 0,
                    value: "<categorical>".into(),
                })
            }
        }
        let protected_col = columns
            .iter()
            .find(|c| c.name == protected)
            .ok_or_else(|| DatasetError::MissingColumn(protected.to_string()))?;
        if protected_col.kind() != ColumnKind::Categorical {
            return Err(DatasetError::NotCategorical(protected.to_string()));
        }
        Ok(Table {
            columns,
            label: label.to_string(),
            protected: protected.to_string(),
            row_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_kinds(&self) -> Vec<ColumnKind> {
        self.columns.iter().map(Column::kind).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    }

    pub fn label_column(&self) -> &str {
        &self.label
    }

    pub fn protected_column(&self) -> &str {
        &self.protected
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn labels(&self) -> Vec<u8> {
        match &self.column(&self.label).expect("validated").data {
            ColumnData::Numeric(v) => v.iter().map(|&x| x as u8).collect(),
            ColumnData::Categorical { .. } => unreachable!("label is numeric"),
        }
    }

    /// Protected-attribute value of every row.
    pub fn groups(&self) -> Vec<&str> {
        match &self.column(&self.protected).expect("validated").data {
            ColumnData::Categorical { levels, codes } => {
                codes.iter().map(|&c| levels[c as usize].as_str()).collect()
            }
            ColumnData::Numeric(_) => unreachable!("protected is categorical"),
        }
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(i)).collect()
    }

    /// New table holding the given rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Table {
        Table {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    data: c.data.take(rows),
                })
                .collect(),
            label: self.label.clone(),
            protected: self.protected.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Table {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&i| keep(i)).collect();
        self.take_rows(&rows)
    }

    /// Replaces the row ids, e.g. for generated tables.
    pub fn relabel_row_ids(mut self, ids: Vec<u64>) -> Result<Table> {
        if ids.len() != self.n_rows() {
            return Err(DatasetError::LengthMismatch {
                column: "<row ids>".into(),
                found: ids.len(),
                expected: self.n_rows(),
            });
        }
        self.row_ids = ids;
        Ok(self)
    }

    /// Recodes categorical columns onto `reference`'s level lists so both
    /// tables share one feature layout.
    pub fn align_levels(&self, reference: &Table) -> Result<Table> {
        let mut out = self.clone();
        for col in &mut out.columns {
            let Some(ref_col) = reference.column(&col.name) else {
                continue;
            };
            if let (
                ColumnData::Categorical { levels, codes },
                Some(ref_levels),
            ) = (&col.data, ref_col.levels())
            {
                if levels.as_slice() == ref_levels {
                    continue;
                }
                let values: Vec<&str> = codes.iter().map(|&c| levels[c as usize].as_str()).collect();
                *col = Column::categorical_with_levels(&col.name, ref_levels.to_vec(), &values)?;
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.column_names())?;
        for i in 0..self.n_rows() {
            w.write_record(self.columns.iter().map(|c| c.value(i).to_string()))?;
        }
        w.flush().map_err(|e| DatasetError::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    fn replace_columns(&self, columns: Vec<Column>) -> Result<Table> {
        Table::with_row_ids(columns, &self.label, &self.protected, self.row_ids.clone())
    }
}

/// Declared kind and optional level handling for one CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Closed level set for a categorical column. Values outside it are
    /// rejected. When absent the sorted set of observed values is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    /// Raw token to level name, applied before level checks (e.g. "1" -> "Female").
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rename: BTreeMap<String, String>,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
            levels: None,
            rename: BTreeMap::new(),
        }
    }

    pub fn categorical(name: &str) -> Self {
        ColumnSpec {
            kind: ColumnKind::Categorical,
            ..Self::numeric(name)
        }
    }
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
    pub protected: String,
    /// Header columns that are read past and dropped (row ids and the like).
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut position = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        if position.insert(h.to_string(), i).is_some() {
            return Err(DatasetError::DuplicateColumn(h.to_string()));
        }
        let declared = schema.columns.iter().any(|c| c.name == h);
        if !declared && !schema.ignore.iter().any(|c| c == h) {
            return Err(DatasetError::UnexpectedColumn(h.to_string()));
        }
    }
    let idx: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            position
                .get(&c.name)
                .copied()
                .ok_or_else(|| DatasetError::MissingColumn(c.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    let mut nums: Vec<Vec<f64>> = vec![Vec::new(); schema.columns.len()];
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        for (k, spec) in schema.columns.iter().enumerate() {
            let token = record.get(idx[k]).unwrap_or("").trim();
            if token.is_empty() {
                return Err(DatasetError::MissingValue {
                    line,
                    column: spec.name.clone(),
                });
            }
            let token = spec.rename.get(token).map_or(token, String::as_str);
            match spec.kind {
                ColumnKind::Numeric => {
                    let x: f64 = token.parse().map_err(|_| DatasetError::Unparseable {
                        line,
                        column: spec.name.clone(),
                        value: token.to_string(),
                    })?;
                    if !x.is_finite() {
                        return Err(DatasetError::Unparseable {
                            line,
                            column: spec.name.clone(),
                            value: token.to_string(),
                        });
                    }
                    if spec.name == schema.label && x != 0.0 && x != 1.0 {
                        return Err(DatasetError::NonBinaryLabel {
                            row: line,
                            value: token.to_string(),
                        });
                    }
                    nums[k].push(x);
                }
                ColumnKind::Categorical => {
                    if let Some(levels) = &spec.levels {
                        if !levels.iter().any(|l| l == token) {
                            return Err(DatasetError::UnknownLevel {
                                line,
                                column: spec.name.clone(),
                                value: token.to_string(),
                            });
                        }
                    }
                    raw[k].push(token.to_string());
                }
            }
        }
    }

    let mut columns = Vec::with_capacity(schema.columns.len());
    for (k, spec) in schema.columns.iter().enumerate() {
        let col = match spec.kind {
            ColumnKind::Numeric => Column::numeric(&spec.name, std::mem::take(&mut nums[k])),
            ColumnKind::Categorical if spec.name == schema.label => {
                // Labels are stored numerically; accept "0"/"1" tokens here too.
                let v = raw[k]
                    .iter()
                    .enumerate()
                    .map(|(row, t)| match t.as_str() {
                        "0" => Ok(0.0),
                        "1" => Ok(1.0),
                        other => Err(DatasetError::NonBinaryLabel {
                            row: row as u64 + 2,
                            value: other.to_string(),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Column::numeric(&spec.name, v)
            }
            ColumnKind::Categorical => match &spec.levels {
                Some(levels) => Column::categorical_with_levels(&spec.name, levels.clone(), &raw[k])?,
                None => Column::categorical(&spec.name, &raw[k]),
            },
        };
        columns.push(col);
    }
    Table::new(columns, &schema.label, &schema.protected)
}

/// Ordered pair of subgroups. Difference metrics are `rate(group_a) - rate(group_b)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedSpec {
    pub attribute: String,
    pub group_a: String,
    pub group_b: String,
}

impl ProtectedSpec {
    pub fn new(attribute: &str, group_a: &str, group_b: &str) -> Self {
        ProtectedSpec {
            attribute: attribute.into(),
            group_a: group_a.into(),
            group_b: group_b.into(),
        }
    }

    pub fn swapped(&self) -> Self {
        ProtectedSpec {
            attribute: self.attribute.clone(),
            group_a: self.group_b.clone(),
            group_b: self.group_a.clone(),
        }
    }

    /// Checks the pair is well formed and both values are levels of the column.
    pub fn validate(&self, table: &Table) -> Result<()> {
        if self.group_a == self.group_b {
            return Err(DatasetError::SameGroups(self.group_a.clone()));
        }
        let col = table.require(&self.attribute)?;
        let levels = col
            .levels()
            .ok_or_else(|| DatasetError::NotCategorical(self.attribute.clone()))?;
        for g in [&self.group_a, &self.group_b] {
            if !levels.contains(g) {
                return Err(DatasetError::MissingGroup {
                    column: self.attribute.clone(),
                    group: g.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Table,
    pub test: Table,
    pub seed: u64,
    pub ratio: f64,
}

/// Seeded Fisher-Yates shuffle of row indices followed by a prefix split.
///
/// The train part gets `round(n * ratio)` rows. Rows keep their shuffled order.
pub fn train_test_split(t: &Table, seed: u64, ratio: f64) -> Result<SplitPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    if t.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = t.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed), &mut order);
    let n_train = ((n as f64) * ratio).round() as usize;
    let (train, test) = order.split_at(n_train.min(n));
    Ok(SplitPair {
        train: t.take_rows(train),
        test: t.take_rows(test),
        seed,
        ratio,
    })
}

/// Percentage of rows taking each value of `attribute`. Every declared level of
/// a categorical column appears, including those with no rows.
pub fn prevalence_rates(t: &Table, attribute: &str) -> Result<BTreeMap<String, f64>> {
    let col = t.require(attribute)?;
    let n = t.n_rows() as f64;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    match &col.data {
        ColumnData::Categorical { levels, codes } => {
            for l in levels {
                counts.insert(l.clone(), 0);
            }
            for &c in codes {
                *counts.get_mut(&levels[c as usize]).expect("level") += 1;
            }
        }
        ColumnData::Numeric(v) => {
            for x in v {
                *counts.entry(x.to_string()).or_default() += 1;
            }
        }
    }
    if t.is_empty() {
        return Ok(counts.into_keys().map(|k| (k, 0.0)).collect());
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, 100.0 * c as f64 / n))
        .collect())
}

/// Keeps only rows whose protected value is one of the pair.
pub fn restrict_subgroups(t: &Table, spec: &ProtectedSpec) -> Result<Table> {
    spec.validate(t)?;
    let values: Vec<Value> = {
        let col = t.require(&spec.attribute)?;
        (0..t.n_rows()).map(|i| col.value(i)).collect()
    };
    let keep = |v: &Value| matches!(v, Value::Cat(s) if *s == spec.group_a || *s == spec.group_b);
    let out = t.filter_rows(|i| keep(&values[i]));
    for g in [&spec.group_a, &spec.group_b] {
        if !values.iter().any(|v| matches!(v, Value::Cat(s) if s == g)) {
            return Err(DatasetError::MissingGroup {
                column: spec.attribute.clone(),
                group: g.clone(),
            });
        }
    }
    Ok(out)
}

/// How a set of categorical columns was expanded into indicator columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotMapping {
    pub encoded: Vec<EncodedColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub levels: Vec<String>,
    pub indicator_names: Vec<String>,
}

pub fn indicator_name(column: &str, level: &str) -> String {
    format!("{column}={level}")
}

/// Replaces each named categorical column with one 0/1 column per level,
/// placed where the original column was.
pub fn one_hot_encode(t: &Table, columns: &[&str]) -> Result<(Table, OneHotMapping)> {
    for &name in columns {
        let col = t.require(name)?;
        if name == t.label {
            return Err(DatasetError::ReservedColumn {
                role: "label",
                column: name.into(),
            });
        }
        if name == t.protected {
            return Err(DatasetError::ReservedColumn {
                role: "protected",
                column: name.into(),
            });
        }
        if col.kind() != ColumnKind::Categorical {
            return Err(DatasetError::NotCategorical(name.into()));
        }
    }
    let mut out = Vec::new();
    let mut encoded = Vec::new();
    for col in &t.columns {
        match (&col.data, columns.contains(&col.name.as_str())) {
            (ColumnData::Categorical { levels, codes }, true) => {
                let mut names = Vec::with_capacity(levels.len());
                for (li, level) in levels.iter().enumerate() {
                    let name = indicator_name(&col.name, level);
                    let v = codes
                        .iter()
                        .map(|&c| if c as usize == li { 1.0 } else { 0.0 })
                        .collect();
                    out.push(Column::numeric(name.clone(), v));
                    names.push(name);
                }
                encoded.push(EncodedColumn {
                    name: col.name.clone(),
                    levels: levels.clone(),
                    indicator_names: names,
                });
            }
            _ => out.push(col.clone()),
        }
    }
    Ok((t.replace_columns(out)?, OneHotMapping { encoded }))
}

impl OneHotMapping {
    /// Inverse of [`one_hot_encode`].
    pub fn decode(&self, t: &Table) -> Result<Table> {
        let mut out: Vec<Column> = Vec::new();
        let mut consumed = BTreeSet::new();
        for col in &t.columns {
            if consumed.contains(col.name.as_str()) {
                continue;
            }
            let Some(enc) = self
                .encoded
                .iter()
                .find(|e| e.indicator_names.first() == Some(&col.name))
            else {
                out.push(col.clone());
                continue;
            };
            let blocks: Vec<&[f64]> = enc
                .indicator_names
                .iter()
                .map(|n| match &t.require(n)?.data {
                    ColumnData::Numeric(v) => Ok(v.as_slice()),
                    _ => Err(DatasetError::BadOneHot {
                        row: 0,
                        column: enc.name.clone(),
                    }),
                })
                .collect::<Result<_>>()?;
            let mut codes = Vec::with_capacity(t.n_rows());
            for row in 0..t.n_rows() {
                let hot: Vec<usize> = (0..blocks.len()).filter(|&k| blocks[k][row] == 1.0).collect();
                let zeros = (0..blocks.len()).filter(|&k| blocks[k][row] == 0.0).count();
                if hot.len() != 1 || zeros + 1 != blocks.len() {
                    return Err(DatasetError::BadOneHot {
                        row,
                        column: enc.name.clone(),
                    });
                }
                codes.push(hot[0] as u32);
            }
            consumed.extend(enc.indicator_names.iter().map(String::as_str));
            out.push(Column {
                name: enc.name.clone(),
                data: ColumnData::Categorical {
                    levels: enc.levels.clone(),
                    codes,
                },
            });
        }
        t.replace_columns(out)
    }
}

/// Column names used by the cardiovascular preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardioColumns {
    pub age: String,
    pub systolic: String,
    pub diastolic: String,
    pub gender: String,
}

impl Default for CardioColumns {
    fn default() -> Self {
        CardioColumns {
            age: "age".into(),
            systolic: "ap_hi".into(),
            diastolic: "ap_lo".into(),
            gender: "gender".into(),
        }
    }
}

pub const DAYS_PER_YEAR: f64 = 365.25;
pub const BP_MIN: f64 = 20.0;
pub const BP_MAX: f64 = 360.0;

/// Name the age column takes once converted from days to years.
pub fn age_years_column(cols: &CardioColumns) -> String {
    format!("{}_years", cols.age)
}

/// Cardiovascular cleanup: age in days becomes `<age>_years`, rows with either
/// blood pressure outside `[20, 360]` are dropped, and gender is one-hot
/// encoded unless it is the protected attribute (which stays categorical and
/// is expanded into indicators when features are built).
///
/// Idempotent: a table that already carries the converted age column is not
/// rescaled again.
pub fn preprocess_cardio(t: &Table, cols: &CardioColumns) -> Result<Table> {
    let years = age_years_column(cols);
    let mut columns = t.columns.clone();
    if let Some(pos) = columns.iter().position(|c| c.name == cols.age) {
        let ColumnData::Numeric(days) = &columns[pos].data else {
            return Err(DatasetError::MissingColumn(cols.age.clone()));
        };
        columns[pos] = Column::numeric(years, days.iter().map(|d| d / DAYS_PER_YEAR).collect());
    } else if t.column(&years).is_none() {
        return Err(DatasetError::MissingColumn(cols.age.clone()));
    }
    let bp = |name: &str| -> Result<Vec<f64>> {
        match &t.require(name)?.data {
            ColumnData::Numeric(v) => Ok(v.clone()),
            ColumnData::Categorical { .. } => Err(DatasetError::MissingColumn(name.into())),
        }
    };
    let sys = bp(&cols.systolic)?;
    let dia = bp(&cols.diastolic)?;
    let in_range = |x: f64| (BP_MIN..=BP_MAX).contains(&x);
    let converted = t.replace_columns(columns)?;
    let filtered = converted.filter_rows(|i| in_range(sys[i]) && in_range(dia[i]));
    match filtered.column(&cols.gender) {
        Some(c) if c.kind() == ColumnKind::Categorical && cols.gender != t.protected => {
            Ok(one_hot_encode(&filtered, &[cols.gender.as_str()])?.0)
        }
        _ => Ok(filtered),
    }
}

/// Preprocessing applied to every table an experiment trains or evaluates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    Cardio,
    OnehotAll,
    #[default]
    None,
}

impl Preprocess {
    pub fn apply(self, t: &Table) -> Result<Table> {
        match self {
            Preprocess::Cardio => preprocess_cardio(t, &CardioColumns::default()),
            Preprocess::OnehotAll => {
                let cats: Vec<&str> = t
                    .columns
                    .iter()
                    .filter(|c| c.kind() == ColumnKind::Categorical && c.name != t.protected)
                    .map(|c| c.name.as_str())
                    .collect();
                Ok(one_hot_encode(t, &cats)?.0)
            }
            Preprocess::None => Ok(t.clone()),
        }
    }
}
