//! Referendum choice data: attribute schema, respondents, observations, CSV
//! ingest/export, and numeric encoding of tasks into design-matrix rows.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coding::OrthoPolyCoding;
use crate::error::{Error, Result};

pub const RESPONDENT_ID: &str = "respondent_id";
pub const TASK_ID: &str = "task_id";
pub const BLOCK_ID: &str = "block_id";
pub const VOTE: &str = "vote";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    /// Orthogonal-polynomial degree-1 code.
    #[default]
    Linear,
    /// Orthogonal-polynomial degree-1 and degree-2 codes.
    Quadratic,
    /// k-1 effects-coded columns (categorical only).
    EffectsCoded,
    /// One-hot indicators for categorical attributes, `value / scale` for
    /// continuous ones.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Levels {
    Values(Vec<f64>),
    Labels(Vec<String>),
}

impl Levels {
    pub fn len(&self) -> usize {
        match self {
            Levels::Values(v) => v.len(),
            Levels::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    /// Column header in the observations CSV.
    pub column: String,
    pub kind: AttributeKind,
    pub levels: Levels,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Divisor applied under `Transform::None` for continuous attributes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl AttributeSpec {
    pub fn values(&self) -> &[f64] {
        match &self.levels {
            Levels::Values(v) => v,
            Levels::Labels(_) => &[],
        }
    }

    pub fn labels(&self) -> &[String] {
        match &self.levels {
            Levels::Labels(v) => v,
            Levels::Values(_) => &[],
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of `value` in the level set, matched with a relative tolerance
    /// of 1e-9.
    pub fn level_index(&self, value: f64) -> Option<usize> {
        self.values()
            .iter()
            .position(|&l| (l - value).abs() <= 1e-9 * l.abs().max(1.0))
    }
}

/// The attribute side of a referendum task: exactly one categorical attribute
/// (the policy category) and any number of continuous ones, one of which is
/// the payment vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub category: String,
    pub levy: String,
    pub attributes: Vec<AttributeSpec>,
}

impl AttributeSchema {
    /// Heritage referendum attributes: site category, time horizon, annual
    /// visit-rate reduction, distance and the annual household levy.
    pub fn table1() -> Self {
        let cont = |name: &str, column: &str, levels: Vec<f64>, transform, unit: &str| AttributeSpec {
            name: name.into(),
            column: column.into(),
            kind: AttributeKind::Continuous,
            levels: Levels::Values(levels),
            transform,
            unit: Some(unit.into()),
            scale: None,
        };
        Self {
            category: "category".into(),
            levy: "levy".into(),
            attributes: vec![
                AttributeSpec {
                    name: "category".into(),
                    column: "category".into(),
                    kind: AttributeKind::Categorical,
                    levels: Levels::Labels(vec![
                        "historical".into(),
                        "religious".into(),
                        "gardens".into(),
                    ]),
                    transform: Transform::None,
                    unit: None,
                    scale: None,
                },
                cont(
                    "time_horizon",
                    "time_horizon_years",
                    vec![10.0, 20.0, 40.0, 50.0],
                    Transform::Quadratic,
                    "years",
                ),
                cont(
                    "visit_reduction",
                    "visit_reduction_pct",
                    vec![5.0, 10.0, 15.0, 20.0],
                    Transform::Quadratic,
                    "percent",
                ),
                cont(
                    "distance",
                    "distance_km",
                    vec![1.0, 10.0, 25.0, 50.0],
                    Transform::Quadratic,
                    "km",
                ),
                cont(
                    "levy",
                    "levy_rial",
                    vec![
                        100_000.0, 250_000.0, 500_000.0, 750_000.0, 1_000_000.0, 1_500_000.0,
                        2_000_000.0, 2_500_000.0,
                    ],
                    Transform::Linear,
                    "rial",
                ),
            ],
        }
    }

    /// Same attributes with the levy entering as `levy / 1,000,000`.
    pub fn table1_raw_levy() -> Self {
        let mut s = Self::table1();
        let levy = s.attributes.iter_mut().find(|a| a.name == "levy").unwrap();
        levy.transform = Transform::None;
        levy.scale = Some(1_000_000.0);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut names = HashSet::new();
        let mut cols = HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                errs.push(format!("duplicate attribute name '{}'", a.name));
            }
            if !cols.insert(a.column.as_str()) {
                errs.push(format!("duplicate attribute column '{}'", a.column));
            }
            if [RESPONDENT_ID, TASK_ID, BLOCK_ID, VOTE].contains(&a.column.as_str()) {
                errs.push(format!("attribute column '{}' is reserved", a.column));
            }
            if a.levels.is_empty() {
                errs.push(format!("attribute '{}' has no levels", a.name));
            }
            match (a.kind, &a.levels) {
                (AttributeKind::Categorical, Levels::Labels(l)) => {
                    if l.iter().collect::<HashSet<_>>().len() != l.len() {
                        errs.push(format!("attribute '{}' has duplicate levels", a.name));
                    }
                    if !matches!(a.transform, Transform::None | Transform::EffectsCoded) {
                        errs.push(format!(
                            "categorical attribute '{}' only supports none or effects-coded",
                            a.name
                        ));
                    }
                }
                (AttributeKind::Continuous, Levels::Values(v)) => {
                    let mut s = v.clone();
                    s.sort_by(f64::total_cmp);
                    if s.windows(2).any(|w| w[0] == w[1]) {
                        errs.push(format!("attribute '{}' has duplicate levels", a.name));
                    }
                    match a.transform {
                        Transform::Quadratic if v.len() < 3 => errs.push(format!(
                            "quadratic transform on '{}' needs at least 3 levels, has {}",
                            a.name,
                            v.len()
                        )),
                        Transform::Linear if v.len() < 2 => errs.push(format!(
                            "linear transform on '{}' needs at least 2 levels",
                            a.name
                        )),
                        Transform::EffectsCoded => errs.push(format!(
                            "effects coding is only defined for categorical attribute, not '{}'",
                            a.name
                        )),
                        Transform::None if a.scale.is_some_and(|s| !(s > 0.0)) => {
                            errs.push(format!("scale of '{}' must be positive", a.name))
                        }
                        _ => {}
                    }
                }
                (AttributeKind::Categorical, Levels::Values(_)) => errs.push(format!(
                    "categorical attribute '{}' needs string labels",
                    a.name
                )),
                (AttributeKind::Continuous, Levels::Labels(_)) => errs.push(format!(
                    "continuous attribute '{}' needs numeric levels",
                    a.name
                )),
            }
        }
        let categorical: Vec<_> = self
            .attributes
            .iter()
            .filter(|a| a.kind == AttributeKind::Categorical)
            .collect();
        if categorical.len() != 1 || categorical[0].name != self.category {
            errs.push(format!(
                "schema needs exactly one categorical attribute, named '{}'",
                self.category
            ));
        }
        match self.attributes.iter().find(|a| a.name == self.levy) {
            Some(a) if a.kind == AttributeKind::Continuous => {}
            _ => errs.push(format!("levy attribute '{}' must be continuous", self.levy)),
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(errs.join("; ")))
        }
    }

    pub fn category_attribute(&self) -> &AttributeSpec {
        self.attributes
            .iter()
            .find(|a| a.name == self.category)
            .expect("validated schema has a category attribute")
    }

    pub fn categories(&self) -> &[String] {
        self.category_attribute().labels()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories().iter().position(|c| c == label)
    }

    /// Continuous attributes in schema order; `ReferendumTask::values` is
    /// indexed the same way.
    pub fn continuous(&self) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes
            .iter()
            .filter(|a| a.kind == AttributeKind::Continuous)
    }

    pub fn continuous_index(&self, name: &str) -> Option<usize> {
        self.continuous().position(|a| a.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn levy_attribute(&self) -> &AttributeSpec {
        self.attribute(&self.levy).expect("validated schema has a levy")
    }

    pub fn levy_index(&self) -> usize {
        self.continuous_index(&self.levy).expect("validated schema has a levy")
    }

    /// Header of the task columns (without respondent id and vote).
    pub fn task_header(&self) -> Vec<String> {
        let mut h = vec![TASK_ID.to_string(), BLOCK_ID.to_string()];
        h.extend(self.attributes.iter().map(|a| a.column.clone()));
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// 0/1 indicator.
    Indicator,
    /// Non-negative count.
    Count,
    /// Five-point Likert average in [1, 5].
    Likert,
    #[default]
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(default)]
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, kind: CovariateKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    fn check(&self, v: f64) -> std::result::Result<(), String> {
        if !v.is_finite() {
            return Err(format!("covariate '{}' is not finite", self.name));
        }
        let ok = match self.kind {
            CovariateKind::Indicator => v == 0.0 || v == 1.0,
            CovariateKind::Count => v >= 0.0,
            CovariateKind::Likert => (1.0..=5.0).contains(&v),
            CovariateKind::Numeric => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "covariate '{}' value {v} is invalid for kind {:?}",
                self.name, self.kind
            ))
        }
    }
}

/// Everything needed to read a dataset from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub attributes: AttributeSchema,
    /// Declared respondent covariates. Empty means "every non-id column of
    /// the respondents file, as numeric".
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
}

impl DataSchema {
    pub fn new(attributes: AttributeSchema, covariates: Vec<CovariateSpec>) -> Self {
        Self {
            attributes,
            covariates,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RespondentProfile {
    pub id: String,
    /// Values in the order of `Dataset::covariates`.
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferendumTask {
    pub task_id: u32,
    pub block_id: u32,
    /// Index into the schema's category labels.
    pub category: usize,
    /// Raw values of the continuous attributes, in schema order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Index into `Dataset::respondents`.
    pub respondent: usize,
    pub task: ReferendumTask,
    pub vote: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: AttributeSchema,
    covariates: Vec<CovariateSpec>,
    respondents: Vec<RespondentProfile>,
    observations: Vec<Observation>,
    groups: Vec<Range<usize>>,
}

impl Dataset {
    /// Validates and groups observations by respondent, keeping each
    /// respondent's tasks in the order given.
    pub fn new(
        schema: AttributeSchema,
        covariates: Vec<CovariateSpec>,
        respondents: Vec<RespondentProfile>,
        mut observations: Vec<Observation>,
    ) -> Result<Self> {
        schema.validate()?;
        if observations.is_empty() {
            return Err(Error::NoObservations);
        }
        let mut ids = HashSet::new();
        for r in &respondents {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate respondent id '{}'", r.id)));
            }
            if r.covariates.len() != covariates.len() {
                return Err(Error::Data(format!(
                    "respondent '{}' has {} covariates, schema declares {}",
                    r.id,
                    r.covariates.len(),
                    covariates.len()
                )));
            }
            for (spec, &v) in covariates.iter().zip(&r.covariates) {
                spec.check(v)
                    .map_err(|m| Error::Data(format!("respondent '{}': {m}", r.id)))?;
            }
        }
        let n_cont = schema.continuous().count();
        let n_cat = schema.categories().len();
        let mut seen = HashSet::new();
        for o in &observations {
            if o.respondent >= respondents.len() {
                return Err(Error::Data(format!(
                    "observation references unknown respondent index {}",
                    o.respondent
                )));
            }
            if o.task.category >= n_cat || o.task.values.len() != n_cont {
                return Err(Error::Data(format!(
                    "task {} does not match the attribute schema",
                    o.task.task_id
                )));
            }
            for (a, &v) in schema.continuous().zip(&o.task.values) {
                if a.level_index(v).is_none() {
                    return Err(Error::Data(format!(
                        "task {}: {} = {v} is not a level of '{}'",
                        o.task.task_id, a.column, a.name
                    )));
                }
            }
            if !seen.insert((o.respondent, o.task.task_id)) {
                return Err(Error::Data(format!(
                    "duplicate observation for respondent '{}', task {}",
                    respondents[o.respondent].id, o.task.task_id
                )));
            }
        }
        observations.sort_by_key(|o| o.respondent);
        let mut groups = vec![0..0; respondents.len()];
        let mut start = 0;
        while start < observations.len() {
            let r = observations[start].respondent;
            let mut end = start;
            while end < observations.len() && observations[end].respondent == r {
                end += 1;
            }
            groups[r] = start..end;
            start = end;
        }
        if let Some(i) = groups.iter().position(|g| g.is_empty()) {
            return Err(Error::Data(format!(
                "respondent '{}' has no observations",
                respondents[i].id
            )));
        }
        Ok(Self {
            schema,
            covariates,
            respondents,
            observations,
            groups,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn covariates(&self) -> &[CovariateSpec] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn respondents(&self) -> &[RespondentProfile] {
        &self.respondents
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    /// Row range of respondent `i` in `observations()`.
    pub fn group(&self, i: usize) -> Range<usize> {
        self.groups[i].clone()
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn respondent_observations(&self, i: usize) -> &[Observation] {
        &self.observations[self.group(i)]
    }

    pub fn yes_share(&self) -> f64 {
        self.observations.iter().filter(|o| o.vote).count() as f64 / self.n_observations() as f64
    }

    /// Dataset restricted to the respondents for which `keep` returns true.
    pub fn filter_respondents(&self, mut keep: impl FnMut(usize, &[Observation]) -> bool) -> Result<Self> {
        let mut remap = HashMap::new();
        let mut respondents = Vec::new();
        for i in 0..self.n_respondents() {
            if keep(i, self.respondent_observations(i)) {
                remap.insert(i, respondents.len());
                respondents.push(self.respondents[i].clone());
            }
        }
        let observations = self
            .observations
            .iter()
            .filter_map(|o| {
                remap.get(&o.respondent).map(|&r| Observation {
                    respondent: r,
                    ..o.clone()
                })
            })
            .collect();
        Self::new(
            self.schema.clone(),
            self.covariates.clone(),
            respondents,
            observations,
        )
    }

    pub fn write_observations(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec![RESPONDENT_ID.to_string()];
        header.extend(self.schema.task_header());
        header.push(VOTE.into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for o in &self.observations {
            let mut rec = vec![self.respondents[o.respondent].id.clone()];
            rec.extend(task_record(&self.schema, &o.task));
            rec.push(if o.vote { "1" } else { "0" }.into());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_respondents(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec![RESPONDENT_ID.to_string()];
        header.extend(self.covariates.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in &self.respondents {
            let mut rec = vec![r.id.clone()];
            rec.extend(r.covariates.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

/// `task_id, block_id, <attribute columns>` as CSV fields.
pub fn task_record(schema: &AttributeSchema, task: &ReferendumTask) -> Vec<String> {
    let mut rec = vec![task.task_id.to_string(), task.block_id.to_string()];
    let mut cont = task.values.iter();
    for a in &schema.attributes {
        match a.kind {
            AttributeKind::Categorical => rec.push(a.labels()[task.category].clone()),
            AttributeKind::Continuous => rec.push(cont.next().unwrap().to_string()),
        }
    }
    rec
}

fn header_index(path: &Path, header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::row(path, 1, format!("missing column '{name}'")))
}

/// Column positions of the task fields in a CSV header.
pub(crate) struct TaskColumns {
    task_id: usize,
    block_id: usize,
    attrs: Vec<usize>,
}

impl TaskColumns {
    pub(crate) fn locate(path: &Path, header: &csv::StringRecord, schema: &AttributeSchema) -> Result<Self> {
        Ok(Self {
            task_id: header_index(path, header, TASK_ID)?,
            block_id: header_index(path, header, BLOCK_ID)?,
            attrs: schema
                .attributes
                .iter()
                .map(|a| header_index(path, header, &a.column))
                .collect::<Result<_>>()?,
        })
    }

    pub(crate) fn parse(
        &self,
        path: &Path,
        row: usize,
        rec: &csv::StringRecord,
        schema: &AttributeSchema,
    ) -> Result<ReferendumTask> {
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let task_id = field(self.task_id)
            .parse::<u32>()
            .map_err(|_| Error::row(path, row, format!("bad {TASK_ID} '{}'", field(self.task_id))))?;
        let block_id = field(self.block_id).parse::<u32>().map_err(|_| {
            Error::row(path, row, format!("bad {BLOCK_ID} '{}'", field(self.block_id)))
        })?;
        let mut category = 0;
        let mut values = Vec::new();
        for (a, &col) in schema.attributes.iter().zip(&self.attrs) {
            let raw = field(col);
            match a.kind {
                AttributeKind::Categorical => {
                    category = a.labels().iter().position(|l| l == raw).ok_or_else(|| {
                        Error::row(path, row, format!("{}: unknown level '{raw}'", a.column))
                    })?;
                }
                AttributeKind::Continuous => {
                    let v: f64 = raw.parse().map_err(|_| {
                        Error::row(path, row, format!("{}: not a number '{raw}'", a.column))
                    })?;
                    let i = a.level_index(v).ok_or_else(|| {
                        Error::row(
                            path,
                            row,
                            format!("{}: {raw} is not a level of attribute '{}'", a.column, a.name),
                        )
                    })?;
                    values.push(a.values()[i]);
                }
            }
        }
        Ok(ReferendumTask {
            task_id,
            block_id,
            category,
            values,
        })
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Reads and validates the observations and respondents CSVs.
///
/// Row numbers in errors are file line numbers (the header is line 1).
pub fn load_dataset(observations_file: &Path, respondents_file: &Path, schema: &DataSchema) -> Result<Dataset> {
    schema.attributes.validate()?;

    // respondents
    let path = respondents_file;
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let id_col = header_index(path, &header, RESPONDENT_ID)?;
    let covariates: Vec<CovariateSpec> = if schema.covariates.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != id_col)
            .map(|(_, h)| CovariateSpec::new(h.trim(), CovariateKind::Numeric))
            .collect()
    } else {
        schema.covariates.clone()
    };
    let cov_cols: Vec<usize> = covariates
        .iter()
        .map(|c| header_index(path, &header, &c.name))
        .collect::<Result<_>>()?;
    let mut respondents = Vec::new();
    let mut index = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = record_line(&rec, k + 2);
        let id = rec.get(id_col).map(str::trim).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::row(path, row, "empty respondent_id"));
        }
        let mut values = Vec::with_capacity(covariates.len());
        for (spec, &col) in covariates.iter().zip(&cov_cols) {
            let raw = rec.get(col).map(str::trim).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::row(path, row, format!("missing value for covariate '{}'", spec.name)));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::row(path, row, format!("{}: not a number '{raw}'", spec.name)))?;
            spec.check(v).map_err(|m| Error::row(path, row, m))?;
            values.push(v);
        }
        if index.insert(id.clone(), respondents.len()).is_some() {
            return Err(Error::row(path, row, format!("duplicate respondent_id '{id}'")));
        }
        respondents.push(RespondentProfile { id, covariates: values });
    }

    // observations
    let path = observations_file;
    let attrs = &schema.attributes;
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let rid_col = header_index(path, &header, RESPONDENT_ID)?;
    let vote_col = header_index(path, &header, VOTE)?;
    let task_cols = TaskColumns::locate(path, &header, attrs)?;
    let mut observations = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = record_line(&rec, k + 2);
        let rid = rec.get(rid_col).map(str::trim).unwrap_or("");
        let respondent = *index
            .get(rid)
            .ok_or_else(|| Error::row(path, row, format!("orphan observation: unknown respondent '{rid}'")))?;
        let task = task_cols.parse(path, row, &rec, attrs)?;
        let vote = match rec.get(vote_col).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(Error::row(
                    path,
                    row,
                    format!("vote must be 0 or 1, got '{}'", other.unwrap_or("")),
                ))
            }
        };
        if !seen.insert((respondent, task.task_id)) {
            return Err(Error::row(
                path,
                row,
                format!("duplicate observation for respondent '{rid}', task {}", task.task_id),
            ));
        }
        observations.push(Observation {
            respondent,
            task,
            vote,
        });
    }
    if observations.is_empty() {
        return Err(Error::NoObservations);
    }
    Dataset::new(attrs.clone(), covariates, respondents, observations)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    /// One-hot indicator of a category level.
    Indicator(usize),
    /// Effects-coded column for a (non-reference) category level.
    Effects(usize),
    /// Orthogonal-polynomial code of the given degree.
    Degree(usize),
    /// `value / scale`.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub attribute: String,
    pub kind: ColumnKind,
}

/// Maps raw task attributes to numeric design columns. Column order: the
/// attributes in schema order, each expanded according to its transform.
#[derive(Debug, Clone)]
pub struct TaskEncoder {
    schema: AttributeSchema,
    columns: Vec<Column>,
    codings: Vec<Option<OrthoPolyCoding>>,
}

impl TaskEncoder {
    pub fn new(schema: &AttributeSchema) -> Result<Self> {
        schema.validate()?;
        let mut columns = Vec::new();
        let mut codings = Vec::new();
        for a in &schema.attributes {
            let col = |kind| Column {
                attribute: a.name.clone(),
                kind,
            };
            match a.kind {
                AttributeKind::Categorical => {
                    let k = a.levels.len();
                    match a.transform {
                        Transform::EffectsCoded => {
                            columns.extend((0..k.saturating_sub(1)).map(|l| col(ColumnKind::Effects(l))))
                        }
                        _ => columns.extend((0..k).map(|l| col(ColumnKind::Indicator(l)))),
                    }
                }
                AttributeKind::Continuous => {
                    let degree = match a.transform {
                        Transform::Linear => 1,
                        Transform::Quadratic => 2,
                        _ => 0,
                    };
                    if degree == 0 {
                        columns.push(col(ColumnKind::Scaled));
                        codings.push(None);
                    } else {
                        codings.push(Some(OrthoPolyCoding::new(a.values(), degree)?));
                        columns.extend((1..=degree).map(|d| col(ColumnKind::Degree(d))));
                    }
                }
            }
        }
        Ok(Self {
            schema: schema.clone(),
            columns,
            codings,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Column holding the degree-`degree` term of a continuous attribute. For
    /// a raw-scaled attribute degree 1 maps to its scaled column.
    pub fn column_of(&self, attribute: &str, degree: usize) -> Option<usize> {
        self.columns.iter().position(|c| {
            c.attribute == attribute
                && match c.kind {
                    ColumnKind::Degree(d) => d == degree,
                    ColumnKind::Scaled => degree == 1,
                    _ => false,
                }
        })
    }

    pub fn coding(&self, attribute: &str) -> Option<&OrthoPolyCoding> {
        let i = self.schema.continuous_index(attribute)?;
        self.codings[i].as_ref()
    }

    /// Encode a (possibly off-level) point: category index plus raw values of
    /// the continuous attributes.
    pub fn encode(&self, category: usize, values: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.columns.len());
        let mut ci = 0;
        for a in &self.schema.attributes {
            match a.kind {
                AttributeKind::Categorical => {
                    let k = a.levels.len();
                    match a.transform {
                        Transform::EffectsCoded => {
                            for l in 0..k - 1 {
                                row.push(if category == k - 1 {
                                    -1.0
                                } else if category == l {
                                    1.0
                                } else {
                                    0.0
                                });
                            }
                        }
                        _ => row.extend((0..k).map(|l| if l == category { 1.0 } else { 0.0 })),
                    }
                }
                AttributeKind::Continuous => {
                    let x = values[ci];
                    match &self.codings[ci] {
                        Some(c) => row.extend(c.eval(x)),
                        None => row.push(x / a.scale.unwrap_or(1.0)),
                    }
                    ci += 1;
                }
            }
        }
        row
    }

    pub fn encode_task(&self, task: &ReferendumTask) -> Vec<f64> {
        self.encode(task.category, &task.values)
    }
}

/// Dense row-major design matrix, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<Column>,
    n_cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }
}

pub fn build_design_matrix(dataset: &Dataset, schema: &AttributeSchema) -> Result<DesignMatrix> {
    let enc = TaskEncoder::new(schema)?;
    let n_cols = enc.n_columns();
    let mut data = Vec::with_capacity(n_cols * dataset.n_observations());
    for o in dataset.observations() {
        data.extend(enc.encode_task(&o.task));
    }
    Ok(DesignMatrix {
        columns: enc.columns.clone(),
        n_cols,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(category: usize, values: [f64; 4]) -> ReferendumTask {
        ReferendumTask {
            task_id: 1,
            block_id: 1,
            category,
            values: values.to_vec(),
        }
    }

    #[test]
    fn table1_schema_is_valid() {
        AttributeSchema::table1().validate().unwrap();
        AttributeSchema::table1_raw_levy().validate().unwrap();
    }

    #[test]
    fn quadratic_on_two_levels_is_rejected() {
        let mut s = AttributeSchema::table1();
        s.attributes[1].levels = Levels::Values(vec![10.0, 20.0]);
        let err = TaskEncoder::new(&s).unwrap_err().to_string();
        assert!(err.contains("quadratic"), "{err}");
    }

    #[test]
    fn category_one_hot() {
        let enc = TaskEncoder::new(&AttributeSchema::table1()).unwrap();
        let row = enc.encode_task(&task(0, [10.0, 5.0, 1.0, 100_000.0]));
        assert_eq!(&row[..3], &[1.0, 0.0, 0.0]);
        let row = enc.encode_task(&task(2, [10.0, 5.0, 1.0, 100_000.0]));
        assert_eq!(&row[..3], &[0.0, 0.0, 1.0]);
        // 3 indicators + 3 quadratic attributes x 2 + levy
        assert_eq!(enc.n_columns(), 10);
    }

    #[test]
    fn effects_coding_last_level_is_minus_one() {
        let mut s = AttributeSchema::table1();
        s.attributes[0].transform = Transform::EffectsCoded;
        let enc = TaskEncoder::new(&s).unwrap();
        let row = enc.encode_task(&task(2, [10.0, 5.0, 1.0, 100_000.0]));
        assert_eq!(&row[..2], &[-1.0, -1.0]);
        let row = enc.encode_task(&task(1, [10.0, 5.0, 1.0, 100_000.0]));
        assert_eq!(&row[..2], &[0.0, 1.0]);
    }

    #[test]
    fn raw_levy_is_rescaled() {
        let enc = TaskEncoder::new(&AttributeSchema::table1_raw_levy()).unwrap();
        let col = enc.column_of("levy", 1).unwrap();
        let row = enc.encode_task(&task(0, [10.0, 5.0, 1.0, 2_500_000.0]));
        assert_eq!(row[col], 2.5);
        assert!(enc.column_of("levy", 2).is_none());
    }

    #[test]
    fn dataset_rejects_off_level_values() {
        let s = AttributeSchema::table1();
        let r = vec![RespondentProfile {
            id: "a".into(),
            covariates: vec![],
        }];
        let o = vec![Observation {
            respondent: 0,
            task: task(0, [10.0, 5.0, 1.0, 300_000.0]),
            vote: true,
        }];
        let err = Dataset::new(s, vec![], r, o).unwrap_err().to_string();
        assert!(err.contains("levy"), "{err}");
    }

    #[test]
    fn covariate_kinds_are_checked() {
        let ind = CovariateSpec::new("female", CovariateKind::Indicator);
        assert!(ind.check(1.0).is_ok());
        assert!(ind.check(0.5).is_err());
        let lik = CovariateSpec::new("experience_index", CovariateKind::Likert);
        assert!(lik.check(3.25).is_ok());
        assert!(lik.check(0.0).is_err());
        let cnt = CovariateSpec::new("visits", CovariateKind::Count);
        assert!(cnt.check(-1.0).is_err());
    }
}
