//! Declarative latent-class structure: trader, pinned and partially pinned
//! classes, their utility terms, the membership model, and the mapping
//! between named parameters and the flat optimizer vector.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, AttributeSchema, Dataset, TaskEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixity {
    Estimated,
    PinnedYes,
    PinnedNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Trader,
    PinnedYes,
    PinnedNo,
    /// Per-category fixities; at least one category is pinned and the
    /// categories are not all pinned the same way.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermTransform {
    Linear,
    Quadratic,
}

impl TermTransform {
    pub fn degree(self) -> usize {
        match self {
            TermTransform::Linear => 1,
            TermTransform::Quadratic => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TermSource {
    Constant,
    Attribute { name: String, transform: TermTransform },
    Covariate(String),
}

impl fmt::Display for TermSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermSource::Constant => f.write_str("constant"),
            TermSource::Attribute {
                name,
                transform: TermTransform::Linear,
            } => write!(f, "attr:{name}"),
            TermSource::Attribute {
                name,
                transform: TermTransform::Quadratic,
            } => write!(f, "attr:{name}^2"),
            TermSource::Covariate(c) => write!(f, "cov:{c}"),
        }
    }
}

/// One coefficient on the Yes utility. `category = None` applies the term to
/// every estimated category of its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTerm", into = "RawTerm")]
pub struct UtilityTerm {
    pub source: TermSource,
    pub category: Option<String>,
    /// Declared value: a starting value or, for simulation, the truth.
    pub value: Option<f64>,
}

impl UtilityTerm {
    pub fn constant() -> Self {
        Self {
            source: TermSource::Constant,
            category: None,
            value: None,
        }
    }

    pub fn linear(attribute: &str) -> Self {
        Self::attribute(attribute, TermTransform::Linear)
    }

    pub fn quadratic(attribute: &str) -> Self {
        Self::attribute(attribute, TermTransform::Quadratic)
    }

    pub fn attribute(attribute: &str, transform: TermTransform) -> Self {
        Self {
            source: TermSource::Attribute {
                name: attribute.into(),
                transform,
            },
            category: None,
            value: None,
        }
    }

    pub fn covariate(name: &str) -> Self {
        Self {
            source: TermSource::Covariate(name.into()),
            category: None,
            value: None,
        }
    }

    pub fn in_category(mut self, category: &str) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn with_value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    pub fn scope(&self) -> &str {
        self.category.as_deref().unwrap_or("all")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RawTerm {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    constant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform: Option<TermTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
}

impl TryFrom<RawTerm> for UtilityTerm {
    type Error = String;

    fn try_from(r: RawTerm) -> std::result::Result<Self, String> {
        let source = match (r.constant, r.attribute, r.covariate) {
            (true, None, None) => TermSource::Constant,
            (false, Some(name), None) => TermSource::Attribute {
                name,
                transform: r.transform.unwrap_or(TermTransform::Linear),
            },
            (false, None, Some(c)) => TermSource::Covariate(c),
            _ => return Err("a term needs exactly one of constant, attribute, covariate".into()),
        };
        if r.transform.is_some() && !matches!(source, TermSource::Attribute { .. }) {
            return Err("transform only applies to attribute terms".into());
        }
        Ok(Self {
            source,
            category: r.category,
            value: r.value,
        })
    }
}

impl From<UtilityTerm> for RawTerm {
    fn from(t: UtilityTerm) -> Self {
        let mut r = RawTerm {
            category: t.category,
            value: t.value,
            ..Default::default()
        };
        match t.source {
            TermSource::Constant => r.constant = true,
            TermSource::Attribute { name, transform } => {
                r.attribute = Some(name);
                r.transform = Some(transform);
            }
            TermSource::Covariate(c) => r.covariate = Some(c),
        }
        r
    }
}

/// A membership-score coefficient (constant or respondent covariate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMember", into = "RawMember")]
pub struct MembershipTerm {
    /// `None` is the class constant.
    pub covariate: Option<String>,
    pub value: Option<f64>,
}

impl MembershipTerm {
    pub fn constant() -> Self {
        Self {
            covariate: None,
            value: None,
        }
    }

    pub fn covariate(name: &str) -> Self {
        Self {
            covariate: Some(name.into()),
            value: None,
        }
    }

    pub fn with_value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    pub fn label(&self) -> &str {
        self.covariate.as_deref().unwrap_or("constant")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RawMember {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    constant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
}

impl TryFrom<RawMember> for MembershipTerm {
    type Error = String;

    fn try_from(r: RawMember) -> std::result::Result<Self, String> {
        match (r.constant, r.covariate) {
            (true, None) => Ok(Self {
                covariate: None,
                value: r.value,
            }),
            (false, Some(c)) => Ok(Self {
                covariate: Some(c),
                value: r.value,
            }),
            _ => Err("a membership term needs exactly one of constant, covariate".into()),
        }
    }
}

impl From<MembershipTerm> for RawMember {
    fn from(t: MembershipTerm) -> Self {
        RawMember {
            constant: t.covariate.is_none(),
            covariate: t.covariate,
            value: t.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub kind: ClassKind,
    /// Only consulted for partial classes; categories not listed are
    /// estimated.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixity: BTreeMap<String, Fixity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<UtilityTerm>,
    /// Base class of the membership model (scores fixed at zero).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub base: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub membership: Vec<MembershipTerm>,
}

impl ClassSpec {
    fn with_kind(name: &str, kind: ClassKind) -> Self {
        Self {
            name: name.into(),
            kind,
            fixity: BTreeMap::new(),
            terms: vec![],
            base: false,
            membership: vec![],
        }
    }

    pub fn trader(name: &str, terms: Vec<UtilityTerm>) -> Self {
        Self {
            terms,
            ..Self::with_kind(name, ClassKind::Trader)
        }
    }

    pub fn pinned_yes(name: &str) -> Self {
        Self::with_kind(name, ClassKind::PinnedYes)
    }

    pub fn pinned_no(name: &str) -> Self {
        Self::with_kind(name, ClassKind::PinnedNo)
    }

    pub fn partial(name: &str, fixity: &[(&str, Fixity)], terms: Vec<UtilityTerm>) -> Self {
        Self {
            fixity: fixity.iter().map(|(c, f)| (c.to_string(), *f)).collect(),
            terms,
            ..Self::with_kind(name, ClassKind::Partial)
        }
    }

    pub fn as_base(mut self) -> Self {
        self.base = true;
        self
    }

    pub fn with_membership(mut self, terms: Vec<MembershipTerm>) -> Self {
        self.membership = terms;
        self
    }

    pub fn category_fixity(&self, category: &str) -> Fixity {
        match self.kind {
            ClassKind::Trader => Fixity::Estimated,
            ClassKind::PinnedYes => Fixity::PinnedYes,
            ClassKind::PinnedNo => Fixity::PinnedNo,
            ClassKind::Partial => self.fixity.get(category).copied().unwrap_or(Fixity::Estimated),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, ClassKind::PinnedYes | ClassKind::PinnedNo)
    }

    /// Number of free utility coefficients.
    pub fn n_utility_params(&self) -> usize {
        if self.is_degenerate() {
            0
        } else {
            self.terms.len()
        }
    }

    /// Terms that apply to tasks of `category` (empty when pinned there).
    pub fn terms_for<'a>(&'a self, category: &'a str) -> impl Iterator<Item = (usize, &'a UtilityTerm)> + 'a {
        let active = self.category_fixity(category) == Fixity::Estimated;
        self.terms
            .iter()
            .enumerate()
            .filter(move |(_, t)| active && t.category.as_deref().map_or(true, |c| c == category))
    }
}

/// View of the membership model: base class and per-class score terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipSpec {
    pub base: String,
    pub terms: Vec<(String, Vec<MembershipTerm>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    /// Logit scale, held fixed.
    #[serde(default = "unit_scale")]
    pub scale: f64,
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
}

fn unit_scale() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(classes: Vec<ClassSpec>) -> Self {
        Self {
            name: String::new(),
            scale: 1.0,
            classes,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Spec(vec![e.to_string()]))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    /// FNV-1a over the canonical TOML form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_toml_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn base_index(&self) -> Option<usize> {
        let bases: Vec<usize> = (0..self.classes.len()).filter(|&i| self.classes[i].base).collect();
        (bases.len() == 1).then(|| bases[0])
    }

    pub fn membership_spec(&self) -> Option<MembershipSpec> {
        let base = self.base_index()?;
        Some(MembershipSpec {
            base: self.classes[base].name.clone(),
            terms: self
                .classes
                .iter()
                .filter(|c| !c.base)
                .map(|c| (c.name.clone(), c.membership.clone()))
                .collect(),
        })
    }

    pub fn param_index(&self) -> Arc<ParamIndex> {
        let mut slots = Vec::new();
        let mut names = Vec::new();
        for (ci, c) in self.classes.iter().enumerate() {
            if c.is_degenerate() {
                continue;
            }
            for (ti, t) in c.terms.iter().enumerate() {
                slots.push(ParamSlot::Utility { class: ci, term: ti });
                names.push(format!("utility:{}:{}:{}", c.name, t.scope(), t.source));
            }
        }
        for (ci, c) in self.classes.iter().enumerate() {
            if c.base {
                continue;
            }
            for (ti, t) in c.membership.iter().enumerate() {
                slots.push(ParamSlot::Membership { class: ci, term: ti });
                names.push(format!("membership:{}:{}", c.name, t.label()));
            }
        }
        let lookup = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Arc::new(ParamIndex {
            names,
            slots,
            lookup,
        })
    }

    /// Vector of declared term values, if every free parameter has one.
    pub fn declared_values(&self) -> Option<ParameterVector> {
        let index = self.param_index();
        let values = index
            .slots
            .iter()
            .map(|s| match *s {
                ParamSlot::Utility { class, term } => self.classes[class].terms[term].value,
                ParamSlot::Membership { class, term } => self.classes[class].membership[term].value,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(ParameterVector { values, index })
    }

    /// Copy of the spec with the given parameter values written into the
    /// term `value` fields.
    pub fn with_values(&self, params: &ParameterVector) -> ModelSpec {
        let mut out = self.clone();
        for (slot, &v) in params.index.slots.iter().zip(&params.values) {
            match *slot {
                ParamSlot::Utility { class, term } => out.classes[class].terms[term].value = Some(v),
                ParamSlot::Membership { class, term } => out.classes[class].membership[term].value = Some(v),
            }
        }
        out
    }

    pub fn pack(&self, named: &BTreeMap<String, f64>) -> Result<ParameterVector> {
        ParameterVector::pack(self.param_index(), named)
    }
}

pub fn count_free_parameters(spec: &ModelSpec) -> usize {
    let utility: usize = spec.classes.iter().map(ClassSpec::n_utility_params).sum();
    let membership: usize = spec
        .classes
        .iter()
        .filter(|c| !c.base)
        .map(|c| c.membership.len())
        .sum();
    utility + membership
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Utility { class: usize, term: usize },
    Membership { class: usize, term: usize },
}

#[derive(Debug, PartialEq)]
pub struct ParamIndex {
    names: Vec<String>,
    slots: Vec<ParamSlot>,
    lookup: HashMap<String, usize>,
}

impl ParamIndex {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn utility_position(&self, class: usize, term: usize) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| *s == ParamSlot::Utility { class, term })
    }

    pub fn membership_position(&self, class: usize, term: usize) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| *s == ParamSlot::Membership { class, term })
    }
}

/// Flat vector of free parameters plus the name map it was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    index: Arc<ParamIndex>,
}

impl ParameterVector {
    pub fn new(index: Arc<ParamIndex>, values: Vec<f64>) -> Result<Self> {
        if values.len() != index.len() {
            return Err(Error::Parameters(format!(
                "expected {} values, got {}",
                index.len(),
                values.len()
            )));
        }
        Ok(Self { values, index })
    }

    pub fn zeros(index: Arc<ParamIndex>) -> Self {
        Self {
            values: vec![0.0; index.len()],
            index,
        }
    }

    pub fn pack(index: Arc<ParamIndex>, named: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = vec![f64::NAN; index.len()];
        for (name, &v) in named {
            let i = index
                .position(name)
                .ok_or_else(|| Error::Parameters(format!("unknown parameter '{name}'")))?;
            values[i] = v;
        }
        if named.len() != index.len() {
            let missing: Vec<_> = index
                .names()
                .iter()
                .filter(|n| !named.contains_key(*n))
                .cloned()
                .collect();
            return Err(Error::Parameters(format!(
                "expected {} parameters, got {} (missing: {})",
                index.len(),
                named.len(),
                missing.join(", ")
            )));
        }
        Ok(Self { values, index })
    }

    pub fn unpack(&self) -> BTreeMap<String, f64> {
        self.index
            .names()
            .iter()
            .cloned()
            .zip(self.values.iter().copied())
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self) -> &Arc<ParamIndex> {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index.position(name).map(|i| self.values[i])
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.index.clone(), values)
    }
}

/// Outcome of a successful validation: identification warnings, if any.
pub type Warnings = Vec<String>;

pub fn validate_spec(spec: &ModelSpec, dataset: &Dataset) -> Result<Warnings> {
    validate_against(spec, dataset.schema(), &dataset.covariate_names())
}

/// Structural and identification checks against an attribute schema and a
/// respondent covariate list.
pub fn validate_against(spec: &ModelSpec, schema: &AttributeSchema, covariates: &[String]) -> Result<Warnings> {
    let mut errs = Vec::new();
    let mut warns = Vec::new();
    let categories = schema.categories();
    let encoder = TaskEncoder::new(schema)?;

    if spec.classes.is_empty() {
        errs.push("no classes".to_string());
    }
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        errs.push(format!("scale must be positive, got {}", spec.scale));
    }
    let mut names = HashSet::new();
    for c in &spec.classes {
        if !names.insert(c.name.as_str()) {
            errs.push(format!("duplicate class name '{}'", c.name));
        }
        if c.name.is_empty() || c.name.contains(':') {
            errs.push(format!("invalid class name '{}'", c.name));
        }
    }
    match spec.classes.iter().filter(|c| c.base).count() {
        0 => errs.push("no base class".into()),
        1 => {}
        _ => errs.push("base class not unique".into()),
    }

    for c in &spec.classes {
        for key in c.fixity.keys() {
            if !categories.contains(key) {
                errs.push(format!("class '{}': unknown category '{key}' in fixity", c.name));
            }
        }
        match c.kind {
            ClassKind::PinnedYes | ClassKind::PinnedNo => {
                if !c.terms.is_empty() {
                    errs.push(format!("pinned class '{}' cannot have utility terms", c.name));
                }
                if !c.fixity.is_empty() {
                    errs.push(format!("pinned class '{}' cannot have a fixity map", c.name));
                }
            }
            ClassKind::Trader => {
                if c.fixity.values().any(|f| *f != Fixity::Estimated) {
                    errs.push(format!("trader class '{}' cannot pin categories", c.name));
                }
            }
            ClassKind::Partial => {
                let fix: Vec<_> = categories.iter().map(|k| c.category_fixity(k)).collect();
                let pinned = fix.iter().filter(|f| **f != Fixity::Estimated).count();
                let uniform = fix.iter().all(|f| *f == fix[0]);
                if pinned == 0 || uniform {
                    errs.push(format!(
                        "partial class '{}' must pin some categories and differ across categories",
                        c.name
                    ));
                }
            }
        }

        let estimated: Vec<&String> = categories
            .iter()
            .filter(|k| c.category_fixity(k) == Fixity::Estimated)
            .collect();
        if !c.is_degenerate() && estimated.is_empty() && !c.terms.is_empty() {
            errs.push(format!(
                "class '{}' has utility terms but no estimated category",
                c.name
            ));
        }

        let mut seen = HashSet::new();
        for t in &c.terms {
            if !seen.insert((t.source.clone(), t.category.clone())) {
                errs.push(format!(
                    "class '{}': duplicate term {} in scope {}",
                    c.name,
                    t.source,
                    t.scope()
                ));
            }
            if let Some(cat) = &t.category {
                if !categories.contains(cat) {
                    errs.push(format!("class '{}': unknown category '{cat}'", c.name));
                } else if c.category_fixity(cat) != Fixity::Estimated {
                    errs.push(format!(
                        "class '{}': term {} scoped to pinned category '{cat}'",
                        c.name, t.source
                    ));
                }
            }
            match &t.source {
                TermSource::Constant => {}
                TermSource::Covariate(name) => {
                    if !covariates.contains(name) {
                        errs.push(format!("class '{}': unknown covariate '{name}'", c.name));
                    }
                }
                TermSource::Attribute { name, transform } => match schema.attribute(name) {
                    None => errs.push(format!("class '{}': unknown attribute '{name}'", c.name)),
                    Some(a) if a.kind == AttributeKind::Categorical => errs.push(format!(
                        "class '{}': categorical attribute '{name}' enters through category constants",
                        c.name
                    )),
                    Some(_) => {
                        if encoder.column_of(name, transform.degree()).is_none() {
                            errs.push(format!(
                                "class '{}': coding of '{name}' has no degree-{} column",
                                c.name,
                                transform.degree()
                            ));
                        }
                    }
                },
            }
        }

        // A class-wide term plus the same term in every estimated category
        // is collinear: one category's copy has to be fixed at zero.
        if estimated.len() > 1 {
            let sources: HashSet<&TermSource> = c.terms.iter().map(|t| &t.source).collect();
            for src in sources {
                let global = c.terms.iter().any(|t| &t.source == src && t.category.is_none());
                let all_scoped = estimated.iter().all(|k| {
                    c.terms
                        .iter()
                        .any(|t| &t.source == src && t.category.as_deref() == Some(k.as_str()))
                });
                if global && all_scoped {
                    warns.push(format!(
                        "class '{}': {src} is free in every category and class-wide; fix one category's {src} at zero",
                        c.name
                    ));
                }
            }
        }

        if c.base && !c.membership.is_empty() {
            errs.push(format!("base class '{}' cannot have membership terms", c.name));
        }
        let mut mseen = HashSet::new();
        for m in &c.membership {
            if !mseen.insert(m.covariate.clone()) {
                errs.push(format!("class '{}': duplicate membership term {}", c.name, m.label()));
            }
            if let Some(cov) = &m.covariate {
                if !covariates.contains(cov) {
                    errs.push(format!(
                        "class '{}': unknown membership covariate '{cov}'",
                        c.name
                    ));
                }
            }
        }
    }

    let free_choice = spec.classes.iter().any(|c| {
        !c.is_degenerate()
            && categories
                .iter()
                .any(|k| c.category_fixity(k) == Fixity::Estimated)
    });
    if !spec.classes.is_empty() && !free_choice {
        errs.push("all classes pinned: no trader or partial class with an estimated category".into());
    }

    if errs.is_empty() {
        Ok(warns)
    } else {
        Err(Error::Spec(errs))
    }
}
