//! Plain-text outputs: fit artifacts, parameter tables, shares and WTP
//! tables, probability curves.
//!
//! Every writer formats numbers deterministically so reruns with the same
//! seed give byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::csv_err;
use crate::error::{Error, Result};
use crate::estimation::{FitResult, ParameterEstimate};
use crate::model::{ModelSpec, ParameterVector};
use crate::wtp::{ProbabilityCurve, SegmentShares, WtpEntry, WtpTable};

/// Token for a protest (not willing) WTP cell.
pub const NOT_WILLING: &str = "NW";
/// Token for an undefined cell.
pub const MISSING: &str = "NA";

/// A WTP cell as written by hand in an artifact: a number or `"NW"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WtpCell {
    Value(f64),
    Token(Token),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    NW,
    NA,
}

impl From<WtpCell> for WtpEntry {
    fn from(c: WtpCell) -> Self {
        match c {
            WtpCell::Value(v) => WtpEntry::Value(v),
            WtpCell::Token(Token::NW) => WtpEntry::NotWilling,
            WtpCell::Token(Token::NA) => WtpEntry::Undefined,
        }
    }
}

/// Everything needed to report on a fit without re-estimating it.
///
/// `shares` and `segment_wtp` are optional overrides: when present, WTP
/// reporting uses them instead of enumerating the sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitArtifact {
    pub spec_name: String,
    pub spec_hash: String,
    /// Class names in model order.
    pub classes: Vec<String>,
    /// Category names in schema order (needed only with overrides).
    pub categories: Vec<String>,
    pub log_likelihood: Option<f64>,
    pub n_params: Option<usize>,
    pub n_observations: Option<usize>,
    pub converged: Option<bool>,
    pub seed: Option<u64>,
    pub parameters: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub shares: BTreeMap<String, f64>,
    /// class -> category -> cell
    pub segment_wtp: BTreeMap<String, BTreeMap<String, WtpCell>>,
}

impl FitArtifact {
    pub fn from_fit(spec: &ModelSpec, fit: &FitResult) -> Self {
        Self {
            spec_name: spec.name.clone(),
            spec_hash: spec.hash(),
            classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
            categories: vec![],
            log_likelihood: Some(fit.log_likelihood),
            n_params: Some(fit.n_params),
            n_observations: Some(fit.n_observations),
            converged: Some(fit.converged),
            seed: Some(fit.seed),
            parameters: fit.params.unpack(),
            standard_errors: fit
                .estimates
                .iter()
                .filter_map(|e| e.se.map(|s| (e.name.clone(), s)))
                .collect(),
            shares: BTreeMap::new(),
            segment_wtp: BTreeMap::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("fit artifact: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("artifact serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Parameters packed for `spec`, refusing a spec whose hash differs
    /// from the one recorded at fit time.
    pub fn params_for(&self, spec: &ModelSpec) -> Result<ParameterVector> {
        if !self.spec_hash.is_empty() && self.spec_hash != spec.hash() {
            return Err(Error::Config(format!(
                "fit artifact was produced for spec hash {}, not {}",
                self.spec_hash,
                spec.hash()
            )));
        }
        spec.pack(&self.parameters)
    }

    pub fn has_overrides(&self) -> bool {
        !self.shares.is_empty() || !self.segment_wtp.is_empty()
    }

    /// WTP table built from the embedded shares and segment values.
    pub fn override_table(&self) -> Result<WtpTable> {
        if self.classes.is_empty() || self.categories.is_empty() {
            return Err(Error::Config(
                "an artifact with share or WTP overrides must list its classes and categories".into(),
            ));
        }
        let shares = self
            .classes
            .iter()
            .map(|c| {
                self.shares
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no share for class '{c}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let entries = self
            .classes
            .iter()
            .map(|c| {
                self.categories
                    .iter()
                    .map(|k| {
                        self.segment_wtp
                            .get(c)
                            .and_then(|m| m.get(k))
                            .map(|&cell| WtpEntry::from(cell))
                            .ok_or_else(|| Error::Config(format!("no WTP for class '{c}', category '{k}'")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        WtpTable::from_parts(
            self.categories.clone(),
            SegmentShares::new(self.classes.clone(), shares)?,
            entries,
        )
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x}"))
}

/// `parameter,value,std_err,t_test,p_value`
pub fn write_parameter_table(path: &Path, estimates: &[ParameterEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["parameter", "value", "std_err", "t_test", "p_value"])
        .map_err(|e| csv_err(path, e))?;
    for e in estimates {
        w.write_record([e.name.clone(), format!("{}", e.value), fmt_opt(e.se), fmt_opt(e.t), fmt_opt(e.p)])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub spec_name: String,
    pub spec_hash: String,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub n_respondents: usize,
    pub n_observations: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub termination: String,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub best_start: usize,
    pub seed: u64,
    /// `NaN` marks a start at which the likelihood was undefined.
    pub start_log_likelihoods: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl FitSummary {
    pub fn new(spec: &ModelSpec, fit: &FitResult) -> Self {
        Self {
            spec_name: spec.name.clone(),
            spec_hash: spec.hash(),
            log_likelihood: fit.log_likelihood,
            n_params: fit.n_params,
            n_respondents: fit.n_respondents,
            n_observations: fit.n_observations,
            aic: fit.aic,
            bic: fit.bic,
            converged: fit.converged,
            termination: format!("{:?}", fit.termination),
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            best_start: fit.best_start,
            seed: fit.seed,
            start_log_likelihoods: fit
                .start_log_likelihoods()
                .into_iter()
                .map(|l| l.unwrap_or(f64::NAN))
                .collect(),
            diagnostics: fit.diagnostics.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = toml::to_string(self).expect("summary serializes");
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// One column per segment; a `propensity` row plus any extra rows.
pub fn write_shares(path: &Path, shares: &SegmentShares, extra: &[(&str, &SegmentShares)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["measure".to_string()];
    header.extend(shares.classes.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut rows = vec![("propensity", shares)];
    rows.extend(extra.iter().copied());
    for (label, s) in rows {
        if s.classes != shares.classes {
            return Err(Error::Wtp("share rows cover different classes".into()));
        }
        let mut rec = vec![label.to_string()];
        rec.extend(s.shares.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn wtp_cell(e: WtpEntry) -> String {
    match e {
        WtpEntry::Value(v) => format!("{v:.2}"),
        WtpEntry::NotWilling => NOT_WILLING.into(),
        WtpEntry::Undefined => MISSING.into(),
    }
}

/// Rows: categories. Columns: household average then one per segment.
pub fn write_wtp_table(path: &Path, table: &WtpTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["category".to_string(), "household_average".to_string()];
    header.extend(table.shares.classes.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (c, cat) in table.categories.iter().enumerate() {
        let mut rec = vec![
            cat.clone(),
            table.household_average[c].map_or_else(|| MISSING.into(), |v| format!("{v:.2}")),
        ];
        rec.extend(table.entries.iter().map(|row| wtp_cell(row[c])));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: `class,category,attribute,shape,value,prob_yes`.
pub fn write_curves(path: &Path, curves: &[ProbabilityCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["class", "category", "attribute", "shape", "value", "prob_yes"])
        .map_err(|e| csv_err(path, e))?;
    for c in curves {
        let shape = format!("{:?}", c.shape);
        for (x, p) in c.grid.iter().zip(&c.prob_yes) {
            w.write_record([
                c.class.as_str(),
                c.category.as_str(),
                c.attribute.as_str(),
                shape.as_str(),
                &format!("{x}"),
                &format!("{p:.10}"),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_with_tokens() {
        let a = FitArtifact::from_toml_str(
            r#"
            classes = ["a", "b"]
            categories = ["x"]
            [shares]
            a = 0.4
            b = 0.6
            [segment_wtp.a]
            x = 100.0
            [segment_wtp.b]
            x = "NW"
            "#,
        )
        .unwrap();
        let t = a.override_table().unwrap();
        assert_eq!(t.entries[1][0], WtpEntry::NotWilling);
        assert_eq!(t.household_average[0], Some(40.0));
        let back = FitArtifact::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(back, a);
    }
}
