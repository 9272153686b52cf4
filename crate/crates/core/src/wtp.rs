//! Segment shares and willingness to pay by sample enumeration.
//!
//! Shares are the mean membership priors over the sample. A segment's WTP for
//! a category is the levy at which its Yes-utility crosses zero, averaged
//! over task profiles and over respondents weighted by their prior
//! probability of belonging to the segment. With those weights the household
//! average `sum_s share_s * WTP_s` equals the sample mean of each
//! respondent's expected WTP.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{logit_yes, LikelihoodContext};
use crate::model::{Fixity, ParameterVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentShares {
    pub classes: Vec<String>,
    pub shares: Vec<f64>,
}

impl SegmentShares {
    pub fn new(classes: Vec<String>, shares: Vec<f64>) -> Result<Self> {
        if classes.len() != shares.len() {
            return Err(Error::Wtp("one share per class is required".into()));
        }
        if shares.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Wtp("shares must be non-negative".into()));
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Wtp(format!("shares sum to {total}, not 1")));
        }
        Ok(Self { classes, shares })
    }

    pub fn get(&self, class: &str) -> Option<f64> {
        self.classes.iter().position(|c| c == class).map(|i| self.shares[i])
    }

    pub fn sum(&self) -> f64 {
        self.shares.iter().sum()
    }
}

/// `share_s = (1/N) sum_i H_is` at the given parameters.
pub fn segment_shares(ctx: &LikelihoodContext, params: &ParameterVector) -> Result<SegmentShares> {
    let n = ctx.n_respondents();
    let priors: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ctx.priors(i, params))
        .collect::<Result<_>>()?;
    let mut shares = vec![0.0; ctx.n_classes()];
    for h in &priors {
        for (s, p) in shares.iter_mut().zip(h) {
            *s += p;
        }
    }
    shares.iter_mut().for_each(|s| *s /= n as f64);
    SegmentShares::new(ctx.class_names(), shares)
}

/// Mean posterior membership over the sample.
pub fn posterior_shares(ctx: &LikelihoodContext, params: &ParameterVector) -> Result<SegmentShares> {
    let post = ctx.posteriors(params)?;
    let mut shares = vec![0.0; ctx.n_classes()];
    for h in &post {
        for (s, p) in shares.iter_mut().zip(h) {
            *s += p;
        }
    }
    let n = post.len() as f64;
    shares.iter_mut().for_each(|s| *s /= n);
    SegmentShares::new(ctx.class_names(), shares)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WtpEntry {
    Value(f64),
    /// Protest "no": displayed as not willing, aggregated as zero.
    NotWilling,
    /// Utility not monotone in the levy, so no indifference point.
    Undefined,
}

impl WtpEntry {
    pub fn aggregate_value(self) -> Option<f64> {
        match self {
            WtpEntry::Value(v) => Some(v),
            WtpEntry::NotWilling => Some(0.0),
            WtpEntry::Undefined => None,
        }
    }
}

/// Which non-levy attribute values a segment's WTP is averaged over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    /// Every observed task of the category, with its frequency.
    #[default]
    Empirical,
    /// Each continuous attribute at the midpoint of its level range.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WtpOptions {
    /// Lowest levy searched; `None` means the smallest levy level.
    pub lower: Option<f64>,
    /// Yea-sayer value and top of the search; `None` means the largest
    /// levy level.
    pub upper: Option<f64>,
    pub profiles: ProfileMode,
}

impl Default for WtpOptions {
    fn default() -> Self {
        Self {
            lower: None,
            upper: None,
            profiles: ProfileMode::Empirical,
        }
    }
}

impl WtpOptions {
    fn bounds(&self, ctx: &LikelihoodContext) -> Result<(f64, f64)> {
        let levy = ctx.encoder().schema().levy_attribute();
        let lo = self.lower.unwrap_or_else(|| levy.min_value());
        let hi = self.upper.unwrap_or_else(|| levy.max_value());
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Wtp(format!("invalid levy search range [{lo}, {hi}]")));
        }
        Ok((lo, hi))
    }
}

/// Levy (raw units) at which `utility(levy)` crosses zero, or `None` when
/// the utility increases with the levy somewhere on `[lower, upper]`.
///
/// Below zero already at `lower` gives 0; still positive at `upper` gives
/// `upper`. Otherwise bisection down to a bracket of width 1.
pub fn indifference_levy(mut utility: impl FnMut(f64) -> f64, lower: f64, upper: f64) -> Option<f64> {
    const GRID: usize = 32;
    let mut prev = utility(lower);
    for k in 1..=GRID {
        let v = utility(lower + (upper - lower) * k as f64 / GRID as f64);
        if v > prev + 1e-12 * prev.abs().max(1.0) {
            return None;
        }
        prev = v;
    }
    let v_lo = utility(lower);
    if v_lo < 0.0 {
        return Some(0.0);
    }
    if v_lo == 0.0 {
        return Some(lower);
    }
    if utility(upper) > 0.0 {
        return Some(upper);
    }
    let (mut lo, mut hi) = (lower, upper);
    while hi - lo > 1.0 {
        let mid = 0.5 * (lo + hi);
        if utility(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Non-levy continuous values with their weights; the levy slot is left at
/// zero and overwritten during the search.
fn profiles(dataset: &Dataset, category: usize, mode: ProfileMode) -> Vec<(Vec<f64>, f64)> {
    let schema = dataset.schema();
    let levy = schema.levy_index();
    match mode {
        ProfileMode::Midpoint => {
            let v = schema
                .continuous()
                .enumerate()
                .map(|(j, a)| {
                    if j == levy {
                        0.0
                    } else {
                        0.5 * (a.min_value() + a.max_value())
                    }
                })
                .collect();
            vec![(v, 1.0)]
        }
        ProfileMode::Empirical => {
            let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
            let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
            for o in dataset.observations().iter().filter(|o| o.task.category == category) {
                let mut v = o.task.values.clone();
                v[levy] = 0.0;
                let key = v.iter().map(|x| x.to_bits()).collect();
                match seen.get(&key) {
                    Some(&i) => out[i].1 += 1.0,
                    None => {
                        seen.insert(key, out.len());
                        out.push((v, 1.0));
                    }
                }
            }
            let total: f64 = out.iter().map(|p| p.1).sum();
            out.iter_mut().for_each(|p| p.1 /= total);
            out
        }
    }
}

/// WTP of one class for one category, enumerated over the sample.
pub fn segment_wtp(
    dataset: &Dataset,
    ctx: &LikelihoodContext,
    params: &ParameterVector,
    class: usize,
    category: usize,
    options: &WtpOptions,
) -> Result<WtpEntry> {
    let (lower, upper) = options.bounds(ctx)?;
    match ctx.fixity(class, category) {
        Fixity::PinnedYes => return Ok(WtpEntry::Value(upper)),
        Fixity::PinnedNo => return Ok(WtpEntry::NotWilling),
        Fixity::Estimated => {}
    }
    let profiles = profiles(dataset, category, options.profiles);
    if profiles.is_empty() {
        return Err(Error::Wtp(format!(
            "no tasks of category '{}' to enumerate",
            dataset.schema().categories()[category]
        )));
    }
    let levy = dataset.schema().levy_index();
    let enc = ctx.encoder();
    let x = params.values();
    let per_resp: Vec<Option<(f64, f64)>> = (0..ctx.n_respondents())
        .into_par_iter()
        .map(|i| {
            let cov = ctx.respondent_covariates(i);
            let h = ctx.priors_for(cov, x)[class];
            let mut acc = 0.0;
            for (values, w) in &profiles {
                let mut values = values.clone();
                let l = indifference_levy(
                    |levy_value| {
                        values[levy] = levy_value;
                        ctx.utility_at(class, category, &enc.encode(category, &values), cov, x)
                            .unwrap_or(0.0)
                    },
                    lower,
                    upper,
                )?;
                acc += w * l;
            }
            Some((h, h * acc))
        })
        .collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for r in per_resp {
        let Some((h, v)) = r else {
            return Ok(WtpEntry::Undefined);
        };
        den += h;
        num += v;
    }
    if den <= 0.0 {
        return Err(Error::Wtp(format!("class '{}' has zero weight in the sample", ctx.class_names()[class])));
    }
    Ok(WtpEntry::Value(num / den))
}

/// `sum_s share_s * WTP_s`, matching classes by name; not-willing entries
/// count as zero.
pub fn household_average_wtp(shares: &SegmentShares, wtp: &[(String, WtpEntry)]) -> Result<f64> {
    if wtp.len() != shares.classes.len() {
        return Err(Error::Wtp(format!(
            "{} shares but {} WTP entries",
            shares.classes.len(),
            wtp.len()
        )));
    }
    let mut total = 0.0;
    for (class, entry) in wtp {
        let share = shares
            .get(class)
            .ok_or_else(|| Error::Wtp(format!("no share for class '{class}'")))?;
        let v = entry
            .aggregate_value()
            .ok_or_else(|| Error::Wtp(format!("WTP of class '{class}' is undefined")))?;
        total += share * v;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtpTable {
    pub categories: Vec<String>,
    pub shares: SegmentShares,
    /// `entries[class][category]`
    pub entries: Vec<Vec<WtpEntry>>,
    /// Per category; `None` when some segment's WTP is undefined.
    pub household_average: Vec<Option<f64>>,
}

impl WtpTable {
    /// Assembles the table and its household averages from given shares and
    /// segment values.
    pub fn from_parts(categories: Vec<String>, shares: SegmentShares, entries: Vec<Vec<WtpEntry>>) -> Result<Self> {
        if entries.len() != shares.classes.len() || entries.iter().any(|e| e.len() != categories.len()) {
            return Err(Error::Wtp("WTP entries do not match the class and category sets".into()));
        }
        let household_average = (0..categories.len())
            .map(|c| {
                let col: Vec<(String, WtpEntry)> = shares
                    .classes
                    .iter()
                    .zip(&entries)
                    .map(|(n, e)| (n.clone(), e[c]))
                    .collect();
                household_average_wtp(&shares, &col).ok()
            })
            .collect();
        Ok(Self {
            categories,
            shares,
            entries,
            household_average,
        })
    }
}

/// Shares plus every class/category WTP at the given parameters.
pub fn wtp_table(
    dataset: &Dataset,
    ctx: &LikelihoodContext,
    params: &ParameterVector,
    options: &WtpOptions,
) -> Result<WtpTable> {
    let shares = segment_shares(ctx, params)?;
    let categories = dataset.schema().categories().to_vec();
    let mut entries = Vec::with_capacity(ctx.n_classes());
    for s in 0..ctx.n_classes() {
        let row = (0..categories.len())
            .map(|c| segment_wtp(dataset, ctx, params, s, c, options))
            .collect::<Result<Vec<_>>>()?;
        entries.push(row);
    }
    WtpTable::from_parts(categories, shares, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveShape {
    MonotoneIncreasing,
    MonotoneDecreasing,
    ConcaveInteriorMax,
    ConvexInteriorMin,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCurve {
    pub class: String,
    pub category: String,
    pub attribute: String,
    pub grid: Vec<f64>,
    pub prob_yes: Vec<f64>,
    pub shape: CurveShape,
}

/// `n` evenly spaced points across an attribute's level range.
pub fn attribute_grid(ctx: &LikelihoodContext, attribute: &str, n: usize) -> Result<Vec<f64>> {
    let a = ctx
        .encoder()
        .schema()
        .attribute(attribute)
        .filter(|a| !a.values().is_empty())
        .ok_or_else(|| Error::Wtp(format!("unknown continuous attribute '{attribute}'")))?;
    let (lo, hi) = (a.min_value(), a.max_value());
    let n = n.max(2);
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

/// P(yes) along `grid` for one attribute, other continuous attributes at
/// their range midpoints and covariates at their sample means.
pub fn choice_prob_profile(
    ctx: &LikelihoodContext,
    params: &ParameterVector,
    class: usize,
    category: usize,
    attribute: &str,
    grid: &[f64],
) -> Result<ProbabilityCurve> {
    let schema = ctx.encoder().schema();
    let j = schema
        .continuous_index(attribute)
        .ok_or_else(|| Error::Wtp(format!("unknown continuous attribute '{attribute}'")))?;
    let class_name = ctx.class_names()[class].clone();
    let category_name = schema.categories()[category].clone();
    if ctx.fixity(class, category) != Fixity::Estimated {
        return Err(Error::PinnedCategory {
            class: class_name,
            category: category_name,
        });
    }
    let mut values: Vec<f64> = schema.continuous().map(|a| 0.5 * (a.min_value() + a.max_value())).collect();
    let n = ctx.n_respondents();
    let mut cov = vec![0.0; ctx.respondent_covariates(0).len()];
    for i in 0..n {
        for (m, c) in cov.iter_mut().zip(ctx.respondent_covariates(i)) {
            *m += c / n as f64;
        }
    }
    let utilities: Vec<f64> = grid
        .iter()
        .map(|&g| {
            values[j] = g;
            let enc = ctx.encoder().encode(category, &values);
            ctx.spec().scale * ctx.utility_at(class, category, &enc, &cov, params.values()).unwrap()
        })
        .collect();
    let shape = classify(&utilities);
    Ok(ProbabilityCurve {
        class: class_name,
        category: category_name,
        attribute: attribute.to_string(),
        grid: grid.to_vec(),
        prob_yes: utilities.iter().map(|&v| logit_yes(v)).collect(),
        shape,
    })
}

fn classify(v: &[f64]) -> CurveShape {
    let tol = 1e-12 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let (first, last) = (v[0], v[v.len() - 1]);
    let (imax, &max) = v.iter().enumerate().fold((0, &v[0]), |b, (i, x)| if *x > *b.1 { (i, x) } else { b });
    let (imin, &min) = v.iter().enumerate().fold((0, &v[0]), |b, (i, x)| if *x < *b.1 { (i, x) } else { b });
    if max - min <= tol {
        CurveShape::Flat
    } else if imax != 0 && imax != v.len() - 1 && max > first.max(last) + tol {
        CurveShape::ConcaveInteriorMax
    } else if imin != 0 && imin != v.len() - 1 && min < first.min(last) - tol {
        CurveShape::ConvexInteriorMin
    } else if last > first {
        CurveShape::MonotoneIncreasing
    } else {
        CurveShape::MonotoneDecreasing
    }
}
