//! Synthetic respondents and votes from a model with known parameters.
//!
//! Each respondent gets its own ChaCha stream (`set_stream(i)` on the run
//! seed), so output does not depend on thread count. True class labels are
//! returned separately from the [`Dataset`] and written to a sidecar file.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{csv_err, CovariateKind, CovariateSpec, Dataset, Observation, ReferendumTask, RespondentProfile, TaskEncoder};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions, FitResult};
use crate::likelihood::{logit_yes, softmax, LikelihoodContext};
use crate::model::{ClassKind, ClassSpec, Fixity, ModelSpec, TermSource, UtilityTerm};
use crate::wtp::{segment_shares, wtp_table, WtpOptions, WtpTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum CovariateDist {
    Bernoulli { p: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
    Uniform { low: f64, high: f64 },
    /// Mutually exclusive indicators; exactly one member is 1.
    OneHot { members: Vec<String>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    /// Covariate name, or the group name for one-hot groups.
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
}

impl CovariateGenerator {
    fn outputs(&self) -> Vec<CovariateSpec> {
        match &self.dist {
            CovariateDist::Bernoulli { .. } => vec![CovariateSpec::new(&self.name, CovariateKind::Indicator)],
            CovariateDist::OneHot { members, .. } => members
                .iter()
                .map(|m| CovariateSpec::new(m, CovariateKind::Indicator))
                .collect(),
            CovariateDist::Discrete { values, .. } => {
                let count = values.iter().all(|v| *v >= 0.0 && v.fract() == 0.0);
                let kind = if count { CovariateKind::Count } else { CovariateKind::Numeric };
                vec![CovariateSpec::new(&self.name, kind)]
            }
            CovariateDist::Uniform { low, high } => {
                let kind = if *low >= 1.0 && *high <= 5.0 {
                    CovariateKind::Likert
                } else {
                    CovariateKind::Numeric
                };
                vec![CovariateSpec::new(&self.name, kind)]
            }
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let weights_ok = |w: &[f64], n: usize| {
            w.len() == n && n > 0 && w.iter().all(|x| *x >= 0.0 && x.is_finite()) && w.iter().sum::<f64>() > 0.0
        };
        let ok = match &self.dist {
            CovariateDist::Bernoulli { p } => (0.0..=1.0).contains(p),
            CovariateDist::Discrete { values, weights } => weights_ok(weights, values.len()),
            CovariateDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            CovariateDist::OneHot { members, weights } => weights_ok(weights, members.len()),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid distribution for covariate '{}'", self.name))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        match &self.dist {
            CovariateDist::Bernoulli { p } => out.push(if rng.gen::<f64>() < *p { 1.0 } else { 0.0 }),
            CovariateDist::Discrete { values, weights } => {
                let k = WeightedIndex::new(weights).expect("checked weights").sample(rng);
                out.push(values[k]);
            }
            CovariateDist::Uniform { low, high } => out.push(low + (high - low) * rng.gen::<f64>()),
            CovariateDist::OneHot { members, weights } => {
                let k = WeightedIndex::new(weights).expect("checked weights").sample(rng);
                out.extend((0..members.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
            }
        }
    }
}

/// A set of covariate generators, read from TOML `[[covariate]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    #[serde(rename = "covariate", default)]
    pub generators: Vec<CovariateGenerator>,
}

impl CovariateModel {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let m: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for g in &self.generators {
            g.check().map_err(Error::Simulation)?;
            for c in g.outputs() {
                if !names.insert(c.name.clone()) {
                    return Err(Error::Simulation(format!("covariate '{}' generated twice", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn covariates(&self) -> Vec<CovariateSpec> {
        self.generators.iter().flat_map(|g| g.outputs()).collect()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.generators {
            g.draw(rng, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Model with every term value declared; those values are the truth.
    pub spec: ModelSpec,
    pub respondents: usize,
    pub design: Design,
    pub covariates: CovariateModel,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.respondents == 0 {
            return Err(Error::Simulation("need at least one respondent".into()));
        }
        self.covariates.validate()?;
        let names: Vec<String> = self.covariates.covariates().into_iter().map(|c| c.name).collect();
        crate::model::validate_against(&self.spec, &self.design.schema, &names)?;
        if self.spec.declared_values().is_none() {
            return Err(Error::Simulation(
                "every utility and membership term of the true model needs a value".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    /// True class index per respondent, in dataset order.
    pub truth: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Simulation {
    /// Fraction of respondents in each class.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.class_names.len()];
        for &c in &self.truth {
            f[c] += 1.0;
        }
        let n = self.truth.len() as f64;
        f.iter().map(|x| x / n).collect()
    }

    /// `respondent_id,true_class`
    pub fn write_truth(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["respondent_id", "true_class"]).map_err(|e| csv_err(path, e))?;
        for (r, &c) in self.dataset.respondents().iter().zip(&self.truth) {
            w.write_record([r.id.as_str(), self.class_names[c].as_str()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Truth model compiled against the design's encoder.
struct Truth {
    classes: Vec<TrueClass>,
    scale: f64,
}

struct TrueClass {
    fixity: Vec<Fixity>,
    /// (scope, feature, value)
    terms: Vec<(Option<usize>, Feature, f64)>,
    membership: Vec<(Option<usize>, f64)>,
    base: bool,
}

#[derive(Clone, Copy)]
enum Feature {
    Constant,
    Column(usize),
    Covariate(usize),
}

impl Truth {
    fn new(spec: &ModelSpec, encoder: &TaskEncoder, covariates: &[String]) -> Self {
        let schema = encoder.schema();
        let cov = |n: &str| covariates.iter().position(|c| c == n).expect("validated covariate");
        let classes = spec
            .classes
            .iter()
            .map(|c| TrueClass {
                fixity: schema.categories().iter().map(|k| c.category_fixity(k)).collect(),
                terms: if c.is_degenerate() {
                    vec![]
                } else {
                    c.terms
                        .iter()
                        .map(|t| {
                            let f = match &t.source {
                                TermSource::Constant => Feature::Constant,
                                TermSource::Attribute { name, transform } => {
                                    Feature::Column(encoder.column_of(name, transform.degree()).unwrap())
                                }
                                TermSource::Covariate(n) => Feature::Covariate(cov(n)),
                            };
                            let scope = t.category.as_ref().map(|k| schema.category_index(k).unwrap());
                            (scope, f, t.value.unwrap())
                        })
                        .collect()
                },
                membership: c
                    .membership
                    .iter()
                    .map(|m| (m.covariate.as_deref().map(cov), m.value.unwrap()))
                    .collect(),
                base: c.base,
            })
            .collect();
        Self {
            classes,
            scale: spec.scale,
        }
    }

    fn priors(&self, z: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .classes
            .iter()
            .map(|c| {
                if c.base {
                    0.0
                } else {
                    c.membership.iter().map(|(j, v)| v * j.map_or(1.0, |j| z[j])).sum()
                }
            })
            .collect();
        softmax(&scores)
    }

    fn utility(&self, class: usize, category: usize, x: &[f64], z: &[f64]) -> f64 {
        self.classes[class]
            .terms
            .iter()
            .filter(|(s, _, _)| s.map_or(true, |s| s == category))
            .map(|(_, f, v)| {
                v * match f {
                    Feature::Constant => 1.0,
                    Feature::Column(j) => x[*j],
                    Feature::Covariate(j) => z[*j],
                }
            })
            .sum()
    }
}

fn respondent_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("R{:0width$}", i + 1)
}

/// Draws covariates, a class and one vote per task of the respondent's
/// block (blocks assigned round-robin).
pub fn simulate_population(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let schema = &config.design.schema;
    let encoder = TaskEncoder::new(schema)?;
    let cov_specs = config.covariates.covariates();
    let cov_names: Vec<String> = cov_specs.iter().map(|c| c.name.clone()).collect();
    let truth = Truth::new(&config.spec, &encoder, &cov_names);

    let mut block_ids: Vec<u32> = config.design.tasks.iter().map(|t| t.block_id).collect();
    block_ids.sort_unstable();
    block_ids.dedup();
    let blocks: Vec<Vec<&ReferendumTask>> = block_ids.iter().map(|&b| config.design.block(b)).collect();
    let encoded: BTreeMap<u32, Vec<f64>> = config
        .design
        .tasks
        .iter()
        .map(|t| (t.task_id, encoder.encode_task(t)))
        .collect();

    let n = config.respondents;
    let draws: Vec<(Vec<f64>, usize, Vec<bool>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let z = config.covariates.draw(&mut rng);
            let h = truth.priors(&z);
            let class = WeightedIndex::new(&h).map(|w| w.sample(&mut rng)).unwrap_or(0);
            let votes = blocks[i % blocks.len()]
                .iter()
                .map(|t| {
                    // draw even for pinned tasks so streams stay aligned
                    let u: f64 = rng.gen();
                    match truth.classes[class].fixity[t.category] {
                        Fixity::PinnedYes => true,
                        Fixity::PinnedNo => false,
                        Fixity::Estimated => {
                            let v = truth.utility(class, t.category, &encoded[&t.task_id], &z);
                            u < logit_yes(truth.scale * v)
                        }
                    }
                })
                .collect();
            (z, class, votes)
        })
        .collect();

    let mut respondents = Vec::with_capacity(n);
    let mut observations = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for (i, (z, class, votes)) in draws.into_iter().enumerate() {
        respondents.push(RespondentProfile {
            id: respondent_id(i, n),
            covariates: z,
        });
        for (t, vote) in blocks[i % blocks.len()].iter().zip(votes) {
            observations.push(Observation {
                respondent: i,
                task: (*t).clone(),
                vote,
            });
        }
        labels.push(class);
    }
    let dataset = Dataset::new(schema.clone(), cov_specs, respondents, observations)?;

    for (i, &c) in labels.iter().enumerate() {
        for o in dataset.respondent_observations(i) {
            let ok = match truth.classes[c].fixity[o.task.category] {
                Fixity::PinnedYes => o.vote,
                Fixity::PinnedNo => !o.vote,
                Fixity::Estimated => true,
            };
            if !ok {
                return Err(Error::Simulation(format!(
                    "respondent {} of pinned class '{}' has a vote against its pin",
                    dataset.respondents()[i].id,
                    config.spec.classes[c].name
                )));
            }
        }
    }
    Ok(Simulation {
        dataset,
        truth: labels,
        class_names: config.spec.classes.iter().map(|c| c.name.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredParameter {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Whether truth lies in estimate +/- 1.96 se.
    pub covered: Option<bool>,
}

impl RecoveredParameter {
    pub fn bias(&self) -> f64 {
        self.estimate - self.truth
    }

    /// |estimate - truth| / se
    pub fn z(&self) -> Option<f64> {
        self.se.map(|s| self.bias().abs() / s)
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub fit: FitResult,
    /// Fitted class name to the true class it was matched with.
    pub matching: Vec<(String, String)>,
    pub parameters: Vec<RecoveredParameter>,
    pub true_shares: Vec<f64>,
    pub fitted_shares: Vec<f64>,
    pub class_names: Vec<String>,
}

impl RecoveryReport {
    pub fn max_share_error(&self) -> f64 {
        self.true_shares
            .iter()
            .zip(&self.fitted_shares)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn coverage(&self) -> f64 {
        let c: Vec<bool> = self.parameters.iter().filter_map(|p| p.covered).collect();
        c.iter().filter(|x| **x).count() as f64 / c.len().max(1) as f64
    }

    pub fn rmse(&self) -> f64 {
        let n = self.parameters.len().max(1) as f64;
        (self.parameters.iter().map(|p| p.bias().powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Utility parameters of trader and partial classes.
    pub fn utility_parameters(&self) -> impl Iterator<Item = &RecoveredParameter> {
        self.parameters.iter().filter(|p| p.name.starts_with("utility:"))
    }
}

fn class_of(name: &str) -> Option<&str> {
    name.split(':').nth(1)
}

fn rename_class(name: &str, to: &str) -> String {
    let mut parts: Vec<&str> = name.splitn(3, ':').collect();
    if parts.len() == 3 {
        parts[1] = to;
    }
    parts.join(":")
}

/// Pairs each fitted trader class with a true one so that the summed squared
/// utility-parameter distance is smallest. Only classes with identical terms
/// are interchangeable; everything else maps to itself.
fn match_classes(spec: &ModelSpec, fitted: &BTreeMap<String, f64>, truth: &BTreeMap<String, f64>) -> Vec<usize> {
    let s = spec.classes.len();
    let mut perm: Vec<usize> = (0..s).collect();
    let traders: Vec<usize> = (0..s)
        .filter(|&i| spec.classes[i].kind == ClassKind::Trader && !spec.classes[i].base)
        .collect();
    if traders.len() < 2 || traders.len() > 7 {
        return perm;
    }
    let cost = |fit_class: usize, true_class: usize| -> f64 {
        let (a, b) = (&spec.classes[fit_class], &spec.classes[true_class]);
        if a.terms.iter().map(|t| (&t.source, &t.category)).ne(b.terms.iter().map(|t| (&t.source, &t.category))) {
            return f64::INFINITY;
        }
        fitted
            .iter()
            .filter(|(k, _)| k.starts_with("utility:") && class_of(k) == Some(a.name.as_str()))
            .map(|(k, v)| {
                let t = truth.get(&rename_class(k, &b.name)).copied().unwrap_or(0.0);
                (v - t).powi(2)
            })
            .sum()
    };
    let mut best = (f64::INFINITY, traders.clone());
    permute(&mut traders.clone(), 0, &mut |p| {
        let c: f64 = traders.iter().zip(p).map(|(&f, &t)| cost(f, t)).sum();
        if c < best.0 {
            best = (c, p.to_vec());
        }
    });
    for (&f, &t) in traders.iter().zip(&best.1) {
        perm[f] = t;
    }
    perm
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Simulate, refit the same specification, and compare with the truth.
pub fn recovery_experiment(config: &SimConfig, options: &FitOptions) -> Result<RecoveryReport> {
    let sim = simulate_population(config)?;
    let truth_params = config.spec.declared_values().expect("validated");
    let truth = truth_params.unpack();
    let result = fit(&sim.dataset, &config.spec, options)?;
    let fitted = result.params.unpack();
    let perm = match_classes(&config.spec, &fitted, &truth);
    let names: Vec<String> = config.spec.classes.iter().map(|c| c.name.clone()).collect();

    let mut parameters = Vec::new();
    for e in &result.estimates {
        let Some(fc) = class_of(&e.name).and_then(|c| config.spec.class_index(c)) else {
            continue;
        };
        let tc = perm[fc];
        if e.name.starts_with("membership:") && tc != fc {
            // membership contrasts are not comparable after relabelling
            continue;
        }
        let tname = rename_class(&e.name, &names[tc]);
        let Some(&t) = truth.get(&tname) else { continue };
        parameters.push(RecoveredParameter {
            name: tname,
            truth: t,
            estimate: e.value,
            se: e.se,
            covered: e.se.map(|s| (e.value - t).abs() <= 1.96 * s),
        });
    }

    let ctx = LikelihoodContext::new(&sim.dataset, &config.spec)?;
    let fitted_raw = segment_shares(&ctx, &result.params)?.shares;
    let mut fitted_shares = vec![0.0; fitted_raw.len()];
    for (fc, &s) in fitted_raw.iter().enumerate() {
        fitted_shares[perm[fc]] += s;
    }
    Ok(RecoveryReport {
        matching: (0..names.len()).map(|i| (names[i].clone(), names[perm[i]].clone())).collect(),
        true_shares: sim.class_frequencies(),
        fitted_shares,
        class_names: names,
        parameters,
        fit: result,
    })
}

/// Variant (b) of the bias demo: fully pinned-no classes removed. When the
/// base class is removed the last remaining trader becomes the base.
pub fn without_naysayers(spec: &ModelSpec) -> Result<ModelSpec> {
    let mut classes: Vec<ClassSpec> = spec
        .classes
        .iter()
        .filter(|c| c.kind != ClassKind::PinnedNo)
        .cloned()
        .collect();
    fix_base(&mut classes)?;
    let mut s = spec.clone();
    s.classes = classes;
    Ok(s)
}

/// Variant (c): fully pinned classes removed and partial classes turned
/// into traders. Formerly pinned categories get their own levy term, and
/// a category constant unless the class already has a class-wide one.
pub fn without_protest_classes(spec: &ModelSpec) -> Result<ModelSpec> {
    let levy = spec
        .classes
        .iter()
        .flat_map(|c| &c.terms)
        .find_map(|t| match &t.source {
            TermSource::Attribute { name, transform } if name.contains("levy") => Some((name.clone(), *transform)),
            _ => None,
        })
        .unwrap_or(("levy".into(), crate::model::TermTransform::Linear));
    let mut classes = Vec::new();
    for c in &spec.classes {
        match c.kind {
            ClassKind::PinnedYes | ClassKind::PinnedNo => continue,
            ClassKind::Trader => classes.push(c.clone()),
            ClassKind::Partial => {
                let mut terms = c.terms.clone();
                let has_constant = c.terms.iter().any(|t| t.category.is_none() && t.source == TermSource::Constant);
                for (cat, f) in &c.fixity {
                    if *f == Fixity::Estimated {
                        continue;
                    }
                    if !has_constant {
                        terms.push(UtilityTerm::constant().in_category(cat).with_value(0.0));
                    }
                    terms.push(UtilityTerm::attribute(&levy.0, levy.1).in_category(cat).with_value(0.0));
                }
                let mut t = ClassSpec::trader(&c.name, terms).with_membership(c.membership.clone());
                t.base = c.base;
                classes.push(t);
            }
        }
    }
    fix_base(&mut classes)?;
    let mut s = spec.clone();
    s.classes = classes;
    Ok(s)
}

fn fix_base(classes: &mut [ClassSpec]) -> Result<()> {
    if classes.iter().any(|c| c.base) {
        return Ok(());
    }
    let last = classes
        .iter()
        .rposition(|c| c.kind == ClassKind::Trader)
        .ok_or_else(|| Error::Simulation("no trader class left to act as base".into()))?;
    classes[last].base = true;
    classes[last].membership.clear();
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BiasVariant {
    pub label: String,
    pub respondents: usize,
    /// The fit, or the error message when it failed.
    pub fit: std::result::Result<FitResult, String>,
    pub wtp: Option<WtpTable>,
}

impl BiasVariant {
    pub fn household_average(&self) -> Vec<Option<f64>> {
        self.wtp.as_ref().map(|w| w.household_average.clone()).unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct BiasReport {
    pub categories: Vec<String>,
    pub truth: WtpTable,
    /// Share of simulated respondents in fully pinned-no classes.
    pub naysayer_share: f64,
    pub variants: Vec<BiasVariant>,
}

impl BiasReport {
    /// Relative deviation of each variant's household average from truth.
    pub fn relative_bias(&self) -> Vec<(String, Vec<Option<f64>>)> {
        self.variants
            .iter()
            .map(|v| {
                let h = v.household_average();
                let rel = (0..self.categories.len())
                    .map(|c| match (h.get(c).copied().flatten(), self.truth.household_average[c]) {
                        (Some(a), Some(t)) if t != 0.0 => Some((a - t) / t),
                        _ => None,
                    })
                    .collect();
                (v.label.clone(), rel)
            })
            .collect()
    }
}

fn run_variant(label: &str, dataset: &Dataset, spec: &ModelSpec, options: &FitOptions, wtp: &WtpOptions) -> BiasVariant {
    let fit = fit(dataset, spec, options);
    let table = fit.as_ref().ok().and_then(|f| {
        let ctx = LikelihoodContext::new(dataset, spec).ok()?;
        wtp_table(dataset, &ctx, &f.params, wtp).ok()
    });
    BiasVariant {
        label: label.into(),
        respondents: dataset.n_respondents(),
        fit: fit.map_err(|e| e.to_string()),
        wtp: table,
    }
}

/// Fits (a) the true specification, (b) the specification without nay-sayer
/// classes on data with every all-no respondent deleted, and (c) the
/// specification without any protest classes on the full data, and sets
/// their household-average WTP against the true one.
pub fn naysayer_bias_demo(config: &SimConfig, options: &FitOptions, wtp: &WtpOptions) -> Result<BiasReport> {
    let sim = simulate_population(config)?;
    let truth_params = config.spec.declared_values().expect("validated");
    let ctx = LikelihoodContext::new(&sim.dataset, &config.spec)?;
    let truth = wtp_table(&sim.dataset, &ctx, &truth_params, wtp)?;
    let freq = sim.class_frequencies();
    let naysayer_share = config
        .spec
        .classes
        .iter()
        .zip(&freq)
        .filter(|(c, _)| c.kind == ClassKind::PinnedNo)
        .map(|(_, f)| f)
        .sum();
    if naysayer_share < 0.1 {
        log::warn!("true nay-sayer share {naysayer_share:.3} is below 0.1; the bias will be small");
    }

    let a = run_variant("full", &sim.dataset, &config.spec, options, wtp);
    let trimmed = sim
        .dataset
        .filter_respondents(|_, obs| obs.iter().any(|o| o.vote))?;
    let b = run_variant("drop-all-no", &trimmed, &without_naysayers(&config.spec)?, options, wtp);
    let c = run_variant("no-protest-classes", &sim.dataset, &without_protest_classes(&config.spec)?, options, wtp);
    Ok(BiasReport {
        categories: sim.dataset.schema().categories().to_vec(),
        truth,
        naysayer_share,
        variants: vec![a, b, c],
    })
}
