//! Mixture likelihood of repeated binary votes.
//!
//! Each respondent's contribution is `sum_s H_is * prod_r P_ir|s`, evaluated
//! in log space. Pinned categories contribute exact 0/1 indicators, and a
//! class whose sequence probability is exactly zero is left out of the
//! log-sum-exp. Respondent terms are computed in parallel and reduced in
//! respondent order, so totals do not depend on the thread count.

use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{Dataset, TaskEncoder};
use crate::error::{Error, Result};
use crate::model::{validate_spec, Fixity, ModelSpec, ParamIndex, ParameterVector, TermSource};

/// P(yes) for systematic Yes-utility `v` (No utility is zero).
pub fn logit_yes(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// ln sigma(v), stable for large |v|.
pub fn log_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// Probability of the observed vote under a logit with Yes-utility `v`.
pub fn vote_probability(v: f64, vote: bool) -> f64 {
    if vote {
        logit_yes(v)
    } else {
        logit_yes(-v)
    }
}

fn log_vote_probability(v: f64, vote: bool) -> f64 {
    if vote {
        log_sigmoid(v)
    } else {
        log_sigmoid(-v)
    }
}

/// Exact 0/1 probability of a vote in a pinned category; `None` when the
/// category is estimated.
pub fn degenerate_class_prob(fixity: Fixity, vote: bool) -> Option<f64> {
    match fixity {
        Fixity::Estimated => None,
        Fixity::PinnedYes => Some(if vote { 1.0 } else { 0.0 }),
        Fixity::PinnedNo => Some(if vote { 0.0 } else { 1.0 }),
    }
}

/// Softmax over class scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| s - lse).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Class priors from a shared covariate vector `z` and per-class
/// coefficient vectors (an empty vector is the base class, score 0).
pub fn membership_priors(z: &[f64], thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(thetas.len());
    for (s, theta) in thetas.iter().enumerate() {
        if theta.len() > z.len() {
            return Err(Error::Parameters(format!(
                "class {s} has {} membership coefficients but the covariate vector has {}",
                theta.len(),
                z.len()
            )));
        }
        scores.push(theta.iter().zip(z).map(|(t, x)| t * x).sum());
    }
    Ok(softmax(&scores))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Feature {
    Constant,
    Column(usize),
    Covariate(usize),
}

impl Feature {
    fn value(self, encoded: &[f64], covariates: &[f64]) -> f64 {
        match self {
            Feature::Constant => 1.0,
            Feature::Column(j) => encoded[j],
            Feature::Covariate(j) => covariates[j],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledTerm {
    pub(crate) scope: Option<usize>,
    pub(crate) feature: Feature,
    pub(crate) position: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledClass {
    pub(crate) name: String,
    pub(crate) fixity: Vec<Fixity>,
    pub(crate) terms: Vec<CompiledTerm>,
    /// rows x terms, zero where a term does not apply to the row.
    x: Vec<f64>,
    member_pos: Vec<usize>,
    member_features: Vec<Feature>,
    /// respondents x membership terms
    z: Vec<f64>,
}

impl CompiledClass {
    fn k(&self) -> usize {
        self.terms.len()
    }

    fn x_row(&self, row: usize) -> &[f64] {
        let k = self.k();
        &self.x[row * k..(row + 1) * k]
    }

    fn z_row(&self, resp: usize) -> &[f64] {
        let m = self.member_pos.len();
        &self.z[resp * m..(resp + 1) * m]
    }

    fn is_fully_pinned(&self) -> bool {
        self.fixity.iter().all(|f| *f != Fixity::Estimated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub log_likelihood: f64,
    pub per_respondent: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
}

/// Dataset and spec compiled into dense per-class feature blocks.
#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    spec: ModelSpec,
    index: Arc<ParamIndex>,
    encoder: TaskEncoder,
    scale: f64,
    respondent_ids: Vec<String>,
    covariates: Vec<Vec<f64>>,
    groups: Vec<Range<usize>>,
    row_category: Vec<usize>,
    votes: Vec<bool>,
    classes: Vec<CompiledClass>,
}

struct RespondentEval {
    ll: f64,
    grad: Option<Vec<f64>>,
}

impl LikelihoodContext {
    pub fn new(dataset: &Dataset, spec: &ModelSpec) -> Result<Self> {
        validate_spec(spec, dataset)?;
        let schema = dataset.schema();
        let encoder = TaskEncoder::new(schema)?;
        let categories = schema.categories();
        let index = spec.param_index();
        let n_rows = dataset.n_observations();
        let n_resp = dataset.n_respondents();
        let rows: Vec<Vec<f64>> = dataset
            .observations()
            .iter()
            .map(|o| encoder.encode_task(&o.task))
            .collect();
        let covariates: Vec<Vec<f64>> = dataset.respondents().iter().map(|r| r.covariates.clone()).collect();

        let mut classes = Vec::with_capacity(spec.classes.len());
        for (ci, c) in spec.classes.iter().enumerate() {
            let fixity: Vec<Fixity> = categories.iter().map(|k| c.category_fixity(k)).collect();
            let mut terms = Vec::new();
            if !c.is_degenerate() {
                for (ti, t) in c.terms.iter().enumerate() {
                    let feature = match &t.source {
                        TermSource::Constant => Feature::Constant,
                        TermSource::Attribute { name, transform } => Feature::Column(
                            encoder
                                .column_of(name, transform.degree())
                                .expect("validated attribute term"),
                        ),
                        TermSource::Covariate(name) => {
                            Feature::Covariate(dataset.covariate_index(name).expect("validated covariate"))
                        }
                    };
                    terms.push(CompiledTerm {
                        scope: t.category.as_ref().map(|k| schema.category_index(k).unwrap()),
                        feature,
                        position: index.utility_position(ci, ti).unwrap(),
                    });
                }
            }
            let k = terms.len();
            let mut x = vec![0.0; n_rows * k];
            for (r, o) in dataset.observations().iter().enumerate() {
                let cat = o.task.category;
                if fixity[cat] != Fixity::Estimated {
                    continue;
                }
                let cov = &covariates[o.respondent];
                for (j, t) in terms.iter().enumerate() {
                    if t.scope.map_or(true, |s| s == cat) {
                        x[r * k + j] = t.feature.value(&rows[r], cov);
                    }
                }
            }
            let (member_pos, member_features): (Vec<usize>, Vec<Feature>) = if c.base {
                (vec![], vec![])
            } else {
                c.membership
                    .iter()
                    .enumerate()
                    .map(|(ti, m)| {
                        let f = match &m.covariate {
                            None => Feature::Constant,
                            Some(name) => Feature::Covariate(dataset.covariate_index(name).unwrap()),
                        };
                        (index.membership_position(ci, ti).unwrap(), f)
                    })
                    .unzip()
            };
            let m = member_pos.len();
            let mut z = vec![0.0; n_resp * m];
            for (i, cov) in covariates.iter().enumerate() {
                for (j, f) in member_features.iter().enumerate() {
                    z[i * m + j] = f.value(&[], cov);
                }
            }
            classes.push(CompiledClass {
                name: c.name.clone(),
                fixity,
                terms,
                x,
                member_pos,
                member_features,
                z,
            });
        }

        Ok(Self {
            spec: spec.clone(),
            index,
            encoder,
            scale: spec.scale,
            respondent_ids: dataset.respondents().iter().map(|r| r.id.clone()).collect(),
            covariates,
            groups: dataset.groups().to_vec(),
            row_category: dataset.observations().iter().map(|o| o.task.category).collect(),
            votes: dataset.observations().iter().map(|o| o.vote).collect(),
            classes,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_index(&self) -> &Arc<ParamIndex> {
        &self.index
    }

    pub fn encoder(&self) -> &TaskEncoder {
        &self.encoder
    }

    pub fn n_params(&self) -> usize {
        self.index.len()
    }

    pub fn n_respondents(&self) -> usize {
        self.groups.len()
    }

    pub fn n_observations(&self) -> usize {
        self.votes.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn group(&self, resp: usize) -> Range<usize> {
        self.groups[resp].clone()
    }

    pub fn respondent_covariates(&self, resp: usize) -> &[f64] {
        &self.covariates[resp]
    }


    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Parameters(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Systematic Yes-utility of observation row `row` for `class` (zero for
    /// pinned categories, which never reach the logit).
    pub fn utility(&self, row: usize, class: usize, params: &[f64]) -> f64 {
        let c = &self.classes[class];
        c.x_row(row)
            .iter()
            .zip(&c.terms)
            .map(|(x, t)| x * params[t.position])
            .sum()
    }

    /// Yes-utility at an arbitrary encoded task for a respondent covariate
    /// vector. Returns `None` when `category` is pinned in `class`.
    pub fn utility_at(
        &self,
        class: usize,
        category: usize,
        encoded: &[f64],
        covariates: &[f64],
        params: &[f64],
    ) -> Option<f64> {
        let c = &self.classes[class];
        if c.fixity[category] != Fixity::Estimated {
            return None;
        }
        Some(
            c.terms
                .iter()
                .filter(|t| t.scope.map_or(true, |s| s == category))
                .map(|t| t.feature.value(encoded, covariates) * params[t.position])
                .sum(),
        )
    }

    pub fn fixity(&self, class: usize, category: usize) -> Fixity {
        self.classes[class].fixity[category]
    }

    /// Probability of the observed vote at `row` under an estimated category
    /// of `class`.
    pub fn class_conditional_choice_prob(&self, row: usize, class: usize, params: &ParameterVector) -> Result<f64> {
        self.check_len(params.values())?;
        let cat = self.row_category[row];
        let c = &self.classes[class];
        if c.fixity[cat] != Fixity::Estimated {
            return Err(Error::PinnedCategory {
                class: c.name.clone(),
                category: self.spec_category(cat),
            });
        }
        let v = self.scale * self.utility(row, class, params.values());
        Ok(vote_probability(v, self.votes[row]))
    }

    fn spec_category(&self, cat: usize) -> String {
        self.encoder.schema().categories()[cat].clone()
    }

    fn log_sequence(&self, resp: usize, class: usize, params: &[f64]) -> f64 {
        let c = &self.classes[class];
        let mut acc = 0.0;
        for r in self.group(resp) {
            let vote = self.votes[r];
            match degenerate_class_prob(c.fixity[self.row_category[r]], vote) {
                Some(p) if p == 0.0 => return f64::NEG_INFINITY,
                Some(_) => {}
                None => acc += log_vote_probability(self.scale * self.utility(r, class, params), vote),
            }
        }
        acc
    }

    /// Joint probability of a respondent's votes given class membership.
    pub fn sequence_prob(&self, resp: usize, class: usize, params: &ParameterVector) -> Result<f64> {
        self.check_len(params.values())?;
        Ok(self.log_sequence(resp, class, params.values()).exp())
    }

    fn scores(&self, resp: usize, params: &[f64]) -> Vec<f64> {
        self.classes
            .iter()
            .map(|c| {
                c.z_row(resp)
                    .iter()
                    .zip(&c.member_pos)
                    .map(|(z, &p)| z * params[p])
                    .sum()
            })
            .collect()
    }

    pub fn priors(&self, resp: usize, params: &ParameterVector) -> Result<Vec<f64>> {
        self.check_len(params.values())?;
        Ok(softmax(&self.scores(resp, params.values())))
    }

    /// Class priors for an arbitrary covariate vector.
    pub fn priors_for(&self, covariates: &[f64], params: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .classes
            .iter()
            .map(|c| {
                c.member_features
                    .iter()
                    .zip(&c.member_pos)
                    .map(|(f, &p)| f.value(&[], covariates) * params[p])
                    .sum()
            })
            .collect();
        softmax(&scores)
    }

    /// ln(H_is) + ln(P_i|s) per class; `-inf` for impossible classes.
    fn log_joint(&self, resp: usize, params: &[f64]) -> Vec<f64> {
        let log_h = log_softmax(&self.scores(resp, params));
        (0..self.classes.len())
            .map(|s| {
                let ls = self.log_sequence(resp, s, params);
                if ls == f64::NEG_INFINITY {
                    ls
                } else {
                    log_h[s] + ls
                }
            })
            .collect()
    }

    fn zero_prob(&self, resp: usize) -> Error {
        Error::ZeroProbability {
            respondent: self.respondent_ids[resp].clone(),
        }
    }

    pub fn individual_likelihood(&self, resp: usize, params: &ParameterVector) -> Result<f64> {
        self.check_len(params.values())?;
        let lse = log_sum_exp(&self.log_joint(resp, params.values()));
        if lse == f64::NEG_INFINITY {
            return Err(self.zero_prob(resp));
        }
        Ok(lse.exp())
    }

    pub fn posterior_membership(&self, resp: usize, params: &ParameterVector) -> Result<Vec<f64>> {
        self.check_len(params.values())?;
        self.posterior_raw(resp, params.values())
    }

    fn posterior_raw(&self, resp: usize, params: &[f64]) -> Result<Vec<f64>> {
        let lj = self.log_joint(resp, params);
        let lse = log_sum_exp(&lj);
        if lse == f64::NEG_INFINITY {
            return Err(self.zero_prob(resp));
        }
        Ok(lj.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Posteriors for every respondent.
    pub fn posteriors(&self, params: &ParameterVector) -> Result<Vec<Vec<f64>>> {
        self.check_len(params.values())?;
        (0..self.n_respondents())
            .into_par_iter()
            .map(|i| self.posterior_raw(i, params.values()))
            .collect()
    }

    /// Adds `weight * d ln P_i|s / d beta_s` into `grad`.
    fn add_choice_score(&self, resp: usize, class: usize, weight: f64, params: &[f64], grad: &mut [f64]) {
        let c = &self.classes[class];
        if c.terms.is_empty() {
            return;
        }
        for r in self.group(resp) {
            if c.fixity[self.row_category[r]] != Fixity::Estimated {
                continue;
            }
            let v = self.scale * self.utility(r, class, params);
            let y = if self.votes[r] { 1.0 } else { 0.0 };
            let resid = weight * self.scale * (y - logit_yes(v));
            for (x, t) in c.x_row(r).iter().zip(&c.terms) {
                grad[t.position] += resid * x;
            }
        }
    }

    fn eval_respondent(&self, resp: usize, params: &[f64], want_grad: bool) -> Result<RespondentEval> {
        let lj = self.log_joint(resp, params);
        let lse = log_sum_exp(&lj);
        if lse == f64::NEG_INFINITY {
            return Err(self.zero_prob(resp));
        }
        if !want_grad {
            return Ok(RespondentEval { ll: lse, grad: None });
        }
        let mut grad = vec![0.0; self.n_params()];
        let prior = softmax(&self.scores(resp, params));
        for (s, c) in self.classes.iter().enumerate() {
            let w = if lj[s] == f64::NEG_INFINITY { 0.0 } else { (lj[s] - lse).exp() };
            if w > 0.0 {
                self.add_choice_score(resp, s, w, params, &mut grad);
            }
            let dm = w - prior[s];
            for (z, &p) in c.z_row(resp).iter().zip(&c.member_pos) {
                grad[p] += dm * z;
            }
        }
        Ok(RespondentEval { ll: lse, grad: Some(grad) })
    }

    /// Log-likelihood, per-respondent terms and optionally the analytic score.
    pub fn evaluate(&self, params: &[f64], with_gradient: bool) -> Result<EvalResult> {
        self.check_len(params)?;
        let parts: Vec<RespondentEval> = (0..self.n_respondents())
            .into_par_iter()
            .map(|i| self.eval_respondent(i, params, with_gradient))
            .collect::<Result<_>>()?;
        Ok(reduce(parts, self.n_params(), with_gradient))
    }

    pub fn total_log_likelihood(&self, params: &ParameterVector) -> Result<EvalResult> {
        self.evaluate(params.values(), false)
    }

    pub fn gradient(&self, params: &ParameterVector) -> Result<Vec<f64>> {
        Ok(self.evaluate(params.values(), true)?.gradient.unwrap())
    }

    /// Sequential evaluation over respondents split into `chunks` partitions,
    /// each reduced separately and then combined in order. Used to check
    /// that totals do not depend on how the work is partitioned.
    pub fn evaluate_partitioned(&self, params: &[f64], chunks: usize) -> Result<f64> {
        self.check_len(params)?;
        let n = self.n_respondents();
        let size = n.div_ceil(chunks.max(1)).max(1);
        let per: Vec<Vec<f64>> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(size)
            .map(|idx| {
                idx.iter()
                    .map(|&i| self.eval_respondent(i, params, false).map(|e| e.ll))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        for v in per.iter().flatten() {
            total += v;
        }
        Ok(total)
    }

    /// Expected complete-data log-likelihood under fixed class weights
    /// (the EM objective) and its gradient.
    pub fn expected_complete(&self, params: &[f64], weights: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        self.check_len(params)?;
        let parts: Vec<(f64, Vec<f64>)> = (0..self.n_respondents())
            .into_par_iter()
            .map(|i| {
                let w = &weights[i];
                let scores = self.scores(i, params);
                let log_h = log_softmax(&scores);
                let prior = softmax(&scores);
                let mut q = 0.0;
                let mut grad = vec![0.0; self.n_params()];
                for (s, c) in self.classes.iter().enumerate() {
                    if w[s] > 0.0 {
                        let ls = self.log_sequence(i, s, params);
                        q += w[s] * (log_h[s] + ls);
                        self.add_choice_score(i, s, w[s], params, &mut grad);
                    }
                    let dm = w[s] - prior[s];
                    for (z, &p) in c.z_row(i).iter().zip(&c.member_pos) {
                        grad[p] += dm * z;
                    }
                }
                (q, grad)
            })
            .collect();
        let mut q = 0.0;
        let mut grad = vec![0.0; self.n_params()];
        for (qi, gi) in parts {
            q += qi;
            for (g, x) in grad.iter_mut().zip(gi) {
                *g += x;
            }
        }
        Ok((q, grad))
    }

    /// Classes with no estimated category.
    pub fn is_fully_pinned(&self, class: usize) -> bool {
        self.classes[class].is_fully_pinned()
    }
}

fn reduce(parts: Vec<RespondentEval>, k: usize, with_gradient: bool) -> EvalResult {
    let mut total = 0.0;
    let mut per = Vec::with_capacity(parts.len());
    let mut grad = with_gradient.then(|| vec![0.0; k]);
    for p in parts {
        total += p.ll;
        per.push(p.ll);
        if let (Some(g), Some(gi)) = (grad.as_mut(), p.grad) {
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    EvalResult {
        log_likelihood: total,
        per_respondent: per,
        gradient: grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_closed_form_logit() {
        assert_eq!(logit_yes(0.0), 0.5);
        assert!((logit_yes(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!((vote_probability(3f64.ln(), false) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((log_sigmoid(0.3) - logit_yes(0.3).ln()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_indicators() {
        assert_eq!(degenerate_class_prob(Fixity::PinnedYes, true), Some(1.0));
        assert_eq!(degenerate_class_prob(Fixity::PinnedYes, false), Some(0.0));
        assert_eq!(degenerate_class_prob(Fixity::PinnedNo, true), Some(0.0));
        assert_eq!(degenerate_class_prob(Fixity::PinnedNo, false), Some(1.0));
        assert_eq!(degenerate_class_prob(Fixity::Estimated, true), None);
    }

    #[test]
    fn priors_closed_forms() {
        let uniform = membership_priors(&[1.0], &vec![vec![0.0]; 5]).unwrap();
        for p in uniform {
            assert!((p - 0.2).abs() < 1e-15);
        }
        let two = membership_priors(&[1.0], &[vec![4f64.ln()], vec![]]).unwrap();
        assert!((two[0] - 0.8).abs() < 1e-15 && (two[1] - 0.2).abs() < 1e-15);
        assert!(membership_priors(&[1.0], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn softmax_translation_invariant() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[10.3, 8.8, 12.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
