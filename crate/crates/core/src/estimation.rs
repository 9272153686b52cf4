//! Maximum-likelihood fitting with seeded multistarts, inverse-Hessian
//! inference, information criteria and a search over the number of classes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodContext;
use crate::model::{ClassSpec, MembershipTerm, ModelSpec, ParamSlot, ParameterVector};
use crate::optim::{self, BfgsOptions, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    QuasiNewton,
    EmThenQuasiNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Converged when max |d lnL / d theta| is below this.
    pub gtol: f64,
    /// Relative lnL change treated as a stall.
    pub ftol: f64,
    pub starts: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// EM iterations before switching to quasi-Newton.
    pub em_iterations: usize,
    pub membership_sd: f64,
    pub utility_sd: f64,
    /// Use the spec's declared values (when complete) as the first start.
    pub start_from_declared: bool,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            gtol: 1e-4,
            ftol: 1e-12,
            starts: 20,
            seed: 1,
            optimizer: Optimizer::QuasiNewton,
            em_iterations: 30,
            membership_sd: 0.5,
            utility_sd: 1.0,
            start_from_declared: false,
            standard_errors: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gtol > 0.0) || !(self.ftol > 0.0) {
            return Err(Error::Estimation("tolerances must be positive".into()));
        }
        if self.starts == 0 {
            return Err(Error::Estimation("need at least one start".into()));
        }
        if !(self.membership_sd >= 0.0) || !(self.utility_sd >= 0.0) {
            return Err(Error::Estimation("start spreads must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParameterVector,
    pub estimates: Vec<ParameterEstimate>,
    pub log_likelihood: f64,
    pub starts: Vec<StartOutcome>,
    pub best_start: usize,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub n_params: usize,
    pub n_respondents: usize,
    pub n_observations: usize,
    pub aic: f64,
    pub bic: f64,
    pub seed: u64,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn start_log_likelihoods(&self) -> Vec<Option<f64>> {
        self.starts.iter().map(|s| s.log_likelihood).collect()
    }

    pub fn estimate(&self, name: &str) -> Option<&ParameterEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

/// (AIC, BIC) with BIC penalized by the number of observations (rows).
pub fn information_criteria(log_likelihood: f64, n_params: usize, n_observations: usize) -> (f64, f64) {
    let k = n_params as f64;
    (
        -2.0 * log_likelihood + 2.0 * k,
        -2.0 * log_likelihood + k * (n_observations as f64).ln(),
    )
}

pub fn fit(dataset: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let ctx = LikelihoodContext::new(dataset, spec)?;
    fit_context(&ctx, options)
}

fn start_values(ctx: &LikelihoodContext, options: &FitOptions, start: usize) -> Vec<f64> {
    if start == 0 && options.start_from_declared {
        if let Some(v) = ctx.spec().declared_values() {
            return v.into_values();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(start as u64);
    let util = Normal::new(0.0, options.utility_sd).unwrap();
    let memb = Normal::new(0.0, options.membership_sd).unwrap();
    ctx.param_index()
        .slots()
        .iter()
        .map(|s| match s {
            ParamSlot::Utility { .. } => util.sample(&mut rng),
            ParamSlot::Membership { .. } => memb.sample(&mut rng),
        })
        .collect()
}

fn negative_ll(ctx: &LikelihoodContext) -> impl Fn(&[f64]) -> Option<(f64, Vec<f64>)> + '_ {
    move |x: &[f64]| {
        let e = ctx.evaluate(x, true).ok()?;
        let g = e.gradient.unwrap().into_iter().map(|v| -v).collect();
        Some((-e.log_likelihood, g))
    }
}

/// EM iterations: exact posteriors (pinned classes give exact indicators),
/// then a partial M-step on the expected complete-data log-likelihood.
pub fn em_steps(ctx: &LikelihoodContext, x0: &[f64], iterations: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    let index = ctx.param_index().clone();
    let mut last = f64::NEG_INFINITY;
    for _ in 0..iterations {
        let Ok(params) = ParameterVector::new(index.clone(), x.clone()) else {
            break;
        };
        let Ok(weights) = ctx.posteriors(&params) else {
            break;
        };
        let q = |y: &[f64]| {
            let (q, g) = ctx.expected_complete(y, &weights).ok()?;
            Some((-q, g.into_iter().map(|v| -v).collect()))
        };
        let m = optim::minimize(
            q,
            &x,
            &BfgsOptions {
                max_iter: 50,
                gtol: 1e-6,
                ..Default::default()
            },
        );
        if m.termination == Termination::Evaluation {
            break;
        }
        x = m.x;
        let Ok(ll) = ctx.evaluate(&x, false).map(|e| e.log_likelihood) else {
            break;
        };
        if (ll - last).abs() < 1e-8 * ll.abs().max(1.0) {
            break;
        }
        last = ll;
    }
    x
}

pub fn fit_context(ctx: &LikelihoodContext, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let k = ctx.n_params();
    if k == 0 {
        return Err(Error::Estimation("model has no free parameters".into()));
    }
    let bfgs = BfgsOptions {
        max_iter: options.max_iter,
        gtol: options.gtol,
        ftol: options.ftol,
        ..Default::default()
    };

    let runs: Vec<optim::BfgsResult> = (0..options.starts)
        .into_par_iter()
        .map(|s| {
            let mut x0 = start_values(ctx, options, s);
            if options.optimizer == Optimizer::EmThenQuasiNewton {
                x0 = em_steps(ctx, &x0, options.em_iterations);
            }
            optim::minimize(negative_ll(ctx), &x0, &bfgs)
        })
        .collect();

    let starts: Vec<StartOutcome> = runs
        .iter()
        .map(|r| StartOutcome {
            log_likelihood: (r.termination != Termination::Evaluation).then_some(-r.f),
            iterations: r.iterations,
            termination: r.termination,
            gradient_norm: r.gradient_norm(),
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, s) in starts.iter().enumerate() {
        if let Some(ll) = s.log_likelihood {
            if best.map_or(true, |b| ll > starts[b].log_likelihood.unwrap()) {
                best = Some(i);
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::Estimation(format!(
            "likelihood undefined at all {} starting points",
            options.starts
        )));
    };
    let run = &runs[best];
    let mut x = run.x.clone();
    let mut log_likelihood = -run.f;
    let mut gradient_norm = run.gradient_norm();
    let mut diagnostics = Vec::new();
    // a stalled line search gets a few Newton steps; an exhausted iteration
    // budget is reported as it is
    if gradient_norm >= options.gtol && run.termination != Termination::MaxIterations {
        if let Some((px, ll, gn)) = newton_polish(ctx, &x, log_likelihood, gradient_norm, options.gtol) {
            diagnostics.push(format!(
                "Newton polish after {:?}: max |gradient| {gradient_norm:.3e} -> {gn:.3e}",
                run.termination
            ));
            x = px;
            log_likelihood = ll;
            gradient_norm = gn;
        }
    }
    let params = ParameterVector::new(ctx.param_index().clone(), x)?;
    let converged = gradient_norm < options.gtol;

    if !converged {
        diagnostics.push(format!(
            "best start {best} stopped ({:?}) with max |gradient| {gradient_norm:.3e} above tolerance {:.1e}",
            run.termination, options.gtol
        ));
    }
    let failed = starts.iter().filter(|s| s.termination == Termination::LineSearch).count();
    if failed > 0 {
        diagnostics.push(format!("{failed} of {} starts ended in a failed line search", options.starts));
    }

    let se = if options.standard_errors {
        standard_errors(ctx, &params)
    } else {
        vec![None; k]
    };
    if se.iter().any(Option::is_none) && options.standard_errors {
        diagnostics.push("Hessian not invertible for some parameters; their standard errors are undefined".into());
    }
    let estimates = estimate_table(&params, &se);
    let (aic, bic) = information_criteria(log_likelihood, k, ctx.n_observations());

    Ok(FitResult {
        params,
        estimates,
        log_likelihood,
        starts,
        best_start: best,
        converged,
        termination: run.termination,
        iterations: run.iterations,
        gradient_norm,
        n_params: k,
        n_respondents: ctx.n_respondents(),
        n_observations: ctx.n_observations(),
        aic,
        bic,
        seed: options.seed,
        diagnostics,
    })
}

/// Two-sided standard-normal p-value.
pub fn two_sided_p(t: f64) -> f64 {
    let n = StdNormal::new(0.0, 1.0).unwrap();
    2.0 * n.sf(t.abs())
}

pub fn estimate_table(params: &ParameterVector, se: &[Option<f64>]) -> Vec<ParameterEstimate> {
    params
        .index()
        .names()
        .iter()
        .zip(params.values())
        .zip(se)
        .map(|((name, &value), &se)| {
            let t = se.map(|s| value / s);
            ParameterEstimate {
                name: name.clone(),
                value,
                se,
                t,
                p: t.map(two_sided_p),
            }
        })
        .collect()
}

/// A few Newton steps on the numerical Hessian from a point where the
/// quasi-Newton run stalled just short of the gradient tolerance. A step is
/// kept only if it does not lower lnL and shrinks the gradient.
fn newton_polish(ctx: &LikelihoodContext, x0: &[f64], ll0: f64, gn0: f64, gtol: f64) -> Option<(Vec<f64>, f64, f64)> {
    let mut x = x0.to_vec();
    let (mut ll, mut gn) = (ll0, gn0);
    let mut improved = false;
    for _ in 0..5 {
        if gn < gtol {
            break;
        }
        let g = DVector::from_vec(ctx.evaluate(&x, true).ok()?.gradient?);
        let info = -numerical_hessian(ctx, &x)?;
        let Some(chol) = info.cholesky() else { break };
        let d = chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            if let Ok(e) = ctx.evaluate(&trial, true) {
                let tg = optim::max_abs(e.gradient.as_deref().unwrap_or(&[]));
                if e.log_likelihood >= ll - 1e-12 * ll.abs() && tg < gn {
                    x = trial;
                    ll = e.log_likelihood;
                    gn = tg;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        improved = true;
    }
    improved.then_some((x, ll, gn))
}

/// Central-difference Hessian of the log-likelihood from the analytic
/// gradient, symmetrized.
pub fn numerical_hessian(ctx: &LikelihoodContext, x: &[f64]) -> Option<DMatrix<f64>> {
    let k = x.len();
    let cols: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let h = (1e-4 * x[j].abs()).max(1e-5);
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            let gu = ctx.evaluate(&up, true).ok()?.gradient?;
            let gd = ctx.evaluate(&dn, true).ok()?.gradient?;
            Some(gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Option<_>>()?;
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        for i in 0..k {
            h[(i, j)] = cols[j][i];
        }
    }
    Some((&h + h.transpose()) * 0.5)
}

/// Standard errors from the inverse of the negative numerical Hessian.
/// Entries are `None` where the covariance is not defined.
pub fn standard_errors(ctx: &LikelihoodContext, params: &ParameterVector) -> Vec<Option<f64>> {
    let k = params.len();
    let Some(h) = numerical_hessian(ctx, params.values()) else {
        return vec![None; k];
    };
    let info = -h;
    let cov = match info.clone().cholesky() {
        Some(c) => Some(c.inverse()),
        None => info.try_inverse(),
    };
    match cov {
        Some(cov) => (0..k)
            .map(|i| {
                let v = cov[(i, i)];
                (v.is_finite() && v > 0.0).then(|| v.sqrt())
            })
            .collect(),
        None => vec![None; k],
    }
}

/// Shape of the class-count search: fixed classes (e.g. protest classes)
/// plus `S` copies of a trader template. The last trader copy is the base.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCountTemplate {
    pub fixed: Vec<ClassSpec>,
    pub trader: ClassSpec,
    pub membership: Vec<MembershipTerm>,
}

impl ClassCountTemplate {
    pub fn build(&self, traders: usize) -> ModelSpec {
        let mut classes: Vec<ClassSpec> = self
            .fixed
            .iter()
            .map(|c| ClassSpec {
                base: false,
                membership: self.membership.clone(),
                ..c.clone()
            })
            .collect();
        for j in 1..=traders {
            let mut c = self.trader.clone();
            c.name = format!("{}_{j}", self.trader.name);
            c.base = j == traders;
            c.membership = if c.base { vec![] } else { self.membership.clone() };
            classes.push(c);
        }
        ModelSpec::new(classes)
    }
}

#[derive(Debug, Clone)]
pub struct ClassCountRow {
    pub traders: usize,
    pub fit: std::result::Result<FitResult, String>,
    pub aic_best: bool,
    pub bic_best: bool,
}

pub fn class_count_search(
    dataset: &Dataset,
    template: &ClassCountTemplate,
    range: std::ops::RangeInclusive<usize>,
    options: &FitOptions,
) -> Result<Vec<ClassCountRow>> {
    if range.is_empty() || *range.start() == 0 {
        return Err(Error::Estimation("class range must be non-empty and start at 1".into()));
    }
    let mut rows: Vec<ClassCountRow> = range
        .map(|s| ClassCountRow {
            traders: s,
            fit: fit(dataset, &template.build(s), options).map_err(|e| e.to_string()),
            aic_best: false,
            bic_best: false,
        })
        .collect();
    let pick = |key: fn(&FitResult) -> f64| {
        rows.iter()
            .enumerate()
            .filter_map(|(i, r)| r.fit.as_ref().ok().map(|f| (i, key(f))))
            .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
                Some((_, b)) if b <= v => acc,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    };
    let aic = pick(|f| f.aic);
    let bic = pick(|f| f.bic);
    if let Some(i) = aic {
        rows[i].aic_best = true;
    }
    if let Some(i) = bic {
        rows[i].bic_best = true;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_arithmetic() {
        let (aic, bic) = information_criteria(-607.58, 56, 2934);
        assert!((aic - 1327.16).abs() < 1e-9);
        assert!(bic > aic);
        let (aic2, _) = information_criteria(-607.58, 57, 2934);
        assert!((aic2 - aic - 2.0).abs() < 1e-9);
    }

    #[test]
    fn reported_t_statistic() {
        // 2.09 / 0.624
        let params = ParameterVector::new(
            ModelSpec::new(vec![ClassSpec::trader("t", vec![crate::UtilityTerm::constant()]).as_base()])
                .param_index(),
            vec![2.09],
        )
        .unwrap();
        let e = estimate_table(&params, &[Some(0.624)]);
        assert!((e[0].t.unwrap() - 3.35).abs() < 5e-3);
        assert!(e[0].p.unwrap() < 0.001);
    }

    #[test]
    fn p_values() {
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-9, "{}", two_sided_p(1.959963984540054));
        assert_eq!(two_sided_p(0.0), 1.0);
    }

    #[test]
    fn options_validation() {
        assert!(FitOptions { starts: 0, ..Default::default() }.validate().is_err());
        assert!(FitOptions { gtol: 0.0, ..Default::default() }.validate().is_err());
        FitOptions::default().validate().unwrap();
    }

    #[test]
    fn template_builds_named_traders() {
        let t = ClassCountTemplate {
            fixed: vec![ClassSpec::pinned_no("nay")],
            trader: ClassSpec::trader("trader", vec![crate::UtilityTerm::constant()]),
            membership: vec![MembershipTerm::constant()],
        };
        let s = t.build(2);
        let names: Vec<_> = s.classes.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["nay", "trader_1", "trader_2"]);
        assert!(s.classes[2].base && s.classes[2].membership.is_empty());
        assert_eq!(crate::count_free_parameters(&s), 2 + 2);
    }
}
