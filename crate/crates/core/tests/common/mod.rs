//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use lclogit::{
    AttributeKind, AttributeSchema, AttributeSpec, ClassSpec, CovariateKind, CovariateSpec, Dataset, Fixity,
    Levels, MembershipTerm, ModelSpec, Observation, ParameterVector, ReferendumTask, RespondentProfile,
    TermSource, Transform, UtilityTerm,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Gram–Schmidt on the monomials `1, x, .., x^d` under the inner product
/// `<p, q> = sum over levels of p(l) q(l)`, each result scaled to unit
/// length. Returns polynomial coefficients (lowest power first) for
/// degrees `1..=d`.
pub fn gram_schmidt_polys(levels: &[f64], d: usize) -> Vec<Vec<f64>> {
    let eval = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |acc, a| acc * x + a);
    let dot = |p: &[f64], q: &[f64]| levels.iter().map(|&l| eval(p, l) * eval(q, l)).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..=d {
        let mut p = vec![0.0; d + 1];
        p[k] = 1.0;
        // two passes keep the result orthogonal to rounding level
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(&p, q);
                for (a, b) in p.iter_mut().zip(q) {
                    *a -= proj * b;
                }
            }
        }
        let norm = dot(&p, &p).sqrt();
        p.iter_mut().for_each(|a| *a /= norm);
        basis.push(p);
    }
    basis.remove(0);
    basis
}

pub fn eval_poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

/// Gram–Schmidt codes, one row per level, columns for degrees `1..=d`.
/// Levels are centred and scaled first so the monomials stay well
/// conditioned; neither step changes the orthonormalised result.
pub fn gram_schmidt_codes(levels: &[f64], d: usize) -> Vec<Vec<f64>> {
    let (t, _) = standardise(levels);
    let polys = gram_schmidt_polys(&t, d);
    t.iter().map(|&x| polys.iter().map(|p| eval_poly(p, x)).collect()).collect()
}

fn standardise(levels: &[f64]) -> (Vec<f64>, (f64, f64)) {
    let n = levels.len() as f64;
    let c = levels.iter().sum::<f64>() / n;
    let h = levels.iter().map(|x| (x - c).abs()).fold(0.0, f64::max);
    (levels.iter().map(|x| (x - c) / h).collect(), (c, h))
}

/// Code of `degree` at raw value `x`, by Gram–Schmidt.
pub fn gram_schmidt_code_at(levels: &[f64], degree: usize, x: f64) -> f64 {
    let (t, (c, h)) = standardise(levels);
    let polys = gram_schmidt_polys(&t, degree);
    eval_poly(&polys[degree - 1], (x - c) / h)
}

pub fn continuous(name: &str, levels: Vec<f64>, transform: Transform) -> AttributeSpec {
    AttributeSpec {
        name: name.into(),
        column: name.into(),
        kind: AttributeKind::Continuous,
        levels: Levels::Values(levels),
        transform,
        unit: None,
        scale: None,
    }
}

pub fn categorical(name: &str, labels: &[&str]) -> AttributeSpec {
    AttributeSpec {
        name: name.into(),
        column: name.into(),
        kind: AttributeKind::Categorical,
        levels: Levels::Labels(labels.iter().map(|s| s.to_string()).collect()),
        transform: Transform::None,
        unit: None,
        scale: None,
    }
}

/// Two categories, a quadratic attribute and a linear levy.
pub fn small_schema() -> AttributeSchema {
    AttributeSchema {
        category: "site".into(),
        levy: "levy".into(),
        attributes: vec![
            categorical("site", &["a", "b"]),
            continuous("size", vec![1.0, 2.0, 4.0], Transform::Quadratic),
            continuous("levy", vec![10.0, 20.0, 30.0, 40.0], Transform::Linear),
        ],
    }
}

pub fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    use rand_distr::{Distribution, Normal};
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Respondents with random tasks and votes; covariates `x1` (numeric) and
/// `x2` (indicator).
pub fn random_dataset(rng: &mut ChaCha8Rng, schema: &AttributeSchema, n: usize, r: usize) -> Dataset {
    let covs = vec![
        CovariateSpec::new("x1", CovariateKind::Numeric),
        CovariateSpec::new("x2", CovariateKind::Indicator),
    ];
    let respondents: Vec<RespondentProfile> = (0..n)
        .map(|i| RespondentProfile {
            id: format!("R{i}"),
            covariates: vec![normal(rng, 1.0), f64::from(rng.gen_bool(0.5) as u8)],
        })
        .collect();
    let n_cat = schema.categories().len();
    let mut obs = Vec::new();
    for i in 0..n {
        for t in 0..r {
            let values = schema.continuous().map(|a| *a.values().choose(rng).unwrap()).collect();
            obs.push(Observation {
                respondent: i,
                task: ReferendumTask {
                    task_id: t as u32 + 1,
                    block_id: 1,
                    category: rng.gen_range(0..n_cat),
                    values,
                },
                vote: rng.gen_bool(0.5),
            });
        }
    }
    Dataset::new(schema.clone(), covs, respondents, obs).unwrap()
}

fn random_terms(rng: &mut ChaCha8Rng, categories: &[&str]) -> Vec<UtilityTerm> {
    let mut terms = vec![UtilityTerm::constant()];
    let scope = |rng: &mut ChaCha8Rng, t: UtilityTerm| {
        if categories.len() > 1 && rng.gen_bool(0.5) {
            t.in_category(categories[rng.gen_range(0..categories.len())])
        } else if categories.len() == 1 {
            t.in_category(categories[0])
        } else {
            t
        }
    };
    terms.push(scope(rng, UtilityTerm::linear("levy")));
    if rng.gen_bool(0.7) {
        terms.push(scope(rng, UtilityTerm::linear("size")));
    }
    if rng.gen_bool(0.5) {
        terms.push(scope(rng, UtilityTerm::quadratic("size")));
    }
    if rng.gen_bool(0.5) {
        terms.push(UtilityTerm::covariate("x1"));
    }
    let mut seen = std::collections::HashSet::new();
    terms.retain(|t| seen.insert((t.source.clone(), t.category.clone())));
    terms
}

/// A random 1–4 class model over `small_schema`: the first class trades,
/// the others are drawn from trader, pinned yes, pinned no and partial.
pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let s = rng.gen_range(1..=4);
    let mut classes = vec![ClassSpec::trader("c0", random_terms(rng, &["a", "b"]))];
    for k in 1..s {
        let name = format!("c{k}");
        let class = match rng.gen_range(0..4) {
            0 => ClassSpec::trader(&name, random_terms(rng, &["a", "b"])),
            1 => ClassSpec::pinned_yes(&name),
            2 => ClassSpec::pinned_no(&name),
            _ => {
                let (pinned, free) = if rng.gen_bool(0.5) { ("a", "b") } else { ("b", "a") };
                let fix = if rng.gen_bool(0.5) {
                    Fixity::PinnedYes
                } else {
                    Fixity::PinnedNo
                };
                ClassSpec::partial(&name, &[(pinned, fix)], random_terms(rng, &[free]))
            }
        };
        classes.push(class);
    }
    let base = rng.gen_range(0..s);
    for (k, c) in classes.iter_mut().enumerate() {
        if k == base {
            c.base = true;
        } else {
            let mut m = vec![MembershipTerm::constant()];
            if rng.gen_bool(0.5) {
                m.push(MembershipTerm::covariate("x1"));
            }
            if rng.gen_bool(0.3) {
                m.push(MembershipTerm::covariate("x2"));
            }
            c.membership = m;
        }
    }
    ModelSpec::new(classes)
}

pub fn random_params(rng: &mut ChaCha8Rng, spec: &ModelSpec, sd: f64) -> ParameterVector {
    let z = ParameterVector::zeros(spec.param_index());
    let values = (0..z.len()).map(|_| normal(rng, sd)).collect();
    z.with_values(values).unwrap()
}

/// A random instance: dataset with `N <= 5`, `R <= 3`, a spec and values.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Dataset, ModelSpec, ParameterVector) {
    let schema = small_schema();
    let n = rng.gen_range(1..=5);
    let r = rng.gen_range(1..=3);
    let data = random_dataset(rng, &schema, n, r);
    let spec = random_spec(rng);
    let params = random_params(rng, &spec, 1.0);
    (data, spec, params)
}

fn feature(term: &UtilityTerm, schema: &AttributeSchema, covariates: &[f64], cov_names: &[String], task: &ReferendumTask) -> f64 {
    match &term.source {
        TermSource::Constant => 1.0,
        TermSource::Covariate(name) => covariates[cov_names.iter().position(|c| c == name).unwrap()],
        TermSource::Attribute { name, transform } => {
            let j = schema.continuous().position(|a| &a.name == name).unwrap();
            let a = schema.continuous().nth(j).unwrap();
            let x = task.values[j];
            match a.transform {
                Transform::None => x / a.scale.unwrap_or(1.0),
                _ => gram_schmidt_code_at(a.values(), transform.degree(), x),
            }
        }
    }
}

/// Direct enumeration: `sum_i ln sum_s H_is prod_t P(vote | s)` with every
/// probability formed explicitly, pinned categories as exact 0/1.
pub fn brute_force_log_likelihood(data: &Dataset, spec: &ModelSpec, params: &ParameterVector) -> f64 {
    let spec = spec.with_values(params);
    let schema = data.schema();
    let cov_names = data.covariate_names();
    let categories = schema.categories();
    let mut total = 0.0;
    for (i, resp) in data.respondents().iter().enumerate() {
        let scores: Vec<f64> = spec
            .classes
            .iter()
            .map(|c| {
                if c.base {
                    return 0.0;
                }
                c.membership
                    .iter()
                    .map(|m| {
                        let x = match &m.covariate {
                            None => 1.0,
                            Some(name) => resp.covariates[cov_names.iter().position(|c| c == name).unwrap()],
                        };
                        m.value.unwrap() * x
                    })
                    .sum()
            })
            .collect();
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        let mut li = 0.0;
        for (c, score) in spec.classes.iter().zip(&scores) {
            let prior = score.exp() / denom;
            let mut seq = 1.0;
            for o in data.observations().iter().filter(|o| o.respondent == i) {
                let cat = &categories[o.task.category];
                let p_yes = match c.category_fixity(cat) {
                    Fixity::PinnedYes => 1.0,
                    Fixity::PinnedNo => 0.0,
                    Fixity::Estimated => {
                        let v: f64 = c
                            .terms
                            .iter()
                            .filter(|t| t.category.as_deref().map_or(true, |k| k == cat))
                            .map(|t| t.value.unwrap() * feature(t, schema, &resp.covariates, &cov_names, &o.task))
                            .sum::<f64>()
                            * spec.scale;
                        1.0 / (1.0 + (-v).exp())
                    }
                };
                seq *= if o.vote { p_yes } else { 1.0 - p_yes };
            }
            li += prior * seq;
        }
        total += li.ln();
    }
    total
}

/// Central finite differences of the total log likelihood.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let step = h * x[k].abs().max(1.0);
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += step;
            dn[k] -= step;
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect()
}

/// Survey segment shares and per-segment WTPs (Rials), in the order
/// yea-sayers, nay-sayers, historical-site yea-sayers, religious-site
/// nay-sayers, traders. `None` marks a not-willing cell.
pub const SURVEY_SHARES: [f64; 5] = [0.227, 0.139, 0.074, 0.368, 0.192];
pub const SURVEY_CLASSES: [&str; 5] = [
    "yea_sayers",
    "nay_sayers",
    "historical_site_yea_sayers",
    "religious_site_nay_sayers",
    "traders",
];
pub const SURVEY_CATEGORIES: [&str; 3] = ["historical", "religious", "gardens"];
pub const SURVEY_WTP: [[Option<f64>; 3]; 5] = [
    [Some(2_500_000.0), Some(2_500_000.0), Some(2_500_000.0)],
    [None, None, None],
    [Some(904_170.0), None, None],
    [Some(940_170.0), None, Some(572_090.0)],
    [Some(987_700.0), Some(747_050.0), Some(550_930.0)],
];
pub const SURVEY_HOUSEHOLD_WTP: [f64; 3] = [1_170_030.0, 710_934.0, 883_808.0];

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The default 48-task design with a shorter search; optimality does not
/// matter for simulation tests.
pub fn quick_design(seed: u64) -> lclogit::Design {
    let config = lclogit::DesignConfig {
        iterations: 2000,
        restarts: 1,
        ..lclogit::DesignConfig::default()
    };
    lclogit::generate_design(&config, seed).unwrap()
}

pub fn shiraz_covariate_model() -> lclogit::CovariateModel {
    lclogit::CovariateModel::from_file(&workspace_root().join("specs/shiraz_covariates.spec")).unwrap()
}

pub fn sim_config(
    spec: ModelSpec,
    respondents: usize,
    covariates: lclogit::CovariateModel,
    seed: u64,
) -> lclogit::SimConfig {
    lclogit::SimConfig {
        spec,
        respondents,
        design: quick_design(1),
        covariates,
        seed,
    }
}

pub fn recovery_spec() -> ModelSpec {
    ModelSpec::from_file(&workspace_root().join("specs/table4_recovery.spec")).unwrap()
}
