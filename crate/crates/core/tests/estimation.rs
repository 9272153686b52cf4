mod common;

use common::*;
use lclogit::wtp::posterior_shares;
use lclogit::{
    class_count_search, fit, segment_shares, simulate_population, ClassCountTemplate, ClassSpec, CovariateModel,
    FitOptions, LikelihoodContext, MembershipTerm, ModelSpec, Optimizer, UtilityTerm,
};

fn trader_terms(c: f64, t: f64, l: f64) -> Vec<UtilityTerm> {
    vec![
        UtilityTerm::constant().with_value(c),
        UtilityTerm::linear("time_horizon").with_value(t),
        UtilityTerm::linear("levy").with_value(l),
    ]
}

fn three_segments() -> ModelSpec {
    ModelSpec::new(vec![
        ClassSpec::pinned_yes("yes").with_membership(vec![MembershipTerm::constant().with_value(-0.4)]),
        ClassSpec::pinned_no("no").with_membership(vec![MembershipTerm::constant().with_value(-0.9)]),
        ClassSpec::trader("traders", trader_terms(0.5, -0.8, -1.5)).as_base(),
    ])
}

#[test]
fn first_order_condition_holds_at_the_optimum() {
    let spec = ModelSpec::new(vec![ClassSpec::trader("t", trader_terms(0.3, 0.5, -1.0)).as_base()]);
    let sim = simulate_population(&sim_config(spec.clone(), 800, CovariateModel::default(), 2)).unwrap();
    let options = FitOptions {
        gtol: 1e-9,
        starts: 2,
        ..FitOptions::default()
    };
    let f = fit(&sim.dataset, &spec, &options).unwrap();
    let ctx = LikelihoodContext::new(&sim.dataset, &spec).unwrap();
    let g = ctx.gradient(&f.params).unwrap();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "{norm}");
    for e in &f.estimates {
        assert_eq!(e.t.unwrap(), e.value / e.se.unwrap());
    }
}

#[test]
fn constant_only_standard_error_matches_binomial_formula() {
    let spec = ModelSpec::new(vec![ClassSpec::trader("t", vec![UtilityTerm::constant().with_value(0.6)]).as_base()]);
    let sim = simulate_population(&sim_config(spec.clone(), 500, CovariateModel::default(), 3)).unwrap();
    let f = fit(&sim.dataset, &spec, &FitOptions::default()).unwrap();
    let p = sim.dataset.yes_share();
    let n = sim.dataset.n_observations() as f64;
    assert!((f.params.values()[0] - (p / (1.0 - p)).ln()).abs() < 1e-6);
    let se = 1.0 / (n * p * (1.0 - p)).sqrt();
    let got = f.estimates[0].se.unwrap();
    assert!((got - se).abs() / se < 0.02, "{got} vs {se}");
    let (aic, bic) = lclogit::information_criteria(f.log_likelihood, 1, sim.dataset.n_observations());
    assert_eq!((f.aic, f.bic), (aic, bic));
}

#[test]
fn fitted_shares_track_true_frequencies() {
    let spec = three_segments();
    let sim = simulate_population(&sim_config(spec.clone(), 5000, CovariateModel::default(), 4)).unwrap();
    let options = FitOptions {
        starts: 4,
        ..FitOptions::default()
    };
    let f = fit(&sim.dataset, &spec, &options).unwrap();
    assert!(f.converged);
    let ctx = LikelihoodContext::new(&sim.dataset, &spec).unwrap();
    let shares = segment_shares(&ctx, &f.params).unwrap();
    let posterior = posterior_shares(&ctx, &f.params).unwrap();
    for ((s, p), t) in shares.shares.iter().zip(&posterior.shares).zip(sim.class_frequencies()) {
        assert!((s - t).abs() <= 0.02, "{s} vs {t}");
        // at the maximum the mean posterior equals the mean prior
        assert!((s - p).abs() <= 1e-3, "{s} vs {p}");
    }
}

#[test]
fn fits_do_not_depend_on_thread_count() {
    let spec = three_segments();
    let sim = simulate_population(&sim_config(spec.clone(), 600, CovariateModel::default(), 5)).unwrap();
    let options = FitOptions {
        starts: 3,
        ..FitOptions::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&sim.dataset, &spec, &options).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.params.values(), b.params.values());
    assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    assert_eq!(a.estimates, b.estimates);
}

#[test]
fn em_warm_start_reaches_the_same_optimum() {
    let spec = three_segments();
    let sim = simulate_population(&sim_config(spec.clone(), 800, CovariateModel::default(), 6)).unwrap();
    let qn = fit(&sim.dataset, &spec, &FitOptions { starts: 3, ..FitOptions::default() }).unwrap();
    let em = fit(
        &sim.dataset,
        &spec,
        &FitOptions {
            starts: 3,
            optimizer: Optimizer::EmThenQuasiNewton,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert!((qn.log_likelihood - em.log_likelihood).abs() < 1e-6);
}

#[test]
fn iteration_cap_is_reported_as_not_converged() {
    let spec = three_segments();
    let sim = simulate_population(&sim_config(spec.clone(), 300, CovariateModel::default(), 7)).unwrap();
    let options = FitOptions {
        starts: 1,
        max_iter: 2,
        ..FitOptions::default()
    };
    let f = fit(&sim.dataset, &spec, &options).unwrap();
    assert!(!f.converged);
    assert!(f.gradient_norm >= options.gtol);
}

fn template() -> ClassCountTemplate {
    ClassCountTemplate {
        fixed: vec![],
        trader: ClassSpec::trader(
            "trader",
            vec![
                UtilityTerm::constant(),
                UtilityTerm::linear("time_horizon"),
                UtilityTerm::linear("levy"),
            ],
        ),
        membership: vec![MembershipTerm::constant()],
    }
}

fn three_traders() -> ModelSpec {
    let m = |v: f64| vec![MembershipTerm::constant().with_value(v)];
    ModelSpec::new(vec![
        ClassSpec::trader("a", trader_terms(2.0, 1.0, -1.5)).with_membership(m(0.2)),
        ClassSpec::trader("b", trader_terms(-1.5, -1.5, 1.0)).with_membership(m(-0.1)),
        ClassSpec::trader("c", trader_terms(0.0, 0.0, -3.0)).as_base(),
    ])
}

#[test]
fn single_class_count_gives_one_row() {
    let sim = simulate_population(&sim_config(three_traders(), 200, CovariateModel::default(), 1)).unwrap();
    let rows = class_count_search(&sim.dataset, &template(), 1..=1, &FitOptions::default()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].aic_best && rows[0].bic_best);
    assert!(class_count_search(&sim.dataset, &template(), 0..=2, &FitOptions::default()).is_err());
}

#[test]
fn bic_finds_three_trader_segments() {
    let options = FitOptions {
        starts: 6,
        standard_errors: false,
        ..FitOptions::default()
    };
    let mut hits = 0;
    for seed in 0..10 {
        let sim = simulate_population(&sim_config(three_traders(), 2000, CovariateModel::default(), 50 + seed)).unwrap();
        let rows = class_count_search(&sim.dataset, &template(), 1..=4, &options).unwrap();
        let lls: Vec<f64> = rows.iter().map(|r| r.fit.as_ref().unwrap().log_likelihood).collect();
        // nested models never fit worse
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-4, "{lls:?}");
        }
        let best = rows.iter().find(|r| r.bic_best).unwrap().traders;
        println!("seed {seed}: BIC-best S = {best}, lnL {lls:?}");
        hits += usize::from(best == 3);
    }
    assert!(hits >= 8, "{hits}/10");
}
