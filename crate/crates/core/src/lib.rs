//! Latent-class binary logit models for repeated referendum votes, with
//! deterministic protest classes (always-yes, always-no, or pinned for some
//! policy categories only).
//!
//! The pipeline: [`design`] builds blocked referendum designs, [`simulate`]
//! draws synthetic respondents, [`estimation`] fits the mixture by maximum
//! likelihood, and [`wtp`] turns a fit into segment shares and willingness
//! to pay by sample enumeration.

pub mod coding;
pub mod data;
pub mod design;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod report;
pub mod simulate;
pub mod wtp;

pub use coding::{orthogonal_poly_codes, OrthoPolyCoding};
pub use data::{
    build_design_matrix, load_dataset, AttributeKind, AttributeSchema, AttributeSpec, CovariateKind, CovariateSpec,
    DataSchema, Dataset, DesignMatrix, Levels, Observation, ReferendumTask, RespondentProfile, TaskEncoder, Transform,
};
pub use design::{
    evaluate_design, generate_design, levy_bounds, load_design, Design, DesignConfig, DesignDiagnostics, LevyBounds,
};
pub use error::{Error, Result};
pub use estimation::{
    class_count_search, fit, fit_context, information_criteria, ClassCountRow, ClassCountTemplate, FitOptions,
    FitResult, Optimizer, ParameterEstimate,
};
pub use likelihood::{EvalResult, LikelihoodContext};
pub use model::{
    count_free_parameters, validate_against, validate_spec, ClassKind, ClassSpec, Fixity, MembershipSpec,
    MembershipTerm, ModelSpec, ParamIndex, ParameterVector, TermSource, TermTransform, UtilityTerm,
};
pub use wtp::{
    choice_prob_profile, household_average_wtp, indifference_levy, segment_shares, segment_wtp, wtp_table,
    CurveShape, ProbabilityCurve, ProfileMode, SegmentShares, WtpEntry, WtpOptions, WtpTable,
};
pub use simulate::{
    naysayer_bias_demo, recovery_experiment, simulate_population, BiasReport, CovariateDist, CovariateGenerator,
    CovariateModel, RecoveryReport, SimConfig, Simulation,
};
pub use report::{FitArtifact, FitSummary};
