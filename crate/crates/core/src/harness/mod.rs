//! Synthetic experiments: example problems, noisy data, repeated inversions,
//! error statistics and log-log rate fits.

mod examples;
mod experiment;
mod noise;
mod output;
mod rates;
mod restrict;
mod scenario;

pub use examples::ExampleId;
pub use experiment::{
    aggregate, best_relabeling, direct_reconstruction, fit_rates, run_example, source_errors, ErrorReport,
    ErrorRow, ExperimentSpec, Method, RateRow, RunRecord, DEFAULT_NOISE_LEVELS,
};
pub use noise::{make_noisy, step_normals};
pub use output::{
    emit_outputs, plot_script, read_errors_csv, representative_run, write_errors_csv, write_rates_csv,
    ERRORS_HEADER, RATES_HEADER,
};
pub use rates::{rate_fit, RateFit};
pub use restrict::restrict_trace;
pub use scenario::{
    parse_key_values, parse_noise_level, AmplitudeFn, LmSettings, Resolution, RunConfig, Scenario, SourceSpec,
};
