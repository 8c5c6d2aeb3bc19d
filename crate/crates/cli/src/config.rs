//! Flat key=value run configuration.
//!
//! One key per line, `#` starts a comment, blank lines are skipped. Unknown
//! and duplicate keys are errors so typos cannot silently fall back to
//! defaults. Every run writes the fully resolved configuration back out as a
//! `manifest` file in the same format, so any run can be reproduced with
//! `--config <out>/manifest`.
//!
//! Values may not contain `#` (it starts a comment); `=` after the first one
//! is part of the value.

use std::collections::HashMap;
use std::fmt;

use pstein_core::{
    DenoiserKind, DenoiserSpec, LayeredModelSpec, PDConfig, SamplerConfig, StepSchedule, Wavelet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Synth,
    Svgd,
    PnpSvgd,
    PnpPd,
    Stats,
    Dottest,
}

impl Experiment {
    pub fn token(self) -> &'static str {
        match self {
            Experiment::Synth => "synth",
            Experiment::Svgd => "svgd",
            Experiment::PnpSvgd => "pnp-svgd",
            Experiment::PnpPd => "pnp-pd",
            Experiment::Stats => "stats",
            Experiment::Dottest => "dottest",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "synth" => Experiment::Synth,
            "svgd" => Experiment::Svgd,
            "pnp-svgd" => Experiment::PnpSvgd,
            "pnp-pd" => Experiment::PnpPd,
            "stats" => Experiment::Stats,
            "dottest" => Experiment::Dottest,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleChoice {
    Constant,
    Cosine,
}

impl ScheduleChoice {
    fn token(self) -> &'static str {
        match self {
            ScheduleChoice::Constant => "constant",
            ScheduleChoice::Cosine => "cosine",
        }
    }

    pub fn to_core(self) -> StepSchedule {
        match self {
            ScheduleChoice::Constant => StepSchedule::Constant,
            ScheduleChoice::Cosine => StepSchedule::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserChoice {
    Identity,
    Gaussian,
    Median,
    TvProx,
}

impl DenoiserChoice {
    fn token(self) -> &'static str {
        match self {
            DenoiserChoice::Identity => "identity",
            DenoiserChoice::Gaussian => "gaussian",
            DenoiserChoice::Median => "median",
            DenoiserChoice::TvProx => "tv_prox",
        }
    }
}

/// Fully typed run configuration; every field has a default, so an empty
/// config file is valid. `experiment` stays unset until the subcommand
/// resolves it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,

    // Grid and wavelet.
    pub nt: usize,
    pub nx: usize,
    pub wavelet_peak_freq: f64,
    pub wavelet_dt: f64,
    pub wavelet_half_len: usize,

    // Posterior hyperparameters.
    pub data_weight: f64,
    pub tikh_weight: f64,
    pub tv_weight: f64,
    pub tv_smooth_eps: f64,

    // Sampler.
    pub n_particles: usize,
    pub n_iters: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub schedule: ScheduleChoice,
    pub seed: u64,
    pub trace_every: usize,
    pub paper_literal_sign: bool,
    pub init_variance: f64,

    // Denoiser (pnp-svgd and pnp-pd).
    pub denoiser: DenoiserChoice,
    pub denoiser_strength: f64,
    pub denoiser_window: usize,
    pub denoiser_inner_iters: usize,
    pub denoiser_anisotropic: bool,

    // Primal-dual baseline.
    pub tau: f64,
    pub sigma_pd: f64,
    pub theta: f64,
    pub pd_n_iters: usize,
    pub cg_tol: f64,
    pub cg_maxiter: usize,

    // Synthetic generator.
    pub interfaces: Vec<(f64, f64)>,
    pub dip_per_trace: f64,
    pub noise_rms_frac: f64,
    pub background_blur: f64,

    // Stats extraction.
    pub hist_it: usize,
    pub hist_ix: usize,
    pub hist_bins: usize,
    pub interval_ix: usize,

    // Input paths ("" means unset).
    pub d_obs: String,
    pub background: String,
    pub ensemble: String,

    // Optional PGM heatmap emission.
    pub pgm: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            nt: 100,
            nx: 60,
            wavelet_peak_freq: 8.0,
            wavelet_dt: 0.004,
            wavelet_half_len: 50,
            data_weight: 1e4,
            tikh_weight: 0.1,
            tv_weight: 0.1,
            tv_smooth_eps: 1e-8,
            n_particles: 100,
            n_iters: 50,
            eta_max: 1e-2,
            eta_min: 1e-4,
            schedule: ScheduleChoice::Cosine,
            seed: 0,
            trace_every: 1,
            paper_literal_sign: false,
            init_variance: 0.5,
            denoiser: DenoiserChoice::TvProx,
            denoiser_strength: 0.1,
            denoiser_window: 3,
            denoiser_inner_iters: 50,
            denoiser_anisotropic: false,
            tau: 0.9,
            sigma_pd: 0.9,
            theta: 1.0,
            pd_n_iters: 100,
            cg_tol: 1e-8,
            cg_maxiter: 200,
            interfaces: vec![(0.25, 8.3), (0.45, 8.8), (0.7, 8.5), (0.85, 9.0)],
            dip_per_trace: 0.3,
            noise_rms_frac: 0.1,
            background_blur: 8.0,
            hist_it: 0,
            hist_ix: 0,
            hist_bins: 20,
            interval_ix: 0,
            d_obs: String::new(),
            background: String::new(),
            ensemble: String::new(),
            pgm: false,
        }
    }
}

impl RunConfig {
    pub fn wavelet(&self) -> pstein_core::Result<Wavelet> {
        pstein_core::ricker_wavelet(self.wavelet_peak_freq, self.wavelet_dt, self.wavelet_half_len)
    }

    pub fn denoiser_spec(&self) -> DenoiserSpec {
        match self.denoiser {
            DenoiserChoice::Identity => DenoiserSpec::identity(),
            DenoiserChoice::Gaussian => DenoiserSpec::gaussian(self.denoiser_strength),
            DenoiserChoice::Median => DenoiserSpec::median(self.denoiser_window),
            DenoiserChoice::TvProx => DenoiserSpec {
                kind: DenoiserKind::TvProx {
                    inner_iters: self.denoiser_inner_iters,
                    anisotropic: self.denoiser_anisotropic,
                },
                strength: self.denoiser_strength,
            },
        }
    }

    /// Sampler settings for svgd (no denoiser) or pnp-svgd (with denoiser).
    pub fn sampler_config(&self, with_denoiser: bool) -> SamplerConfig {
        SamplerConfig {
            n_particles: self.n_particles,
            n_iters: self.n_iters,
            eta_max: self.eta_max,
            eta_min: self.eta_min,
            schedule: self.schedule.to_core(),
            seed: self.seed,
            denoiser: with_denoiser.then(|| self.denoiser_spec()),
            trace_every: self.trace_every,
            paper_literal_sign: self.paper_literal_sign,
        }
    }

    pub fn pd_config(&self) -> PDConfig {
        PDConfig {
            tau: self.tau,
            sigma_pd: self.sigma_pd,
            theta: self.theta,
            n_iters: self.pd_n_iters,
            denoiser: self.denoiser_spec(),
            cg_tol: self.cg_tol,
            cg_maxiter: self.cg_maxiter,
        }
    }

    pub fn layered_spec(&self) -> LayeredModelSpec {
        LayeredModelSpec {
            nt: self.nt,
            nx: self.nx,
            interfaces: self.interfaces.clone(),
            dip_per_trace: self.dip_per_trace,
            seed: self.seed,
        }
    }
}

/// Parse or validation failure, pointing at the config line when one is
/// responsible.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64, ConfigError> {
    let v: f64 = value
        .parse()
        .map_err(|_| ConfigError::at(line, format!("{key} expects a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(ConfigError::at(line, format!("{key} must be finite")));
    }
    Ok(v)
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| {
        ConfigError::at(line, format!("{key} expects a nonnegative integer, got `{value}`"))
    })
}

fn parse_u64(key: &str, value: &str, line: usize) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| {
        ConfigError::at(line, format!("{key} expects a nonnegative integer, got `{value}`"))
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::at(
            line,
            format!("{key} expects true or false, got `{value}`"),
        )),
    }
}

fn parse_interfaces(value: &str, line: usize) -> Result<Vec<(f64, f64)>, ConfigError> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        let (frac, val) = part.split_once(':').ok_or_else(|| {
            ConfigError::at(
                line,
                format!("interfaces expects frac:value pairs, got `{part}`"),
            )
        })?;
        out.push((
            parse_f64("interfaces", frac.trim(), line)?,
            parse_f64("interfaces", val.trim(), line)?,
        ));
    }
    if out.len() < 2 {
        return Err(ConfigError::at(line, "interfaces needs at least 2 layers"));
    }
    let mut prev = 0.0;
    for &(frac, _) in &out {
        if !(frac > prev && frac < 1.0) {
            return Err(ConfigError::at(
                line,
                format!("interface fractions must be strictly ascending within (0, 1), got {frac}"),
            ));
        }
        prev = frac;
    }
    Ok(out)
}

fn render_interfaces(v: &[(f64, f64)]) -> String {
    v.iter()
        .map(|(f, val)| format!("{f}:{val}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Per-key description and renderer; one table drives parsing feedback,
/// `--help`, and manifest output so they cannot drift apart.
struct KeySpec {
    name: &'static str,
    help: &'static str,
    render: fn(&RunConfig) -> String,
}

static KEYS: &[KeySpec] = &[
    KeySpec {
        name: "experiment",
        help: "synth | svgd | pnp-svgd | pnp-pd | stats | dottest",
        render: |c| c.experiment.map(|e| e.token().to_string()).unwrap_or_default(),
    },
    KeySpec { name: "nt", help: "grid rows (time samples) for synth/dottest", render: |c| c.nt.to_string() },
    KeySpec { name: "nx", help: "grid columns (traces) for synth/dottest", render: |c| c.nx.to_string() },
    KeySpec { name: "wavelet_peak_freq", help: "Ricker peak frequency, Hz", render: |c| c.wavelet_peak_freq.to_string() },
    KeySpec { name: "wavelet_dt", help: "sample interval, seconds", render: |c| c.wavelet_dt.to_string() },
    KeySpec { name: "wavelet_half_len", help: "wavelet half-length, samples", render: |c| c.wavelet_half_len.to_string() },
    KeySpec { name: "data_weight", help: "likelihood precision 1/sigma_d^2", render: |c| c.data_weight.to_string() },
    KeySpec { name: "tikh_weight", help: "Tikhonov prior weight", render: |c| c.tikh_weight.to_string() },
    KeySpec { name: "tv_weight", help: "total-variation prior weight", render: |c| c.tv_weight.to_string() },
    KeySpec { name: "tv_smooth_eps", help: "TV smoothing epsilon", render: |c| c.tv_smooth_eps.to_string() },
    KeySpec { name: "n_particles", help: "ensemble size", render: |c| c.n_particles.to_string() },
    KeySpec { name: "n_iters", help: "sampler iterations", render: |c| c.n_iters.to_string() },
    KeySpec { name: "eta_max", help: "largest step size", render: |c| c.eta_max.to_string() },
    KeySpec { name: "eta_min", help: "smallest step size (cosine schedule)", render: |c| c.eta_min.to_string() },
    KeySpec { name: "schedule", help: "constant | cosine", render: |c| c.schedule.token().to_string() },
    KeySpec { name: "seed", help: "RNG seed for init/noise", render: |c| c.seed.to_string() },
    KeySpec { name: "trace_every", help: "trace cadence in iterations, 0 = never", render: |c| c.trace_every.to_string() },
    KeySpec { name: "paper_literal_sign", help: "use the descent sign as printed", render: |c| c.paper_literal_sign.to_string() },
    KeySpec { name: "init_variance", help: "initial ensemble variance", render: |c| c.init_variance.to_string() },
    KeySpec { name: "denoiser", help: "identity | gaussian | median | tv_prox", render: |c| c.denoiser.token().to_string() },
    KeySpec { name: "denoiser_strength", help: "denoiser noise level (ignored by pnp-pd)", render: |c| c.denoiser_strength.to_string() },
    KeySpec { name: "denoiser_window", help: "median window, odd >= 3", render: |c| c.denoiser_window.to_string() },
    KeySpec { name: "denoiser_inner_iters", help: "TV dual iterations", render: |c| c.denoiser_inner_iters.to_string() },
    KeySpec { name: "denoiser_anisotropic", help: "anisotropic TV variant", render: |c| c.denoiser_anisotropic.to_string() },
    KeySpec { name: "tau", help: "primal step (pnp-pd)", render: |c| c.tau.to_string() },
    KeySpec { name: "sigma_pd", help: "dual step (pnp-pd); denoiser strength is 1/sigma_pd", render: |c| c.sigma_pd.to_string() },
    KeySpec { name: "theta", help: "over-relaxation in [0, 1] (pnp-pd)", render: |c| c.theta.to_string() },
    KeySpec { name: "pd_n_iters", help: "pnp-pd iterations", render: |c| c.pd_n_iters.to_string() },
    KeySpec { name: "cg_tol", help: "CG relative residual tolerance", render: |c| c.cg_tol.to_string() },
    KeySpec { name: "cg_maxiter", help: "CG iteration cap", render: |c| c.cg_maxiter.to_string() },
    KeySpec { name: "interfaces", help: "layer list frac:value,... ascending fracs in (0,1)", render: |c| render_interfaces(&c.interfaces) },
    KeySpec { name: "dip_per_trace", help: "interface shift per trace, samples", render: |c| c.dip_per_trace.to_string() },
    KeySpec { name: "noise_rms_frac", help: "noise RMS as a fraction of clean-data RMS", render: |c| c.noise_rms_frac.to_string() },
    KeySpec { name: "background_blur", help: "background smoothing sigma, samples", render: |c| c.background_blur.to_string() },
    KeySpec { name: "hist_it", help: "histogram pixel row", render: |c| c.hist_it.to_string() },
    KeySpec { name: "hist_ix", help: "histogram pixel column", render: |c| c.hist_ix.to_string() },
    KeySpec { name: "hist_bins", help: "histogram bin count", render: |c| c.hist_bins.to_string() },
    KeySpec { name: "interval_ix", help: "trace index for mean+-std interval", render: |c| c.interval_ix.to_string() },
    KeySpec { name: "d_obs", help: "observed data matrix file (invert)", render: |c| c.d_obs.clone() },
    KeySpec { name: "background", help: "background matrix file (invert start/mean)", render: |c| c.background.clone() },
    KeySpec { name: "ensemble", help: "ensemble matrix file (stats)", render: |c| c.ensemble.clone() },
    KeySpec { name: "pgm", help: "also write grayscale PGM heatmaps", render: |c| c.pgm.to_string() },
];

/// `--help` trailer documenting every key and its default.
pub fn defaults_help() -> String {
    let defaults = RunConfig::default();
    let mut s = String::from("Configuration keys (key=value per line, '#' comments):\n");
    for k in KEYS {
        let d = if k.name == "experiment" {
            "per subcommand".to_string()
        } else {
            let v = (k.render)(&defaults);
            if v.is_empty() {
                "unset".to_string()
            } else {
                v
            }
        };
        s.push_str(&format!("  {:<22} {}  [default: {}]\n", k.name, k.help, d));
    }
    s
}

/// Renders the resolved configuration as a manifest that reproduces this run
/// when passed back via `--config`.
pub fn render_manifest(cfg: &RunConfig) -> String {
    let mut s = String::from("# resolved run configuration; rerun with --config <this file>\n");
    for k in KEYS {
        let v = (k.render)(cfg);
        if k.name == "experiment" && v.is_empty() {
            continue;
        }
        s.push_str(k.name);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s
}

fn set_key(
    cfg: &mut RunConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<&'static str, ConfigError> {
    // Returns the canonical key name for duplicate tracking.
    let spec = KEYS
        .iter()
        .find(|k| k.name == key)
        .ok_or_else(|| ConfigError::at(line, format!("unknown key `{key}`")))?;
    let name = spec.name;
    match name {
        "experiment" => {
            cfg.experiment = Some(Experiment::parse(value).ok_or_else(|| {
                ConfigError::at(
                    line,
                    format!("experiment must be synth|svgd|pnp-svgd|pnp-pd|stats|dottest, got `{value}`"),
                )
            })?);
        }
        "nt" => {
            cfg.nt = parse_usize(name, value, line)?;
            if cfg.nt == 0 {
                return Err(ConfigError::at(line, "nt must be at least 1"));
            }
        }
        "nx" => {
            cfg.nx = parse_usize(name, value, line)?;
            if cfg.nx == 0 {
                return Err(ConfigError::at(line, "nx must be at least 1"));
            }
        }
        "wavelet_peak_freq" => {
            cfg.wavelet_peak_freq = parse_f64(name, value, line)?;
            if !(cfg.wavelet_peak_freq > 0.0) {
                return Err(ConfigError::at(line, "wavelet_peak_freq must be positive"));
            }
        }
        "wavelet_dt" => {
            cfg.wavelet_dt = parse_f64(name, value, line)?;
            if !(cfg.wavelet_dt > 0.0) {
                return Err(ConfigError::at(line, "wavelet_dt must be positive"));
            }
        }
        "wavelet_half_len" => {
            cfg.wavelet_half_len = parse_usize(name, value, line)?;
            if cfg.wavelet_half_len == 0 {
                return Err(ConfigError::at(line, "wavelet_half_len must be at least 1"));
            }
        }
        "data_weight" => {
            cfg.data_weight = parse_f64(name, value, line)?;
            if !(cfg.data_weight >= 0.0) {
                return Err(ConfigError::at(line, "data_weight must be nonnegative"));
            }
        }
        "tikh_weight" => {
            cfg.tikh_weight = parse_f64(name, value, line)?;
            if !(cfg.tikh_weight >= 0.0) {
                return Err(ConfigError::at(line, "tikh_weight must be nonnegative"));
            }
        }
        "tv_weight" => {
            cfg.tv_weight = parse_f64(name, value, line)?;
            if !(cfg.tv_weight >= 0.0) {
                return Err(ConfigError::at(line, "tv_weight must be nonnegative"));
            }
        }
        "tv_smooth_eps" => {
            cfg.tv_smooth_eps = parse_f64(name, value, line)?;
            if !(cfg.tv_smooth_eps > 0.0) {
                return Err(ConfigError::at(line, "tv_smooth_eps must be positive"));
            }
        }
        "n_particles" => {
            cfg.n_particles = parse_usize(name, value, line)?;
            if cfg.n_particles == 0 {
                return Err(ConfigError::at(line, "n_particles must be at least 1"));
            }
        }
        "n_iters" => {
            cfg.n_iters = parse_usize(name, value, line)?;
            if cfg.n_iters == 0 {
                return Err(ConfigError::at(line, "n_iters must be at least 1"));
            }
        }
        "eta_max" => {
            cfg.eta_max = parse_f64(name, value, line)?;
            if !(cfg.eta_max > 0.0) {
                return Err(ConfigError::at(line, "eta_max must be positive"));
            }
        }
        "eta_min" => {
            cfg.eta_min = parse_f64(name, value, line)?;
            if !(cfg.eta_min > 0.0) {
                return Err(ConfigError::at(line, "eta_min must be positive"));
            }
        }
        "schedule" => {
            cfg.schedule = match value {
                "constant" => ScheduleChoice::Constant,
                "cosine" => ScheduleChoice::Cosine,
                _ => {
                    return Err(ConfigError::at(
                        line,
                        format!("schedule must be constant or cosine, got `{value}`"),
                    ))
                }
            };
        }
        "seed" => cfg.seed = parse_u64(name, value, line)?,
        "trace_every" => cfg.trace_every = parse_usize(name, value, line)?,
        "paper_literal_sign" => cfg.paper_literal_sign = parse_bool(name, value, line)?,
        "init_variance" => {
            cfg.init_variance = parse_f64(name, value, line)?;
            if !(cfg.init_variance >= 0.0) {
                return Err(ConfigError::at(line, "init_variance must be nonnegative"));
            }
        }
        "denoiser" => {
            cfg.denoiser = match value {
                "identity" => DenoiserChoice::Identity,
                "gaussian" => DenoiserChoice::Gaussian,
                "median" => DenoiserChoice::Median,
                "tv_prox" => DenoiserChoice::TvProx,
                _ => {
                    return Err(ConfigError::at(
                        line,
                        format!(
                            "denoiser must be identity|gaussian|median|tv_prox, got `{value}`"
                        ),
                    ))
                }
            };
        }
        "denoiser_strength" => {
            cfg.denoiser_strength = parse_f64(name, value, line)?;
            if !(cfg.denoiser_strength >= 0.0) {
                return Err(ConfigError::at(line, "denoiser_strength must be nonnegative"));
            }
        }
        "denoiser_window" => {
            cfg.denoiser_window = parse_usize(name, value, line)?;
            if cfg.denoiser_window < 3 || cfg.denoiser_window % 2 == 0 {
                return Err(ConfigError::at(line, "denoiser_window must be odd and >= 3"));
            }
        }
        "denoiser_inner_iters" => {
            cfg.denoiser_inner_iters = parse_usize(name, value, line)?;
            if cfg.denoiser_inner_iters == 0 {
                return Err(ConfigError::at(line, "denoiser_inner_iters must be at least 1"));
            }
        }
        "denoiser_anisotropic" => cfg.denoiser_anisotropic = parse_bool(name, value, line)?,
        "tau" => {
            cfg.tau = parse_f64(name, value, line)?;
            if !(cfg.tau > 0.0) {
                return Err(ConfigError::at(line, "tau must be positive"));
            }
        }
        "sigma_pd" => {
            cfg.sigma_pd = parse_f64(name, value, line)?;
            if !(cfg.sigma_pd > 0.0) {
                return Err(ConfigError::at(line, "sigma_pd must be positive"));
            }
        }
        "theta" => {
            cfg.theta = parse_f64(name, value, line)?;
            if !(0.0..=1.0).contains(&cfg.theta) {
                return Err(ConfigError::at(line, "theta must lie in [0, 1]"));
            }
        }
        "pd_n_iters" => cfg.pd_n_iters = parse_usize(name, value, line)?,
        "cg_tol" => {
            cfg.cg_tol = parse_f64(name, value, line)?;
            if !(cfg.cg_tol > 0.0) {
                return Err(ConfigError::at(line, "cg_tol must be positive"));
            }
        }
        "cg_maxiter" => {
            cfg.cg_maxiter = parse_usize(name, value, line)?;
            if cfg.cg_maxiter == 0 {
                return Err(ConfigError::at(line, "cg_maxiter must be at least 1"));
            }
        }
        "interfaces" => cfg.interfaces = parse_interfaces(value, line)?,
        "dip_per_trace" => cfg.dip_per_trace = parse_f64(name, value, line)?,
        "noise_rms_frac" => {
            cfg.noise_rms_frac = parse_f64(name, value, line)?;
            if !(cfg.noise_rms_frac >= 0.0) {
                return Err(ConfigError::at(line, "noise_rms_frac must be nonnegative"));
            }
        }
        "background_blur" => {
            cfg.background_blur = parse_f64(name, value, line)?;
            if !(cfg.background_blur > 0.0) {
                return Err(ConfigError::at(line, "background_blur must be positive"));
            }
        }
        "hist_it" => cfg.hist_it = parse_usize(name, value, line)?,
        "hist_ix" => cfg.hist_ix = parse_usize(name, value, line)?,
        "hist_bins" => {
            cfg.hist_bins = parse_usize(name, value, line)?;
            if cfg.hist_bins == 0 {
                return Err(ConfigError::at(line, "hist_bins must be at least 1"));
            }
        }
        "interval_ix" => cfg.interval_ix = parse_usize(name, value, line)?,
        "d_obs" => cfg.d_obs = value.to_string(),
        "background" => cfg.background = value.to_string(),
        "ensemble" => cfg.ensemble = value.to_string(),
        "pgm" => cfg.pgm = parse_bool(name, value, line)?,
        _ => unreachable!("key table covers all names"),
    }
    Ok(name)
}

/// Parses config text into a typed [`RunConfig`] with defaults filled in.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: HashMap<&'static str, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::at(line_no, format!("expected key=value, got `{line}`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let canonical = set_key(&mut cfg, key, value, line_no)?;
        if let Some(first) = seen.insert(canonical, line_no) {
            return Err(ConfigError::at(
                line_no,
                format!("duplicate key `{canonical}` (first set on line {first})"),
            ));
        }
    }
    // Cross-key constraints; blame the latest involved line.
    let line_of = |keys: &[&str]| {
        keys.iter()
            .filter_map(|k| seen.get(k).copied())
            .max()
            .unwrap_or(0)
    };
    if !(cfg.tau * cfg.sigma_pd < 1.0) {
        return Err(ConfigError::at(
            line_of(&["tau", "sigma_pd"]),
            format!(
                "need tau * sigma_pd < 1, got {} * {} = {}",
                cfg.tau,
                cfg.sigma_pd,
                cfg.tau * cfg.sigma_pd
            ),
        ));
    }
    if !(cfg.eta_min <= cfg.eta_max) {
        return Err(ConfigError::at(
            line_of(&["eta_min", "eta_max"]),
            format!("need eta_min <= eta_max, got {} > {}", cfg.eta_min, cfg.eta_max),
        ));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.experiment.is_none());
    }

    #[test]
    fn paper_scale_run_parses() {
        let cfg = parse_config("n_particles=100\nn_iters=50").unwrap();
        assert_eq!(cfg.n_particles, 100);
        assert_eq!(cfg.n_iters, 50);
    }

    #[test]
    fn type_error_names_line_one() {
        let err = parse_config("n_particles=abc").unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(err.message.contains("n_particles"), "{}", err.message);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config("nt=4\nnot_a_key=1").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("unknown key"), "{}", err.message);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_config("nt=4\nnt=5").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("duplicate"), "{}", err.message);
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = parse_config("# header\n\nnt=32 # trailing comment\n").unwrap();
        assert_eq!(cfg.nt, 32);
    }

    #[test]
    fn step_size_product_constraint_names_latest_line() {
        let err = parse_config("tau=2.0\nsigma_pd=0.6").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("tau * sigma_pd"), "{}", err.message);
    }

    #[test]
    fn single_key_constraints_are_enforced() {
        for bad in [
            "theta=1.5",
            "nt=0",
            "eta_max=0",
            "denoiser_window=4",
            "tv_smooth_eps=0",
            "interfaces=0.5:1.0",
            "interfaces=0.5:1.0,0.3:2.0",
            "schedule=linear",
            "pgm=yes",
        ] {
            let err = parse_config(bad).unwrap_err();
            assert_eq!(err.line, Some(1), "{bad} gave {err}");
        }
    }

    #[test]
    fn manifest_round_trips_and_is_idempotent() {
        let mut cfg = parse_config("eta_max=0.0123456789\ninterfaces=0.2:7.5,0.6:8.25\nseed=981\n")
            .unwrap();
        cfg.experiment = Some(Experiment::PnpSvgd);
        let manifest = render_manifest(&cfg);
        let back = parse_config(&manifest).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(render_manifest(&back), manifest);
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let help = defaults_help();
        for k in KEYS {
            assert!(help.contains(k.name), "help is missing {}", k.name);
        }
        assert!(help.contains("[default: 0.01]"), "eta_max default missing");
    }

    #[test]
    fn experiment_tokens_round_trip() {
        for e in [
            Experiment::Synth,
            Experiment::Svgd,
            Experiment::PnpSvgd,
            Experiment::PnpPd,
            Experiment::Stats,
            Experiment::Dottest,
        ] {
            assert_eq!(Experiment::parse(e.token()), Some(e));
        }
    }
}
