//! Subcommand drivers. Each receives a resolved configuration (experiment
//! set) and an existing output directory; the manifest has already been
//! written by the dispatcher.

use std::fs;
use std::path::Path;

use pstein_core::{
    dot_test, ensemble_mean, ensemble_std, init_ensemble, layered_model, make_observed,
    pnp_pd_run, pointwise_histogram, post_stack_operator, run_sampler, smooth_background,
    trace_interval, Ensemble, Grid2D, LinOpSpec, PosteriorModel,
};

use crate::config::{Experiment, RunConfig};
use crate::matrixfile::{read_matrix, write_matrix};
use crate::CliError;

pub fn run(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    match cfg.experiment.expect("experiment resolved by dispatcher") {
        Experiment::Synth => synth(cfg, out),
        Experiment::Svgd | Experiment::PnpSvgd => invert_sampler(cfg, out),
        Experiment::PnpPd => invert_pd(cfg, out),
        Experiment::Stats => stats(cfg, out),
        Experiment::Dottest => dottest(cfg, out),
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let wavelet = cfg.wavelet()?;
    let m_true = layered_model(&cfg.layered_spec())?;
    let background = smooth_background(&m_true, cfg.background_blur)?;
    let clean = post_stack_operator(wavelet.clone()).forward(&m_true)?;
    let amplitude = cfg.noise_rms_frac * clean.rms();
    let (d_obs, _noise) = make_observed(&m_true, &wavelet, amplitude, cfg.seed)?;

    write_matrix(&out.join("m_true.fm"), &m_true)?;
    write_matrix(&out.join("m_background.fm"), &background)?;
    write_matrix(&out.join("d_obs.fm"), &d_obs)?;
    if cfg.pgm {
        write_pgm(&out.join("m_true.pgm"), &m_true)?;
        write_pgm(&out.join("m_background.pgm"), &background)?;
        write_pgm(&out.join("d_obs.pgm"), &d_obs)?;
    }
    Ok(())
}

/// Observed data plus posterior hyperparameters from the config.
fn build_model(cfg: &RunConfig) -> Result<PosteriorModel, CliError> {
    if cfg.d_obs.is_empty() {
        return Err(CliError::Config(
            "invert requires d_obs=<matrix file> in the config".into(),
        ));
    }
    let d_obs = read_matrix(Path::new(&cfg.d_obs))?;
    let op = post_stack_operator(cfg.wavelet()?);
    Ok(PosteriorModel::new(
        op,
        d_obs,
        cfg.data_weight,
        cfg.tikh_weight,
        cfg.tv_weight,
        cfg.tv_smooth_eps,
    )?)
}

/// Start/mean grid: the background file when given, zeros otherwise.
fn start_grid(cfg: &RunConfig, model: &PosteriorModel) -> Result<Grid2D, CliError> {
    if cfg.background.is_empty() {
        Ok(Grid2D::zeros(model.nt(), model.nx()))
    } else {
        Ok(read_matrix(Path::new(&cfg.background))?)
    }
}

fn invert_sampler(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model = build_model(cfg)?;
    let start = start_grid(cfg, &model)?;
    let with_denoiser = cfg.experiment == Some(Experiment::PnpSvgd);
    let sampler_cfg = cfg.sampler_config(with_denoiser);
    let init = init_ensemble(&start, cfg.init_variance, cfg.n_particles, cfg.seed)?;
    let (ensemble, trace) = run_sampler(&sampler_cfg, &model, init)?;

    let flat = Grid2D::from_values(
        ensemble.n(),
        ensemble.dim(),
        ensemble.particles().to_vec(),
    )?;
    write_matrix(&out.join("ensemble.fm"), &flat)?;
    fs::write(
        out.join("ensemble.shape"),
        format!("{} {}\n", ensemble.nt(), ensemble.nx()),
    )?;

    let mean = ensemble_mean(&ensemble);
    write_matrix(&out.join("mean.fm"), &mean)?;
    if ensemble.n() >= 2 {
        let std = ensemble_std(&ensemble)?;
        write_matrix(&out.join("std.fm"), &std)?;
        if cfg.pgm {
            write_pgm(&out.join("std.pgm"), &std)?;
        }
    }
    if cfg.pgm {
        write_pgm(&out.join("mean.pgm"), &mean)?;
    }
    write_csv(
        &out.join("misfit.csv"),
        "iter,misfit",
        trace
            .records
            .iter()
            .map(|r| format!("{},{}", r.iter, r.mean_misfit)),
    )?;
    Ok(())
}

fn invert_pd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model = build_model(cfg)?;
    let start = start_grid(cfg, &model)?;
    let (m_map, misfits) = pnp_pd_run(&model, &start, &cfg.pd_config())?;
    write_matrix(&out.join("m_map.fm"), &m_map)?;
    if cfg.pgm {
        write_pgm(&out.join("m_map.pgm"), &m_map)?;
    }
    write_csv(
        &out.join("misfit.csv"),
        "iter,misfit",
        misfits
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{i},{m}")),
    )?;
    Ok(())
}

fn stats(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    if cfg.ensemble.is_empty() {
        return Err(CliError::Config(
            "stats requires ensemble=<matrix file> in the config".into(),
        ));
    }
    let path = Path::new(&cfg.ensemble);
    let flat = read_matrix(path)?;
    let sidecar = path.with_extension("shape");
    let text = fs::read_to_string(&sidecar)
        .map_err(|e| CliError::Io(format!("{}: {e}", sidecar.display())))?;
    let mut parts = text.split_whitespace();
    let (nt, nx) = match (
        parts.next().and_then(|s| s.parse::<usize>().ok()),
        parts.next().and_then(|s| s.parse::<usize>().ok()),
    ) {
        (Some(nt), Some(nx)) if parts.next().is_none() => (nt, nx),
        _ => {
            return Err(CliError::Config(format!(
                "{}: sidecar must contain exactly `nt nx`",
                sidecar.display()
            )))
        }
    };
    if nt * nx != flat.nx() {
        return Err(CliError::Config(format!(
            "sidecar shape {nt}x{nx} does not match ensemble dimension {}",
            flat.nx()
        )));
    }
    let ensemble = Ensemble::from_particles(nt, nx, flat.nt(), flat.values().to_vec())?;

    let hist = pointwise_histogram(&ensemble, cfg.hist_it, cfg.hist_ix, cfg.hist_bins)?;
    write_csv(
        &out.join("histogram.csv"),
        "bin_lo,bin_hi,count",
        (0..hist.counts.len())
            .map(|b| format!("{},{},{}", hist.edges[b], hist.edges[b + 1], hist.counts[b])),
    )?;

    let (mean, lo, hi) = trace_interval(&ensemble, cfg.interval_ix)?;
    write_csv(
        &out.join("interval.csv"),
        "it,mean,lo,hi",
        (0..mean.len()).map(|it| format!("{it},{},{},{}", mean[it], lo[it], hi[it])),
    )?;
    Ok(())
}

fn dottest(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let _ = out; // artifacts are the manifest plus stdout
    let wavelet = cfg.wavelet()?;
    let ops = [
        ("derivative_t", LinOpSpec::DerivativeT),
        ("derivative_x", LinOpSpec::DerivativeX),
        ("convolve_t", LinOpSpec::ConvolveT(wavelet.clone())),
        ("post_stack_g", post_stack_operator(wavelet)),
        ("stack_tv", LinOpSpec::StackTV),
    ];
    const TOL: f64 = 1e-10;
    let mut worst = 0.0f64;
    for (name, op) in &ops {
        let err = dot_test(op, cfg.nt, cfg.nx, 100, cfg.seed)?;
        println!(
            "{name:<14} max_rel_err {err:.3e} {}",
            if err <= TOL { "ok" } else { "FAIL" }
        );
        worst = worst.max(err);
    }
    if worst > TOL {
        return Err(CliError::Numerical(format!(
            "adjoint mismatch: max relative error {worst:.3e} exceeds {TOL:.0e}"
        )));
    }
    Ok(())
}

/// CSV with '.' decimal separators and '\n' line endings; Rust float
/// formatting is locale-independent, so this holds everywhere.
fn write_csv(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> std::io::Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row);
        s.push('\n');
    }
    fs::write(path, s)
}

/// 8-bit grayscale PGM (P5), min-max normalized; constant fields render
/// black.
fn write_pgm(path: &Path, g: &Grid2D) -> std::io::Result<()> {
    let lo = g.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = g.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut buf = format!("P5\n{} {}\n255\n", g.nx(), g.nt()).into_bytes();
    buf.extend(g.values().iter().map(|&v| ((v - lo) * scale).round() as u8));
    fs::write(path, buf)
}
