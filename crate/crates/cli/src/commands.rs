use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use nndp::baselines::FdConfig;
use nndp::io::{self, DataTable};
use nndp::kernel::Direction;
use nndp::neighbors::{order_reference, Points};
use nndp::nndp::{gradient_magnitude, GradientField, GradientQuery, SamplingOptions};
use nndp::pipeline::{exact_from_fit, fit_model, Engine, FittedModel, ModelSettings};
use nndp::posterior::{ChainConfig, Mode, Priors};
use nndp::simulation::{correlation, generate, mse, Pattern, PatternSpec, Sampling};
use nndp::NndpError;

use crate::cli::*;
use crate::config::Resolved;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn simulate(cfg: &Resolved, a: &SimulateArgs) -> Result<()> {
    let pattern = Pattern::from_id(a.pattern)?;
    let sampling = match a.uniform {
        Some(n) => {
            let ranges = if a.ranges.is_empty() {
                match pattern {
                    Pattern::Sinusoid => vec![(0.0, 1.0), (0.0, 3.0)],
                    Pattern::Chirp => vec![(0.0, 1.0)],
                }
            } else {
                a.ranges.iter().map(|r| parse_range(r)).collect::<Result<_>>()?
            };
            Sampling::Uniform { n, ranges }
        }
        None => Sampling::Grid { mesh: a.mesh.unwrap_or(0.01) },
    };
    let data = generate(&PatternSpec { pattern, sampling, seed: cfg.seed })?;
    io::write_data_path(&a.out, &data.points, &data.values, Some(&data.gradients))?;
    info!("wrote {} locations to {}", data.points.len(), a.out.display());
    Ok(())
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || CliError::Config(format!("range '{s}' must look like lower:upper"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

struct FitInputs {
    settings: ModelSettings,
    chain: ChainConfig,
    priors: Priors,
    intercept: bool,
}

fn fit_inputs(cfg: &Resolved, model: &ModelArgs, chain: &ChainArgs, priors: &PriorArgs) -> Result<FitInputs> {
    Ok(FitInputs {
        settings: cfg.model(model)?,
        chain: cfg.chain(chain)?,
        priors: cfg.priors(priors)?,
        intercept: cfg.intercept(chain),
    })
}

fn run_fit(data: &DataTable, inputs: &FitInputs) -> Result<FittedModel> {
    let x = (inputs.intercept && inputs.chain.mode == Mode::FullHierarchical).then(|| DMatrix::from_element(data.y.len(), 1, 1.0));
    let fitted = fit_model(&data.points, &data.y, x.as_ref(), &inputs.settings, &inputs.priors, &inputs.chain)?;
    let (s2, phi) = fitted.chain.median_params();
    info!(
        "posterior medians sigma2 = {s2:.6}, phi = {phi:.6}; acceptance {:.3} over {} retained draws",
        fitted.chain.acceptance_rate,
        fitted.chain.draws.len()
    );
    Ok(fitted)
}

pub fn fit(cfg: &Resolved, a: &FitArgs) -> Result<()> {
    let inputs = fit_inputs(cfg, &a.model, &a.chain_args, &a.priors)?;
    if inputs.chain.mode == Mode::FullHierarchical && a.latent.is_none() {
        return Err(CliError::Config("full mode needs --latent for the latent draws".into()));
    }
    let data = io::read_data_path(&a.data)?;
    let fitted = run_fit(&data, &inputs)?;
    io::write_chain_path(&a.chain, &fitted.chain)?;
    if let Some(p) = &a.latent {
        io::write_latent_path(p, &fitted.chain, &fitted.reference)?;
    }
    Ok(())
}

/// Data, targets and fitted model for the gradient commands.
struct Prepared {
    data: DataTable,
    targets: Points,
    /// Targets are the data locations, so true gradients line up.
    on_data: bool,
    fitted: FittedModel,
}

fn prepare(cfg: &Resolved, s: &FitSource) -> Result<Prepared> {
    let inputs = fit_inputs(cfg, &s.model, &s.chain_args, &s.priors)?;
    let data = io::read_data_path(&s.data)?;
    let fitted = match &s.chain {
        None => run_fit(&data, &inputs)?,
        Some(path) => {
            let reference = order_reference(&data.points, inputs.settings.ordering)?;
            let y: Vec<f64> = reference.permutation().iter().map(|&i| data.y[i]).collect();
            let mut chain = io::read_chain_path(path, Arc::new(y))?;
            match &s.latent {
                Some(l) => io::read_latent_path(l, &mut chain, &reference)?,
                None if chain.draws.iter().any(|d| d.tau2.is_some()) => {
                    return Err(CliError::Config("chain was fitted in full mode; pass its --latent file".into()))
                }
                None => {}
            }
            if chain.smoothness != inputs.settings.smoothness {
                info!("using smoothness {} recorded in the chain", chain.smoothness);
            }
            let settings = ModelSettings { smoothness: chain.smoothness, ..inputs.settings };
            FittedModel::from_chain(&data.points, &settings, chain)?
        }
    };
    let (targets, on_data) = match &s.targets {
        Some(p) => (io::read_points_path(p)?, false),
        None => (data.points.clone(), true),
    };
    if targets.dim() != data.points.dim() {
        return Err(NndpError::DimensionMismatch { expected: data.points.dim(), found: targets.dim() }.into());
    }
    Ok(Prepared { data, targets, on_data, fitted })
}

fn sampling(cfg: &Resolved, batch: Option<usize>) -> Result<SamplingOptions> {
    Ok(SamplingOptions { batch: cfg.batch(batch)?, seed: cfg.seed, keep_samples: false })
}

/// Correlation and MSE per direction, with truth projected on each direction.
fn score(field: &GradientField, truth: &[Vec<f64>]) -> Result<Vec<(String, String)>> {
    let mut out = vec![("n".to_string(), field.n_targets().to_string())];
    for (d, dir) in field.directions.iter().enumerate() {
        let est = field.direction_estimates(d);
        let t: Vec<f64> = (0..field.n_targets()).map(|i| dir.as_slice().iter().zip(truth).map(|(u, ax)| u * ax[i]).sum()).collect();
        let label = dir.label();
        out.push((format!("Cor_{label}"), correlation(&est, &t)?.to_string()));
        out.push((format!("MSE_{label}"), mse(&est, &t)?.to_string()));
    }
    Ok(out)
}

fn emit(p: &Prepared, field: &GradientField, outputs: &Outputs, extra: &[(String, String)]) -> Result<()> {
    io::write_gradients_path(&outputs.out, field)?;
    if let Some(path) = &outputs.magnitude {
        io::write_magnitude_path(path, &field.points, &gradient_magnitude(field)?)?;
    }
    let report = match (&p.data.truth, p.on_data) {
        (Some(truth), true) => {
            let mut r = score(field, truth)?;
            r.extend_from_slice(extra);
            Some(r)
        }
        _ => None,
    };
    match (report, &outputs.metrics) {
        (Some(r), Some(path)) => io::write_metrics_path(path, &r)?,
        (Some(r), None) => io::write_metrics(std::io::stdout().lock(), &r)?,
        (None, Some(_)) => warn!("no true gradients for these targets; metrics not written"),
        (None, None) => {}
    }
    Ok(())
}

pub fn grad(cfg: &Resolved, a: &GradCommand) -> Result<()> {
    let p = prepare(cfg, &a.source)?;
    let dirs = cfg.directions(&a.grad.select, p.targets.dim())?;
    let query = GradientQuery::new(p.targets.clone(), dirs)?.with_policy(cfg.policy(&a.grad));
    let start = Instant::now();
    let field = p.fitted.gradients(&query, &sampling(cfg, a.grad.batch)?, cfg.engine(&a.grad)?)?;
    info!("sampled gradients at {} locations in {:.2?}", p.targets.len(), start.elapsed());
    emit(&p, &field, &a.outputs, &[])
}

pub fn fd(cfg: &Resolved, a: &FdCommand) -> Result<()> {
    let p = prepare(cfg, &a.source)?;
    let dirs = cfg.directions(&a.select, p.targets.dim())?;
    let fd_cfg = cfg.fd(&a.fd)?;
    let r = p.fitted.finite_differences(&p.targets, &dirs, &fd_cfg, &sampling(cfg, a.fd.batch)?)?;
    let outside = r.extrapolated.iter().filter(|&&e| e).count();
    let extra = [("step".to_string(), r.step.to_string()), ("extrapolated".to_string(), outside.to_string())];
    emit(&p, &r.field, &a.outputs, &extra)
}

pub fn exact(cfg: &Resolved, a: &ExactCommand) -> Result<()> {
    let cap = cfg.cap(a.cap);
    // Checked before fitting so oversized inputs fail fast.
    let n = io::read_points_path(&a.source.data)?.len();
    if n > cap {
        return Err(NndpError::CapExceeded { n, cap }.into());
    }
    let p = prepare(cfg, &a.source)?;
    let dirs = cfg.directions(&a.select, p.targets.dim())?;
    let field = exact_from_fit(&p.fitted, &p.targets, &dirs, cap)?;
    emit(&p, &field, &a.outputs, &[])
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let rows = io::read_gradients_path(&a.gradients)?;
    let data = io::read_data_path(&a.data)?;
    let truth = data.truth.as_ref().ok_or_else(|| NndpError::schema(1, "dataset has no tg_e* columns"))?;
    let dim = data.points.dim();
    let mut labels: Vec<String> = Vec::new();
    for r in &rows {
        if !labels.contains(&r.direction) {
            labels.push(r.direction.clone());
        }
    }
    let nd = labels.len();
    if rows.len() != data.points.len() * nd {
        return Err(NndpError::LengthMismatch { what: "gradient rows", expected: data.points.len() * nd, found: rows.len() }.into());
    }
    let tol = 1e-6 * data.points.coords().iter().fold(1.0f64, |m, c| m.max(c.abs()));
    for (k, r) in rows.iter().enumerate() {
        let i = k / nd;
        if r.direction != labels[k % nd] || r.point.iter().zip(data.points.point(i)).any(|(a, b)| (a - b).abs() > tol) {
            return Err(NndpError::schema(k as u64 + 2, "gradient rows must follow the dataset order, one row per direction").into());
        }
    }
    let directions: Vec<Direction> = labels.iter().map(|l| Direction::parse(l, dim)).collect::<std::result::Result<_, _>>()?;
    let field = GradientField {
        points: rows.iter().step_by(nd).map(|r| r.point.clone()).collect(),
        directions,
        estimate: rows.iter().map(|r| r.estimate).collect(),
        sd: rows.iter().map(|r| r.sd).collect(),
        n_samples: rows.iter().map(|r| r.n_samples).collect(),
        samples: None,
    };
    let report = score(&field, truth)?;
    match &a.out {
        Some(p) => io::write_metrics_path(p, &report)?,
        None => io::write_metrics(std::io::stdout().lock(), &report)?,
    }
    Ok(())
}

pub fn bench(cfg: &Resolved, a: &BenchArgs) -> Result<()> {
    let f = &cfg.file.bench;
    let sizes = if !a.sizes.is_empty() { a.sizes.clone() } else { f.sizes.clone().unwrap_or_else(|| vec![100, 1600, 10_000, 40_000]) };
    if sizes.iter().any(|&n| n < 4) {
        return Err(CliError::Config("bench sizes must be at least 4".into()));
    }
    let chain = ChainConfig {
        iterations: a.iterations.or(f.iterations).unwrap_or(200),
        burn_in: a.burn_in.or(f.burn_in).unwrap_or(100),
        seed: cfg.seed,
        ..ChainConfig::default()
    };
    chain.validate()?;
    let fd_cfg = FdConfig { scale: a.scale.or(f.scale).unwrap_or(0.5), ..FdConfig::default() };
    fd_cfg.validate()?;
    let opts = SamplingOptions { batch: a.batch.or(cfg.file.gradients.batch).unwrap_or(100), seed: cfg.seed, keep_samples: false };
    let cap = cfg.cap(a.cap);

    let mut rows: Vec<(usize, &str, f64)> = Vec::new();
    for &requested in &sizes {
        let side = (requested as f64).sqrt().round().max(2.0) as usize;
        let spec = PatternSpec { pattern: Pattern::Sinusoid, sampling: Sampling::Grid { mesh: 1.0 / (side - 1) as f64 }, seed: cfg.seed };
        let data = generate(&spec)?;
        let n = data.points.len();
        let start = Instant::now();
        let fitted = fit_model(&data.points, &data.values, None, &ModelSettings::default(), &Priors::default(), &chain)?;
        rows.push((n, "fit", start.elapsed().as_secs_f64()));
        let dirs = Direction::canonical(2);
        let query = GradientQuery::new(data.points.clone(), dirs.clone())?;
        let start = Instant::now();
        fitted.gradients(&query, &opts, Engine::Fast)?;
        rows.push((n, "nndp", start.elapsed().as_secs_f64()));
        let start = Instant::now();
        fitted.finite_differences(&data.points, &dirs, &fd_cfg, &opts)?;
        rows.push((n, "fd", start.elapsed().as_secs_f64()));
        if n <= cap {
            let start = Instant::now();
            exact_from_fit(&fitted, &data.points, &dirs, cap)?;
            rows.push((n, "exact", start.elapsed().as_secs_f64()));
        }
        info!("bench n = {n} done");
    }

    let nndp: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 == "nndp").map(|r| (r.0 as f64, r.2)).collect();
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(NndpError::from)?),
        None => Box::new(std::io::stdout().lock()),
    };
    write_bench(&mut out, &rows, &nndp).map_err(NndpError::from)?;
    Ok(())
}

fn write_bench(out: &mut dyn Write, rows: &[(usize, &str, f64)], nndp: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "n,method,seconds")?;
    for (n, m, s) in rows {
        writeln!(out, "{n},{m},{s:.6}")?;
    }
    if let Some(slope) = slope(nndp) {
        writeln!(out, "# nndp_slope_seconds_per_site={slope:.6e}")?;
    }
    if let [.., (n0, t0), (n1, t1)] = nndp {
        writeln!(out, "# nndp_ratio_{}_{}={:.4}", *n1 as usize, *n0 as usize, t1 / t0)?;
    }
    let faster = rows.iter().filter(|r| r.1 == "nndp").all(|r| rows.iter().any(|q| q.0 == r.0 && q.1 == "fd" && r.2 < q.2));
    writeln!(out, "# nndp_faster_than_fd={faster}")?;
    Ok(())
}

/// Least-squares slope of `y` on `x`.
fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let table = io::ingest(std::fs::File::open(&a.input).map_err(NndpError::from)?, &a.coords, &a.value)?;
    io::write_data_path(&a.out, &table.points, &table.y, None)?;
    info!("ingested {} rows from {}", table.y.len(), a.input.display());
    Ok(())
}
