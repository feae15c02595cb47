//! One function per experiment kind. Each writes its CSVs and images into
//! the output directory and reports what it read and what went wrong.

use crate::acceptance;
use crate::config::{DenoiserKind, Experiment, OperatorKind, RunConfig, Target, BUILTIN_GRID_MLP};
use crate::csv_row;
use crate::image::{read_image, write_image};
use crate::table::Table;
use crate::workers::par_runs;
use anyhow::{anyhow, bail, ensure, Context, Result};
use fastcs_core::datasets::{grid_dataset, sample_grid, two_region_scene, THICK_GRID, THIN_GRID};
use fastcs_core::denoiser::{train_mlp_denoiser, TrainConfig};
use fastcs_core::diagnostics::{
    direction_compare_experiment, jacobian_symmetry_probe, psnr, CompareConfig, PSNR_CAP_DB,
};
use fastcs_core::operators::{make_freeform_mask, synthesize_measurement};
use fastcs_core::sampler::{ddim_sample, warm_restart_sample};
use fastcs_core::{
    Denoiser, GmmDenoiser, GmmPrior, LinearDenoiser, Measurement, MeasurementOp, MlpDenoiser, NoiseSchedule, RngState,
    SpdMatrix, Tensor,
};
use std::path::{Path, PathBuf};

/// Largest `|J_ab - J_ba|` a GMM denoiser may show in a probe.
pub const GMM_SYMMETRY_TOL: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Report {
    /// Human-readable summary lines.
    pub lines: Vec<String>,
    /// Invariant violations or failed criteria; any entry means a nonzero
    /// exit.
    pub failures: Vec<String>,
    /// Files read, hashed into the manifest.
    pub inputs: Vec<PathBuf>,
}

type Den = Box<dyn Denoiser<f64> + Send + Sync>;

struct Built {
    den: Den,
    prior: Option<GmmPrior>,
}

fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    let s = &cfg.schedule;
    NoiseSchedule::linear(s.t_max, s.beta_min, s.beta_max, 1.0).context("building the noise schedule")
}

fn spd(n: usize, full: &[f64], what: &str) -> Result<SpdMatrix> {
    ensure!(
        full.len() == n * n,
        "{what}: expected {} entries for a {n}x{n} matrix, got {}",
        n * n,
        full.len()
    );
    SpdMatrix::from_full(n, full).with_context(|| format!("{what} is not symmetric positive definite"))
}

fn build_denoiser(cfg: &RunConfig, sched: &NoiseSchedule, report: &mut Report) -> Result<Built> {
    let prior = match &cfg.denoiser.kind {
        DenoiserKind::Gaussian { mean, covariance } => Some(GmmPrior::gaussian(
            mean.clone(),
            spd(mean.len(), covariance, "denoiser.covariance")?,
        )?),
        DenoiserKind::Gmm {
            weights,
            means,
            covariances,
        } => {
            ensure!(
                means.len() == weights.len() && covariances.len() == weights.len(),
                "denoiser: {} weights, {} means and {} covariances must agree",
                weights.len(),
                means.len(),
                covariances.len()
            );
            let d = means.first().map_or(0, Vec::len);
            let covs = covariances
                .iter()
                .map(|c| spd(d, c, "denoiser.covariances"))
                .collect::<Result<_>>()?;
            Some(GmmPrior::new(weights.clone(), means.clone(), covs)?)
        }
        DenoiserKind::GmmRandom {
            dim,
            components,
            prior_seed,
        } => Some(GmmPrior::random(&mut RngState::new(*prior_seed), *dim, *components)?),
        _ => None,
    };
    let den: Den = match (&cfg.denoiser.kind, &prior) {
        (_, Some(p)) => Box::new(GmmDenoiser::new(p.clone(), sched)),
        (DenoiserKind::Mlp { path }, None) => {
            let mlp = if path == BUILTIN_GRID_MLP {
                fastcs_core::fixtures::grid_mlp()?
            } else {
                let p = PathBuf::from(path);
                let bytes = std::fs::read(&p).with_context(|| format!("reading denoiser {path}"))?;
                report.inputs.push(p);
                MlpDenoiser::from_bytes(&bytes).with_context(|| format!("loading denoiser {path}"))?
            };
            let same = mlp.alpha_bars().len() == sched.alpha_bars().len()
                && mlp
                    .alpha_bars()
                    .iter()
                    .zip(sched.alpha_bars())
                    .all(|(a, b)| (a - b).abs() <= 1e-12);
            ensure!(
                same,
                "denoiser {path} was trained on a different noise schedule than [schedule]"
            );
            Box::new(mlp)
        }
        (DenoiserKind::Linear { matrix }, None) => {
            let d = (matrix.len() as f64).sqrt().round() as usize;
            ensure!(
                d * d == matrix.len(),
                "denoiser.matrix has {} entries, not a square",
                matrix.len()
            );
            Box::new(LinearDenoiser::new(Tensor::matrix(d, d, matrix.clone())?, None)?)
        }
        _ => unreachable!("prior kinds are handled above"),
    };
    let n: usize = cfg.denoiser.shape.iter().product();
    ensure!(
        den.dim() == n,
        "denoiser has dimension {} but denoiser.shape {:?} holds {n}",
        den.dim(),
        cfg.denoiser.shape
    );
    Ok(Built { den, prior })
}

fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [h, w] => Ok((*h, *w)),
        _ => bail!("{what} needs a 2-D denoiser.shape, got {shape:?}"),
    }
}

/// Ground truth for one run.
fn draw_target(
    target: &Target,
    built: &Built,
    shape: &[usize],
    file: Option<&Tensor>,
    rng: &mut RngState,
) -> Result<Tensor> {
    let x = match target {
        Target::Prior => built
            .prior
            .as_ref()
            .ok_or_else(|| anyhow!("target \"prior\" needs a Gaussian or GMM denoiser"))?
            .sample(rng),
        Target::Grid => {
            let (h, w) = image_dims(shape, "target \"grid\"")?;
            sample_grid(rng, h, w)
        }
        Target::Image(_) => file.expect("image targets are loaded up front").clone(),
    };
    Ok(x.flatten().reshape(shape)?)
}

fn load_target(target: &Target, shape: &[usize], report: &mut Report) -> Result<Option<Tensor>> {
    let Target::Image(path) = target else { return Ok(None) };
    let p = PathBuf::from(path);
    let img = read_image(&p).with_context(|| format!("reading target image {path}"))?;
    report.inputs.push(p);
    let n: usize = shape.iter().product();
    ensure!(
        img.len() == n,
        "target image {path} has shape {:?}, denoiser.shape is {shape:?}",
        img.shape()
    );
    Ok(Some(img.flatten().reshape(shape)?))
}

fn save_if_image(out: &Path, name: &str, x: &Tensor) -> Result<()> {
    if let [_, _] | [_, _, 3] = x.shape() {
        write_image(&out.join(name), x)?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<Report> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    log::info!("{} with seed {} into {}", cfg.experiment, cfg.seed, out.display());
    match cfg.experiment {
        Experiment::Sample => sample(cfg, out),
        Experiment::Invert => invert(cfg, out),
        Experiment::Layers => layers(cfg, out),
        Experiment::JacobianProbe => probe(cfg, out),
        Experiment::DirectionCompare => compare(cfg, out),
        Experiment::TrainDenoiser => train(cfg, out),
        Experiment::Acceptance => run_acceptance(cfg, out),
    }
    .with_context(|| format!("experiment {}", cfg.experiment))
}

fn sample(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let sched = schedule(cfg)?;
    let built = build_denoiser(cfg, &sched, &mut report)?;
    let shape = &cfg.denoiser.shape;
    let samples = par_runs(cfg.runs, |run| {
        let mut rng = RngState::substream(cfg.seed, run as u64);
        Ok(ddim_sample(
            built.den.as_ref(),
            &sched,
            shape,
            cfg.sampler.steps,
            cfg.sampler.eta,
            &mut rng,
        )?)
    })?;
    let mut table = Table::new(&["run", "index", "value"]);
    for (run, x) in samples.iter().enumerate() {
        for (i, &v) in x.as_slice().iter().enumerate() {
            table.push(csv_row![run, i, v]);
        }
        save_if_image(out, &format!("sample_{run:03}.pgm"), x)?;
    }
    table.write(&out.join("samples.csv"))?;
    let all: Vec<f64> = samples.iter().flat_map(|x| x.as_slice().iter().copied()).collect();
    let (mean, std) = acceptance::mean_std(&all);
    report.lines.push(format!(
        "{} samples, pooled value mean {mean:.4} std {std:.4}",
        samples.len()
    ));
    Ok(report)
}

fn build_operator(cfg: &RunConfig, rng: &mut RngState) -> Result<MeasurementOp> {
    let shape = &cfg.denoiser.shape;
    Ok(match &cfg.operator.kind {
        OperatorKind::Identity => MeasurementOp::identity(shape)?,
        OperatorKind::Mask { indices } => MeasurementOp::mask(shape, indices)?,
        OperatorKind::Inpaint { indices } => MeasurementOp::inpainting(shape, indices)?,
        OperatorKind::Freeform { coverage } => {
            let (h, w) = image_dims(shape, "operator \"freeform\"")?;
            MeasurementOp::inpainting(shape, &make_freeform_mask(rng, h, w, *coverage)?)?
        }
        OperatorKind::Downsample { factor } => {
            let (h, w) = image_dims(shape, "operator \"downsample\"")?;
            MeasurementOp::downsample(h, w, *factor)?
        }
    })
}

struct InvertRun {
    x: Tensor,
    target: Tensor,
    observed: Tensor,
    residual: f64,
    rms_residual: f64,
    psnr_db: f64,
    trace: fastcs_core::RunTrace,
}

fn invert(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let sched = schedule(cfg)?;
    let built = build_denoiser(cfg, &sched, &mut report)?;
    let shape = cfg.denoiser.shape.clone();
    let file_target = load_target(&cfg.operator.target, &shape, &mut report)?;
    let scfg = cfg.sampler.to_sampler_config();
    let runs = par_runs(cfg.runs, |run| {
        let mut rng = RngState::substream(cfg.seed, run as u64);
        let op = build_operator(cfg, &mut rng)?;
        let target = draw_target(&cfg.operator.target, &built, &shape, file_target.as_ref(), &mut rng)?;
        let meas = match &cfg.operator.values {
            Some(v) => Measurement::new(op, Tensor::from_vec(v.clone()), cfg.operator.noise_std)?,
            None => synthesize_measurement(&op, &target, cfg.operator.noise_std, &mut rng)?,
        };
        let (x, trace) = warm_restart_sample(built.den.as_ref(), &sched, &meas, &scfg, &mut rng)?;
        let residual = meas.residual(&x)?;
        Ok(InvertRun {
            observed: meas.op.adjoint(&meas.y)?,
            rms_residual: residual / (meas.y.len() as f64).sqrt(),
            psnr_db: psnr(&x, &target, 2.0)?,
            residual,
            x,
            target,
            trace,
        })
    })?;
    let mut metrics = Table::new(&[
        "run",
        "residual",
        "rms_residual",
        "psnr_db",
        "final_cost",
        "forwards",
        "vjps",
    ]);
    let mut trace_table = Table::new(&[
        "run",
        "round",
        "t",
        "inner_iter",
        "cost",
        "err_norm",
        "forwards",
        "vjps",
    ]);
    let mut estimates = Table::new(&["run", "index", "value"]);
    for (i, r) in runs.iter().enumerate() {
        for (k, &v) in r.x.as_slice().iter().enumerate() {
            estimates.push(csv_row![i, k, v]);
        }
        metrics.push(csv_row![
            i,
            r.residual,
            r.rms_residual,
            r.psnr_db,
            r.trace.final_cost().unwrap_or(f64::NAN),
            r.trace.totals.forwards,
            r.trace.totals.vjps
        ]);
        for row in &r.trace.rows {
            trace_table.push(csv_row![
                i,
                row.round,
                row.t,
                row.inner_iter,
                row.cost,
                row.err_norm,
                row.forwards,
                row.vjps
            ]);
        }
        if let Err(e) = r.trace.verify_call_accounting() {
            report.failures.push(format!("run {i}: call accounting: {e}"));
        }
        if !r.x.is_finite() {
            report.failures.push(format!("run {i}: non-finite sample"));
        }
        save_if_image(out, &format!("run{i:03}_target.pgm"), &r.target)?;
        save_if_image(out, &format!("run{i:03}_observed.pgm"), &r.observed)?;
        save_if_image(out, &format!("run{i:03}_estimate.pgm"), &r.x)?;
    }
    metrics.write(&out.join("metrics.csv"))?;
    trace_table.write(&out.join("trace.csv"))?;
    estimates.write(&out.join("estimates.csv"))?;
    let rms: Vec<f64> = runs.iter().map(|r| r.rms_residual).collect();
    let ps: Vec<f64> = runs.iter().map(|r| r.psnr_db).collect();
    report.lines.push(format!(
        "{} runs, median RMS residual {:.4}, median PSNR {:.2} dB (cap {PSNR_CAP_DB})",
        runs.len(),
        acceptance::median(&rms),
        acceptance::median(&ps)
    ));
    Ok(report)
}

fn layers(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let sched = schedule(cfg)?;
    let l = &cfg.layers;
    let scene = two_region_scene::<f64>(l.height, l.width, l.levels, l.split, l.prior_std)?;
    let (input, truth_mask) = if l.input == "scene" {
        (scene.image.clone(), Some(scene.mask.clone()))
    } else {
        let p = PathBuf::from(&l.input);
        let img = read_image(&p).with_context(|| format!("reading layers.input {}", l.input))?;
        report.inputs.push(p);
        ensure!(
            img.shape() == [l.height, l.width],
            "layers.input has shape {:?}, expected [{}, {}] grayscale",
            img.shape(),
            l.height,
            l.width
        );
        (img, None)
    };
    let den1 = GmmDenoiser::new(scene.prior1.clone(), &sched);
    let den2 = GmmDenoiser::new(scene.prior2.clone(), &sched);
    let flat = input.clone().flatten();
    let mut rng = RngState::substream(cfg.seed, 0);
    let res = fastcs_core::layers::infer_layers(&den1, &den2, &sched, &flat, &l.to_layer_config(), &mut rng)?;
    let hw = [l.height, l.width];
    let p = psnr(&res.reconstruction()?, &flat, 2.0)?;
    let accuracy = truth_mask.as_ref().map_or(f64::NAN, |t| {
        let hits = res
            .mask
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .filter(|(&m, &t)| (m >= 0.5) == (t == 1.0))
            .count();
        hits as f64 / t.len() as f64
    });
    let mut rounds = Table::new(&["iteration", "blend_rms", "mask_mean"]);
    for r in &res.rounds {
        rounds.push(csv_row![r.iteration, r.blend_rms, r.mask_mean]);
    }
    rounds.write(&out.join("rounds.csv"))?;
    let mut metrics = Table::new(&["psnr_db", "mask_accuracy", "blend_rms"]);
    metrics.push(csv_row![p, accuracy, res.blend_rms]);
    metrics.write(&out.join("metrics.csv"))?;
    write_image(&out.join("input.pgm"), &input)?;
    write_image(&out.join("layer1.pgm"), &res.layer1.clone().reshape(&hw)?)?;
    write_image(&out.join("layer2.pgm"), &res.layer2.clone().reshape(&hw)?)?;
    // the mask is in [0, 1]; stretch it to the full gray range
    write_image(
        &out.join("mask.pgm"),
        &res.mask.clone().reshape(&hw)?.map(|m| 2.0 * m - 1.0),
    )?;
    write_image(&out.join("reconstruction.pgm"), &res.reconstruction()?.reshape(&hw)?)?;
    report.lines.push(format!(
        "PSNR {p:.2} dB, mask accuracy {accuracy:.3}, blend RMS {:.4}",
        res.blend_rms
    ));
    Ok(report)
}

fn probe(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let sched = schedule(cfg)?;
    let built = build_denoiser(cfg, &sched, &mut report)?;
    let shape = cfg.denoiser.shape.clone();
    let file_target = load_target(&cfg.probe.target, &shape, &mut report)?;
    let results = par_runs(cfg.probe.timesteps.len(), |i| {
        let t = cfg.probe.timesteps[i];
        let mut rng = RngState::substream(cfg.seed, i as u64);
        let x0 = draw_target(&cfg.probe.target, &built, &shape, file_target.as_ref(), &mut rng)?;
        let x_t = sched.forward_noise(&x0, t, &mut rng)?;
        Ok(jacobian_symmetry_probe(
            built.den.as_ref(),
            &x_t,
            t,
            cfg.probe.pairs,
            &mut rng,
        )?)
    })?;
    let mut scatter = Table::new(&["t", "a", "b", "j_ab", "j_ba"]);
    let mut summary = Table::new(&["t", "max_pair_gap", "asymmetry_score"]);
    let is_gmm = built.prior.is_some();
    for r in &results {
        for p in &r.pairs {
            scatter.push(csv_row![r.t, p.a, p.b, p.j_ab, p.j_ba]);
        }
        let gap = r.max_pair_gap();
        summary.push(csv_row![r.t, gap, r.asymmetry_score]);
        report.lines.push(format!(
            "t={:>4}  max |J_ab - J_ba| {gap:.3e}  asymmetry {:.3e}",
            r.t, r.asymmetry_score
        ));
        if is_gmm && !(gap <= GMM_SYMMETRY_TOL) {
            report.failures.push(format!(
                "t={}: GMM Jacobian pair gap {gap:.3e} exceeds {GMM_SYMMETRY_TOL:e}",
                r.t
            ));
        }
    }
    scatter.write(&out.join("scatter.csv"))?;
    summary.write(&out.join("summary.csv"))?;
    Ok(report)
}

fn compare(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let sched = schedule(cfg)?;
    let built = build_denoiser(cfg, &sched, &mut report)?;
    let (height, width) = image_dims(&cfg.denoiser.shape, "direction-compare")?;
    let c = &cfg.compare;
    let ccfg = CompareConfig {
        height,
        width,
        texture: if c.texture == "thick" { THICK_GRID } else { THIN_GRID },
        t: c.t,
        updates: c.updates,
        lambda: c.lambda,
        blur: c.blur,
        patch: c.patch,
        patch_value: c.patch_value,
        delta: c.delta,
    };
    let mut rng = RngState::substream(cfg.seed, 0);
    let res = direction_compare_experiment(built.den.as_ref(), &sched, &ccfg, &mut rng)?;
    let mut costs = Table::new(&["step", "cost_newton", "cost_backprop", "cosine"]);
    for (i, (cn, cb)) in res.cost_newton.iter().zip(&res.cost_backprop).enumerate() {
        costs.push(csv_row![i, *cn, *cb, res.cosine.get(i).copied().unwrap_or(f64::NAN)]);
    }
    costs.write(&out.join("costs.csv"))?;
    let hw = [height, width];
    write_image(&out.join("initial.pgm"), &res.initial.clone().reshape(&hw)?)?;
    write_image(&out.join("x_t.pgm"), &res.x_t.clone().reshape(&hw)?)?;
    write_image(&out.join("final_newton.pgm"), &res.final_newton.clone().reshape(&hw)?)?;
    write_image(
        &out.join("final_backprop.pgm"),
        &res.final_backprop.clone().reshape(&hw)?,
    )?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    report.lines.push(format!(
        "final patch cost: newton {:.4e}, backprop {:.4e}; mean cosine {:.3}",
        last(&res.cost_newton),
        last(&res.cost_backprop),
        acceptance::mean_std(&res.cosine).0
    ));
    Ok(report)
}

fn train(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let sched = schedule(cfg)?;
    let t = &cfg.train;
    let mut rng = RngState::substream(cfg.seed, 0);
    let data = grid_dataset::<f64>(&mut rng, t.dataset, t.height, t.width)
        .into_iter()
        .map(Tensor::flatten)
        .collect::<Vec<_>>();
    let tcfg = TrainConfig {
        hidden: t.hidden.clone(),
        steps: t.steps,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        held_out_fraction: t.held_out_fraction,
        loss_threshold: t.loss_threshold,
        log_every: t.log_every,
        ..TrainConfig::default()
    };
    let (model, tr) = train_mlp_denoiser(&data, &sched, &tcfg, &mut rng)?;
    std::fs::write(out.join("model.bin"), model.to_bytes()).context("writing model.bin")?;
    let mut losses = Table::new(&["step", "loss"]);
    for &(step, loss) in &tr.losses {
        losses.push(csv_row![step, loss]);
    }
    losses.write(&out.join("losses.csv"))?;
    let mut metrics = Table::new(&["held_out_loss", "train_size", "held_out_size", "parameters"]);
    metrics.push(csv_row![
        tr.held_out_loss,
        tr.train_size,
        tr.held_out_size,
        model.parameter_count()
    ]);
    metrics.write(&out.join("metrics.csv"))?;
    report.lines.push(format!(
        "trained {} parameters on {} images, held-out loss {:.5}",
        model.parameter_count(),
        tr.train_size,
        tr.held_out_loss
    ));
    Ok(report)
}

fn run_acceptance(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let mut report = Report::default();
    let outcomes = acceptance::run_suite(cfg.seed, out, &cfg.criteria, |o| println!("{}", o.line()))?;
    for o in &outcomes {
        report.lines.push(o.line());
        if !o.passed() {
            report.failures.push(format!("criterion {} failed", o.id));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn run_text(text: &str) -> (Report, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(text, None).unwrap();
        (run(&cfg, dir.path()).unwrap(), dir)
    }

    #[test]
    fn gmm_probe_scatter_lies_on_the_diagonal() {
        let (report, dir) = run_text("experiment = \"jacobian-probe\"\n[probe]\npairs = 20\n");
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let text = std::fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
        let mut rows = 0;
        for line in text.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            assert!((v[3] - v[4]).abs() <= GMM_SYMMETRY_TOL);
            rows += 1;
        }
        assert_eq!(rows, 60);
    }

    #[test]
    fn invert_on_correlated_gaussian_writes_metrics() {
        let (report, dir) = run_text("experiment = \"invert\"\nruns = 3\n[sampler]\nsteps = 20\n");
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with("run,residual,rms_residual,psnr_db,"));
        assert_eq!(text.lines().count(), 4);
        assert!(dir.path().join("trace.csv").exists());
    }

    #[test]
    fn sample_and_linear_denoiser() {
        let (_, dir) = run_text(
            "experiment = \"sample\"\nruns = 2\n[denoiser]\nkind = \"linear\"\nmatrix = [0.5, 0.0, 0.0, 0.5]\nshape = [1, 2]\n[sampler]\nsteps = 5\n",
        );
        assert!(dir.path().join("sample_001.pgm").exists());
        assert_eq!(
            std::fs::read_to_string(dir.path().join("samples.csv"))
                .unwrap()
                .lines()
                .count(),
            5
        );
    }

    #[test]
    fn invalid_prior_is_reported() {
        let cfg = parse_config(
            "experiment = \"sample\"\n[denoiser]\nkind = \"gaussian\"\nmean = [0.0, 0.0]\ncovariance = [1.0, 2.0, 2.0, 1.0]\n",
            None,
        )
        .unwrap();
        let err = run(&cfg, tempfile::tempdir().unwrap().path()).unwrap_err();
        assert!(format!("{err:#}").contains("positive definite"), "{err:#}");
    }
}
