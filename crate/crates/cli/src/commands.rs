//! One function per subcommand. Each writes into the run's output directory.

use std::io::Write;

use rfscore::covariance::{empirical_uv, gep_u};
use rfscore::dynamics::{
    analytic_train_error, closed_form_readout, gaussian_projection, gd_curves_instance, log_grid, semi_analytic_instance, train_gd,
    ErrorCurves, GdSettings, TimeExtraction,
};
use rfscore::gep::coeffs_vector;
use rfscore::gmm::{forward_noise, realize_centroids, sample_dataset};
use rfscore::histogram::sample_tv_distance;
use rfscore::linalg::{sym_eigh, sym_eigvals};
use rfscore::memgap::{gaps_from_curves, pair_curves, read_descriptors, write_gap_csv, MemgapConfig};
use rfscore::seed::child_rng;
use rfscore::speciation::{speciation_sweep, SpeciationConfig};
use rfscore::spectral::{histogram_tv, solve_edges, solve_grid, window_sweep, SpectralParams, SpectralSolution};
use rfscore::{DiffusionClock, MixtureSpec, QuadratureRule};
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::RunContext;

fn spec(ctx: &RunContext) -> Result<MixtureSpec, CliError> {
    let m = &ctx.config.mixture;
    Ok(MixtureSpec::orthogonal(m.n, m.weights.clone(), m.variances.clone(), &m.centroid_norms_sq)?)
}

fn rule(ctx: &RunContext) -> Result<QuadratureRule, CliError> {
    Ok(QuadratureRule::new(ctx.config.model.quadrature_order)?)
}

fn clock(ctx: &RunContext) -> Result<DiffusionClock, CliError> {
    Ok(DiffusionClock::new(ctx.config.clock.t)?)
}

fn tau_grid(ctx: &RunContext) -> Vec<f64> {
    let t = &ctx.config.training;
    log_grid(t.tau_min, t.tau_max, t.tau_points)
}

fn time_options(ctx: &RunContext) -> TimeExtraction {
    TimeExtraction {
        smoothing: ctx.config.training.smoothing,
        threshold: ctx.config.training.threshold,
    }
}

fn spectral_params(ctx: &RunContext) -> Result<SpectralParams, CliError> {
    let c = &ctx.config;
    Ok(SpectralParams::for_mixture(
        c.spectral.chi_p,
        c.spectral.chi_m,
        &c.mixture.weights,
        &c.mixture.variances,
        c.clock.t,
        c.model.activation,
        &rule(ctx)?,
    )?)
}

fn solve_spectrum(ctx: &mut RunContext) -> Result<(SpectralParams, SpectralSolution), CliError> {
    let params = spectral_params(ctx)?;
    let grid = ctx.config.spectral.grid();
    let options = ctx.config.spectral.options();
    let solution = solve_grid(&params, &grid, &options)?;
    solution.write_csv(ctx.output("spectrum.csv"))?;
    ctx.diagnostics.extend(solution.diagnostics.iter().cloned());
    #[derive(Serialize)]
    struct Summary<'a> {
        bulks: &'a [rfscore::spectral::Bulk],
        point_mass: rfscore::spectral::PointMass,
        continuous_mass: f64,
        total_mass: f64,
        missing_points: usize,
    }
    let summary = Summary {
        bulks: &solution.bulks,
        point_mass: solution.point_mass,
        continuous_mass: solution.continuous_mass(),
        total_mass: solution.total_mass(),
        missing_points: solution.n_missing(),
    };
    ctx.write_text("spectrum.json", &serde_json::to_string_pretty(&summary)?)?;
    Ok((params, solution))
}

pub fn spectrum(ctx: &mut RunContext) -> Result<(), CliError> {
    let (params, solution) = solve_spectrum(ctx)?;
    if ctx.config.mixture.centroid_norms_sq.iter().all(|&x| x == 0.0) {
        let tau = tau_grid(ctx);
        let train = analytic_train_error(&solution, &params, &tau)?;
        let mut text = String::from("tau,e_train\n");
        for (t, e) in tau.iter().zip(&train) {
            text.push_str(&format!("{t:.16e},{e:.16e}\n"));
        }
        ctx.write_text("analytic_train.csv", &text)?;
    }
    Ok(())
}

pub fn edges(ctx: &mut RunContext) -> Result<(), CliError> {
    let (params, solution) = solve_spectrum(ctx)?;
    let summary = solve_edges(&params, &solution, &ctx.config.spectral.options())?;
    ctx.diagnostics.extend(summary.diagnostics.iter().cloned());
    ctx.write_text("edges.json", &summary.to_json()?)?;
    Ok(())
}

pub fn windows(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.clone();
    let rule = rule(ctx)?;
    let grid = c.spectral.grid();
    let options = c.spectral.options();
    let mut rows = Vec::new();
    for &v in &c.windows.ratios {
        for &b1 in &c.windows.b1 {
            let inputs = (&c.spectral, &c.clock, &c.model, c.windows.sigma1_sq, v, b1);
            let row = ctx.cell(&format!("window_v{v}_b{b1}"), &inputs, || {
                Ok(window_sweep(c.spectral.chi_p, c.spectral.chi_m, c.windows.sigma1_sq, c.clock.t, &[v], &[b1], c.model.activation, &rule, &grid, &options)?.remove(0))
            })?;
            rows.push(row);
        }
    }
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let mut text = String::from("v,b1,w_g,w_m,merged\n");
    for r in &rows {
        text.push_str(&format!("{},{},{},{},{}\n", r.v, r.b1, opt(r.w_g), opt(r.w_m), r.merged));
    }
    ctx.write_text("windows.csv", &text)
}

fn write_curves(ctx: &mut RunContext, prefix: &str, runs: &[ErrorCurves]) -> Result<(), CliError> {
    for (i, run) in runs.iter().enumerate() {
        run.write_csv(ctx.output(&format!("{prefix}_run{i}.csv")))?;
    }
    let avg = ErrorCurves::average(runs)?;
    avg.write_csv(ctx.output(&format!("{prefix}.csv")))?;
    let times = avg.class_times(&time_options(ctx))?;
    ctx.write_text(&format!("{prefix}_times.json"), &serde_json::to_string_pretty(&times)?)?;
    Ok(())
}

pub fn train(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.clone();
    let spec = spec(ctx)?;
    let clock = clock(ctx)?;
    let tau = tau_grid(ctx);
    let settings = GdSettings {
        eta_factor: c.training.eta_factor,
        n_noise_draws: c.training.n_noise_draws,
        n_eval: c.training.n_eval,
    };
    ctx.stream("train");
    let mut runs = Vec::with_capacity(c.training.runs);
    for run in 0..c.training.runs {
        let inputs = (&c.mixture, &c.model, &c.clock, &c.training, c.seed, run);
        let curves = ctx.cell(&format!("train_run{run}"), &inputs, || {
            let mut rng = child_rng(c.seed, run as u64, "train");
            Ok(gd_curves_instance(&spec, c.model.p, c.model.m, &clock, c.model.activation, &tau, &settings, &mut rng)?)
        })?;
        runs.push(curves);
    }
    write_curves(ctx, "train_curves", &runs)
}

pub fn theory_curves(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.clone();
    let spec = spec(ctx)?;
    let clock = clock(ctx)?;
    let rule = rule(ctx)?;
    let tau = tau_grid(ctx);
    ctx.stream("theory");
    let mut runs = Vec::with_capacity(c.training.runs);
    for run in 0..c.training.runs {
        let inputs = (&c.mixture, &c.model, &c.clock, &c.training, c.seed, run);
        let curves = ctx.cell(&format!("theory_run{run}"), &inputs, || {
            let mut rng = child_rng(c.seed, run as u64, "theory");
            Ok(semi_analytic_instance(&spec, c.model.p, c.model.m, &clock, c.model.activation, &rule, &mut rng)?.curves(&tau))
        })?;
        runs.push(curves);
    }
    write_curves(ctx, "theory_curves", &runs)
}

pub fn speciation(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.clone();
    let s = &c.speciation;
    let config = SpeciationConfig {
        variances: s.variances.clone(),
        norm_exponents: s.norm_exponents.clone(),
        m: s.m,
        n_runs: s.runs,
        t_tilde: s.t_tilde.clone(),
        k: (s.k > 0).then_some(s.k),
        covariance: s.covariance,
        activation: c.model.activation,
        quadrature_order: c.model.quadrature_order,
        seed: c.seed,
    };
    ctx.stream("speciation");
    for (i, &(n, p)) in s.sizes.iter().enumerate() {
        // Seeds depend on the position in the size list, so each size is its own cell.
        let inputs = (&config, &s.imbalance, &s.sizes[..=i]);
        let curve = ctx.cell(&format!("speciation_n{n}_p{p}"), &inputs, || {
            let mut curves = speciation_sweep(&config, &s.sizes[..=i], &s.imbalance)?;
            Ok(curves.pop().expect("one curve per size"))
        })?;
        ctx.diagnostics.extend(curve.flags.iter().map(|f| format!("N={n}: {f}")));
        curve.write_csv(ctx.output(&format!("speciation_n{n}_p{p}.csv")))?;
        ctx.write_text(&format!("speciation_n{n}_p{p}.json"), &curve.sidecar_json()?)?;
    }
    Ok(())
}

pub fn memgap(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.clone();
    let g = &c.memgap;
    let descriptors = read_descriptors(&g.descriptors)?;
    let config = MemgapConfig {
        n: g.n,
        p: g.p,
        m: g.m,
        t: c.clock.t,
        n_runs: g.runs,
        tau_min: g.tau_min,
        tau_max: g.tau_max,
        tau_points: g.tau_points,
        smoothing: c.training.smoothing,
        activation: c.model.activation,
        quadrature_order: c.model.quadrature_order,
        seed: c.seed,
    };
    let rule = rule(ctx)?;
    ctx.stream("memgap");
    let mut rows = Vec::new();
    for d in &descriptors {
        for &b in &g.b_grid {
            let spec = d.mixture(g.n, b)?;
            let curves = ctx.cell(&format!("memgap_{}_b{b}", d.pair_id), &(&spec, &config), || Ok(pair_curves(&spec, &config, &rule)?))?;
            rows.extend(gaps_from_curves(&d.pair_id, b, &curves, &g.thresholds, config.smoothing)?);
        }
    }
    write_gap_csv(&rows, ctx.output("memgap.csv"))?;
    Ok(())
}

pub fn sample(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.clone();
    let spec = spec(ctx)?;
    let clock = clock(ctx)?;
    ctx.stream("sample");
    let mut rng = child_rng(c.seed, 0, "sample");
    let centroids = realize_centroids(&spec, &mut rng)?;
    let data = sample_dataset(&spec, &centroids, c.sample.count, &mut rng)?;
    let write_rows = |rows: &mut dyn Iterator<Item = (usize, Vec<f64>)>, path: std::path::PathBuf| -> Result<(), CliError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| CliError::Io(path.display().to_string(), e))?);
        let header: Vec<String> = (0..spec.dim).map(|j| format!("x{j}")).collect();
        let io = |e| CliError::Io(path.display().to_string(), e);
        writeln!(out, "class,{}", header.join(",")).map_err(io)?;
        for (label, x) in rows {
            let vals: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{label},{}", vals.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    };
    let clean: Vec<(usize, Vec<f64>)> = data.labels.iter().zip(data.samples.rows()).map(|(&l, r)| (l, r.to_vec())).collect();
    write_rows(&mut clean.clone().into_iter(), ctx.output("samples.csv"))?;
    let cen: Vec<(usize, Vec<f64>)> = centroids.rows().into_iter().enumerate().map(|(c, r)| (c, r.to_vec())).collect();
    write_rows(&mut cen.into_iter(), ctx.output("centroids.csv"))?;
    if c.sample.noised {
        let noised: Vec<(usize, Vec<f64>)> = clean
            .iter()
            .map(|(l, x)| (*l, forward_noise(ndarray::ArrayView1::from(x.as_slice()), &clock, &mut rng).0.to_vec()))
            .collect();
        write_rows(&mut noised.into_iter(), ctx.output("samples_noised.csv"))?;
    }
    Ok(())
}

/// Result of one oracle check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Small-size versions of the main oracles.
pub fn validate(ctx: &mut RunContext) -> Result<(), CliError> {
    let seed = ctx.config.seed;
    ctx.stream("validate");
    let rule = QuadratureRule::new(100)?;
    let clock = DiffusionClock::new(0.01)?;
    let act = ctx.config.model.activation;
    let mut checks = Vec::new();

    // Closed-form gradient flow against explicit gradient descent.
    {
        let (n, p, m) = (20, 60, 40);
        let mut rng = child_rng(seed, 0, "validate");
        let spec = MixtureSpec::orthogonal(n, vec![0.5, 0.5], vec![0.5, 0.25], &[1.0, 1.0])?;
        let cen = realize_centroids(&spec, &mut rng)?;
        let data = sample_dataset(&spec, &cen, m, &mut rng)?;
        let w = gaussian_projection(p, n, &mut rng);
        let est = empirical_uv(&data, &w, &spec.weights, &clock, act, 20, &mut rng)?;
        let (u, v) = (est.u.u, est.v.v);
        let eta = 5e-5 * n as f64 / clock.delta();
        let eta_tilde = eta * clock.delta() / n as f64;
        let steps: Vec<u64> = log_grid(10.0, 2e5, 8).iter().map(|s| s.round() as u64).collect();
        let snaps = train_gd(&u, &v, &clock, eta, &steps)?;
        let eig = sym_eigh(&u.view())?;
        let mut worst: f64 = 0.0;
        for s in &snaps {
            let a = closed_form_readout(&eig, &v, &clock, s.step as f64 * eta_tilde)?;
            let diff = (&a - &s.a).mapv(|x| x * x).sum().sqrt() / s.a.mapv(|x| x * x).sum().sqrt().max(1e-300);
            worst = worst.max(diff);
        }
        checks.push(Check { name: "closed_form_vs_gd".into(), value: worst, bound: 1e-3, pass: worst <= 1e-3 });
    }

    // Gaussian-equivalent covariance against the Monte Carlo estimate.
    {
        let (n, p, m) = (50, 100, 400);
        let mut rng = child_rng(seed, 1, "validate");
        let spec = MixtureSpec::orthogonal(n, vec![0.5, 0.5], vec![0.5, 0.25], &[1.0, 1.0])?;
        let cen = realize_centroids(&spec, &mut rng)?;
        let data = sample_dataset(&spec, &cen, m, &mut rng)?;
        let w = gaussian_projection(p, n, &mut rng);
        let coeffs = coeffs_vector(&w, &spec, &cen, &clock, act, &rule)?;
        let ug = gep_u(&data, &w, &spec, &cen, &coeffs, &mut rng)?.u;
        let ue = empirical_uv(&data, &w, &spec.weights, &clock, act, 100, &mut rng)?.u.u;
        let tv = sample_tv_distance(&sym_eigvals(&ug.view())?.to_vec(), &sym_eigvals(&ue.view())?.to_vec(), 20, 1e-8);
        checks.push(Check { name: "gep_vs_monte_carlo_tv".into(), value: tv, bound: 0.15, pass: tv <= 0.15 });
    }

    // Spectral density against the eigenvalues of one instance.
    {
        let (n, p, m) = (40, 800, 400);
        let (b, s2) = (vec![0.5, 0.5], vec![0.5, 0.25]);
        let params = SpectralParams::for_mixture(p as f64 / n as f64, m as f64 / n as f64, &b, &s2, clock.t(), act, &rule)?;
        let solution = solve_grid(&params, &log_grid(1e-6, 1e2, 1500), &Default::default())?;
        let mut rng = child_rng(seed, 2, "validate");
        let spec = MixtureSpec::centered(n, b, s2)?;
        let cen = realize_centroids(&spec, &mut rng)?;
        let data = sample_dataset(&spec, &cen, m, &mut rng)?;
        let w = gaussian_projection(p, n, &mut rng);
        let coeffs = coeffs_vector(&w, &spec, &cen, &clock, act, &rule)?;
        let u = gep_u(&data, &w, &spec, &cen, &coeffs, &mut rng)?.u;
        let tv = histogram_tv(&solution, &sym_eigvals(&u.view())?.to_vec(), 30)?;
        checks.push(Check { name: "density_vs_histogram_tv".into(), value: tv, bound: 0.1, pass: tv <= 0.1 });
    }

    for ch in &checks {
        println!("{} {}: {:.3e} (bound {:.1e})", if ch.pass { "PASS" } else { "FAIL" }, ch.name, ch.value, ch.bound);
    }
    ctx.write_text("validate.json", &serde_json::to_string_pretty(&checks)?)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(failed.join(", ")))
    }
}
