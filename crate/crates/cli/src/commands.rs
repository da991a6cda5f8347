//! The five batch commands plus shared output plumbing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use epikernel::data::{parse_farm_file, Dataset, GridSpec, ParseOptions};
use epikernel::data::{build_pseudo_grid, NEVER};
use epikernel::mcmc::{run_chain, ChainOptions, ChainOutput};
use epikernel::posterior::{
    i_tilde, infection_probabilities, mean_infectious_period, posterior_predictive,
    summarize_curve, PredictiveSummary,
};
use epikernel::sim::{
    export_observed, random_layout, simulate_outbreak, CullingPolicy, GroundTruth,
};
use epikernel::trace::{atomic_write_json, read_trace, ChainTrace};
use epikernel::validate::{
    delta_contract_suite, likelihood_oracle_suite, prior_reproduction_suite,
    proposal_identity_suite,
};
use epikernel::likelihood::InfectiousPeriodParams;
use epikernel::rates::RateFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{
    FitConfig, PredictConfig, RunConfig, SimulateConfig, SummarizeConfig, ValidateConfig,
};
use crate::CliError;

/// Effective global options after flag/config merging.
pub struct CommandContext {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub resume: bool,
    pub parse: ParseOptions,
    pub config_sha256: String,
}

impl CommandContext {
    fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Usage(format!(
                "{command} is stochastic; set `seed` in the config or pass --seed"
            ))
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn prepare_output_dir(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| {
            CliError::Runtime(format!(
                "cannot create output directory {}: {e}",
                self.output_dir.display()
            ))
        })
    }

    /// Run manifest: enough to reproduce and audit a run, nothing volatile.
    fn write_manifest(
        &self,
        command: &str,
        seed: Option<u64>,
        outputs: &[&Path],
    ) -> Result<(), CliError> {
        let manifest = json!({
            "command": command,
            "config_sha256": self.config_sha256,
            "seed": seed,
            "package": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "outputs": outputs
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect::<Vec<_>>(),
        });
        let path = self.out(&format!("{command}_manifest.json"));
        atomic_write_json(&path, &manifest).map_err(runtime)?;
        Ok(())
    }
}

fn runtime(e: epikernel::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

/// Write bytes to `path` via a sibling temp file and rename, so a crash
/// never leaves a truncated output.
fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy()
    ));
    std::fs::write(&tmp, bytes)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Render a dataset back into the farm-file format `parse` accepts:
/// day-offset cull dates, empty field for never-culled farms.
fn farm_csv(dataset: &Dataset) -> String {
    let mut out = String::from("id,x,y,cull_date,preemptive,flock_type,flock_size\n");
    for farm in dataset.farms() {
        let cull = if farm.cull_time == NEVER {
            String::new()
        } else {
            format!("{}", farm.cull_time)
        };
        let flock_type = farm.flock_type.map(|t| t.to_string()).unwrap_or_default();
        let flock_size = farm.flock_size.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            farm.id,
            farm.x,
            farm.y,
            cull,
            if farm.preemptive { "yes" } else { "no" },
            flock_type,
            flock_size,
        )
        .unwrap();
    }
    out
}

pub fn cmd_simulate(cfg: &RunConfig, ctx: &CommandContext) -> Result<(), CliError> {
    let sim: &SimulateConfig = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [simulate] section".into()))?;
    let seed = ctx.require_seed("simulate")?;
    if sim.farms.is_some() == sim.layout.is_some() {
        return Err(CliError::Usage(
            "simulate needs exactly one of `farms` (a layout file) or `layout` (random)".into(),
        ));
    }
    if let Some(path) = &sim.farms {
        require_file(path, "farm file")?;
    }
    let flock_sizes = sim.layout.as_ref().map(|l| l.flock_sizes()).transpose()?;
    sim.culling.validate().map_err(usage)?;
    let rates = RateFunction::ExpDecay {
        scale: sim.rates.scale,
        decay: sim.rates.decay,
    };
    let params =
        InfectiousPeriodParams::new(sim.infectious_period.shape, sim.infectious_period.rate)
            .map_err(usage)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = match (&sim.farms, &sim.layout) {
        (Some(path), _) => parse_farm_file(path, &ctx.parse).map_err(runtime)?,
        (None, Some(layout)) => {
            let farms =
                random_layout(layout.count, layout.side, flock_sizes.flatten(), &mut rng)
                    .map_err(usage)?;
            Dataset::new(farms, epikernel::data::TimeOrigin::Offset(0.0)).map_err(runtime)?
        }
        (None, None) => unreachable!(),
    };
    let fixed_omega = match sim.index_case {
        Some(id) => Some(dataset.find(id).ok_or_else(|| {
            CliError::Usage(format!("index_case {id} is not a farm id in the layout"))
        })?),
        None => None,
    };

    ctx.prepare_output_dir()?;
    let mut attempt = 0;
    let (observed, truth) = loop {
        attempt += 1;
        if attempt > sim.max_attempts {
            return Err(CliError::Runtime(format!(
                "no outbreak reached min_infected = {} within {} attempts",
                sim.min_infected, sim.max_attempts
            )));
        }
        let omega = fixed_omega.unwrap_or_else(|| rng.gen_range(0..dataset.len()));
        let result = simulate_outbreak(&dataset, &rates, &params, omega, &sim.culling, &mut rng)
            .map_err(runtime)?;
        if result.infected_count() < sim.min_infected {
            continue;
        }
        match export_observed(&result, &dataset) {
            Ok(pair) => break pair,
            // An outbreak without natural culls cannot anchor a time axis.
            Err(_) => continue,
        }
    };

    let farms_path = ctx.out("outbreak.csv");
    let truth_path = ctx.out("truth.json");
    atomic_write_bytes(&farms_path, farm_csv(&observed).as_bytes())?;
    atomic_write_json(&truth_path, &truth).map_err(runtime)?;
    ctx.write_manifest("simulate", Some(seed), &[&farms_path, &truth_path])?;
    println!(
        "simulate: {} farms, {} infected, {} culled; wrote {} and {}",
        observed.len(),
        truth.infections.len(),
        observed
            .farms()
            .iter()
            .filter(|f| f.cull_time.is_finite())
            .count(),
        farms_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn usage(e: epikernel::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn cmd_fit(cfg: &RunConfig, ctx: &CommandContext) -> Result<(), CliError> {
    let fit: &FitConfig = cfg
        .fit
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [fit] section".into()))?;
    let seed = ctx.require_seed("fit")?;
    require_file(&fit.farms, "farm file")?;
    fit.prior.validate().map_err(usage)?;
    fit.tuning.validate().map_err(usage)?;
    if fit.chains == 0 {
        return Err(CliError::Usage("fit.chains must be at least 1".into()));
    }

    let dataset = parse_farm_file(&fit.farms, &ctx.parse).map_err(runtime)?;
    let max = match fit.grid.max {
        Some(m) => m,
        None => dataset.max_pairwise_distance(),
    };
    let knots = build_pseudo_grid(&GridSpec::EqualSpacing {
        count: fit.grid.count,
        max,
    })
    .map_err(usage)?;

    ctx.prepare_output_dir()?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut chain_reports = Vec::new();
    for chain in 0..fit.chains {
        let trace_path = ctx.out(&format!("trace_{chain}.jsonl"));
        let checkpoint_path = ctx.out(&format!("checkpoint_{chain}.json"));
        let options = ChainOptions {
            trace_path: Some(trace_path.clone()),
            checkpoint_path: (fit.tuning.checkpoint_interval > 0)
                .then(|| checkpoint_path.clone()),
            resume: ctx.resume,
        };
        let out: ChainOutput = run_chain(
            &dataset,
            &knots,
            &fit.prior,
            &fit.tuning,
            seed,
            chain,
            &options,
        )
        .map_err(runtime)?;
        let rate = |c: &epikernel::mcmc::AcceptanceCounter| {
            json!({"attempted": c.attempted, "accepted": c.accepted, "rate": c.rate()})
        };
        chain_reports.push(json!({
            "chain": chain,
            "records": out.records.len(),
            "acceptance": {
                "g": rate(&out.acceptance.g),
                "length_scale": rate(&out.acceptance.length_scale),
                "gamma": rate(&out.acceptance.gamma),
                "omega": rate(&out.acceptance.omega),
                "i_omega": rate(&out.acceptance.i_omega),
                "moves": rate(&out.acceptance.moves),
                "adds": rate(&out.acceptance.adds),
                "deletes": rate(&out.acceptance.deletes),
            },
            "final_tuning": out.final_tuning,
        }));
        outputs.push(trace_path);
        if fit.tuning.checkpoint_interval > 0 {
            outputs.push(checkpoint_path);
        }
        println!(
            "fit: chain {chain} finished, {} retained sweeps",
            out.records.len()
        );
    }
    let report_path = ctx.out("fit_report.json");
    atomic_write_json(&report_path, &json!({ "chains": chain_reports })).map_err(runtime)?;
    outputs.push(report_path);
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.write_manifest("fit", Some(seed), &output_refs)?;
    Ok(())
}

pub fn cmd_summarize(cfg: &RunConfig, ctx: &CommandContext) -> Result<(), CliError> {
    let sum: &SummarizeConfig = cfg
        .summarize
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [summarize] section".into()))?;
    require_file(&sum.trace, "trace file")?;
    if let Some(farms) = &sum.farms {
        require_file(farms, "farm file")?;
    }
    if let Some(truth) = &sum.truth {
        require_file(truth, "ground-truth file")?;
    }

    let trace: ChainTrace = read_trace(&sum.trace).map_err(runtime)?;
    let curve = summarize_curve(&trace, &sum.distances).map_err(runtime)?;
    let period = mean_infectious_period(&trace).map_err(runtime)?;

    ctx.prepare_output_dir()?;
    let mut outputs: Vec<PathBuf> = Vec::new();

    let mut curve_csv = String::from("distance,lower,median,upper\n");
    for i in 0..curve.distances.len() {
        writeln!(
            curve_csv,
            "{},{},{},{}",
            curve.distances[i], curve.lower[i], curve.median[i], curve.upper[i]
        )
        .unwrap();
    }
    let curve_path = ctx.out("curve.csv");
    atomic_write_bytes(&curve_path, curve_csv.as_bytes())?;
    outputs.push(curve_path);

    if let Some(farms) = &sum.farms {
        let dataset = parse_farm_file(farms, &ctx.parse).map_err(runtime)?;
        let probs = infection_probabilities(&trace, &dataset).map_err(runtime)?;
        let mut csv = String::from("id,probability\n");
        for (id, p) in probs {
            writeln!(csv, "{id},{p}").unwrap();
        }
        let path = ctx.out("infection_probabilities.csv");
        atomic_write_bytes(&path, csv.as_bytes())?;
        outputs.push(path);
    }

    let i_score = match &sum.truth {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Runtime(format!("cannot read {}: {e}", path.display()))
            })?;
            let truth: GroundTruth = serde_json::from_str(&text).map_err(|e| {
                CliError::Runtime(format!("{} is not a ground-truth file: {e}", path.display()))
            })?;
            Some(i_tilde(truth.infection_time_sum(), &trace).map_err(runtime)?)
        }
        None => None,
    };

    let summary_path = ctx.out("summary.json");
    atomic_write_json(
        &summary_path,
        &json!({
            "retained_sweeps": trace.records.len(),
            "mean_infectious_period": period,
            "i_score_percent": i_score,
        }),
    )
    .map_err(runtime)?;
    outputs.push(summary_path);
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.write_manifest("summarize", None, &output_refs)?;
    println!(
        "summarize: {} retained sweeps, period median {}",
        trace.records.len(),
        period.median
    );
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, ctx: &CommandContext) -> Result<(), CliError> {
    let pred: &PredictConfig = cfg
        .predict
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [predict] section".into()))?;
    let seed = ctx.require_seed("predict")?;
    require_file(&pred.trace, "trace file")?;
    require_file(&pred.farms, "farm file")?;
    if pred.radii.is_empty() {
        return Err(CliError::Usage("predict.radii must not be empty".into()));
    }
    if pred.replicates == 0 {
        return Err(CliError::Usage("predict.replicates must be at least 1".into()));
    }
    pred.compensation.validate().map_err(usage)?;
    let policies: Vec<CullingPolicy> = pred
        .radii
        .iter()
        .map(|&r| {
            if r <= 0.0 {
                Ok(CullingPolicy::none())
            } else {
                CullingPolicy::simple_ring(r).map_err(usage)
            }
        })
        .collect::<Result<_, _>>()?;

    let trace = read_trace(&pred.trace).map_err(runtime)?;
    let dataset = parse_farm_file(&pred.farms, &ctx.parse).map_err(runtime)?;
    let summary: PredictiveSummary = posterior_predictive(
        &trace,
        &dataset,
        &policies,
        &pred.compensation,
        pred.replicates,
        seed,
    )
    .map_err(runtime)?;

    ctx.prepare_output_dir()?;
    let mut csv = String::from(
        "radius,infected_lower,infected_median,infected_upper,\
         culled_lower,culled_median,culled_upper,\
         compensation_lower,compensation_median,compensation_upper\n",
    );
    for (radius, row) in pred.radii.iter().zip(&summary.rows) {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            radius,
            row.infected.lower,
            row.infected.median,
            row.infected.upper,
            row.culled.lower,
            row.culled.median,
            row.culled.upper,
            row.compensation.lower,
            row.compensation.median,
            row.compensation.upper,
        )
        .unwrap();
    }
    let csv_path = ctx.out("prediction.csv");
    let json_path = ctx.out("prediction.json");
    atomic_write_bytes(&csv_path, csv.as_bytes())?;
    atomic_write_json(&json_path, &summary).map_err(runtime)?;
    ctx.write_manifest("predict", Some(seed), &[&csv_path, &json_path])?;
    println!(
        "predict: {} policies x {} draws x {} replicates; wrote {}",
        summary.rows.len(),
        summary.draws,
        summary.replicates,
        csv_path.display()
    );
    Ok(())
}

pub fn cmd_validate(
    cfg: &RunConfig,
    ctx: &CommandContext,
    perturb_likelihood: f64,
) -> Result<(), CliError> {
    let v: &ValidateConfig = &cfg.validate;
    // Stochastic but self-contained: a fixed default seed keeps bare
    // `epikernel validate` runs reproducible.
    let seed = ctx.seed.unwrap_or(1);

    let mut lines = Vec::new();
    let mut all_pass = true;
    let mut suites_json = Vec::new();

    let suites = [
        likelihood_oracle_suite(v.likelihood_cases, seed.wrapping_add(1), perturb_likelihood)
            .map_err(runtime)?,
        delta_contract_suite(v.delta_cases, seed.wrapping_add(2)).map_err(runtime)?,
        proposal_identity_suite(v.identity_cases, seed.wrapping_add(3)).map_err(runtime)?,
    ];
    for suite in &suites {
        all_pass &= suite.passed();
        lines.push(suite.summary_line());
        suites_json.push(json!({
            "name": suite.name,
            "cases": suite.cases,
            "failures": suite.failures,
            "max_discrepancy": suite.max_discrepancy,
            "detail": suite.detail,
            "passed": suite.passed(),
        }));
    }

    let marginals = prior_reproduction_suite(
        v.prior_iterations,
        v.prior_burn_in,
        v.prior_thinning,
        seed.wrapping_add(4),
    )
    .map_err(runtime)?;
    let mut marginals_json = Vec::new();
    for m in &marginals {
        let passed = m.passes_with(v.mean_tolerance, v.min_effective, v.ks_scale);
        all_pass &= passed;
        lines.push(format!(
            "prior reproduction / {}: {}",
            m.summary_line(),
            if passed { "PASS" } else { "FAIL" }
        ));
        marginals_json.push(json!({
            "name": m.name,
            "mean": m.mean,
            "expected_mean": m.expected_mean,
            "iact": m.iact,
            "effective_samples": m.effective_samples,
            "ks_statistic": m.ks_statistic,
            "ks_critical": m.ks_critical,
            "passed": passed,
        }));
    }

    for line in &lines {
        println!("{line}");
    }
    println!("validate: {}", if all_pass { "PASS" } else { "FAIL" });

    ctx.prepare_output_dir()?;
    let report_path = ctx.out("validation_report.json");
    atomic_write_json(
        &report_path,
        &json!({
            "seed": seed,
            "suites": suites_json,
            "prior_marginals": marginals_json,
            "passed": all_pass,
        }),
    )
    .map_err(runtime)?;
    ctx.write_manifest("validate", Some(seed), &[&report_path])?;

    if all_pass {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(
            "one or more validation suites failed".into(),
        ))
    }
}
