//! Subcommand implementations.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use swigan_data::{synth::synthesize_with_scenario, ClimateDataset, GridStack};
use swigan_model::{GeneratorConfig, GeneratorParams, ParamSet};
use swigan_risk::{loss_distribution, value_at_risk, CommuneTable, YearlyReference};
use swigan_scenario::{
    compute_metrics, covariate_importance, project, spatial_importance, summarize,
    ImportanceRequest, ProjectionRequest, TrajectoryEnsemble,
};
use swigan_train::Trainer;

use crate::cfg::{
    render_train_config, resolve_risk_config, resolve_synth_spec, resolve_train_config, KvConfig,
};
use crate::manifest::RunClock;

pub fn data_synth(spec_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let clock = RunClock::start();
    let cfg = KvConfig::load(spec_path)?;
    let spec = resolve_synth_spec(&cfg)?;
    let (dataset, scenario) = synthesize_with_scenario(&spec, seed)?;
    dataset.save(out)?;
    if !scenario.is_empty() {
        let sdir = out.join("scenario");
        fs::create_dir_all(&sdir)?;
        for s in &scenario {
            s.save(&sdir.join(format!("{}.grd", s.name)))?;
        }
    }
    // a rectangular commune fixture so the risk step needs no external data
    let rows: usize = cfg.get("commune_rows", 4)?;
    let cols: usize = cfg.get("commune_cols", 4)?;
    let communes = swigan_risk::rectangular_communes(spec.grid_h, spec.grid_w, rows, cols, seed);
    communes.save_csv(&out.join("communes.csv"))?;
    println!(
        "wrote {} months of {} covariates on a {}x{} grid to {}",
        dataset.n_months,
        dataset.n_covariates(),
        dataset.grid_h,
        dataset.grid_w,
        out.display()
    );
    clock.write_manifest(
        out,
        "data synth",
        &cfg.sha256(),
        Some(seed),
        json!({ "scenario_months": spec.scenario_months }),
    )
}

pub fn data_inspect(dir: &Path) -> Result<()> {
    let ds = ClimateDataset::load(dir)?;
    println!("variable,n_months,grid_h,grid_w,mean,std,min,max");
    let mut stacks: Vec<&GridStack> = ds.covariates.iter().collect();
    stacks.push(&ds.index);
    for s in stacks {
        let n = s.values.len() as f64;
        let mean = s.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = s
            .values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let min = s.values.iter().copied().fold(f32::INFINITY, f32::min);
        let max = s.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        println!(
            "{},{},{},{},{mean},{},{min},{max}",
            s.name,
            s.n_months(),
            s.grid_h,
            s.grid_w,
            var.sqrt()
        );
    }
    println!();
    println!("boundary,month_index,stamp");
    println!(
        "train_end,{},{}",
        ds.splits.train_end,
        ds.month(ds.splits.train_end - 1).next()
    );
    println!(
        "val_end,{},{}",
        ds.splits.val_end,
        ds.month(ds.splits.val_end - 1).next()
    );
    println!("end,{},{}", ds.n_months, ds.month(ds.n_months - 1).next());
    Ok(())
}

pub fn train(
    config_path: &Path,
    data: &Path,
    out: &Path,
    seed: u64,
    resume: Option<&Path>,
) -> Result<()> {
    let clock = RunClock::start();
    let kv = KvConfig::load(config_path)?;
    let resolved = resolve_train_config(&kv, seed)?;
    let ds = ClimateDataset::load(data)?.normalize()?;

    let extents = resolved
        .critic
        .realized_extents(resolved.gen.grid_h, resolved.gen.grid_w)?;
    let mut trainer = Trainer::new(&ds, &resolved.gen, &resolved.critic, &resolved.train)?;
    if let Some(ckpt) = resume {
        trainer
            .load_checkpoint(ckpt)
            .with_context(|| format!("resuming from {ckpt:?}"))?;
    }
    fs::create_dir_all(out)?;
    let output = trainer.run(&ds, Some(&out.join("checkpoints")))?;

    let mut history = String::from("epoch,critic_loss,gen_loss,gp,rec,feat,lr\n");
    for row in &output.history {
        history.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.epoch, row.critic_loss, row.gen_loss, row.gp, row.rec, row.feat, row.lr
        ));
    }
    fs::write(out.join("history.csv"), history)?;
    output.gen.save(&out.join("params_gen.swg"))?;
    output.critic.save(&out.join("params_critic.swg"))?;
    trainer.save_checkpoint(&out.join("checkpoints").join("final"))?;
    fs::write(out.join("config.cfg"), render_train_config(&resolved))?;

    let norms_in_band = if output.final_grad_norms.is_empty() {
        0.0
    } else {
        output
            .final_grad_norms
            .iter()
            .filter(|&&n| (0.7..=1.3).contains(&n))
            .count() as f64
            / output.final_grad_norms.len() as f64
    };
    println!(
        "trained {} epochs ({} critic / {} generator updates); final gp mean {:.4}",
        output.history.len(),
        output.critic_updates,
        output.gen_updates,
        output.final_gp_mean
    );
    clock.write_manifest(
        out,
        "train",
        &kv.sha256(),
        Some(seed),
        json!({
            "critic_updates": output.critic_updates,
            "gen_updates": output.gen_updates,
            "final_gp_mean": output.final_gp_mean,
            "interp_grad_norm_share_in_band": norms_in_band,
            "critic_extents": {
                "base": extents.base,
                "frame": extents.frame,
                "patch": extents.patch,
            },
        }),
    )
}

/// Locate params_gen.swg and its sibling config.cfg from a path that is
/// either the training output directory or the params file itself.
fn load_generator(params: &Path) -> Result<(GeneratorParams, String)> {
    let (dir, file) = if params.is_dir() {
        (params.to_path_buf(), params.join("params_gen.swg"))
    } else {
        (
            params
                .parent()
                .ok_or_else(|| anyhow!("params file {params:?} has no parent directory"))?
                .to_path_buf(),
            params.to_path_buf(),
        )
    };
    let kv = KvConfig::load(&dir.join("config.cfg"))
        .context("the training output's config.cfg must sit next to the params file")?;
    let resolved = resolve_train_config(&kv, 0)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut p = GeneratorParams::init(&resolved.gen, &mut rng)?;
    p.load_into(&file)?;
    Ok((p, kv.sha256()))
}

pub struct GenerateRequest<'a> {
    pub params: &'a Path,
    pub data: &'a Path,
    pub scenario: Option<&'a Path>,
    pub eval_split: bool,
    pub horizon: Option<usize>,
    pub num_traj: usize,
    pub seed: u64,
    pub label: &'a str,
    pub out: &'a Path,
}

pub fn generate(req: GenerateRequest) -> Result<()> {
    let clock = RunClock::start();
    let (gen, config_hash) = load_generator(req.params)?;
    let raw = ClimateDataset::load(req.data)?;

    let (history, projected, label) = if req.eval_split {
        let horizon = req.horizon.unwrap_or(raw.n_months - raw.splits.val_end);
        let end = raw.splits.val_end + horizon;
        if end > raw.n_months {
            bail!(
                "horizon {horizon} exceeds the {} test months",
                raw.n_months - raw.splits.val_end
            );
        }
        let projected = raw.covariate_slices(raw.splits.val_end, end)?;
        let history = raw.truncated(raw.splits.val_end)?.normalize()?;
        (history, projected, format!("{}-eval", req.label))
    } else {
        let sdir = req
            .scenario
            .ok_or_else(|| anyhow!("either --scenario <dir> or --eval-split is required"))?;
        let projected: Vec<GridStack> = raw
            .covariates
            .iter()
            .map(|c| GridStack::load(&sdir.join(format!("{}.grd", c.name))))
            .collect::<swigan_data::Result<_>>()?;
        let history = raw.normalize()?;
        (history, projected, req.label.to_string())
    };
    let horizon = req
        .horizon
        .unwrap_or_else(|| projected.first().map(|s| s.n_months()).unwrap_or(0));

    let ensemble = project(&ProjectionRequest {
        gen: &gen,
        history: &history,
        projected: &projected,
        horizon,
        n_trajectories: req.num_traj,
        seed: req.seed,
        scenario: label,
    })?;
    ensemble.save(req.out)?;
    println!(
        "projected {} trajectories x {} months from {} (clamp rate {:.4})",
        ensemble.n_trajectories(),
        ensemble.horizon,
        ensemble.start,
        ensemble.clamp_rate
    );
    clock.write_manifest(
        req.out,
        "generate",
        &config_hash,
        Some(req.seed),
        json!({
            "horizon": ensemble.horizon,
            "num_traj": ensemble.n_trajectories(),
            "clamp_rate": ensemble.clamp_rate,
            "start": ensemble.start.to_string(),
        }),
    )
}

pub fn evaluate(obs: &Path, gen_dir: &Path, out: &Path) -> Result<()> {
    let clock = RunClock::start();
    let ds = ClimateDataset::load(obs)?;
    let ensemble = TrajectoryEnsemble::load(gen_dir)?;

    // align the ensemble months inside the observed record
    let months_between = (ensemble.start.year as i64 - ds.start.year as i64) * 12
        + ensemble.start.month as i64
        - ds.start.month as i64;
    if months_between < 0 || months_between as usize + ensemble.horizon > ds.n_months {
        bail!(
            "ensemble months {}..+{} are not covered by the observed record",
            ensemble.start,
            ensemble.horizon
        );
    }
    let offset = months_between as usize;
    let plane = ds.plane();
    let observed = ds.index.values[offset * plane..(offset + ensemble.horizon) * plane].to_vec();

    let rasters = compute_metrics(&observed, &ensemble)?;
    let rows = summarize(&rasters);
    let mut csv = String::from("metric,q10,q20,q50,q80,q90,max\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.metric, r.q10, r.q20, r.q50, r.q80, r.q90, r.max
        ));
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, csv)?;

    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("metrics");
    let dir = out.parent().unwrap_or(Path::new("."));
    for r in &rasters {
        let values: Vec<f32> = r.values.iter().map(|&v| v as f32).collect();
        GridStack::new(
            format!("{}_{}", stem, r.metric),
            r.grid_h,
            r.grid_w,
            ensemble.start,
            values,
        )
        .save(&dir.join(format!("{stem}_{}.grd", r.metric)))?;
    }
    for r in &rows {
        println!(
            "{}: median {:.4}, q80 {:.4}, max {:.4}",
            r.metric, r.q50, r.q80, r.max
        );
    }
    clock.write_manifest(
        dir,
        "evaluate",
        "",
        None,
        json!({ "months": ensemble.horizon, "trajectories": ensemble.n_trajectories() }),
    )
}

pub struct ExplainRequest<'a> {
    pub params: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub probe: Option<(usize, usize)>,
    pub n_permutations: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    pub include_lags: bool,
}

pub fn explain(req: ExplainRequest) -> Result<()> {
    let clock = RunClock::start();
    let (gen, config_hash) = load_generator(req.params)?;
    let ds = ClimateDataset::load(req.data)?.normalize()?;
    let ireq = ImportanceRequest {
        gen: &gen,
        dataset: &ds,
        n_permutations: req.n_permutations,
        n_trajectories: req.n_trajectories,
        seed: req.seed,
        include_index_lags: req.include_lags,
    };
    let report = covariate_importance(&ireq)?;

    let mut csv = format!("# baseline_mae={}\n", report.baseline_mae);
    csv.push_str("feature,score,mean_delta_mae,std_delta\n");
    for c in report.covariates.iter().chain(report.index_lags.iter()) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.name, c.score, c.mean_delta, c.std_delta
        ));
    }
    if let Some(parent) = req.out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(req.out, csv)?;
    for c in report.covariates.iter().chain(report.index_lags.iter()) {
        println!("{}: {:.6}", c.name, c.score);
    }

    let mut extras = json!({
        "baseline_mae": report.baseline_mae,
        "n_permutations": req.n_permutations,
        "n_trajectories": req.n_trajectories,
    });
    if let Some(probe) = req.probe {
        let raster = spatial_importance(&ireq, probe)?;
        let dir = req.out.parent().unwrap_or(Path::new("."));
        let values: Vec<f32> = raster.iter().map(|&v| v as f32).collect();
        let name = format!("spatial_{}_{}", probe.0, probe.1);
        GridStack::new(name.clone(), ds.grid_h, ds.grid_w, ds.start, values)
            .save(&dir.join(format!("{name}.grd")))?;
        extras["probe"] = json!([probe.0, probe.1]);
        println!(
            "spatial importance raster written for probe ({}, {})",
            probe.0, probe.1
        );
    }
    clock.write_manifest(
        req.out.parent().unwrap_or(Path::new(".")),
        "explain",
        &config_hash,
        Some(req.seed),
        extras,
    )
}

pub fn risk(
    gen_dir: &Path,
    communes_path: &Path,
    config: Option<&Path>,
    history: &Path,
    out: &Path,
) -> Result<()> {
    let clock = RunClock::start();
    let kv = match config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::empty(),
    };
    let resolved = resolve_risk_config(&kv)?;
    let ensemble = TrajectoryEnsemble::load(gen_dir)?;
    let communes = CommuneTable::load_csv(communes_path, ensemble.grid_h, ensemble.grid_w)?;
    let ds = ClimateDataset::load(history)?;
    let reference = YearlyReference::from_monthly_stack(&ds.index)?;

    let dist = loss_distribution(
        &ensemble,
        &communes,
        &resolved.model,
        &resolved.risk,
        &reference,
    )?;

    let mut csv = String::from("trajectory,year,eligible_communes,exposed_buildings,cost_eur\n");
    for o in &dist.outcomes {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            o.trajectory, o.year, o.eligible_communes, o.exposed_buildings, o.cost_eur
        ));
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, csv)?;

    let maxima = dist.trajectory_max();
    let var = value_at_risk(&maxima, resolved.var_level)?;
    println!(
        "{} simulated years x {} trajectories; VaR({}) of max annual cost: {:.0} EUR",
        dist.years.len(),
        ensemble.n_trajectories(),
        resolved.var_level,
        var
    );
    clock.write_manifest(
        out.parent().unwrap_or(Path::new(".")),
        "risk",
        &kv.sha256(),
        None,
        json!({
            "var_level": resolved.var_level,
            "var_eur": var,
            "years": dist.years,
            "return_period_years": resolved.risk.return_period_years,
        }),
    )
}

pub fn selftest() -> Result<()> {
    use swigan_tensor::gradcheck::{lcg_uniform, GradCheck};
    use swigan_tensor::GridTensor;

    let check = |name: &str, ok: bool| -> Result<()> {
        println!("[{}] {name}", if ok { "PASS" } else { "FAIL" });
        if ok {
            Ok(())
        } else {
            Err(anyhow!("selftest failed at {name}"))
        }
    };

    // gradient oracle on a conv + activation composition
    let x = GridTensor::from_vec(vec![1, 2, 5, 5], lcg_uniform(1, 50));
    let w = GridTensor::from_vec(vec![3, 2, 3, 3], lcg_uniform(2, 54));
    let g = GradCheck::default().check(&[x, w], |_t, l| -> swigan_tensor::Result<GridTensor> {
        let y = swigan_tensor::conv2d(&l[0], &l[1], None, 1, 1)?;
        Ok(y.sigmoid().sum_all())
    });
    check("conv2d + sigmoid gradcheck", g.is_ok())?;

    // double backward through a gradient norm
    let x = GridTensor::from_vec(
        vec![6],
        lcg_uniform(3, 6)
            .iter()
            .map(|v| v + 2.0)
            .collect::<Vec<f32>>(),
    );
    let g =
        GradCheck::with_tol(5e-3, 1e-4).check(&[x], |_t, l| -> swigan_tensor::Result<GridTensor> {
            let f = l[0].mul(&l[0])?.mul(&l[0])?.sum_all();
            let gx = swigan_tensor::grad(&f, &[&l[0]], true)?;
            Ok(swigan_tensor::nn::l2_norm(&gx[0]))
        });
    check("double-backward gradcheck", g.is_ok())?;

    // full-scale architecture shape walk
    let plan = GeneratorConfig::paper().plan()?;
    let enc: Vec<usize> = plan.encoder.iter().map(|s| s.extent).collect();
    check(
        "encoder extent path 48-24-12-6-3",
        enc == vec![48, 24, 12, 6, 3],
    )?;
    check("encoded extent 1", plan.encoded_extent == 1)?;
    let ext = swigan_model::CriticConfig::paper().realized_extents(37, 44)?;
    check("critic base features 5x6", ext.base.last() == Some(&(5, 6)))?;
    check("patch score grid 4x5", ext.patch.last() == Some(&(4, 5)))?;

    // parameter container round-trip
    let t = GridTensor::from_vec(vec![2, 3], lcg_uniform(4, 6));
    let mut buf = Vec::new();
    swigan_tensor::container::write_tensors(&mut buf, &[("t".into(), t.clone())])?;
    let back = swigan_tensor::container::read_tensors(buf.as_slice())?;
    check(
        "parameter container round-trip",
        back.len() == 1 && back[0].1.data() == t.data(),
    )?;
    println!("selftest complete");
    Ok(())
}
