use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use tensorpot::data::manifest::{apply_oracle_override, ToyManifest};
use tensorpot::data::{generate_toy_datasets, read_extxyz, save_extxyz, AtomicSystem, ToyConfig};
use tensorpot::experiments::{equivariance_suite, force_check, scaling_benchmark, EquivarianceTolerances};
use tensorpot::model::{Model, Sabotage};
use tensorpot::training::{
    evaluate, load_model, predict_chunked, save_model, Checkpoint, EpochRecord, Evaluation, GroupBy, Metrics, RunConfig,
    Trainer,
};

use crate::{
    BenchArgs, EquivarianceArgs, EvalArgs, GenToyArgs, GradcheckArgs, ModelSource, OutDir, PredictArgs, TrainArgs,
    ValidationFailure,
};

/// Elements of random-parameter models when the config names none.
const PROBE_ELEMENTS: [u8; 4] = [1, 6, 7, 8];

const CHECKPOINT: &str = "checkpoint.json";
const BEST_MODEL: &str = "model.json";
const METRICS_LOG: &str = "metrics.tsv";
const RESOLVED_CONFIG: &str = "config.txt";

fn prepare_out_dir(out: &OutDir) -> Result<()> {
    if out.out_dir.exists() {
        let non_empty = fs::read_dir(&out.out_dir)
            .with_context(|| format!("reading {}", out.out_dir.display()))?
            .next()
            .is_some();
        if non_empty && !out.force {
            bail!("{} is not empty; pass --force to write into it", out.out_dir.display());
        }
    }
    fs::create_dir_all(&out.out_dir).with_context(|| format!("creating {}", out.out_dir.display()))
}

fn split_override(kv: &str) -> Result<(&str, &str)> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| anyhow!("override `{kv}` is not of the form key=value"))
}

fn run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    for kv in overrides {
        let (k, v) = split_override(kv)?;
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

fn load_source(source: &ModelSource) -> Result<Model> {
    if let Some(path) = &source.model {
        if source.config.is_some() || !source.overrides.is_empty() {
            bail!("--config and overrides only apply to random parameters, not to --model");
        }
        return Ok(load_model(path)?);
    }
    let config = run_config(source.config.as_deref(), &source.overrides)?;
    let mut mc = config.model;
    if mc.elements.is_empty() {
        mc.elements = PROBE_ELEMENTS.to_vec();
    }
    Ok(Model::new(mc, config.train.seed)?)
}

pub fn gen_toy(a: GenToyArgs) -> Result<()> {
    let mut config = ToyConfig {
        pairs: a.pairs,
        frames: a.frames,
        charges: [a.charges[0], a.charges[1]],
        displacement: a.displacement,
        max_force: a.max_force,
        seed: a.seed,
        ..ToyConfig::default()
    };
    for kv in &a.oracle {
        let (k, v) = split_override(kv)?;
        apply_oracle_override(&mut config.oracle, k, v)?;
    }
    prepare_out_dir(&a.out)?;
    let data = generate_toy_datasets(&config)?;
    let merged = data.merged();
    let names = ["a.xyz", "b.xyz", "merged.xyz"];
    for (name, systems) in names.iter().zip([&data.a, &data.b, &merged]) {
        save_extxyz(&a.out.out_dir.join(name), systems)?;
        info!("wrote {} frames to {}", systems.len(), a.out.out_dir.join(name).display());
    }
    let manifest = ToyManifest {
        datasets: [
            (names[0].into(), data.a.len()),
            (names[1].into(), data.b.len()),
            (names[2].into(), merged.len()),
        ],
        config,
    };
    let path = a.out.out_dir.join("manifest.txt");
    fs::write(&path, manifest.to_text()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{line}").with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let systems = read_extxyz(&a.data)?;
    let dir = a.out.out_dir.clone();
    let ck_path = dir.join(CHECKPOINT);
    let log_path = dir.join(METRICS_LOG);
    let mut trainer = if a.resume {
        if a.config.is_some() {
            bail!("--resume uses the configuration stored in the checkpoint; drop --config");
        }
        let ck = Checkpoint::load(&ck_path)?;
        let mut trainer = Trainer::resume(ck, systems)?;
        for kv in &a.overrides {
            match split_override(kv)? {
                ("max_epochs", v) => trainer.set_max_epochs(v.parse().with_context(|| format!("max_epochs `{v}`"))?),
                (k, _) => bail!("only max_epochs may be changed when resuming, got `{k}`"),
            }
        }
        info!("resuming after epoch {}", trainer.checkpoint().state.epoch);
        trainer
    } else {
        let config = run_config(a.config.as_deref(), &a.overrides)?;
        prepare_out_dir(&a.out)?;
        let trainer = Trainer::new(config, systems)?;
        fs::write(dir.join(RESOLVED_CONFIG), trainer.checkpoint().config.to_text())
            .with_context(|| format!("writing {}", dir.join(RESOLVED_CONFIG).display()))?;
        fs::write(&log_path, format!("{}\n", EpochRecord::HEADER))
            .with_context(|| format!("writing {}", log_path.display()))?;
        let s = &trainer.checkpoint().state.split;
        info!(
            "{} systems: {} train, {} val, {} test; elements {:?}",
            trainer.systems().len(),
            s.train.len(),
            s.val.len(),
            s.test.len(),
            trainer.checkpoint().model.config.elements
        );
        trainer
    };
    trainer.checkpoint().save(&ck_path)?;
    trainer.train(|ck, record| {
        append_line(&log_path, &record.tsv())?;
        ck.save(&ck_path)?;
        info!(
            "epoch {:>4}  lr {:.2e}  train {:.4e}  val {:.4e}  val E MAE {:.3} meV",
            record.epoch, record.lr, record.train_loss, record.val_loss, record.val_energy_mae
        );
        Ok::<_, anyhow::Error>(())
    })?;
    let ck = trainer.checkpoint();
    save_model(&ck.best, &dir.join(BEST_MODEL))?;
    info!(
        "finished after {} epochs; best epoch {} (val loss {:.4e})",
        ck.state.epoch,
        ck.state.best_epoch,
        ck.state.best_val_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn print_metrics_row(label: &str, m: &Metrics) {
    println!(
        "{label:<10} {:>6} {:>12.3} {:>12.3} {:>14.3} {:>12.3} {:>12.3}",
        m.systems, m.energy_mae, m.energy_rmse, m.energy_mae_per_atom, m.force_mae, m.force_rmse
    );
}

fn print_evaluation(ev: &Evaluation) {
    println!(
        "{:<10} {:>6} {:>12} {:>12} {:>14} {:>12} {:>12}",
        "group", "n", "E MAE/meV", "E RMSE/meV", "E MAE/meV/at", "F MAE", "F RMSE"
    );
    print_metrics_row("all", &ev.overall);
    for (label, m) in &ev.groups {
        print_metrics_row(label, m);
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let group_by = GroupBy::parse(&a.group_by)?;
    let systems = read_extxyz(&a.data)?;
    let (model, subset): (Model, Vec<&AtomicSystem>) = match &a.split {
        Some(name) => {
            let ck = Checkpoint::load(&a.model).context("--split needs a training checkpoint")?;
            let s = &ck.state.split;
            let idx = match name.as_str() {
                "train" => &s.train,
                "val" => &s.val,
                "test" => &s.test,
                _ => bail!("--split must be train, val or test, got `{name}`"),
            };
            let total = s.train.len() + s.val.len() + s.test.len();
            if total != systems.len() {
                bail!("checkpoint split covers {total} systems, {} has {}", a.data.display(), systems.len());
            }
            let subset = idx.iter().map(|&i| &systems[i]).collect();
            (ck.best, subset)
        }
        None => (load_model(&a.model)?, systems.iter().collect()),
    };
    let ev = evaluate(&model, &subset, Some(group_by))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ev)?);
    } else {
        print_evaluation(&ev);
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut systems = read_extxyz(&a.data)?;
    let refs: Vec<&AtomicSystem> = systems.iter().collect();
    let preds = predict_chunked(&model, &refs, 32)?;
    for (s, p) in systems.iter_mut().zip(preds) {
        s.energy = Some(p.energy);
        s.forces = Some(p.forces);
    }
    fs::create_dir_all(&a.out.out_dir).with_context(|| format!("creating {}", a.out.out_dir.display()))?;
    let path: PathBuf = a.out.out_dir.join(&a.output);
    if path.exists() && !a.out.force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    save_extxyz(&path, &systems)?;
    info!("wrote {} predictions to {}", systems.len(), path.display());
    Ok(())
}

pub fn check_equivariance(a: EquivarianceArgs) -> Result<()> {
    let mut model = load_source(&a.source)?;
    model.sabotage = match a.sabotage.as_deref() {
        None => None,
        Some("flip-skew-z") => Some(Sabotage::FlipSkewZ),
        Some(other) => bail!("unknown sabotage `{other}`; valid: flip-skew-z"),
    };
    if a.trials == 0 {
        warn!("0 trials requested; the suite passes vacuously");
    }
    let tol = EquivarianceTolerances::default();
    let rep = equivariance_suite(&model, a.trials, a.seed)?;
    println!("trials {} ({} rotations, {} reflections)", rep.trials, rep.rotations, rep.reflections);
    println!("feature deviation          {:.3e}  (tolerance {:.0e})", rep.feature_dev, tol.feature);
    println!("  plain RXR^T, reflections {:.3e}  (pseudotensor part, informational)", rep.literal_reflection_dev);
    println!("energy relative deviation  {:.3e}  (tolerance {:.0e})", rep.energy_rel_dev, tol.energy);
    println!("force relative deviation   {:.3e}  (tolerance {:.0e})", rep.force_rel_dev, tol.force);
    println!(
        "translation E / F          {:.3e} / {:.3e}",
        rep.translation_energy_rel_dev, rep.translation_force_rel_dev
    );
    println!(
        "permutation E / F          {:.3e} / {:.3e}  (tolerance {:.0e})",
        rep.permutation_energy_rel_dev, rep.permutation_force_rel_dev, tol.permutation
    );
    let bad = rep.violations(&tol);
    if bad.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        Err(ValidationFailure(format!("equivariance violated: {}", bad.join(", "))).into())
    }
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let model = load_source(&a.source)?;
    let rep = force_check(&model, a.systems, a.step, a.seed)?;
    println!(
        "{} systems  max relative error {:.3e}  max absolute error {:.3e} eV/Å  max net force {:.3e} eV/Å",
        rep.systems, rep.max_rel_error, rep.max_abs_error, rep.max_net_force
    );
    if rep.max_rel_error <= a.rtol {
        println!("PASS");
        Ok(())
    } else {
        Err(ValidationFailure(format!(
            "force error {:.3e} exceeds {:.1e}",
            rep.max_rel_error, a.rtol
        ))
        .into())
    }
}

pub fn bench_scaling(a: BenchArgs) -> Result<()> {
    let model = load_source(&a.source)?;
    let rep = scaling_benchmark(&model, &a.sizes, a.repeats, a.seed)?;
    println!("{:>6} {:>8} {:>12} {:>12}", "N", "edges", "mean/ms", "std/ms");
    for r in &rep.rows {
        let std = r.std.map_or_else(|| "-".to_string(), |s| format!("{:.3}", s * 1e3));
        println!("{:>6} {:>8} {:>12.3} {:>12}", r.atoms, r.edges, r.mean * 1e3, std);
    }
    for (n, ratio) in &rep.doubling_ratios {
        println!("t({})/t({n}) = {ratio:.3}", 2 * n);
    }
    if let Some(m) = rep.median_doubling_ratio() {
        println!("median doubling ratio {m:.3}");
        if let Some(max) = a.max_ratio {
            if m > max {
                return Err(ValidationFailure(format!("median doubling ratio {m:.3} exceeds {max}")).into());
            }
        }
    }
    Ok(())
}
