//! Experiment orchestration: stage execution with content-addressed caching,
//! the six-variant pipeline, MI ablations, ascent-budget sweeps, and CSV
//! reports.
//!
//! Artifacts live under the run's output directory:
//!
//! ```text
//! out/
//!   stores/<family>-seed<S>-<key>/     store + collector checkpoints
//!   encoders/<recipe>-seed<S>-<key>/   encoder checkpoints + history.csv
//!   pdvf/<kind>-seed<S>-<key>/         value checkpoint + pdvf_eval.csv
//!   adapt/<variant>-<cfg>/seed<S>/test<J>/  adaptation_report.csv, zpi_trace.csv
//!   reports/                           report, baseline, ablation, sweep CSVs
//! ```
//!
//! Stage directories are keyed by a hash of everything that feeds them, so
//! reruns and sibling variants reuse finished work. A cache directory that
//! exists but fails to load is reported as an error, never silently
//! recomputed — delete it to rebuild.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::adapt::{adapt, adapt_closed_form, draw_probe_index, AdaptationReport};
use crate::collect::{collect_cell, evaluate, train_ppo, GaussianPolicy, MeanPolicy};
use crate::env::EnvFamily;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Tensor};
use crate::pdvf::{
    eval_cell, loco_r2, train_pdvf, train_quadratic, EmbeddingBank, PdvfModel, QuadraticPdvf,
};
use crate::repr::{mlp_from_tensors, mlp_tensors, train_contrastive, train_dynamics, EncoderBundle};
use crate::rng::stream;
use crate::store::{hex, ExperienceStore, StoreMeta};

pub use config::{EnvRepr, ExperimentConfig, ValueKind, Variant};

// ─── Small artifact helpers ───

/// Writes `lines` (no trailing newlines) under `header` to `path`.
fn write_csv(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::with_capacity(header.len() + lines.len() * 32);
    out.push_str(header);
    out.push('\n');
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Builds a stage directory atomically: the closure fills a temp sibling,
/// which is renamed into place on success. If the final directory appears
/// concurrently, the freshly built tree is discarded in its favor.
fn build_dir(final_dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = final_dir
        .parent()
        .ok_or_else(|| Error::contract("stage directory needs a parent"))?;
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".tmp-{}-{}",
        final_dir.file_name().unwrap().to_string_lossy(),
        std::process::id()
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    match fill(&tmp) {
        Ok(()) => {
            if final_dir.exists() {
                fs::remove_dir_all(&tmp)?;
            } else if let Err(e) = fs::rename(&tmp, final_dir) {
                fs::remove_dir_all(&tmp).ok();
                if !final_dir.exists() {
                    return Err(e.into());
                }
            }
            Ok(())
        }
        Err(e) => {
            fs::remove_dir_all(&tmp).ok();
            Err(e)
        }
    }
}

fn save_policy(base: &Path, policy: &GaussianPolicy) -> Result<()> {
    let mut tensors = mlp_tensors("mean", &policy.mean_net);
    tensors.push(Tensor::new("log_std", vec![policy.log_std.len()], policy.log_std.clone()));
    tensors.push(Tensor::new("action_bound", vec![1], vec![policy.action_bound]));
    checkpoint::save(base, &tensors)
}

fn load_policy(base: &Path) -> Result<GaussianPolicy> {
    let tensors = checkpoint::load(base)?;
    let log_std = tensors
        .iter()
        .find(|t| t.name == "log_std")
        .ok_or_else(|| Error::contract("policy checkpoint is missing log_std"))?
        .data
        .clone();
    let bound = checkpoint::take(&tensors, "action_bound", &[1])?[0];
    Ok(GaussianPolicy {
        mean_net: mlp_from_tensors(&tensors, "mean")?,
        log_std,
        action_bound: bound,
    })
}

// ─── Stage: collect ───

pub struct CollectArtifact {
    pub store: ExperienceStore,
    pub collectors: Vec<GaussianPolicy>,
    pub store_hash: String,
    pub dir: PathBuf,
}

/// Trains one collector per training environment and rolls every policy out
/// on every environment (the full cell grid), or loads all of it from cache.
pub fn stage_collect(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<CollectArtifact> {
    let family = cfg.build_family()?;
    let m = family.n_train();
    let key = cfg.collect_key(seed);
    let dir = out
        .join("stores")
        .join(format!("{}-seed{seed}-{key}", family.id().name()));

    if !dir.exists() {
        let ppo = cfg.ppo_config();
        build_dir(&dir, |tmp| {
            let mut collectors = Vec::with_capacity(m);
            let mut report_lines = Vec::with_capacity(m);
            for i in 0..m {
                let env = family.train_env(i);
                let outcome = train_ppo(&env, &ppo, seed, &[i as u64])?;
                report_lines.push(format!(
                    "{i},{},{},{},{}",
                    env.variation, outcome.initial_eval, outcome.best_eval, outcome.env_steps
                ));
                save_policy(&tmp.join(format!("policy-{i}")), &outcome.policy)?;
                collectors.push(outcome.policy);
            }
            write_csv(
                &tmp.join("collect_report.csv"),
                "env_index,variation,initial_eval,best_eval,env_steps",
                &report_lines,
            )?;

            let meta = StoreMeta {
                family: family.id(),
                n_envs: m,
                n_policies: m,
                state_dim: family.state_dim(),
                action_dim: family.action_dim(),
                horizon: family.config().horizon,
                discount: family.config().discount,
                episodes_per_cell: cfg.collect.episodes_per_cell,
                seed,
                train_variations: family.config().train_variations.clone(),
            };
            let mut store = ExperienceStore::new(meta)?;
            let mut steps = 0u64;
            for i in 0..m {
                let env = family.train_env(i);
                for (k, policy) in collectors.iter().enumerate() {
                    let mut rng = stream(seed, "cell", &[i as u64, k as u64]);
                    let trajs = collect_cell(
                        &env,
                        i,
                        k,
                        policy,
                        cfg.collect.episodes_per_cell,
                        &mut rng,
                        &mut steps,
                    )?;
                    store.ingest_cell(i, k, trajs)?;
                }
            }
            store.save(tmp)
        })?;
    }

    let store = ExperienceStore::load(&dir)?;
    let collectors = (0..m)
        .map(|i| load_policy(&dir.join(format!("policy-{i}"))))
        .collect::<Result<Vec<_>>>()?;
    let store_hash = ExperienceStore::manifest_hash(&dir)?;
    Ok(CollectArtifact { store, collectors, store_hash, dir })
}

// ─── Stage: encoders ───

pub struct EncoderArtifact {
    pub bundle: EncoderBundle,
    pub key: String,
    pub dir: PathBuf,
}

/// Trains the environment/policy encoders and the action decoder with the
/// recipe the variant calls for, or loads them from cache.
pub fn stage_encoders(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    collect: &CollectArtifact,
    out: &Path,
) -> Result<EncoderArtifact> {
    let recipe = variant.env_repr();
    let use_mi = variant.uses_mi();
    let key = cfg.encoder_key(seed, &collect.store_hash, recipe, use_mi);
    let tag = match (recipe, use_mi) {
        (EnvRepr::ContextContrast, true) => "contrast-mi",
        (EnvRepr::ContextContrast, false) => "contrast",
        (EnvRepr::DynamicsPrediction, _) => "dynamics",
    };
    let dir = out.join("encoders").join(format!("{tag}-seed{seed}-{key}"));

    if !dir.exists() {
        let rcfg = cfg.repr_config(use_mi);
        build_dir(&dir, |tmp| {
            let trained = match recipe {
                EnvRepr::ContextContrast => train_contrastive(&collect.store, &rcfg, seed)?,
                EnvRepr::DynamicsPrediction => train_dynamics(&collect.store, &rcfg, seed)?,
            };
            let lines: Vec<String> = trained
                .history
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{},{}",
                        r.step, r.env_term, r.recovery, r.decouple, r.complete, r.mle, r.total
                    )
                })
                .collect();
            write_csv(
                &tmp.join("history.csv"),
                "step,env_term,recovery,decouple,complete,mle,total",
                &lines,
            )?;
            trained.bundle.save(&tmp.join("encoders"))
        })?;
    }

    let bundle = EncoderBundle::load(&dir.join("encoders"))?;
    Ok(EncoderArtifact { bundle, key, dir })
}

// ─── Stage: value function ───

pub enum ValueModel {
    Nonlinear(PdvfModel),
    Quadratic(QuadraticPdvf),
}

pub struct PdvfArtifact {
    pub model: ValueModel,
    pub bank: EmbeddingBank,
    pub dir: PathBuf,
}

/// Per-cell fit rows for any value predictor, pooled R² against each cell's
/// own mean.
fn quadratic_cell_lines(
    store: &ExperienceStore,
    bank: &EmbeddingBank,
    model: &QuadraticPdvf,
) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for i in 0..store.meta.n_envs {
        for k in 0..store.meta.n_policies {
            let mut gs = Vec::new();
            let mut vs = Vec::new();
            for (traj, t_list) in store.cell_trajectories(i, k).iter().enumerate() {
                let z_e = bank.env_embedding(i, k, traj);
                let z_pi = bank.policy_embedding(i, k, traj);
                for (t, tr) in t_list.transitions.iter().enumerate() {
                    gs.push(store.cell_returns(i, k)[traj][t]);
                    vs.push(model.value(&tr.s, z_e, z_pi)?);
                }
            }
            let n = gs.len() as f64;
            let mean_g = gs.iter().sum::<f64>() / n;
            let mean_v = vs.iter().sum::<f64>() / n;
            let ss_res: f64 = gs.iter().zip(&vs).map(|(g, v)| (g - v) * (g - v)).sum();
            let ss_tot: f64 = gs.iter().map(|g| (g - mean_g) * (g - mean_g)).sum();
            let r2 = 1.0 - ss_res / ss_tot.max(1e-12);
            lines.push(format!("train,{i},{k},{mean_g},{mean_v},{r2},{}", gs.len()));
        }
    }
    Ok(lines)
}

/// Trains the value function the variant calls for (and, when enabled, the
/// leave-one-cell-out generalization pass), or loads it from cache. The
/// embedding bank is recomputed from the frozen encoders either way.
pub fn stage_pdvf(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    collect: &CollectArtifact,
    encoders: &EncoderArtifact,
    out: &Path,
) -> Result<PdvfArtifact> {
    let kind = variant.value_kind();
    let key = cfg.pdvf_key(seed, &encoders.key, kind);
    let tag = match kind {
        ValueKind::NonlinearGa => "value",
        ValueKind::QuadraticClosedForm => "quadratic",
    };
    let dir = out.join("pdvf").join(format!("{tag}-seed{seed}-{key}"));
    let bank = EmbeddingBank::build(&collect.store, &encoders.bundle)?;
    let pcfg = cfg.pdvf_config();

    if !dir.exists() {
        build_dir(&dir, |tmp| {
            let header = "split,env_index,policy_index,mean_return,mean_value,r2,n";
            match kind {
                ValueKind::NonlinearGa => {
                    let model = train_pdvf(&collect.store, &encoders.bundle, &pcfg, seed, None)?;
                    let mut lines = Vec::new();
                    for i in 0..collect.store.meta.n_envs {
                        for k in 0..collect.store.meta.n_policies {
                            let e = eval_cell(&collect.store, &bank, &model, i, k);
                            lines.push(format!(
                                "train,{i},{k},{},{},{},{}",
                                e.mean_return, e.mean_value, e.r2, e.n
                            ));
                        }
                    }
                    if cfg.pdvf.loco {
                        let (pooled, rows) = loco_r2(
                            &collect.store,
                            &encoders.bundle,
                            &bank,
                            &cfg.loco_config(),
                            seed,
                        )?;
                        for e in rows {
                            lines.push(format!(
                                "loco,{},{},{},{},{},{}",
                                e.env_index, e.policy_index, e.mean_return, e.mean_value, e.r2, e.n
                            ));
                        }
                        lines.push(format!("loco_pooled,,,,,{pooled},"));
                    }
                    write_csv(&tmp.join("pdvf_eval.csv"), header, &lines)?;
                    model.save(&tmp.join("value"))
                }
                ValueKind::QuadraticClosedForm => {
                    let model =
                        train_quadratic(&collect.store, &encoders.bundle, &bank, &pcfg, seed, None)?;
                    let lines = quadratic_cell_lines(&collect.store, &bank, &model)?;
                    write_csv(&tmp.join("pdvf_eval.csv"), header, &lines)?;
                    model.save(&tmp.join("value"))
                }
            }
        })?;
    }

    let model = match kind {
        ValueKind::NonlinearGa => ValueModel::Nonlinear(PdvfModel::load(&dir.join("value"))?),
        ValueKind::QuadraticClosedForm => {
            ValueModel::Quadratic(QuadraticPdvf::load(&dir.join("value"))?)
        }
    };
    Ok(PdvfArtifact { model, bank, dir })
}

// ─── Stage: adapt ───

pub struct AdaptOutcome {
    pub seed: u64,
    pub test_index: usize,
    pub variation: f64,
    pub probe_policy: usize,
    pub report: AdaptationReport,
}

fn write_adaptation_csvs(dir: &Path, report: &AdaptationReport) -> Result<()> {
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.step, r.mean_return, r.std_return, r.best_so_far))
        .collect();
    write_csv(
        &dir.join("adaptation_report.csv"),
        "step,return_mean,return_std,best_so_far",
        &rows,
    )?;
    let d = report.z_pi_init.len();
    let zcols: Vec<String> = (0..d).map(|j| format!("z_{j}")).collect();
    let mut zrows = Vec::with_capacity(report.rows.len() + 1);
    let fmt = |step: usize, z: &[f64]| {
        let mut line = step.to_string();
        for x in z {
            line.push(',');
            line.push_str(&x.to_string());
        }
        line
    };
    zrows.push(fmt(0, &report.z_pi_init));
    for r in &report.rows {
        if r.step != 0 {
            zrows.push(fmt(r.step, &r.z_pi));
        }
    }
    write_csv(&dir.join("zpi_trace.csv"), &format!("step,{}", zcols.join(",")), &zrows)
}

/// Adapts in every test environment: probe with a training collector,
/// ascend (or jump, for quadratic variants), evaluate on the configured
/// cadence, and write the per-environment report CSVs.
#[allow(clippy::too_many_arguments)]
pub fn stage_adapt(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    family: &EnvFamily,
    collect: &CollectArtifact,
    encoders: &EncoderArtifact,
    value: &PdvfArtifact,
    out: &Path,
) -> Result<Vec<AdaptOutcome>> {
    let init_scale = match &value.model {
        ValueModel::Nonlinear(_) => value.bank.mean_policy_norm,
        ValueModel::Quadratic(q) => q.mean_policy_norm,
    };
    let acfg = cfg.adaptation_config(init_scale)?;
    let n_ctx = cfg.representation.n_ctx;
    let run_tag = format!("{}-{}", variant.name(), cfg.config_hash());
    let mut outcomes = Vec::with_capacity(family.n_test());
    for j in 0..family.n_test() {
        let env = family.test_env(j);
        let probe_policy = draw_probe_index(collect.collectors.len(), seed, &[j as u64]);
        let probe = &collect.collectors[probe_policy];
        let report = match &value.model {
            ValueModel::Nonlinear(m) => {
                adapt(&env, &encoders.bundle, m, probe, &acfg, n_ctx, seed, &[j as u64])?
            }
            ValueModel::Quadratic(q) => adapt_closed_form(
                &env,
                &encoders.bundle,
                q,
                probe,
                &acfg,
                n_ctx,
                seed,
                &[j as u64],
            )?,
        };
        let dir = out.join("adapt").join(&run_tag).join(format!("seed{seed}/test{j}"));
        fs::create_dir_all(&dir)?;
        write_adaptation_csvs(&dir, &report)?;
        outcomes.push(AdaptOutcome {
            seed,
            test_index: j,
            variation: env.variation,
            probe_policy,
            report,
        });
    }
    Ok(outcomes)
}

// ─── Zero-shot baselines ───

pub struct BaselineRow {
    pub seed: u64,
    pub policy_index: usize,
    pub test_index: usize,
    pub variation: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Evaluates every training collector's deterministic mean policy zero-shot
/// on every test environment — the "best training policy" reference line.
pub fn zero_shot_baselines(
    cfg: &ExperimentConfig,
    seed: u64,
    family: &EnvFamily,
    collectors: &[GaussianPolicy],
) -> Result<Vec<BaselineRow>> {
    let mut rows = Vec::new();
    for (k, policy) in collectors.iter().enumerate() {
        let det = MeanPolicy { net: policy.mean_net.clone(), action_bound: policy.action_bound };
        for j in 0..family.n_test() {
            let env = family.test_env(j);
            let mut rng = stream(seed, "zero-shot", &[k as u64, j as u64]);
            let mut steps = 0u64;
            let (mean, std) =
                evaluate(&env, &det, cfg.adaptation.eval_episodes, &mut rng, &mut steps)?;
            rows.push(BaselineRow {
                seed,
                policy_index: k,
                test_index: j,
                variation: env.variation,
                mean_return: mean,
                std_return: std,
            });
        }
    }
    Ok(rows)
}

// ─── Pipeline ───

pub struct RunRow {
    pub seed: u64,
    pub test_index: usize,
    pub variation: f64,
    pub probe_policy: usize,
    pub best_step: usize,
    pub best_return: f64,
    pub final_return: f64,
    pub env_steps: u64,
}

pub struct EnvAggregate {
    pub test_index: usize,
    pub variation: f64,
    pub mean: f64,
    pub std: f64,
}

pub struct RunReport {
    pub variant: Variant,
    pub config_hash: String,
    pub rows: Vec<RunRow>,
    pub baselines: Vec<BaselineRow>,
    pub per_env: Vec<EnvAggregate>,
    pub overall_mean: f64,
    pub overall_std: f64,
    /// Highest zero-shot mean (over seeds × test envs) among the individual
    /// training policies.
    pub best_training_policy_zero_shot: f64,
    pub report_path: PathBuf,
    pub report_hash: String,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs collect → encoders → value → adapt for every seed, writes the
/// aggregate report and provenance files, and returns the in-memory report.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let variant = cfg.variant()?;
    let family = cfg.build_family()?;
    let config_hash = cfg.config_hash();
    fs::create_dir_all(out)?;

    let mut rows: Vec<RunRow> = Vec::new();
    let mut baselines: Vec<BaselineRow> = Vec::new();
    let mut store_hashes: Vec<(u64, String)> = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let collect = stage_collect(cfg, seed, out)
            .map_err(|e| Error::Config(format!("collect stage (seed {seed}): {e}")))?;
        let encoders = stage_encoders(cfg, variant, seed, &collect, out)
            .map_err(|e| Error::Config(format!("encoder stage (seed {seed}): {e}")))?;
        let value = stage_pdvf(cfg, variant, seed, &collect, &encoders, out)
            .map_err(|e| Error::Config(format!("value stage (seed {seed}): {e}")))?;
        let outcomes = stage_adapt(cfg, variant, seed, &family, &collect, &encoders, &value, out)
            .map_err(|e| Error::Config(format!("adapt stage (seed {seed}): {e}")))?;
        baselines.extend(zero_shot_baselines(cfg, seed, &family, &collect.collectors)?);
        store_hashes.push((seed, collect.store_hash.clone()));
        for o in outcomes {
            let last = o.report.rows.last().expect("reports have rows");
            rows.push(RunRow {
                seed: o.seed,
                test_index: o.test_index,
                variation: o.variation,
                probe_policy: o.probe_policy,
                best_step: o.report.best_step,
                best_return: o.report.best_return,
                final_return: last.mean_return,
                env_steps: o.report.env_steps,
            });
        }
    }

    // Aggregates: per test environment over seeds, then overall.
    let mut per_env = Vec::new();
    for j in 0..family.n_test() {
        let vals: Vec<f64> =
            rows.iter().filter(|r| r.test_index == j).map(|r| r.best_return).collect();
        let (mean, std) = mean_std(&vals);
        per_env.push(EnvAggregate {
            test_index: j,
            variation: family.test_env(j).variation,
            mean,
            std,
        });
    }
    let all: Vec<f64> = rows.iter().map(|r| r.best_return).collect();
    let (overall_mean, overall_std) = mean_std(&all);

    let best_training_policy_zero_shot = (0..family.n_train())
        .map(|k| {
            let vals: Vec<f64> = baselines
                .iter()
                .filter(|b| b.policy_index == k)
                .map(|b| b.mean_return)
                .collect();
            mean_std(&vals).0
        })
        .fold(f64::NEG_INFINITY, f64::max);

    // Report files.
    let reports = out.join("reports");
    fs::create_dir_all(&reports)?;
    let report_path = reports.join(format!("report-{}-{config_hash}.csv", variant.name()));
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                variant.name(),
                r.seed,
                r.test_index,
                r.variation,
                r.probe_policy,
                r.best_step,
                r.best_return,
                r.final_return,
                r.env_steps
            )
        })
        .collect();
    write_csv(
        &report_path,
        "variant,seed,test_index,variation,probe_policy,best_step,best_return,final_return,env_steps",
        &lines,
    )?;
    let report_hash = hex(&Sha256::digest(fs::read(&report_path)?));

    let baseline_lines: Vec<String> = baselines
        .iter()
        .map(|b| {
            format!(
                "{},{},{},{},{},{}",
                b.seed, b.policy_index, b.test_index, b.variation, b.mean_return, b.std_return
            )
        })
        .collect();
    write_csv(
        &reports.join(format!("baselines-{config_hash}.csv")),
        "seed,policy_index,test_index,variation,mean_return,std_return",
        &baseline_lines,
    )?;

    let mut provenance = String::new();
    provenance.push_str(&format!("config_hash = \"{config_hash}\"\n"));
    provenance.push_str(&format!("variant = \"{}\"\n", variant.name()));
    provenance.push_str(&format!("code_version = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    provenance.push_str(&format!("report_sha256 = \"{report_hash}\"\n"));
    for (seed, h) in &store_hashes {
        provenance.push_str(&format!("store_seed{seed} = \"{h}\"\n"));
    }
    fs::write(reports.join(format!("provenance-{config_hash}.toml")), provenance)?;
    fs::write(out.join("config-snapshot.toml"), cfg.to_toml())?;

    // Human-readable summary next to the CSVs.
    let mut txt = format!(
        "{} on {} ({} seeds, {} test envs)\n",
        variant.name(),
        family.id().name(),
        cfg.experiment.seeds.len(),
        family.n_test()
    );
    for e in &per_env {
        txt.push_str(&format!(
            "  test {} (variation {:.4}): {:.3} ± {:.3}\n",
            e.test_index, e.variation, e.mean, e.std
        ));
    }
    txt.push_str(&format!("  overall: {overall_mean:.3} ± {overall_std:.3}\n"));
    txt.push_str(&format!(
        "  best single training policy zero-shot: {best_training_policy_zero_shot:.3}\n"
    ));
    fs::write(reports.join(format!("report-{}-{config_hash}.txt", variant.name())), &txt)?;

    Ok(RunReport {
        variant,
        config_hash,
        rows,
        baselines,
        per_env,
        overall_mean,
        overall_std,
        best_training_policy_zero_shot,
        report_path,
        report_hash,
    })
}

// ─── Ablations ───

pub struct AblationRow {
    pub setting: String,
    pub test_index: usize,
    pub variation: f64,
    pub mean: f64,
    pub std: f64,
}

/// Runs the four MI settings {(α,β), (0,β), (α,0), (0,0)} with everything
/// else fixed and tabulates mean ± std per test environment. Collection is
/// shared across rows by the stage cache.
pub fn ablate_mi(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<AblationRow>, PathBuf)> {
    let alpha = cfg.representation.alpha;
    let beta = cfg.representation.beta;
    let settings = [
        ("PAnDR", alpha, beta),
        ("PAnDR_without_MIN_MI", 0.0, beta),
        ("PAnDR_without_MAX_MI", alpha, 0.0),
        ("PAnDR_without_MI", 0.0, 0.0),
    ];
    let mut rows = Vec::new();
    for (label, a, b) in settings {
        let mut sub = cfg.clone();
        sub.experiment.variant = "PAnDR".into();
        sub.representation.alpha = a;
        sub.representation.beta = b;
        let report = run_pipeline(&sub, out)?;
        for e in report.per_env {
            rows.push(AblationRow {
                setting: label.to_string(),
                test_index: e.test_index,
                variation: e.variation,
                mean: e.mean,
                std: e.std,
            });
        }
    }
    let path = out.join("reports").join(format!("ablation-{}.csv", cfg.config_hash()));
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{},{}", r.setting, r.test_index, r.variation, r.mean, r.std))
        .collect();
    write_csv(&path, "setting,test_index,variation,mean_return,std_return", &lines)?;
    Ok((rows, path))
}

// ─── Ascent-budget sweeps ───

pub struct SweepTables {
    pub steps_path: PathBuf,
    pub frequency_path: PathBuf,
    /// (seed, test_index, budget, best_so_far) rows of the steps table.
    pub steps_rows: Vec<(u64, usize, usize, f64)>,
    /// (seed, test_index, cadence label, best return) rows.
    pub frequency_rows: Vec<(u64, usize, String, f64)>,
}

pub const SWEEP_STEP_BUDGETS: [usize; 5] = [10, 20, 50, 100, 200];
pub const SWEEP_CADENCES: [usize; 5] = [1, 2, 5, 10, 20];

/// Emits the return-vs-ascent-budget and return-vs-evaluation-cadence
/// tables. One dense master run (N = 200, K = 1) per (seed, test env)
/// supplies every entry: per-step evaluation streams make the row a
/// budget-limited or cadence-limited run would produce bit-identical to the
/// master's row at the same step, so slicing the master is exact, not an
/// approximation.
pub fn sweep_ga(cfg: &ExperimentConfig, out: &Path) -> Result<SweepTables> {
    let variant = cfg.variant()?;
    if variant.value_kind() != ValueKind::NonlinearGa {
        return Err(Error::Config(format!(
            "variant {} jumps in closed form; the ascent sweep needs a gradient-ascent \
             variant (PAnDR, PAnDR_noMI or PDVF_NAGA)",
            variant.name()
        )));
    }
    let n_master = *SWEEP_STEP_BUDGETS.iter().max().unwrap();
    let mut sub = cfg.clone();
    sub.adaptation.ga_steps = n_master;
    sub.adaptation.eval_every = 1;

    let family = sub.build_family()?;
    let mut steps_rows = Vec::new();
    let mut frequency_rows = Vec::new();
    for &seed in &sub.experiment.seeds {
        let collect = stage_collect(&sub, seed, out)?;
        let encoders = stage_encoders(&sub, variant, seed, &collect, out)?;
        let value = stage_pdvf(&sub, variant, seed, &collect, &encoders, out)?;
        let outcomes = stage_adapt(&sub, variant, seed, &family, &collect, &encoders, &value, out)?;
        for o in outcomes {
            let best_up_to = |budget: usize| -> f64 {
                o.report
                    .rows
                    .iter()
                    .filter(|r| r.step <= budget)
                    .map(|r| r.mean_return)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            for &budget in &SWEEP_STEP_BUDGETS {
                steps_rows.push((seed, o.test_index, budget, best_up_to(budget)));
            }
            for &k in &SWEEP_CADENCES {
                let best = o
                    .report
                    .rows
                    .iter()
                    .filter(|r| r.step % k == 0 || r.step == n_master)
                    .map(|r| r.mean_return)
                    .fold(f64::NEG_INFINITY, f64::max);
                frequency_rows.push((seed, o.test_index, k.to_string(), best));
            }
            let last = o.report.rows.iter().find(|r| r.step == n_master).unwrap();
            frequency_rows.push((seed, o.test_index, "last".into(), last.mean_return));
        }
    }

    let reports = out.join("reports");
    let steps_path = reports.join(format!("sweep_steps-{}.csv", sub.config_hash()));
    let lines: Vec<String> = steps_rows
        .iter()
        .map(|(s, j, b, v)| format!("{s},{j},{b},{v}"))
        .collect();
    write_csv(&steps_path, "seed,test_index,ga_steps,best_return", &lines)?;

    let frequency_path = reports.join(format!("sweep_frequency-{}.csv", sub.config_hash()));
    let lines: Vec<String> = frequency_rows
        .iter()
        .map(|(s, j, k, v)| format!("{s},{j},{k},{v}"))
        .collect();
    write_csv(&frequency_path, "seed,test_index,eval_every,best_return", &lines)?;

    Ok(SweepTables { steps_path, frequency_path, steps_rows, frequency_rows })
}

// ─── Report summarization ───

/// Re-reads a written report CSV and prints per-environment aggregates —
/// the `report` subcommand.
pub fn summarize_report(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("variant,seed,test_index") {
        return Err(Error::format(path.display().to_string(), "not a run report"));
    }
    let mut rows: Vec<(String, usize, f64, f64)> = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 9 {
            return Err(Error::format(path.display().to_string(), format!("short row {line:?}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::format(path.display().to_string(), format!("bad number {s:?}")))
        };
        rows.push((f[0].to_string(), f[2].parse().unwrap_or(0), parse(f[3])?, parse(f[6])?));
    }
    if rows.is_empty() {
        return Err(Error::format(path.display().to_string(), "report has no rows"));
    }
    let variant = rows[0].0.clone();
    let mut target = format!("{variant} — best adapted return per test environment\n");
    let mut envs: Vec<usize> = rows.iter().map(|r| r.1).collect();
    envs.sort_unstable();
    envs.dedup();
    for j in envs {
        let vals: Vec<f64> = rows.iter().filter(|r| r.1 == j).map(|r| r.3).collect();
        let (mean, std) = mean_std(&vals);
        let variation = rows.iter().find(|r| r.1 == j).unwrap().2;
        target.push_str(&format!(
            "  test {j} (variation {variation:.4}): {mean:.3} ± {std:.3} over {} runs\n",
            vals.len()
        ));
    }
    let all: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let (mean, std) = mean_std(&all);
    target.push_str(&format!("  overall: {mean:.3} ± {std:.3}\n"));
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A pipeline config small enough to run end to end in seconds.
    fn micro_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.name = "micro".into();
        cfg.experiment.seeds = vec![0];
        cfg.experiment.variant = "PAnDR".into();
        cfg.family.id = "mass_damp".into();
        cfg.family.n_train = 2;
        cfg.family.n_test = 2;
        cfg.collect.episodes_per_cell = 3;
        cfg.collect.ppo_total_steps = 300;
        cfg.collect.ppo_rollout_steps = 100;
        cfg.collect.ppo_epochs = 2;
        cfg.collect.eval_episodes = 2;
        cfg.representation.d = 3;
        cfg.representation.hidden = 12;
        cfg.representation.head_hidden = 12;
        cfg.representation.steps = 8;
        cfg.representation.pretrain_steps = 5;
        cfg.representation.n_ctx = 10;
        cfg.representation.n_bhv = 10;
        cfg.representation.mi_batch = 4;
        cfg.representation.rec_batch = 4;
        cfg.representation.cell_batch = 4;
        cfg.pdvf.steps = 10;
        cfg.pdvf.batch = 16;
        cfg.pdvf.hidden = vec![16, 16];
        cfg.adaptation.probe_steps = 25;
        cfg.adaptation.ga_steps = 4;
        cfg.adaptation.eval_every = 2;
        cfg.adaptation.eval_episodes = 2;
        cfg
    }

    fn temp_out(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("pandr-harness-{tag}"));
        fs::remove_dir_all(&dir).ok();
        dir
    }

    #[test]
    fn pipeline_runs_caches_and_reruns_bit_identically() {
        let cfg = micro_config();
        let out = temp_out("pipeline");
        let first = run_pipeline(&cfg, &out).unwrap();
        assert_eq!(first.rows.len(), 2); // 1 seed × 2 test envs
        assert!(first.report_path.exists());
        assert!(!first.baselines.is_empty());
        assert!(first.best_training_policy_zero_shot.is_finite());
        for row in &first.rows {
            assert!(row.best_return.is_finite());
            assert!(row.env_steps > 0);
        }

        // Stage directories materialized.
        assert!(out.join("stores").read_dir().unwrap().next().is_some());
        assert!(out.join("encoders").read_dir().unwrap().next().is_some());
        assert!(out.join("pdvf").read_dir().unwrap().next().is_some());

        // A rerun reuses the caches and reproduces the report bytes.
        let second = run_pipeline(&cfg, &out).unwrap();
        assert_eq!(first.report_hash, second.report_hash);
        for (a, b) in first.rows.iter().zip(&second.rows) {
            assert_eq!(a.best_return.to_bits(), b.best_return.to_bits());
            assert_eq!(a.env_steps, b.env_steps);
        }

        // The summary reader parses what the pipeline wrote.
        let summary = summarize_report(&first.report_path).unwrap();
        assert!(summary.contains("PAnDR"));
        assert!(summary.contains("overall"));
        fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn quadratic_variant_shares_the_store_cache() {
        let mut cfg = micro_config();
        let out = temp_out("variants");
        run_pipeline(&cfg, &out).unwrap();
        let stores_before: Vec<_> = out.join("stores").read_dir().unwrap().collect();

        cfg.experiment.variant = "PDVF".into();
        let report = run_pipeline(&cfg, &out).unwrap();
        assert_eq!(report.variant, Variant::Pdvf);
        // Same family/collect settings and seed ⇒ no new store was built.
        let stores_after: Vec<_> = out.join("stores").read_dir().unwrap().collect();
        assert_eq!(stores_before.len(), stores_after.len());
        // The quadratic run produces single-row reports at step 0.
        for row in &report.rows {
            assert_eq!(row.best_step, 0);
        }
        fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn sweep_slices_dominate_smaller_budgets() {
        // The sweep overrides ga_steps with the largest budget (200), so the
        // master run dominates this test's wall time; the micro nets keep
        // each ascent step and evaluation cheap.
        let cfg = micro_config();
        let out = temp_out("sweep");
        let tables = sweep_ga(&cfg, &out).unwrap();
        assert!(tables.steps_path.exists());
        assert!(tables.frequency_path.exists());
        // Per (seed, test), best-so-far is nondecreasing in the budget.
        for j in 0..2 {
            let mut prev = f64::NEG_INFINITY;
            for &budget in &SWEEP_STEP_BUDGETS {
                let v = tables
                    .steps_rows
                    .iter()
                    .find(|(s, t, b, _)| *s == 0 && *t == j && *b == budget)
                    .unwrap()
                    .3;
                assert!(v >= prev);
                prev = v;
            }
        }
        // The frequency table carries every cadence plus "last".
        let cadences: Vec<String> = tables
            .frequency_rows
            .iter()
            .filter(|(s, t, _, _)| *s == 0 && *t == 0)
            .map(|(_, _, k, _)| k.clone())
            .collect();
        assert_eq!(cadences, vec!["1", "2", "5", "10", "20", "last"]);
        fs::remove_dir_all(&out).ok();
    }
}
