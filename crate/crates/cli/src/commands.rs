use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use compemb::diarization::run_benchmark;
use compemb::gradcheck::{check_all, TOLERANCE};
use compemb::inference::{evaluate_episode_batch, Evaluated};
use compemb::nets::{load_model, save_model, CompositionalModel, Variant};
use compemb::seed::{derive_seed, rng_for};
use compemb::synth::SpeakerBank;
use compemb::training::{test_episodes, train, train_single_embedding};

use crate::config::{ConfigError, RunConfig};

/// Raised when a command ran but its check did not pass.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write(&out.join("resolved_config.txt"), &cfg.to_text())?;
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// The synthetic speaker universe, a pure function of the root seed.
pub fn bank(cfg: &RunConfig) -> Result<SpeakerBank> {
    let split = cfg.split()?;
    let dims = cfg.dims()?;
    Ok(SpeakerBank::generate(
        derive_seed(cfg.seed()?, "bank"),
        split.total(),
        dims.input,
        cfg.noise()?,
    )?)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let variants = cfg.train_variants()?;
    let train_cfgs = variants
        .iter()
        .map(|&v| cfg.train_config(v))
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let dims = cfg.dims()?;
    let split = cfg.split()?;
    let out = prepare_out(cfg)?;
    let bank = bank(cfg)?;
    for (variant, tc) in variants.iter().zip(&train_cfgs) {
        if tc.episodes_train == 0 {
            log::warn!(
                "train.episodes_train = 0: the {} model is written unchanged",
                variant.label()
            );
        }
        let mut init_rng = rng_for(tc.seed, &format!("init.{}", variant.tag()));
        let model = CompositionalModel::init(dims, *variant, &mut init_rng)?;
        log::info!("training {} for {} episodes", variant.label(), tc.episodes_train);
        let outcome = if *variant == Variant::SingleEm {
            train_single_embedding(&model, &bank, &split, tc)?
        } else {
            train(&model, &bank, &split, tc)?
        };
        let dir = if variants.len() > 1 {
            out.join(variant.tag())
        } else {
            out.clone()
        };
        fs::create_dir_all(&dir)?;
        save_model(&outcome.best, dir.join("model_best.txt"))?;
        save_model(&outcome.last, dir.join("model_final.txt"))?;
        write(&dir.join("train_log.csv"), &outcome.log.to_csv())?;
        match (outcome.best_val_accuracy, outcome.best_episode) {
            (Some(acc), Some(ep)) => println!(
                "{}: best validation accuracy {:.2}% after episode {}",
                variant.label(),
                100.0 * acc,
                ep + 1
            ),
            _ => println!("{}: no training episodes, model unchanged", variant.label()),
        }
    }
    Ok(())
}

fn load(cfg: &RunConfig, variant: Variant) -> Result<Option<CompositionalModel>> {
    let Some(path) = cfg.model_path(variant) else {
        return Ok(None);
    };
    let m = load_model(&path).with_context(|| format!("cannot load model {}", path.display()))?;
    if m.variant() != variant {
        bail!(
            "{} holds a {} model, expected {}",
            path.display(),
            m.variant().label(),
            variant.label()
        );
    }
    Ok(Some(m))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train_config(Variant::CmpEm)?;
    let split = cfg.split()?;
    let models: Vec<(Variant, Option<CompositionalModel>)> = [Variant::CmpEmL2, Variant::CmpEm, Variant::SingleEm]
        .into_iter()
        .map(|v| load(cfg, v).map(|m| (v, m)))
        .collect::<Result<_>>()?;
    let out = prepare_out(cfg)?;
    let bank = bank(cfg)?;
    let episodes = test_episodes(&bank, &split, &tc)?;
    let mut evaluated: Vec<(&str, Evaluated<'_>)> = Vec::new();
    for (v, m) in &models {
        if let Some(m) = m {
            let e = if v.has_composition() {
                Evaluated::Compositional(m)
            } else {
                Evaluated::Single(m)
            };
            evaluated.push((v.label(), e));
        }
    }
    evaluated.push(("Guess", Evaluated::Guess));
    let report = evaluate_episode_batch(&evaluated, &episodes, derive_seed(tc.seed, "eval.guess"))?;
    for m in &report.models {
        let worse = m.oracle_regressions();
        if !worse.is_empty() {
            log::warn!(
                "{}: oracle cardinality scored below free search for |T| in {worse:?}",
                m.name
            );
        }
    }
    let text = report.to_text();
    write(&out.join("eval_report.txt"), &text)?;
    write(&out.join("eval_report.csv"), &report.to_csv())?;
    print!("{text}");
    Ok(())
}

pub fn cmd_diarize(cfg: &RunConfig, dump_rttm: bool) -> Result<()> {
    let bc = cfg.benchmark_config()?;
    let strategies = cfg.strategies()?;
    let split = cfg.split()?;
    let single = load(cfg, Variant::SingleEm)?;
    let cmp = load(cfg, Variant::CmpEm)?;
    let needs_single = strategies.iter().any(|s| !s.uses_composition());
    let needs_cmp = strategies.iter().any(|s| s.uses_composition());
    let (single, cmp) = match (single, cmp) {
        (Some(s), Some(c)) => (s, c),
        (Some(s), None) if !needs_cmp => (s.clone(), s),
        (None, Some(c)) if !needs_single => (c.clone(), c),
        _ => bail!("diarize needs eval.singleem and eval.cmpem model paths for the requested strategies"),
    };
    let out = prepare_out(cfg)?;
    let bank = bank(cfg)?;
    let pool: Vec<usize> = split.test_ids().collect();
    let report = run_benchmark(&bank, &pool, &single, &cmp, &strategies, &bc)?;
    let text = report.to_text();
    write(&out.join("der_report.txt"), &text)?;
    write(&out.join("der_report.csv"), &report.to_csv())?;
    if dump_rttm {
        let dir = out.join("rttm");
        fs::create_dir_all(&dir)?;
        for (i, s) in report.streams.iter().enumerate() {
            let id = format!("stream{i:02}");
            write(&dir.join(format!("{id}_reference.rttm")), &s.reference.to_rttm(&id))?;
            for (st, hyp, _) in &s.hypotheses {
                write(&dir.join(format!("{id}_{}.rttm", st.name())), &hyp.to_rttm(&id))?;
            }
        }
    }
    print!("{text}");
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let trials = cfg.gradcheck_trials()?;
    let fault = cfg.corrupt_op()?;
    let out = prepare_out(cfg)?;
    let checks = check_all(cfg.seed()?, trials, fault)?;
    let mut text = String::new();
    for c in &checks {
        text.push_str(&format!(
            "{:<18} max_rel_error {:.3e} over {:>3} entries  {}\n",
            c.op.name(),
            c.max_rel_error,
            c.checked,
            if c.passed() { "PASS" } else { "FAIL" }
        ));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op.name()).collect();
    text.push_str(if failed.is_empty() {
        "gradcheck PASS\n"
    } else {
        "gradcheck FAIL\n"
    });
    write(&out.join("gradcheck.txt"), &text)?;
    print!("{text}");
    if !failed.is_empty() {
        return Err(CheckFailed(format!(
            "gradient check exceeded tolerance {TOLERANCE:e} for: {}",
            failed.join(", ")
        ))
        .into());
    }
    Ok(())
}
