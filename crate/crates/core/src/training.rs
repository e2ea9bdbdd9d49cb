//! Episodic triplet training of `f` and `g` with Adam and validation-based
//! model selection.

use std::fmt::Write as _;

use crate::autodiff::{squared_distance, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::inference::{set_accuracy, Evaluated};
use crate::nets::{BoundModel, CompositionalModel, Variant};
use crate::seed::{rng_for, rng_indexed};
use crate::synth::{label_space, sample_episode, Episode, SpeakerBank, SpeakerId, SpeakerSet, SpeakerSplit};

/// How the negatives of one anchor are reduced to a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mining {
    /// Mean hinge over the negatives whose hinge is active.
    #[default]
    AllActive,
    /// Only the negative with the largest hinge.
    Hardest,
}

impl Mining {
    pub fn tag(self) -> &'static str {
        match self {
            Mining::AllActive => "all_active",
            Mining::Hardest => "hardest",
        }
    }
}

impl std::str::FromStr for Mining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_active" => Ok(Mining::AllActive),
            "hardest" => Ok(Mining::Hardest),
            other => Err(Error::InvalidArgument(format!("unknown mining strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub margin: f64,
    pub episodes_train: usize,
    pub episodes_val: usize,
    pub episodes_test: usize,
    /// Validate after every this many episodes (and after the last one).
    pub val_every: usize,
    pub seed: u64,
    pub variant: Variant,
    pub n_speakers: usize,
    pub max_card: usize,
    pub examples_per_set: usize,
    pub mining: Mining,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            margin: 0.1,
            episodes_train: 20_000,
            episodes_val: 500,
            episodes_test: 2_000,
            val_every: 1_000,
            seed: 0,
            variant: Variant::CmpEm,
            n_speakers: 5,
            max_card: 3,
            examples_per_set: 1,
            mining: Mining::AllActive,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.adam.lr));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam.eps > 0.0) {
            return bad("adam eps must be positive".into());
        }
        if self.episodes_val == 0 || self.episodes_test == 0 {
            return bad("validation and test episode counts must be at least 1".into());
        }
        if self.val_every == 0 {
            return bad("val_every must be at least 1".into());
        }
        if self.examples_per_set == 0 {
            return bad("examples_per_set must be at least 1".into());
        }
        if self.n_speakers == 0 || self.max_card == 0 || self.max_card > self.n_speakers {
            return bad(format!(
                "max_card {} must lie in 1..=n_speakers ({})",
                self.max_card, self.n_speakers
            ));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            shapes: vec![vec![params.len()], vec![grads.len()], vec![state.m.len()]],
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), vec![g.len()], vec![state.m[i].len()]],
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `max(0, d(a,p) - d(a,n) + margin)` with squared Euclidean `d`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::ShapeMismatch {
            op: "triplet_loss",
            shapes: vec![vec![anchor.len()], vec![positive.len()], vec![negative.len()]],
        });
    }
    Ok((squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin).max(0.0))
}

/// Graph-recorded enrollment table: singletons through `f`, larger sets by
/// the canonical recursion through `g`. Entries follow canonical set order.
pub fn build_enrollment_embeddings(
    g: &mut Graph,
    bound: &BoundModel,
    episode: &Episode,
) -> Result<Vec<(SpeakerSet, Var)>> {
    if episode.enrollments.len() != episode.speakers.len() {
        return Err(Error::DimensionMismatch {
            what: "enrollments",
            expected: episode.speakers.len(),
            got: episode.enrollments.len(),
        });
    }
    let mut singles: Vec<(SpeakerId, Var)> = Vec::with_capacity(episode.speakers.len());
    for (&s, x) in episode.speakers.iter().zip(&episode.enrollments) {
        let xv = g.constant(Tensor::vector(x.clone()));
        singles.push((s, bound.embed(g, xv)?));
    }
    let mut entries: Vec<(SpeakerSet, Var)> = Vec::new();
    for set in label_space(&episode.speakers, episode.max_card) {
        let v = match set.split_last() {
            Some((last, rest)) if !rest.is_empty() => {
                let last_v = singles.iter().find(|(s, _)| *s == last).expect("member").1;
                let rest_v = entries.iter().find(|(t, _)| *t == rest).expect("smaller sets first").1;
                bound.compose(g, last_v, rest_v)?
            }
            _ => singles.iter().find(|(s, _)| *s == set.ids()[0]).expect("member").1,
        };
        entries.push((set, v));
    }
    Ok(entries)
}

/// Records the episode loss: every example is an anchor, its set's table
/// entry the positive, and every other entry a negative.
pub fn episode_loss(g: &mut Graph, bound: &BoundModel, episode: &Episode, margin: f64, mining: Mining) -> Result<Var> {
    let table = build_enrollment_embeddings(g, bound, episode)?;
    let margin_v = g.constant(Tensor::scalar(margin));
    let zero = g.constant(Tensor::scalar(0.0));
    let mut per_anchor = Vec::with_capacity(episode.examples.len());
    for ex in &episode.examples {
        let xv = g.constant(Tensor::vector(ex.features.clone()));
        let a = bound.embed(g, xv)?;
        let pos = table
            .iter()
            .find(|(t, _)| *t == ex.label)
            .ok_or_else(|| Error::InvalidArgument(format!("label {} outside the table", ex.label)))?
            .1;
        let dp = g.squared_euclidean(a, pos)?;
        let mut hinges = Vec::new();
        for (t, e) in &table {
            if *t == ex.label {
                continue;
            }
            let dn = g.squared_euclidean(a, *e)?;
            let diff = g.sub(dp, dn)?;
            let shifted = g.add(diff, margin_v)?;
            let h = g.max0(shifted)?;
            hinges.push(h);
        }
        let active: Vec<Var> = hinges
            .iter()
            .copied()
            .filter(|&h| !(g.value(h).data()[0] <= 0.0))
            .collect();
        let term = match mining {
            _ if active.is_empty() => zero,
            Mining::AllActive => {
                let s = g.stack(&active)?;
                g.mean(s)?
            }
            Mining::Hardest => *active
                .iter()
                .reduce(|best, h| {
                    if g.value(*h).data()[0] > g.value(*best).data()[0] {
                        h
                    } else {
                        best
                    }
                })
                .expect("non-empty"),
        };
        per_anchor.push(term);
    }
    if per_anchor.is_empty() {
        return Err(Error::InvalidArgument("episode has no examples".into()));
    }
    let s = g.stack(&per_anchor)?;
    g.mean(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub episode_index: usize,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode_index,loss,val_accuracy\n");
        for e in &self.entries {
            let _ = write!(s, "{},{:e},", e.episode_index, e.loss);
            if let Some(v) = e.val_accuracy {
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Mean loss over the first and last `fraction` of episodes.
    pub fn loss_trend(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.entries.len();
        let k = ((n as f64 * fraction).round() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |xs: &[LogEntry]| xs.iter().map(|e| e.loss).sum::<f64>() / xs.len() as f64;
        Some((mean(&self.entries[..k]), mean(&self.entries[n - k..])))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation accuracy (earliest on ties).
    pub best: CompositionalModel,
    pub last: CompositionalModel,
    pub best_val_accuracy: Option<f64>,
    pub best_episode: Option<usize>,
    pub log: TrainLog,
}

/// Episodes over the validation speakers, shared by every validation pass.
pub fn validation_episodes(
    bank: &SpeakerBank,
    split: &SpeakerSplit,
    cfg: &TrainConfig,
    max_card: usize,
) -> Result<Vec<Episode>> {
    let pool: Vec<SpeakerId> = split.val_ids().collect();
    let mut rng = rng_for(cfg.seed, "val.episodes");
    (0..cfg.episodes_val)
        .map(|_| sample_episode(bank, &pool, cfg.n_speakers, max_card, cfg.examples_per_set, &mut rng))
        .collect()
}

/// Episodes over the held-out test speakers.
pub fn test_episodes(bank: &SpeakerBank, split: &SpeakerSplit, cfg: &TrainConfig) -> Result<Vec<Episode>> {
    let pool: Vec<SpeakerId> = split.test_ids().collect();
    let mut rng = rng_for(cfg.seed, "test.episodes");
    (0..cfg.episodes_test)
        .map(|_| {
            sample_episode(
                bank,
                &pool,
                cfg.n_speakers,
                cfg.max_card,
                cfg.examples_per_set,
                &mut rng,
            )
        })
        .collect()
}

/// Joint training of `f` and `g`, one episode per optimizer step.
pub fn train(
    model: &CompositionalModel,
    bank: &SpeakerBank,
    split: &SpeakerSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if !model.variant().has_composition() {
        return Err(Error::InvalidArgument(
            "joint training needs a model with a composition function; use train_single_embedding".into(),
        ));
    }
    run(model, bank, split, cfg, cfg.max_card, cfg.examples_per_set)
}

/// Trains `f` alone on singleton-only episodes. Each set gets more examples
/// so an episode holds as many anchors as a joint-training episode.
pub fn train_single_embedding(
    model: &CompositionalModel,
    bank: &SpeakerBank,
    split: &SpeakerSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if model.variant() != Variant::SingleEm {
        return Err(Error::InvalidArgument(format!(
            "single-embedding training needs a SingleEm model, got {}",
            model.variant().label()
        )));
    }
    let anchors = label_space(&(0..cfg.n_speakers).collect::<Vec<_>>(), cfg.max_card).len() * cfg.examples_per_set;
    let per_set = anchors.div_ceil(cfg.n_speakers);
    run(model, bank, split, cfg, 1, per_set)
}

fn run(
    model: &CompositionalModel,
    bank: &SpeakerBank,
    split: &SpeakerSplit,
    cfg: &TrainConfig,
    max_card: usize,
    examples_per_set: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if bank.dim() != model.dims().input {
        return Err(Error::DimensionMismatch {
            what: "bank feature dimension",
            expected: model.dims().input,
            got: bank.dim(),
        });
    }
    if split.total() > bank.len() {
        return Err(Error::InsufficientSpeakers {
            need: split.total(),
            have: bank.len(),
        });
    }
    let mut log = TrainLog::default();
    if cfg.episodes_train == 0 {
        return Ok(TrainOutcome {
            best: model.clone(),
            last: model.clone(),
            best_val_accuracy: None,
            best_episode: None,
            log,
        });
    }
    let val = validation_episodes(bank, split, cfg, max_card)?;
    let evaluated = |m: &CompositionalModel| -> Result<f64> {
        let e = if m.variant().has_composition() {
            Evaluated::Compositional(m)
        } else {
            Evaluated::Single(m)
        };
        set_accuracy(e, &val)
    };
    let pool: Vec<SpeakerId> = split.train_ids().collect();
    let mut current = model.clone();
    let mut state = AdamState::new(current.params());
    let mut best = (current.clone(), None::<f64>, None::<usize>);

    for i in 0..cfg.episodes_train {
        let mut rng = rng_indexed(cfg.seed, "train.episode", i);
        let ep = sample_episode(bank, &pool, cfg.n_speakers, max_card, examples_per_set, &mut rng)?;
        let mut g = Graph::new();
        let bound = current.bind(&mut g);
        let loss = episode_loss(&mut g, &bound, &ep, cfg.margin, cfg.mining)?;
        let value = g.value(loss).item().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                episode: i,
                loss: value,
            });
        }
        g.backward(loss)?;
        let grads = bound.grads(&g);
        adam_step(current.params_mut(), &grads, &mut state, &cfg.adam)?;

        let mut entry = LogEntry {
            episode_index: i,
            loss: value,
            val_accuracy: None,
        };
        if (i + 1) % cfg.val_every == 0 || i + 1 == cfg.episodes_train {
            let acc = evaluated(&current)?;
            log::debug!("episode {}: loss {value:.5}, validation accuracy {acc:.4}", i + 1);
            entry.val_accuracy = Some(acc);
            if best.1.is_none_or(|b| acc > b) {
                best = (current.clone(), Some(acc), Some(i));
            }
        }
        log.entries.push(entry);
    }
    Ok(TrainOutcome {
        best: best.0,
        last: current,
        best_val_accuracy: best.1,
        best_episode: best.2,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Dims, ParamId};

    fn small_dims() -> Dims {
        Dims {
            input: 12,
            hidden: 16,
            embed: 8,
        }
    }

    fn small_cfg(episodes: usize) -> TrainConfig {
        TrainConfig {
            episodes_train: episodes,
            episodes_val: 10,
            episodes_test: 10,
            val_every: 10,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn small_world() -> (SpeakerBank, SpeakerSplit) {
        (
            SpeakerBank::generate(11, 60, 12, 0.3).unwrap(),
            SpeakerSplit {
                train: 40,
                val: 10,
                test: 10,
            },
        )
    }

    #[test]
    fn triplet_examples() {
        // d(a,p) = 0.2, d(a,n) = 0.5
        let a = [0.0, 0.0];
        let p = [0.2f64.sqrt(), 0.0];
        let n = [0.0, 0.5f64.sqrt()];
        assert!(triplet_loss(&a, &p, &n, 0.1).unwrap().abs() < 1e-12);
        assert!((triplet_loss(&a, &n, &p, 0.1).unwrap() - 0.4).abs() < 1e-12);
        assert!((triplet_loss(&a, &a, &[0.05, 0.0], 0.1).unwrap() - 0.0975).abs() < 1e-12);
        assert!(triplet_loss(&a, &p, &[1.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![2.0], vec![2.0]], &mut s, &AdamConfig::default()).unwrap();
        // m̂ = 2, v̂ = 4, step = lr · 2 / (2 + 1e-8)
        let expected = 1.0 - 3e-4 * 2.0 / (2.0 + 1e-8);
        assert_eq!(p[0].data()[0], expected);
        assert_eq!(p[0].data(), p[1].data());
        assert!((p[0].data()[0] - 0.9997).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_grad_and_shapes() {
        let mut p = vec![Tensor::vector(vec![0.5, -1.5])];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.0, 0.0]], &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p[0].data(), &[0.5, -1.5]);
        assert!(adam_step(&mut p, &[vec![0.0]], &mut s, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[], &mut s, &AdamConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.adam.lr = -1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            margin: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            episodes_val: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            max_card: 6,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn table_matches_plain_recursion() {
        let (bank, split) = small_world();
        let m = CompositionalModel::init(small_dims(), Variant::CmpEm, &mut rng_for(1, "m")).unwrap();
        let ep = sample_episode(
            &bank,
            &split.train_ids().collect::<Vec<_>>(),
            5,
            3,
            1,
            &mut rng_for(1, "e"),
        )
        .unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g);
        let table = build_enrollment_embeddings(&mut g, &bound, &ep).unwrap();
        assert_eq!(table.len(), 25);
        let plain = crate::inference::EnrollmentTable::build(&m, &ep.speakers, &ep.enrollments, 3).unwrap();
        for ((s1, v), (s2, e)) in table.iter().zip(plain.entries()) {
            assert_eq!(s1, s2);
            assert_eq!(g.value(*v).data(), e.as_slice());
        }
    }

    #[test]
    fn episode_loss_matches_plain_oracle() {
        let (bank, split) = small_world();
        let m = CompositionalModel::init(small_dims(), Variant::CmpEm, &mut rng_for(2, "m")).unwrap();
        let ep = sample_episode(
            &bank,
            &split.train_ids().collect::<Vec<_>>(),
            5,
            3,
            1,
            &mut rng_for(2, "e"),
        )
        .unwrap();
        let plain = crate::inference::EnrollmentTable::build(&m, &ep.speakers, &ep.enrollments, 3).unwrap();
        for mining in [Mining::AllActive, Mining::Hardest] {
            let mut total = 0.0;
            for ex in &ep.examples {
                let a = m.embed(&ex.features).unwrap();
                let p = plain.get(&ex.label).unwrap();
                let hinges: Vec<f64> = plain
                    .entries()
                    .iter()
                    .filter(|(t, _)| *t != ex.label)
                    .map(|(_, n)| triplet_loss(&a, p, n, 0.1).unwrap())
                    .filter(|h| *h > 0.0)
                    .collect();
                if !hinges.is_empty() {
                    total += match mining {
                        Mining::AllActive => hinges.iter().sum::<f64>() / hinges.len() as f64,
                        Mining::Hardest => hinges.iter().cloned().fold(f64::MIN, f64::max),
                    };
                }
            }
            let expected = total / ep.examples.len() as f64;
            let mut g = Graph::new();
            let bound = m.bind(&mut g);
            let l = episode_loss(&mut g, &bound, &ep, 0.1, mining).unwrap();
            let got = g.value(l).item().unwrap();
            assert!((got - expected).abs() < 1e-12, "{mining:?}: {got} vs {expected}");
            assert!(got.is_finite() && got > 0.0);
        }
    }

    #[test]
    fn gradient_reaches_f_through_g() {
        let (bank, split) = small_world();
        let m = CompositionalModel::init(small_dims(), Variant::CmpEm, &mut rng_for(4, "m")).unwrap();
        let ep = sample_episode(
            &bank,
            &split.train_ids().collect::<Vec<_>>(),
            5,
            3,
            1,
            &mut rng_for(4, "e"),
        )
        .unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g);
        let table = build_enrollment_embeddings(&mut g, &bound, &ep).unwrap();
        // Anchors enter as constants and singleton entries are skipped, so the
        // only route from the loss back to f runs through g.
        let mut hinges = Vec::new();
        let margin = g.constant(Tensor::scalar(0.1));
        for ex in ep.examples.iter().filter(|e| e.label.len() > 1) {
            let a = g.constant(Tensor::vector(m.embed(&ex.features).unwrap()));
            let pos = table.iter().find(|(t, _)| *t == ex.label).unwrap().1;
            let dp = g.squared_euclidean(a, pos).unwrap();
            for (t, e) in table.iter().filter(|(t, _)| t.len() > 1 && *t != ex.label) {
                let _ = t;
                let dn = g.squared_euclidean(a, *e).unwrap();
                let d = g.sub(dp, dn).unwrap();
                let s = g.add(d, margin).unwrap();
                let h = g.max0(s).unwrap();
                if g.value(h).data()[0] > 0.0 {
                    hinges.push(h);
                }
            }
        }
        assert!(!hinges.is_empty());
        let s = g.stack(&hinges).unwrap();
        let loss = g.mean(s).unwrap();
        g.backward(loss).unwrap();
        let grads = bound.grads(&g);
        let nonzero = |id: ParamId| grads[id as usize].iter().any(|v| *v != 0.0);
        assert!(nonzero(ParamId::W1) && nonzero(ParamId::W2));
        assert!(nonzero(ParamId::HiddenWeight) && nonzero(ParamId::OutWeight));
    }

    #[test]
    fn zero_episodes_leave_model_unchanged() {
        let (bank, split) = small_world();
        let m = CompositionalModel::init(small_dims(), Variant::CmpEm, &mut rng_for(5, "m")).unwrap();
        let out = train(&m, &bank, &split, &small_cfg(0)).unwrap();
        assert_eq!(out.best, m);
        assert_eq!(out.last, m);
        assert!(out.log.entries.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_logs() {
        let (bank, split) = small_world();
        let m = CompositionalModel::init(small_dims(), Variant::CmpEmL2, &mut rng_for(6, "m")).unwrap();
        let a = train(&m, &bank, &split, &small_cfg(25)).unwrap();
        let b = train(&m, &bank, &split, &small_cfg(25)).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.last, b.last);
        assert_eq!(a.log.entries.len(), 25);
        let validated: Vec<usize> = a
            .log
            .entries
            .iter()
            .filter(|e| e.val_accuracy.is_some())
            .map(|e| e.episode_index)
            .collect();
        assert_eq!(validated, vec![9, 19, 24]);
        assert!(a.log.entries[0].loss.is_finite() && a.log.entries[0].loss > 0.0);
        assert_ne!(a.last, m);
        let csv = a.log.to_csv();
        assert!(csv.starts_with("episode_index,loss,val_accuracy\n"));
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn single_embedding_training() {
        let (bank, split) = small_world();
        let m = CompositionalModel::init(small_dims(), Variant::SingleEm, &mut rng_for(7, "m")).unwrap();
        let out = train_single_embedding(&m, &bank, &split, &small_cfg(5)).unwrap();
        assert!(out.best.param(ParamId::W1).is_none());
        assert!(train(&m, &bank, &split, &small_cfg(5)).is_err());
        let cmp = CompositionalModel::init(small_dims(), Variant::CmpEm, &mut rng_for(7, "m")).unwrap();
        assert!(train_single_embedding(&cmp, &bank, &split, &small_cfg(5)).is_err());
    }

    #[test]
    fn non_finite_loss_names_episode() {
        let (bank, split) = small_world();
        let mut m = CompositionalModel::init(small_dims(), Variant::CmpEm, &mut rng_for(8, "m")).unwrap();
        m.param_mut(ParamId::OutBias).unwrap().data_mut()[0] = f64::NAN;
        match train(&m, &bank, &split, &small_cfg(3)) {
            Err(Error::NonFiniteLoss { episode, .. }) => assert_eq!(episode, 0),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }
}
