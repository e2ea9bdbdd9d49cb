//! Speaker-set inference by exhaustive subset search, the SingleEm and Guess
//! baselines, and the four-mode evaluation report.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::autodiff::{l2_normalized, squared_distance};
use crate::error::{Error, Result};
use crate::nets::{CompositionalModel, Variant};
use crate::seed::{rng_for, SeededRng};
use crate::synth::{label_space, Episode, SpeakerId, SpeakerSet};

/// Enrollment and pseudo-enrollment embeddings for every subset up to
/// `max_card`, in canonical set order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentTable {
    entries: Vec<(SpeakerSet, Vec<f64>)>,
    max_card: usize,
    variant: Variant,
}

impl EnrollmentTable {
    /// Singletons are `f` of the enrollment; a larger set `T` is
    /// `g(f(x̄_last), ē_{T \ last})` where `last` is its largest id.
    pub fn build(
        model: &CompositionalModel,
        speakers: &[SpeakerId],
        enrollments: &[Vec<f64>],
        max_card: usize,
    ) -> Result<Self> {
        if speakers.len() != enrollments.len() {
            return Err(Error::DimensionMismatch {
                what: "enrollments",
                expected: speakers.len(),
                got: enrollments.len(),
            });
        }
        let singles: Vec<(SpeakerId, Vec<f64>)> = speakers
            .iter()
            .zip(enrollments)
            .map(|(&s, x)| model.embed(x).map(|e| (s, e)))
            .collect::<Result<_>>()?;
        EnrollmentTable::from_singletons(model, &singles, max_card)
    }

    /// Builds the table from already-embedded singleton enrollments.
    pub fn from_singletons(
        model: &CompositionalModel,
        singles: &[(SpeakerId, Vec<f64>)],
        max_card: usize,
    ) -> Result<Self> {
        let ids: Vec<SpeakerId> = singles.iter().map(|(s, _)| *s).collect();
        if max_card > 1 && !model.variant().has_composition() {
            return Err(Error::InvalidArgument(
                "pseudo-enrollments need a composition function".into(),
            ));
        }
        let mut entries: Vec<(SpeakerSet, Vec<f64>)> = Vec::new();
        for set in label_space(&ids, max_card) {
            let emb = if set.len() == 1 {
                singles
                    .iter()
                    .find(|(s, _)| *s == set.ids()[0])
                    .map(|(_, e)| e.clone())
                    .ok_or(Error::UnknownSpeaker(set.ids()[0]))?
            } else {
                let (last, rest) = set.split_last().expect("non-empty");
                let last_e = &singles
                    .iter()
                    .find(|(s, _)| *s == last)
                    .ok_or(Error::UnknownSpeaker(last))?
                    .1;
                // label_space is ordered by cardinality, so `rest` is present.
                let rest_e = &entries.iter().find(|(t, _)| *t == rest).expect("smaller sets first").1;
                model.compose(last_e, rest_e)?
            };
            entries.push((set, emb));
        }
        Ok(EnrollmentTable {
            entries,
            max_card,
            variant: model.variant(),
        })
    }

    /// Table whose entries are centroids of singleton embeddings, the
    /// SingleEm way of locating sets.
    pub fn centroids(singles: &[(SpeakerId, Vec<f64>)], max_card: usize) -> Self {
        let ids: Vec<SpeakerId> = singles.iter().map(|(s, _)| *s).collect();
        let dim = singles.first().map_or(0, |(_, e)| e.len());
        let entries = label_space(&ids, max_card)
            .into_iter()
            .map(|set| {
                let mut c = vec![0.0; dim];
                for id in set.ids() {
                    let e = &singles.iter().find(|(s, _)| s == id).expect("member").1;
                    c.iter_mut().zip(e).for_each(|(a, b)| *a += b);
                }
                let k = set.len() as f64;
                c.iter_mut().for_each(|a| *a /= k);
                (set, c)
            })
            .collect();
        EnrollmentTable {
            entries,
            max_card,
            variant: Variant::SingleEm,
        }
    }

    /// A table from explicit entries. Sets must be distinct, non-empty and
    /// within `max_card`; they are stored in canonical order.
    pub fn from_entries(mut entries: Vec<(SpeakerSet, Vec<f64>)>, max_card: usize, variant: Variant) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!("duplicate set {}", w[0].0)));
        }
        if let Some((s, _)) = entries.iter().find(|(s, _)| s.is_empty() || s.len() > max_card) {
            return Err(Error::InvalidArgument(format!(
                "set {s} outside cardinality 1..={max_card}"
            )));
        }
        Ok(EnrollmentTable {
            entries,
            max_card,
            variant,
        })
    }

    pub fn entries(&self) -> &[(SpeakerSet, Vec<f64>)] {
        &self.entries
    }

    pub fn get(&self, set: &SpeakerSet) -> Option<&[f64]> {
        self.entries.iter().find(|(t, _)| t == set).map(|(_, e)| e.as_slice())
    }

    pub fn max_card(&self) -> usize {
        self.max_card
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub set: SpeakerSet,
    /// Every candidate searched, in canonical order.
    pub distances: Vec<(SpeakerSet, f64)>,
}

/// Argmin with ties going to the earliest candidate in canonical order.
fn argmin(distances: Vec<(SpeakerSet, f64)>) -> Result<Prediction> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, d)) in distances.iter().enumerate() {
        if best.is_none_or(|(_, bd)| *d < bd) {
            best = Some((i, *d));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::InvalidArgument("no candidate sets".into()))?;
    Ok(Prediction {
        set: distances[i].0.clone(),
        distances,
    })
}

/// Compares an embedding against table entries under the variant's rule:
/// CmpEm normalizes both sides first, other variants use raw vectors.
fn search(table: &EnrollmentTable, query: &[f64], keep: impl Fn(&SpeakerSet) -> bool) -> Result<Prediction> {
    let normalize = table.variant == Variant::CmpEm;
    let q = if normalize {
        l2_normalized(query)?
    } else {
        query.to_vec()
    };
    let mut distances = Vec::new();
    for (set, e) in &table.entries {
        if !keep(set) {
            continue;
        }
        let d = if normalize {
            squared_distance(&q, &l2_normalized(e)?)
        } else {
            squared_distance(&q, e)
        };
        distances.push((set.clone(), d));
    }
    argmin(distances)
}

/// Search over every table entry for the embedded input.
pub fn infer_set_embedded(table: &EnrollmentTable, fx: &[f64]) -> Result<Prediction> {
    search(table, fx, |_| true)
}

/// `argmin_T d(f(x), ē_T)`, with z-normalization on both sides for CmpEm.
pub fn infer_set(model: &CompositionalModel, table: &EnrollmentTable, x: &[f64]) -> Result<Prediction> {
    infer_set_embedded(table, &model.embed(x)?)
}

pub fn infer_set_given_k_embedded(table: &EnrollmentTable, fx: &[f64], k: usize) -> Result<Prediction> {
    if k == 0 || k > table.max_card {
        return Err(Error::InvalidArgument(format!(
            "cardinality {k} outside 1..={}",
            table.max_card
        )));
    }
    search(table, fx, |s| s.len() == k)
}

/// Search restricted to sets of exactly `k` speakers.
pub fn infer_set_given_k(
    model: &CompositionalModel,
    table: &EnrollmentTable,
    x: &[f64],
    k: usize,
) -> Result<Prediction> {
    infer_set_given_k_embedded(table, &model.embed(x)?, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleEmMode {
    /// Compare with the centroid of every subset up to the given size.
    SearchAll(usize),
    /// The `k` singletons nearest to `f(x)`.
    TopK(usize),
}

/// SingleEm set inference from already-embedded singleton enrollments.
pub fn single_em_infer_embedded(
    singles: &[(SpeakerId, Vec<f64>)],
    fx: &[f64],
    mode: SingleEmMode,
) -> Result<Prediction> {
    match mode {
        SingleEmMode::SearchAll(max_card) => {
            if max_card == 0 || max_card > singles.len() {
                return Err(Error::InvalidArgument(format!(
                    "max cardinality {max_card} out of range"
                )));
            }
            search(&EnrollmentTable::centroids(singles, max_card), fx, |_| true)
        }
        SingleEmMode::TopK(k) => {
            if k == 0 || k > singles.len() {
                return Err(Error::InvalidArgument(format!("k = {k} out of range")));
            }
            let mut scored: Vec<(SpeakerSet, f64)> = singles
                .iter()
                .map(|(s, e)| (SpeakerSet::singleton(*s), squared_distance(fx, e)))
                .collect();
            scored.sort_by(|a, b| a.0.cmp(&b.0));
            let mut ranked: Vec<&(SpeakerSet, f64)> = scored.iter().collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            let set = ranked[..k].iter().flat_map(|(s, _)| s.ids().iter().copied()).collect();
            Ok(Prediction { set, distances: scored })
        }
    }
}

pub fn single_em_infer(
    model: &CompositionalModel,
    speakers: &[SpeakerId],
    enrollments: &[Vec<f64>],
    x: &[f64],
    mode: SingleEmMode,
) -> Result<Prediction> {
    let singles = embed_singletons(model, speakers, enrollments)?;
    single_em_infer_embedded(&singles, &model.embed(x)?, mode)
}

pub fn embed_singletons(
    model: &CompositionalModel,
    speakers: &[SpeakerId],
    enrollments: &[Vec<f64>],
) -> Result<Vec<(SpeakerId, Vec<f64>)>> {
    speakers
        .iter()
        .zip(enrollments)
        .map(|(&s, x)| model.embed(x).map(|e| (s, e)))
        .collect()
}

/// A model under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Evaluated<'a> {
    /// CmpEm or CmpEmL2: pseudo-enrollment search.
    Compositional(&'a CompositionalModel),
    /// Centroid search, top-k when the cardinality is given.
    Single(&'a CompositionalModel),
    /// Uniform draws over the valid label space.
    Guess,
}

/// Correct / total counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn record(&mut self, ok: bool) {
        self.correct += usize::from(ok);
        self.total += 1;
    }

    /// Percentage, or NaN when empty.
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub name: String,
    /// Mode 1: set accuracy over all examples.
    pub overall: Tally,
    /// Mode 2: set accuracy for true `|T| = k`, `by_k[k - 1]`.
    pub unknown_by_k: Vec<Tally>,
    /// Mode 3: cardinality accuracy.
    pub cardinality: Tally,
    /// Mode 4: set accuracy when `|T| = k` is given, `given_k[k - 1]`.
    pub given_k: Vec<Tally>,
}

impl ModelMetrics {
    fn new(name: &str, max_card: usize) -> Self {
        ModelMetrics {
            name: name.to_string(),
            overall: Tally::default(),
            unknown_by_k: vec![Tally::default(); max_card],
            cardinality: Tally::default(),
            given_k: vec![Tally::default(); max_card],
        }
    }

    /// Strata where oracle cardinality scored below free search. Not a
    /// theorem for learned models, so this is reported rather than enforced.
    pub fn oracle_regressions(&self) -> Vec<usize> {
        self.unknown_by_k
            .iter()
            .zip(&self.given_k)
            .enumerate()
            .filter(|(_, (u, g))| g.percent() < u.percent())
            .map(|(k, _)| k + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub max_card: usize,
    pub models: Vec<ModelMetrics>,
}

impl MetricsReport {
    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.name == name)
    }

    fn rows(&self) -> Vec<(&'static str, String, Vec<f64>)> {
        let mut rows = Vec::new();
        let col = |f: &dyn Fn(&ModelMetrics) -> f64| self.models.iter().map(f).collect::<Vec<_>>();
        rows.push((
            "set_id_unknown_k",
            format!("<={}", self.max_card),
            col(&|m| m.overall.percent()),
        ));
        for k in 1..=self.max_card {
            rows.push((
                "set_id_unknown_k",
                k.to_string(),
                col(&|m| m.unknown_by_k[k - 1].percent()),
            ));
        }
        rows.push((
            "set_size",
            format!("<={}", self.max_card),
            col(&|m| m.cardinality.percent()),
        ));
        for k in 1..=self.max_card {
            rows.push(("set_id_given_k", k.to_string(), col(&|m| m.given_k[k - 1].percent())));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,stratum");
        for m in &self.models {
            s.push(',');
            s.push_str(&m.name);
        }
        s.push('\n');
        for (section, stratum, vals) in self.rows() {
            s.push_str(section);
            s.push(',');
            s.push_str(&stratum);
            for v in vals {
                let _ = write!(s, ",{v:.2}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Mean accuracy (% correct) in inferring the speaker set");
        let _ = write!(s, "{:<10}", "#spkrs");
        for m in &self.models {
            let _ = write!(s, "{:>10}", m.name);
        }
        s.push('\n');
        let mut last = "";
        for (section, stratum, vals) in self.rows() {
            if section != last {
                let title = match section {
                    "set_id_unknown_k" => "Speaker set identification, |T| unknown",
                    "set_size" => "Speaker set size estimation",
                    _ => "Speaker set identification, |T| given",
                };
                let _ = writeln!(s, "-- {title}");
                last = section;
            }
            let _ = write!(s, "{stratum:<10}");
            for v in vals {
                let _ = write!(s, "{v:>10.1}");
            }
            s.push('\n');
        }
        s
    }
}

/// Scores every model on every example of every episode in all four modes.
pub fn evaluate_episode_batch(
    models: &[(&str, Evaluated<'_>)],
    episodes: &[Episode],
    guess_seed: u64,
) -> Result<MetricsReport> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no episodes to evaluate".into()))?;
    let max_card = first.max_card;
    let mut guess_rng = rng_for(guess_seed, "guess");
    let mut out = Vec::new();
    for (name, model) in models {
        let mut m = ModelMetrics::new(name, max_card);
        for ep in episodes {
            if ep.max_card != max_card {
                return Err(Error::InvalidArgument("episodes disagree on max cardinality".into()));
            }
            let mut scorer = EpisodeScorer::new(*model, ep)?;
            for ex in &ep.examples {
                let k = ex.label.len();
                let free = scorer.predict(&ex.features, None, &mut guess_rng)?;
                let given = scorer.predict(&ex.features, Some(k), &mut guess_rng)?;
                m.overall.record(free == ex.label);
                m.unknown_by_k[k - 1].record(free == ex.label);
                m.cardinality.record(free.len() == k);
                m.given_k[k - 1].record(given == ex.label);
            }
        }
        out.push(m);
    }
    Ok(MetricsReport { max_card, models: out })
}

/// Overall set accuracy of one compositional or single model on episodes,
/// used for validation-based model selection.
pub fn set_accuracy(model: Evaluated<'_>, episodes: &[Episode]) -> Result<f64> {
    let mut t = Tally::default();
    let mut unused = rng_for(0, "unused");
    for ep in episodes {
        let mut scorer = EpisodeScorer::new(model, ep)?;
        for ex in &ep.examples {
            t.record(scorer.predict(&ex.features, None, &mut unused)? == ex.label);
        }
    }
    Ok(t.percent() / 100.0)
}

enum EpisodeScorer<'a> {
    Compositional(&'a CompositionalModel, EnrollmentTable),
    Single(&'a CompositionalModel, Vec<(SpeakerId, Vec<f64>)>, usize),
    Guess(Vec<SpeakerSet>),
}

impl<'a> EpisodeScorer<'a> {
    fn new(model: Evaluated<'a>, ep: &Episode) -> Result<Self> {
        Ok(match model {
            Evaluated::Compositional(m) => EpisodeScorer::Compositional(
                m,
                EnrollmentTable::build(m, &ep.speakers, &ep.enrollments, ep.max_card)?,
            ),
            Evaluated::Single(m) => {
                EpisodeScorer::Single(m, embed_singletons(m, &ep.speakers, &ep.enrollments)?, ep.max_card)
            }
            Evaluated::Guess => EpisodeScorer::Guess(ep.label_space()),
        })
    }

    fn predict(&mut self, x: &[f64], given_k: Option<usize>, rng: &mut SeededRng) -> Result<SpeakerSet> {
        Ok(match self {
            EpisodeScorer::Compositional(m, table) => {
                let fx = m.embed(x)?;
                match given_k {
                    None => infer_set_embedded(table, &fx)?.set,
                    Some(k) => infer_set_given_k_embedded(table, &fx, k)?.set,
                }
            }
            EpisodeScorer::Single(m, singles, max_card) => {
                let mode = match given_k {
                    None => SingleEmMode::SearchAll(*max_card),
                    Some(k) => SingleEmMode::TopK(k),
                };
                single_em_infer_embedded(singles, &m.embed(x)?, mode)?.set
            }
            EpisodeScorer::Guess(space) => {
                let pool: Vec<&SpeakerSet> = match given_k {
                    None => space.iter().collect(),
                    Some(k) => space.iter().filter(|s| s.len() == k).collect(),
                };
                guess(&pool, rng)?
            }
        })
    }
}

fn guess<R: Rng + ?Sized>(pool: &[&SpeakerSet], rng: &mut R) -> Result<SpeakerSet> {
    pool.choose(rng)
        .map(|s| (*s).clone())
        .ok_or_else(|| Error::InvalidArgument("empty label space".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Dims, ParamId};
    use crate::seed::rng_for;
    use crate::synth::{sample_episode, SpeakerBank};

    fn table_of(variant: Variant, entries: Vec<(Vec<SpeakerId>, Vec<f64>)>, max_card: usize) -> EnrollmentTable {
        EnrollmentTable {
            entries: entries.into_iter().map(|(ids, e)| (SpeakerSet::new(ids), e)).collect(),
            max_card,
            variant,
        }
    }

    #[test]
    fn hand_table_prefers_pair() {
        let t = table_of(
            Variant::CmpEmL2,
            vec![
                (vec![1], vec![1.0, 0.0]),
                (vec![2], vec![0.0, 1.0]),
                (vec![1, 2], vec![0.707, 0.707]),
            ],
            2,
        );
        // Brute force: d({1}) = 0.09 + 0.509796 = 0.599796, d({2}) = 0.49 + 0.081796 = 0.571796,
        // d({1,2}) = 0.000049 + 0.000049 = 0.000098.
        let p = infer_set_embedded(&t, &[0.7, 0.714]).unwrap();
        assert_eq!(p.set, SpeakerSet::new(vec![1, 2]));
        let d: Vec<f64> = p.distances.iter().map(|(_, d)| *d).collect();
        assert!((d[0] - 0.599796).abs() < 1e-12);
        assert!((d[1] - 0.571796).abs() < 1e-12);
        assert!((d[2] - 0.000098).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smallest_then_lexicographic() {
        let t = table_of(
            Variant::CmpEmL2,
            vec![
                (vec![1], vec![1.0, 0.0]),
                (vec![2], vec![1.0, 0.0]),
                (vec![1, 2], vec![1.0, 0.0]),
            ],
            2,
        );
        for _ in 0..3 {
            assert_eq!(
                infer_set_embedded(&t, &[1.0, 0.0]).unwrap().set,
                SpeakerSet::singleton(1)
            );
        }
    }

    #[test]
    fn single_em_centroid_search() {
        // Candidates: {a}, {b}, {c}, {a,b} at [.5,.5], {a,c} at [0,0], {b,c} at [-.5,.5].
        let singles = vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0]), (2, vec![-1.0, 0.0])];
        let p = single_em_infer_embedded(&singles, &[0.6, 0.55], SingleEmMode::SearchAll(2)).unwrap();
        assert_eq!(p.set, SpeakerSet::new(vec![0, 1]));
        assert_eq!(p.distances.len(), 6);
        let brute = p.distances.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(brute.0, p.set);
        let top1 = single_em_infer_embedded(&singles, &[0.6, 0.55], SingleEmMode::TopK(1)).unwrap();
        assert_eq!(top1.set, SpeakerSet::singleton(0));
        let top2 = single_em_infer_embedded(&singles, &[0.6, 0.55], SingleEmMode::TopK(2)).unwrap();
        assert_eq!(top2.set, SpeakerSet::new(vec![0, 1]));
    }

    #[test]
    fn single_em_identical_enrollments() {
        let singles = vec![(3, vec![1.0, 1.0]), (4, vec![1.0, 1.0]), (5, vec![1.0, 1.0])];
        let p = single_em_infer_embedded(&singles, &[0.2, -0.3], SingleEmMode::SearchAll(3)).unwrap();
        assert_eq!(p.set, SpeakerSet::singleton(3));
    }

    #[test]
    fn cmpem_scale_invariance() {
        let t = table_of(
            Variant::CmpEm,
            vec![
                (vec![1], vec![1.0, 0.2]),
                (vec![2], vec![0.1, 1.0]),
                (vec![1, 2], vec![2.0, 1.8]),
            ],
            2,
        );
        let scaled = table_of(
            Variant::CmpEm,
            t.entries
                .iter()
                .map(|(s, e)| (s.ids().to_vec(), e.iter().map(|v| v * 7.5).collect()))
                .collect(),
            2,
        );
        for q in [[0.9, 0.1], [0.3, 0.35], [0.05, 1.0]] {
            let qs: Vec<f64> = q.iter().map(|v| v * 7.5).collect();
            assert_eq!(
                infer_set_embedded(&t, &q).unwrap().set,
                infer_set_embedded(&scaled, &qs).unwrap().set
            );
        }
    }

    #[test]
    fn given_k_restricts_cardinality() {
        let bank = SpeakerBank::generate(1, 10, 8, 0.3).unwrap();
        let pool: Vec<_> = (0..10).collect();
        let ep = sample_episode(&bank, &pool, 5, 3, 1, &mut rng_for(1, "ep")).unwrap();
        let dims = Dims {
            input: 8,
            hidden: 6,
            embed: 4,
        };
        let m = CompositionalModel::init(dims, Variant::CmpEm, &mut rng_for(1, "m")).unwrap();
        let t = EnrollmentTable::build(&m, &ep.speakers, &ep.enrollments, 3).unwrap();
        assert_eq!(t.len(), 25);
        for ex in &ep.examples {
            for k in 1..=3 {
                assert_eq!(infer_set_given_k(&m, &t, &ex.features, k).unwrap().set.len(), k);
            }
            let one = infer_set_given_k(&m, &t, &ex.features, 1).unwrap().set;
            let singles = embed_singletons(&m, &ep.speakers, &ep.enrollments).unwrap();
            let fx = m.embed(&ex.features).unwrap();
            let nearest = singles
                .iter()
                .map(|(s, e)| {
                    (
                        s,
                        squared_distance(&l2_normalized(&fx).unwrap(), &l2_normalized(e).unwrap()),
                    )
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(one, SpeakerSet::singleton(*nearest.0));
        }
        assert!(infer_set_given_k(&m, &t, &ep.examples[0].features, 0).is_err());
        assert!(infer_set_given_k(&m, &t, &ep.examples[0].features, 4).is_err());
    }

    #[test]
    fn canonical_recursion() {
        let dims = Dims {
            input: 4,
            hidden: 5,
            embed: 3,
        };
        let m = CompositionalModel::init(dims, Variant::CmpEm, &mut rng_for(2, "m")).unwrap();
        let xs = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![-0.3, 0.2, 0.0, 0.9],
            vec![0.5, -0.5, 0.5, -0.5],
        ];
        let t = EnrollmentTable::build(&m, &[4, 7, 9], &xs, 3).unwrap();
        let (fa, fb, fc) = (
            m.embed(&xs[0]).unwrap(),
            m.embed(&xs[1]).unwrap(),
            m.embed(&xs[2]).unwrap(),
        );
        assert_eq!(t.get(&SpeakerSet::singleton(7)).unwrap(), fb.as_slice());
        let abc = m.compose(&fc, &m.compose(&fb, &fa).unwrap()).unwrap();
        assert_eq!(t.get(&SpeakerSet::new(vec![4, 7, 9])).unwrap(), abc.as_slice());
    }

    #[test]
    fn noiseless_enrollment_is_recognized() {
        let bank = SpeakerBank::generate(3, 10, 8, 0.0).unwrap();
        let pool: Vec<_> = (0..10).collect();
        let ep = sample_episode(&bank, &pool, 5, 3, 1, &mut rng_for(2, "ep")).unwrap();
        let dims = Dims {
            input: 8,
            hidden: 16,
            embed: 6,
        };
        let mut m = CompositionalModel::init(dims, Variant::CmpEm, &mut rng_for(1, "m")).unwrap();
        // Keep g far from the singleton embeddings.
        m.param_mut(ParamId::W1)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= 40.0);
        let t = EnrollmentTable::build(&m, &ep.speakers, &ep.enrollments, 3).unwrap();
        for (s, x) in ep.speakers.iter().zip(&ep.enrollments) {
            assert_eq!(infer_set(&m, &t, x).unwrap().set, SpeakerSet::singleton(*s));
        }
    }

    #[test]
    fn guess_rates() {
        let bank = SpeakerBank::generate(3, 30, 8, 0.3).unwrap();
        let pool: Vec<_> = (0..30).collect();
        let mut rng = rng_for(5, "eps");
        let eps: Vec<Episode> = (0..400)
            .map(|_| sample_episode(&bank, &pool, 5, 3, 1, &mut rng).unwrap())
            .collect();
        let r = evaluate_episode_batch(&[("Guess", Evaluated::Guess)], &eps, 1).unwrap();
        let g = r.model("Guess").unwrap();
        assert!((g.overall.percent() - 4.0).abs() < 1.5);
        assert!((g.cardinality.percent() - 36.0).abs() < 3.0);
        assert!((g.given_k[0].percent() - 20.0).abs() < 5.0);
        assert_eq!(g.unknown_by_k.iter().map(|t| t.total).sum::<usize>(), g.overall.total);
        assert_eq!(
            g.unknown_by_k.iter().map(|t| t.correct).sum::<usize>(),
            g.overall.correct
        );
        assert!(r.to_csv().starts_with("section,stratum,Guess\n"));
        assert_eq!(r.to_csv().lines().count(), 1 + 1 + 3 + 1 + 3);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(evaluate_episode_batch(&[("Guess", Evaluated::Guess)], &[], 0).is_err());
    }
}
