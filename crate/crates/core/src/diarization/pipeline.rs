//! Turn clustering, segment assignment under the four strategies, and the
//! seeded stream benchmark.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use super::cluster::{affinity_propagation, cosine_similarity_matrix, ApConfig};
use super::der::{der_score, DerBreakdown};
use crate::autodiff::l2_normalized;
use crate::error::{Error, Result};
use crate::nets::CompositionalModel;
use crate::seed::rng_indexed;
use crate::synth::{
    generate_timeline, label_space, noisy_change_detector, render_frames, SpeakerBank, SpeakerId, SpeakerSet,
    StreamParams, Timeline, TurnSpan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    SingleEmTurn,
    SingleEmSegOverlap,
    CmpEmSeg,
    CmpEmSegOverlap,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SingleEmTurn,
        Strategy::SingleEmSegOverlap,
        Strategy::CmpEmSeg,
        Strategy::CmpEmSegOverlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SingleEmTurn => "single_em_turn",
            Strategy::SingleEmSegOverlap => "single_em_seg_overlap",
            Strategy::CmpEmSeg => "cmpem_seg",
            Strategy::CmpEmSegOverlap => "cmpem_seg_overlap",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::SingleEmTurn => "SingleEm (turn)",
            Strategy::SingleEmSegOverlap => "SingleEm (segment) with overlap detector",
            Strategy::CmpEmSeg => "CmpEm (segment)",
            Strategy::CmpEmSegOverlap => "CmpEm (segment) with overlap detector",
        }
    }

    pub fn uses_composition(self) -> bool {
        matches!(self, Strategy::CmpEmSeg | Strategy::CmpEmSegOverlap)
    }

    pub fn uses_overlap_detector(self) -> bool {
        matches!(self, Strategy::SingleEmSegOverlap | Strategy::CmpEmSegOverlap)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown diarization strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiarizeConfig {
    /// Turns at least this long define the speaker clusters.
    pub long_turn_s: f64,
    pub segment_s: f64,
    pub ap: ApConfig,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        DiarizeConfig {
            long_turn_s: 3.3,
            segment_s: 1.0,
            // Long-turn means of one speaker are near duplicates, on which
            // message passing at damping 0.5 oscillates indefinitely.
            ap: ApConfig {
                damping: 0.9,
                ..ApConfig::default()
            },
        }
    }
}

impl DiarizeConfig {
    fn frames(&self, seconds: f64, frame_duration: f64) -> usize {
        ((seconds / frame_duration).round() as usize).max(1)
    }
}

/// A rendered stream: the reference, the turns a change detector reports,
/// and per-frame features (`None` during silence).
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub reference: Timeline,
    pub turns: Vec<TurnSpan>,
    pub features: Vec<Option<Vec<f64>>>,
}

/// Change-detector degradation; zeros give oracle turns.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChangeDetector {
    pub jitter_frames: usize,
    pub miss_rate: f64,
}

pub fn simulate_stream<R: Rng + ?Sized>(
    bank: &SpeakerBank,
    speakers: &[SpeakerId],
    params: &StreamParams,
    detector: ChangeDetector,
    rng: &mut R,
) -> Result<Stream> {
    let (reference, turns) = generate_timeline(bank, speakers, params, rng)?;
    let features = render_frames(bank, &reference, rng)?;
    let turns = noisy_change_detector(&turns, detector.jitter_frames, detector.miss_rate, rng);
    Ok(Stream {
        reference,
        turns,
        features,
    })
}

/// Splits each turn into consecutive pieces of `seg_frames`; a shorter
/// remainder is kept as its own segment.
pub fn segments_of(turns: &[TurnSpan], seg_frames: usize) -> Vec<TurnSpan> {
    let step = seg_frames.max(1);
    let mut out = Vec::new();
    for t in turns {
        let mut s = t.start;
        while s < t.end {
            let e = (s + step).min(t.end);
            out.push(TurnSpan { start: s, end: e });
            s = e;
        }
    }
    out
}

/// Flags each segment whose reference frames are mostly overlapped speech,
/// then flips true flags with `miss_rate` and false ones with
/// `false_alarm_rate`.
pub fn simulated_overlap_detector<R: Rng + ?Sized>(
    reference: &Timeline,
    segments: &[TurnSpan],
    false_alarm_rate: f64,
    miss_rate: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    for (name, r) in [("false alarm rate", false_alarm_rate), ("miss rate", miss_rate)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {r}")));
        }
    }
    segments
        .iter()
        .map(|seg| {
            let frames = reference.frames.get(seg.start..seg.end).ok_or_else(|| {
                Error::TimelineMismatch(format!("segment {}..{} outside the reference", seg.start, seg.end))
            })?;
            let overlapped = frames.iter().filter(|f| f.len() > 1).count();
            let truth = 2 * overlapped > frames.len();
            let flip_rate = if truth { miss_rate } else { false_alarm_rate };
            let flip = flip_rate > 0.0 && rng.random_bool(flip_rate);
            Ok(truth != flip)
        })
        .collect()
}

/// Per-frame embeddings, `None` for silence.
pub fn embed_frames(model: &CompositionalModel, features: &[Option<Vec<f64>>]) -> Result<Vec<Option<Vec<f64>>>> {
    features
        .iter()
        .map(|f| f.as_ref().map(|x| model.embed(x)).transpose())
        .collect()
}

/// Mean embedding over the speech frames of a span.
fn span_mean(frame_embs: &[Option<Vec<f64>>], span: &TurnSpan) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for e in frame_embs[span.start..span.end].iter().flatten() {
        match acc.as_mut() {
            None => acc = Some(e.clone()),
            Some(a) => a.iter_mut().zip(e).for_each(|(x, y)| *x += y),
        }
        n += 1;
    }
    acc.map(|mut a| {
        a.iter_mut().for_each(|x| *x /= n as f64);
        a
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Unit-norm centroid per discovered speaker.
    pub centroids: Vec<Vec<f64>>,
    /// Indices into the turn list of the turns that were clustered.
    pub long_turns: Vec<usize>,
    /// Cluster per entry of `long_turns`.
    pub assignment: Vec<usize>,
    pub converged: bool,
}

/// Clusters the mean embeddings of long turns by affinity propagation on
/// cosine similarity.
pub fn cluster_turns(
    frame_embs: &[Option<Vec<f64>>],
    turns: &[TurnSpan],
    long_frames: usize,
    ap: &ApConfig,
    long_turn_s: f64,
) -> Result<ClusterResult> {
    let mut long_turns = Vec::new();
    let mut means = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if t.len() >= long_frames {
            if let Some(m) = span_mean(frame_embs, t) {
                long_turns.push(i);
                means.push(m);
            }
        }
    }
    if means.is_empty() {
        return Err(Error::InsufficientEnrollment {
            min_seconds: long_turn_s,
        });
    }
    let sim = cosine_similarity_matrix(&means)?;
    let ap = affinity_propagation(&sim, ap)?;
    let dim = means[0].len();
    let mut centroids = Vec::with_capacity(ap.n_clusters());
    for c in 0..ap.n_clusters() {
        let mut acc = vec![0.0; dim];
        let mut n = 0usize;
        for (m, &l) in means.iter().zip(&ap.labels) {
            if l == c {
                acc.iter_mut().zip(m).for_each(|(x, y)| *x += y);
                n += 1;
            }
        }
        acc.iter_mut().for_each(|x| *x /= n as f64);
        centroids.push(l2_normalized(&acc)?);
    }
    Ok(ClusterResult {
        centroids,
        long_turns,
        assignment: ap.labels,
        converged: ap.converged,
    })
}

fn cosine(a: &[f64], b_unit: &[f64]) -> Result<f64> {
    let a = l2_normalized(a)?;
    Ok(a.iter().zip(b_unit).map(|(x, y)| x * y).sum())
}

/// Candidate with the highest cosine similarity; ties go to the first.
fn best<'a>(emb: &[f64], candidates: &'a [(SpeakerSet, Vec<f64>)]) -> Result<&'a SpeakerSet> {
    let mut top: Option<(&SpeakerSet, f64)> = None;
    for (set, e) in candidates {
        let c = cosine(emb, e)?;
        if top.is_none_or(|(_, b)| c > b) {
            top = Some((set, c));
        }
    }
    top.map(|(s, _)| s)
        .ok_or_else(|| Error::InvalidArgument("no candidate speaker sets".into()))
}

/// The two singletons closest in cosine, or one when only one exists.
fn two_closest(emb: &[f64], singles: &[(SpeakerSet, Vec<f64>)]) -> Result<SpeakerSet> {
    let mut scored: Vec<(usize, f64)> = singles
        .iter()
        .enumerate()
        .map(|(i, (_, e))| cosine(emb, e).map(|c| (i, c)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .iter()
        .take(2)
        .flat_map(|(i, _)| singles[*i].0.ids().iter().copied())
        .collect())
}

/// Produces a hypothesis timeline. `overlap_flags` holds one flag per
/// 1-s segment of `stream.turns` and is required by the overlap-aware
/// strategies.
pub fn diarize(
    stream: &Stream,
    model: &CompositionalModel,
    strategy: Strategy,
    overlap_flags: Option<&[bool]>,
    cfg: &DiarizeConfig,
) -> Result<Timeline> {
    let fd = stream.reference.frame_duration;
    let frame_embs = embed_frames(model, &stream.features)?;
    diarize_embedded(stream, &frame_embs, model, strategy, overlap_flags, cfg)
        .map(|frames| Timeline::new(fd, frames).expect("frame duration already validated"))
}

fn diarize_embedded(
    stream: &Stream,
    frame_embs: &[Option<Vec<f64>>],
    model: &CompositionalModel,
    strategy: Strategy,
    overlap_flags: Option<&[bool]>,
    cfg: &DiarizeConfig,
) -> Result<Vec<SpeakerSet>> {
    let n = stream.reference.frames.len();
    if frame_embs.len() != n {
        return Err(Error::TimelineMismatch(format!(
            "{} feature frames for {n} reference frames",
            frame_embs.len()
        )));
    }
    if let Some(t) = stream.turns.iter().find(|t| t.end > n || t.start >= t.end) {
        return Err(Error::TimelineMismatch(format!(
            "turn {}..{} outside 0..{n}",
            t.start, t.end
        )));
    }
    if strategy.uses_composition() && !model.variant().has_composition() {
        return Err(Error::InvalidArgument(format!(
            "strategy {strategy} needs a model with a composition function"
        )));
    }
    let fd = stream.reference.frame_duration;
    let long_frames = cfg.frames(cfg.long_turn_s, fd);
    let clusters = cluster_turns(frame_embs, &stream.turns, long_frames, &cfg.ap, cfg.long_turn_s)?;
    let singles: Vec<(SpeakerSet, Vec<f64>)> = clusters
        .centroids
        .iter()
        .enumerate()
        .map(|(k, c)| (SpeakerSet::singleton(k), c.clone()))
        .collect();
    let mut out = vec![SpeakerSet::empty(); n];
    let paint = |out: &mut [SpeakerSet], span: &TurnSpan, set: &SpeakerSet| {
        for f in span.start..span.end {
            if stream.features[f].is_some() {
                out[f] = set.clone();
            }
        }
    };

    if strategy == Strategy::SingleEmTurn {
        for (i, t) in stream.turns.iter().enumerate() {
            let set = match clusters.long_turns.iter().position(|&j| j == i) {
                Some(p) => SpeakerSet::singleton(clusters.assignment[p]),
                None => match span_mean(frame_embs, t) {
                    Some(m) => best(&m, &singles)?.clone(),
                    None => continue,
                },
            };
            paint(&mut out, t, &set);
        }
        return Ok(out);
    }

    let segments = segments_of(&stream.turns, cfg.frames(cfg.segment_s, fd));
    let flags = if strategy.uses_overlap_detector() {
        let f = overlap_flags
            .ok_or_else(|| Error::InvalidArgument(format!("strategy {strategy} needs overlap detector flags")))?;
        if f.len() != segments.len() {
            return Err(Error::DimensionMismatch {
                what: "overlap flags",
                expected: segments.len(),
                got: f.len(),
            });
        }
        Some(f)
    } else {
        None
    };
    let (pairs, all) = if strategy.uses_composition() {
        let ids: Vec<SpeakerId> = (0..singles.len()).collect();
        let mut all = Vec::new();
        for set in label_space(&ids, 2.min(ids.len())) {
            let e = match set.ids() {
                [k] => singles[*k].1.clone(),
                [a, b] => model.compose(&singles[*b].1, &singles[*a].1)?,
                _ => unreachable!("cardinality capped at 2"),
            };
            all.push((set, l2_normalized(&e)?));
        }
        let pairs: Vec<(SpeakerSet, Vec<f64>)> = all.iter().filter(|(s, _)| s.len() == 2).cloned().collect();
        (pairs, all)
    } else {
        (Vec::new(), Vec::new())
    };

    for (si, seg) in segments.iter().enumerate() {
        let Some(m) = span_mean(frame_embs, seg) else { continue };
        let overlapped = flags.is_some_and(|f| f[si]);
        let set = match strategy {
            Strategy::SingleEmSegOverlap if overlapped => two_closest(&m, &singles)?,
            Strategy::SingleEmSegOverlap => best(&m, &singles)?.clone(),
            Strategy::CmpEmSeg => best(&m, &all)?.clone(),
            Strategy::CmpEmSegOverlap if overlapped && !pairs.is_empty() => best(&m, &pairs)?.clone(),
            Strategy::CmpEmSegOverlap => best(&m, &singles)?.clone(),
            Strategy::SingleEmTurn => unreachable!("handled above"),
        };
        paint(&mut out, seg, &set);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub streams: usize,
    pub n_speakers: usize,
    pub stream: StreamParams,
    pub detector: ChangeDetector,
    pub overlap_false_alarm: f64,
    pub overlap_miss: f64,
    pub diarize: DiarizeConfig,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            streams: 10,
            n_speakers: 4,
            stream: StreamParams::default(),
            detector: ChangeDetector::default(),
            overlap_false_alarm: 0.0,
            overlap_miss: 0.0,
            diarize: DiarizeConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub speakers: Vec<SpeakerId>,
    pub reference: Timeline,
    pub hypotheses: Vec<(Strategy, Timeline, DerBreakdown)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub strategies: Vec<Strategy>,
    pub streams: Vec<StreamOutcome>,
}

impl BenchmarkReport {
    /// Mean and sample standard deviation of DER (as a fraction).
    pub fn der_stats(&self, strategy: Strategy) -> Option<(f64, f64)> {
        let ders: Vec<f64> = self
            .streams
            .iter()
            .flat_map(|s| s.hypotheses.iter().filter(|h| h.0 == strategy).map(|h| h.2.der()))
            .collect();
        if ders.is_empty() {
            return None;
        }
        let n = ders.len() as f64;
        let mean = ders.iter().sum::<f64>() / n;
        let var = if ders.len() > 1 {
            ders.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some((mean, var.sqrt()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("Diarization Error Rate (DER%) of different speaker diarization methods\n");
        let _ = writeln!(s, "{:<44}{:>10}{:>10}", "Method", "DER%", "std");
        for &st in &self.strategies {
            if let Some((m, sd)) = self.der_stats(st) {
                let _ = writeln!(s, "{:<44}{:>10.2}{:>10.2}", st.label(), 100.0 * m, 100.0 * sd);
            }
        }
        let _ = writeln!(s, "({} streams)", self.streams.len());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("stream,strategy,{}\n", DerBreakdown::csv_header());
        for (i, o) in self.streams.iter().enumerate() {
            for (st, _, d) in &o.hypotheses {
                let _ = writeln!(s, "{i},{},{}", st.name(), d.csv_fields());
            }
        }
        for &st in &self.strategies {
            if let Some((m, sd)) = self.der_stats(st) {
                let _ = writeln!(s, "mean,{},{m:.6},,,,", st.name());
                let _ = writeln!(s, "std,{},{sd:.6},,,,", st.name());
            }
        }
        s
    }
}

/// Diarizes `cfg.streams` seeded streams drawn from `pool`. SingleEm
/// strategies use `single`, CmpEm strategies use `compositional`.
pub fn run_benchmark(
    bank: &SpeakerBank,
    pool: &[SpeakerId],
    single: &CompositionalModel,
    compositional: &CompositionalModel,
    strategies: &[Strategy],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if cfg.streams == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one stream".into()));
    }
    if pool.len() < cfg.n_speakers || cfg.n_speakers == 0 {
        return Err(Error::InsufficientSpeakers {
            need: cfg.n_speakers.max(1),
            have: pool.len(),
        });
    }
    let mut streams = Vec::with_capacity(cfg.streams);
    for i in 0..cfg.streams {
        let mut rng = rng_indexed(cfg.seed, "diarization.stream", i);
        let mut speakers: Vec<SpeakerId> = rand::seq::index::sample(&mut rng, pool.len(), cfg.n_speakers)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        speakers.sort_unstable();
        let stream = simulate_stream(bank, &speakers, &cfg.stream, cfg.detector, &mut rng)?;
        let seg_frames = cfg
            .diarize
            .frames(cfg.diarize.segment_s, stream.reference.frame_duration);
        let segments = segments_of(&stream.turns, seg_frames);
        let mut det_rng = rng_indexed(cfg.seed, "diarization.overlap_detector", i);
        let flags = simulated_overlap_detector(
            &stream.reference,
            &segments,
            cfg.overlap_false_alarm,
            cfg.overlap_miss,
            &mut det_rng,
        )?;
        let single_embs = embed_frames(single, &stream.features)?;
        let cmp_embs = embed_frames(compositional, &stream.features)?;
        let mut hypotheses = Vec::with_capacity(strategies.len());
        for &st in strategies {
            let (model, embs) = if st.uses_composition() {
                (compositional, &cmp_embs)
            } else {
                (single, &single_embs)
            };
            let frames = diarize_embedded(&stream, embs, model, st, Some(&flags), &cfg.diarize)?;
            let hyp = Timeline::new(stream.reference.frame_duration, frames)?;
            let d = der_score(&stream.reference, &hyp)?;
            log::debug!("stream {i} {st}: DER {:.4}", d.der());
            hypotheses.push((st, hyp, d));
        }
        streams.push(StreamOutcome {
            speakers,
            reference: stream.reference,
            hypotheses,
        });
    }
    Ok(BenchmarkReport {
        strategies: strategies.to_vec(),
        streams,
    })
}
