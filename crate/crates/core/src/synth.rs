//! Synthetic speaker universe: prototypes, utterances, volume-normalized
//! mixtures, episodes, and diarization timelines with RTTM export.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::autodiff::l2_normalized;
use crate::error::{Error, Result};
use crate::seed::SeededRng;

pub type SpeakerId = usize;

/// A set of speakers, stored sorted and deduplicated.
///
/// Ordering is by cardinality first, then lexicographic on ids. That is the
/// canonical enumeration order used everywhere sets are searched, so the
/// first minimum encountered is also the tie-break winner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SpeakerSet(Vec<SpeakerId>);

impl SpeakerSet {
    pub fn new(mut ids: Vec<SpeakerId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SpeakerSet(ids)
    }

    pub fn empty() -> Self {
        SpeakerSet(Vec::new())
    }

    pub fn singleton(id: SpeakerId) -> Self {
        SpeakerSet(vec![id])
    }

    pub fn ids(&self) -> &[SpeakerId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: SpeakerId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Largest id and the remaining set, the split used by the canonical
    /// pseudo-enrollment recursion.
    pub fn split_last(&self) -> Option<(SpeakerId, SpeakerSet)> {
        let (&last, rest) = self.0.split_last()?;
        Some((last, SpeakerSet(rest.to_vec())))
    }
}

impl Ord for SpeakerSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for SpeakerSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SpeakerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "}}")
    }
}

impl FromIterator<SpeakerId> for SpeakerSet {
    fn from_iter<I: IntoIterator<Item = SpeakerId>>(iter: I) -> Self {
        SpeakerSet::new(iter.into_iter().collect())
    }
}

/// All subsets of `speakers` with `1 <= |T| <= max_card`, in canonical order.
pub fn label_space(speakers: &[SpeakerId], max_card: usize) -> Vec<SpeakerSet> {
    let mut sorted = speakers.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    for k in 1..=max_card.min(sorted.len()) {
        combinations(&sorted, k, &mut |c| out.push(SpeakerSet(c.to_vec())));
    }
    out
}

/// Calls `emit` for each k-combination of `items` in lexicographic order.
pub fn combinations<T: Copy>(items: &[T], k: usize, emit: &mut dyn FnMut(&[T])) {
    fn rec<T: Copy>(items: &[T], k: usize, start: usize, cur: &mut Vec<T>, emit: &mut dyn FnMut(&[T])) {
        if cur.len() == k {
            emit(cur);
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, emit);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(k);
    rec(items, k, 0, &mut cur, emit);
}

/// Per-speaker prototype vectors plus within-speaker noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerBank {
    prototypes: Vec<Vec<f64>>,
    seed: u64,
    noise: f64,
}

impl SpeakerBank {
    /// Draws `count` i.i.d. standard-normal prototypes of length `dim`.
    /// Draws are speaker-major, so a bank is a prefix of any larger bank
    /// built from the same seed.
    pub fn generate(seed: u64, count: usize, dim: usize, noise: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {noise}")));
        }
        let mut rng = SeededRng::seed_from_u64(seed);
        let prototypes = (0..count)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Ok(SpeakerBank {
            prototypes,
            seed,
            noise,
        })
    }

    pub fn from_prototypes(prototypes: Vec<Vec<f64>>, noise: f64) -> Result<Self> {
        let dim = prototypes.first().map_or(0, Vec::len);
        if dim == 0 || prototypes.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("prototypes must share a positive length".into()));
        }
        Ok(SpeakerBank {
            prototypes,
            seed: 0,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn prototype(&self, id: SpeakerId) -> Result<&[f64]> {
        self.prototypes
            .get(id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownSpeaker(id))
    }

    /// One utterance: prototype plus isotropic Gaussian noise.
    pub fn utterance<R: Rng + ?Sized>(&self, id: SpeakerId, rng: &mut R) -> Result<Vec<f64>> {
        let p = self.prototype(id)?;
        Ok(p.iter()
            .map(|&v| {
                let z: f64 = rng.sample(StandardNormal);
                v + self.noise * z
            })
            .collect())
    }

    /// Sum of one utterance per speaker, scaled to unit norm. Utterances are
    /// drawn in ascending id order, so the result does not depend on the
    /// order `speakers` is listed in.
    pub fn mixture<R: Rng + ?Sized>(&self, speakers: &[SpeakerId], rng: &mut R) -> Result<Vec<f64>> {
        let set = SpeakerSet::new(speakers.to_vec());
        if set.is_empty() {
            return Err(Error::EmptySpeakerSet);
        }
        let mut sum = vec![0.0; self.dim()];
        for &id in set.ids() {
            let u = self.utterance(id, rng)?;
            sum.iter_mut().zip(&u).for_each(|(s, x)| *s += x);
        }
        l2_normalized(&sum)
    }
}

/// Disjoint speaker-id ranges for training, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeakerSplit {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SpeakerSplit {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
    pub fn train_ids(&self) -> Range<SpeakerId> {
        0..self.train
    }
    pub fn val_ids(&self) -> Range<SpeakerId> {
        self.train..self.train + self.val
    }
    pub fn test_ids(&self) -> Range<SpeakerId> {
        self.train + self.val..self.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: SpeakerSet,
}

/// A few-shot task: a speaker universe, one enrollment per speaker, and
/// labeled mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Ascending ids.
    pub speakers: Vec<SpeakerId>,
    /// `enrollments[i]` belongs to `speakers[i]`.
    pub enrollments: Vec<Vec<f64>>,
    pub examples: Vec<Example>,
    pub max_card: usize,
}

impl Episode {
    pub fn label_space(&self) -> Vec<SpeakerSet> {
        label_space(&self.speakers, self.max_card)
    }

    pub fn enrollment(&self, id: SpeakerId) -> Option<&[f64]> {
        let i = self.speakers.binary_search(&id).ok()?;
        Some(&self.enrollments[i])
    }
}

pub fn sample_episode<R: Rng + ?Sized>(
    bank: &SpeakerBank,
    pool: &[SpeakerId],
    n_speakers: usize,
    max_card: usize,
    examples_per_set: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n_speakers == 0 || pool.len() < n_speakers {
        return Err(Error::InsufficientSpeakers {
            need: n_speakers.max(1),
            have: pool.len(),
        });
    }
    if max_card == 0 || max_card > n_speakers {
        return Err(Error::InvalidArgument(format!(
            "max cardinality {max_card} must be in 1..={n_speakers}"
        )));
    }
    let mut speakers: Vec<SpeakerId> = sample(rng, pool.len(), n_speakers)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    speakers.sort_unstable();
    let enrollments = speakers
        .iter()
        .map(|&s| bank.mixture(&[s], rng))
        .collect::<Result<Vec<_>>>()?;
    let mut examples = Vec::new();
    for set in label_space(&speakers, max_card) {
        for _ in 0..examples_per_set {
            examples.push(Example {
                features: bank.mixture(set.ids(), rng)?,
                label: set.clone(),
            });
        }
    }
    Ok(Episode {
        speakers,
        enrollments,
        examples,
        max_card,
    })
}

/// Frame-level speaker activity.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub frame_duration: f64,
    pub frames: Vec<SpeakerSet>,
}

impl Timeline {
    pub fn new(frame_duration: f64, frames: Vec<SpeakerSet>) -> Result<Self> {
        if !(frame_duration > 0.0) || frames.is_empty() {
            return Err(Error::InvalidArgument(
                "timeline needs a positive frame duration and at least one frame".into(),
            ));
        }
        Ok(Timeline { frame_duration, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 * self.frame_duration
    }

    /// Distinct speaker labels, ascending.
    pub fn speakers(&self) -> Vec<SpeakerId> {
        let mut all: Vec<SpeakerId> = self.frames.iter().flat_map(|s| s.ids().iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Share of speech frames with two or more active speakers.
    pub fn overlap_share(&self) -> f64 {
        let speech = self.frames.iter().filter(|s| !s.is_empty()).count();
        let overlap = self.frames.iter().filter(|s| s.len() > 1).count();
        if speech == 0 {
            0.0
        } else {
            overlap as f64 / speech as f64
        }
    }

    /// RTTM-style lines, one per maximal run of each speaker, sorted by
    /// onset then speaker.
    pub fn to_rttm(&self, file_id: &str) -> String {
        let mut runs: Vec<(usize, SpeakerId, usize)> = Vec::new();
        for spk in self.speakers() {
            let mut start = None;
            for (i, set) in self.frames.iter().enumerate() {
                match (set.contains(spk), start) {
                    (true, None) => start = Some(i),
                    (false, Some(s)) => {
                        runs.push((s, spk, i - s));
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(s) = start {
                runs.push((s, spk, self.frames.len() - s));
            }
        }
        runs.sort_unstable();
        let mut out = String::new();
        for (start, spk, len) in runs {
            out.push_str(&format!(
                "SPEAKER {file_id} 1 {:.3} {:.3} {spk}\n",
                start as f64 * self.frame_duration,
                len as f64 * self.frame_duration
            ));
        }
        out
    }

    /// Parses RTTM lines back onto a frame grid. Without `n_frames`, the
    /// timeline ends at the last speech frame.
    pub fn from_rttm(text: &str, frame_duration: f64, n_frames: Option<usize>) -> Result<Timeline> {
        if !(frame_duration > 0.0) {
            return Err(Error::InvalidArgument("frame duration must be positive".into()));
        }
        let mut spans = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::MalformedRttm {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 6 || fields[0] != "SPEAKER" {
                return Err(bad("expected `SPEAKER <file> 1 <onset> <duration> <speaker>`"));
            }
            let onset: f64 = fields[3].parse().map_err(|_| bad("bad onset"))?;
            let dur: f64 = fields[4].parse().map_err(|_| bad("bad duration"))?;
            let spk: SpeakerId = fields[5]
                .parse()
                .map_err(|_| bad("speaker id must be a non-negative integer"))?;
            if onset < 0.0 || dur <= 0.0 {
                return Err(bad("onset must be >= 0 and duration > 0"));
            }
            let start = (onset / frame_duration).round() as usize;
            let len = (dur / frame_duration).round() as usize;
            spans.push((start, start + len, spk));
        }
        let end = spans.iter().map(|s| s.1).max().unwrap_or(0);
        let total = n_frames.unwrap_or(end).max(1);
        if end > total {
            return Err(Error::TimelineMismatch(format!(
                "RTTM extends to frame {end} but timeline has {total} frames"
            )));
        }
        let mut frames: Vec<Vec<SpeakerId>> = vec![Vec::new(); total];
        for (s, e, spk) in spans {
            for f in &mut frames[s..e] {
                f.push(spk);
            }
        }
        Timeline::new(frame_duration, frames.into_iter().map(SpeakerSet::new).collect())
    }
}

/// A contiguous speech interval between change points, `[start, end)` in
/// frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnSpan {
    pub start: usize,
    pub end: usize,
}

impl TurnSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub duration_s: f64,
    pub overlap_fraction: f64,
    pub frame_duration: f64,
    /// Single-speaker turn length range, seconds.
    pub turn_s: (f64, f64),
    /// Overlap region length range, seconds. Kept below the long-turn
    /// threshold so overlap regions never seed clusters.
    pub overlap_s: (f64, f64),
    pub pause_probability: f64,
    pub pause_s: (f64, f64),
    /// Stress-test option: some overlaps include a third speaker.
    pub three_way: bool,
}

impl Default for StreamParams {
    fn default() -> Self {
        StreamParams {
            duration_s: 1800.0,
            overlap_fraction: 0.19,
            frame_duration: 0.1,
            turn_s: (1.0, 7.0),
            overlap_s: (0.5, 3.0),
            pause_probability: 0.3,
            pause_s: (0.2, 1.5),
            three_way: false,
        }
    }
}

/// Guaranteed length of each speaker's opening turn, seconds.
pub const OPENING_TURN_S: (f64, f64) = (3.5, 7.0);

/// Generates a reference timeline plus the turn segmentation an ideal
/// speaker-change detector would report. Each speaker opens with one turn of
/// at least 3.5 s; after that, turns alternate between distinct speakers and
/// overlaps are inserted whenever the running overlap share is below target.
pub fn generate_timeline<R: Rng + ?Sized>(
    bank: &SpeakerBank,
    speakers: &[SpeakerId],
    params: &StreamParams,
    rng: &mut R,
) -> Result<(Timeline, Vec<TurnSpan>)> {
    let p = params;
    if !(p.duration_s > 0.0) || !p.duration_s.is_finite() || !(p.frame_duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate stream duration {} s / frame {} s",
            p.duration_s, p.frame_duration
        )));
    }
    if !(0.0..1.0).contains(&p.overlap_fraction) {
        return Err(Error::InvalidArgument(format!(
            "overlap fraction must be in [0, 1), got {}",
            p.overlap_fraction
        )));
    }
    if speakers.is_empty() {
        return Err(Error::EmptySpeakerSet);
    }
    for &s in speakers {
        bank.prototype(s)?;
    }
    if p.overlap_fraction > 0.0 && speakers.len() < 2 {
        return Err(Error::InsufficientSpeakers { need: 2, have: 1 });
    }
    let total = (p.duration_s / p.frame_duration).round() as usize;
    if total == 0 {
        return Err(Error::InvalidArgument("stream shorter than one frame".into()));
    }
    let frames_in = |rng: &mut R, (lo, hi): (f64, f64)| -> usize {
        let lo_f = (lo / p.frame_duration).round().max(1.0) as usize;
        let hi_f = ((hi / p.frame_duration).round() as usize).max(lo_f);
        rng.random_range(lo_f..=hi_f)
    };

    let mut frames: Vec<SpeakerSet> = Vec::with_capacity(total);
    let mut speech = 0usize;
    let mut overlapped = 0usize;
    let push = |frames: &mut Vec<SpeakerSet>, speech: &mut usize, overlapped: &mut usize, set: SpeakerSet, n: usize| {
        for _ in 0..n {
            if frames.len() == total {
                break;
            }
            if !set.is_empty() {
                *speech += 1;
            }
            if set.len() > 1 {
                *overlapped += 1;
            }
            frames.push(set.clone());
        }
    };

    let mut order = speakers.to_vec();
    order.sort_unstable();
    order.dedup();
    // Fisher-Yates with the caller's rng keeps the stream reproducible.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut current = order[0];
    let mut opening_left = order.len();
    let mut opening = order.into_iter().skip(1);
    while frames.len() < total {
        let range = if opening_left > 0 {
            opening_left -= 1;
            OPENING_TURN_S
        } else {
            p.turn_s
        };
        let len = frames_in(rng, range);
        push(
            &mut frames,
            &mut speech,
            &mut overlapped,
            SpeakerSet::singleton(current),
            len,
        );
        let next = match opening.next() {
            Some(s) => s,
            None if speakers.len() == 1 => current,
            None => loop {
                let c = speakers[rng.random_range(0..speakers.len())];
                if c != current {
                    break c;
                }
            },
        };
        let share = if speech == 0 {
            0.0
        } else {
            overlapped as f64 / speech as f64
        };
        if next != current && p.overlap_fraction > 0.0 && share < p.overlap_fraction {
            let mut ids = vec![current, next];
            if p.three_way && speakers.len() > 2 && rng.random_bool(0.2) {
                let third = loop {
                    let c = speakers[rng.random_range(0..speakers.len())];
                    if c != current && c != next {
                        break c;
                    }
                };
                ids.push(third);
            }
            let olen = frames_in(rng, p.overlap_s);
            push(&mut frames, &mut speech, &mut overlapped, SpeakerSet::new(ids), olen);
        } else if rng.random_bool(p.pause_probability) {
            let plen = frames_in(rng, p.pause_s);
            push(&mut frames, &mut speech, &mut overlapped, SpeakerSet::empty(), plen);
        }
        current = next;
    }
    let turns = turns_from_frames(&frames);
    Ok((Timeline::new(p.frame_duration, frames)?, turns))
}

/// Maximal runs of identical non-empty speaker sets.
pub fn turns_from_frames(frames: &[SpeakerSet]) -> Vec<TurnSpan> {
    let mut turns = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        if i == frames.len() || frames[i] != frames[start] {
            if !frames[start].is_empty() {
                turns.push(TurnSpan { start, end: i });
            }
            start = i;
        }
    }
    turns
}

/// Perturbs oracle turn boundaries: each boundary between touching turns is
/// missed (turns merged) with `miss_rate`, and surviving boundaries are
/// shifted by up to `jitter_frames`.
pub fn noisy_change_detector<R: Rng + ?Sized>(
    turns: &[TurnSpan],
    jitter_frames: usize,
    miss_rate: f64,
    rng: &mut R,
) -> Vec<TurnSpan> {
    let mut merged: Vec<TurnSpan> = Vec::with_capacity(turns.len());
    for &t in turns {
        match merged.last_mut() {
            Some(prev) if prev.end == t.start && miss_rate > 0.0 && rng.random_bool(miss_rate.min(1.0)) => {
                prev.end = t.end;
            }
            _ => merged.push(t),
        }
    }
    if jitter_frames == 0 {
        return merged;
    }
    let j = jitter_frames as i64;
    for i in 1..merged.len() {
        if merged[i - 1].end != merged[i].start {
            continue;
        }
        let lo = merged[i - 1].start as i64 + 1;
        let hi = merged[i].end as i64 - 1;
        if lo > hi {
            continue;
        }
        let shifted = (merged[i].start as i64 + rng.random_range(-j..=j)).clamp(lo, hi) as usize;
        merged[i - 1].end = shifted;
        merged[i].start = shifted;
    }
    merged
}

/// Per-frame features for every speech frame; silence frames get `None`.
pub fn render_frames<R: Rng + ?Sized>(
    bank: &SpeakerBank,
    timeline: &Timeline,
    rng: &mut R,
) -> Result<Vec<Option<Vec<f64>>>> {
    timeline
        .frames
        .iter()
        .map(|set| {
            if set.is_empty() {
                Ok(None)
            } else {
                bank.mixture(set.ids(), rng).map(Some)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::norm;
    use crate::seed::rng_for;

    fn bank(noise: f64) -> SpeakerBank {
        SpeakerBank::generate(11, 20, 16, noise).unwrap()
    }

    #[test]
    fn noiseless_utterance_is_prototype() {
        let b = bank(0.0);
        let mut rng = rng_for(1, "t");
        assert_eq!(b.utterance(3, &mut rng).unwrap(), b.prototype(3).unwrap());
    }

    #[test]
    fn noisy_utterances_differ() {
        let b = bank(0.3);
        let mut rng = rng_for(1, "t");
        let a = b.utterance(3, &mut rng).unwrap();
        let c = b.utterance(3, &mut rng).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn utterance_mean_converges_to_prototype() {
        let b = bank(0.3);
        let mut rng = rng_for(2, "mc");
        let n = 10_000;
        let mut mean = vec![0.0; b.dim()];
        for _ in 0..n {
            let u = b.utterance(5, &mut rng).unwrap();
            mean.iter_mut().zip(&u).for_each(|(m, x)| *m += x / n as f64);
        }
        // 3 sigma / sqrt(n) per coordinate, with a little slack for 16
        // simultaneous coordinates.
        let tol = 4.0 * 0.3 / (n as f64).sqrt();
        for (m, p) in mean.iter().zip(b.prototype(5).unwrap()) {
            assert!((m - p).abs() < tol, "{m} vs {p}");
        }
    }

    #[test]
    fn unknown_speaker() {
        let b = bank(0.3);
        let mut rng = rng_for(1, "t");
        assert!(matches!(b.utterance(99, &mut rng), Err(Error::UnknownSpeaker(99))));
    }

    #[test]
    fn mixtures_are_normalized_prototype_sums() {
        let b = bank(0.0);
        let mut rng = rng_for(1, "t");
        let single = b.mixture(&[4], &mut rng).unwrap();
        assert_eq!(single, l2_normalized(b.prototype(4).unwrap()).unwrap());
        let pair = b.mixture(&[4, 7], &mut rng).unwrap();
        let sum: Vec<f64> = b
            .prototype(4)
            .unwrap()
            .iter()
            .zip(b.prototype(7).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        assert_eq!(pair, l2_normalized(&sum).unwrap());
        assert!(matches!(b.mixture(&[], &mut rng), Err(Error::EmptySpeakerSet)));
    }

    #[test]
    fn mixture_norm_and_order_invariance() {
        let b = bank(0.3);
        for seed in 0..50 {
            let m1 = b.mixture(&[2, 9, 5], &mut rng_for(seed, "m")).unwrap();
            let m2 = b.mixture(&[9, 5, 2], &mut rng_for(seed, "m")).unwrap();
            assert_eq!(m1, m2);
            assert!((norm(&m1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_regeneration_is_bit_identical() {
        assert_eq!(bank(0.3), bank(0.3));
        let small = SpeakerBank::generate(11, 5, 16, 0.3).unwrap();
        assert_eq!(small.prototype(4).unwrap(), bank(0.3).prototype(4).unwrap());
    }

    #[test]
    fn label_space_sizes() {
        let s = [10, 11, 12, 13, 14];
        assert_eq!(label_space(&s, 3).len(), 25);
        assert_eq!(label_space(&s, 1).len(), 5);
        let ls = label_space(&s, 3);
        assert!(ls.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn episode_shape() {
        let b = bank(0.3);
        let pool: Vec<_> = (0..20).collect();
        let mut rng = rng_for(3, "ep");
        let ep = sample_episode(&b, &pool, 5, 3, 4, &mut rng).unwrap();
        assert_eq!(ep.examples.len(), 100);
        assert_eq!(ep.enrollments.len(), 5);
        assert!(ep.examples.iter().all(|e| (1..=3).contains(&e.label.len())));
        let single = sample_episode(&b, &pool, 5, 1, 1, &mut rng).unwrap();
        assert_eq!(single.label_space().len(), 5);
        assert!(matches!(
            sample_episode(&b, &pool[..3], 5, 3, 1, &mut rng),
            Err(Error::InsufficientSpeakers { .. })
        ));
    }

    #[test]
    fn episodes_are_deterministic() {
        let b = bank(0.3);
        let pool: Vec<_> = (0..20).collect();
        let a = sample_episode(&b, &pool, 5, 3, 2, &mut rng_for(9, "ep")).unwrap();
        let c = sample_episode(&b, &pool, 5, 3, 2, &mut rng_for(9, "ep")).unwrap();
        assert_eq!(a, c);
    }

    fn stream(overlap: f64, duration: f64, seed: u64) -> (Timeline, Vec<TurnSpan>) {
        let b = bank(0.3);
        let params = StreamParams {
            duration_s: duration,
            overlap_fraction: overlap,
            ..StreamParams::default()
        };
        generate_timeline(&b, &[1, 3, 5, 7], &params, &mut rng_for(seed, "tl")).unwrap()
    }

    #[test]
    fn zero_overlap_stream_has_no_overlap() {
        let (tl, _) = stream(0.0, 600.0, 1);
        assert!(tl.frames.iter().all(|s| s.len() <= 1));
    }

    #[test]
    fn overlap_share_tracks_target() {
        for seed in 0..5 {
            let (tl, _) = stream(0.19, 1800.0, seed);
            let share = tl.overlap_share();
            assert!((0.16..=0.22).contains(&share), "seed {seed}: {share}");
            assert!(tl.frames.iter().all(|s| s.len() <= 2));
        }
    }

    #[test]
    fn every_speaker_gets_a_long_turn() {
        let (tl, turns) = stream(0.19, 480.0, 4);
        for spk in [1, 3, 5, 7] {
            let longest = turns
                .iter()
                .filter(|t| tl.frames[t.start] == SpeakerSet::singleton(spk))
                .map(|t| t.len())
                .max()
                .unwrap();
            assert!(longest >= 33, "speaker {spk}: {longest}");
        }
    }

    #[test]
    fn turns_have_constant_sets() {
        let (tl, turns) = stream(0.19, 300.0, 2);
        for t in &turns {
            assert!(tl.frames[t.start..t.end].iter().all(|s| *s == tl.frames[t.start]));
            assert!(!tl.frames[t.start].is_empty());
        }
    }

    #[test]
    fn degenerate_stream_parameters() {
        let b = bank(0.3);
        let mut rng = rng_for(1, "x");
        let bad = StreamParams {
            duration_s: 0.0,
            ..StreamParams::default()
        };
        assert!(generate_timeline(&b, &[1, 2], &bad, &mut rng).is_err());
        let bad = StreamParams {
            overlap_fraction: 1.0,
            ..StreamParams::default()
        };
        assert!(generate_timeline(&b, &[1, 2], &bad, &mut rng).is_err());
    }

    #[test]
    fn three_way_flag() {
        let b = bank(0.3);
        let params = StreamParams {
            duration_s: 600.0,
            three_way: true,
            ..StreamParams::default()
        };
        let (tl, _) = generate_timeline(&b, &[1, 2, 3, 4], &params, &mut rng_for(5, "tl")).unwrap();
        assert!(tl.frames.iter().any(|s| s.len() == 3));
    }

    #[test]
    fn rttm_round_trip() {
        let (tl, _) = stream(0.19, 120.0, 7);
        let text = tl.to_rttm("stream0");
        assert!(text.lines().all(|l| l.starts_with("SPEAKER stream0 1 ")));
        let back = Timeline::from_rttm(&text, tl.frame_duration, Some(tl.len())).unwrap();
        assert_eq!(back, tl);
    }

    #[test]
    fn rttm_rejects_garbage() {
        assert!(matches!(
            Timeline::from_rttm("SPEAKER f 1 abc 1.0 2\n", 0.1, None),
            Err(Error::MalformedRttm { line: 1, .. })
        ));
    }

    #[test]
    fn change_detector_noise() {
        let (_, turns) = stream(0.19, 300.0, 3);
        let mut rng = rng_for(1, "scd");
        assert_eq!(noisy_change_detector(&turns, 0, 0.0, &mut rng), turns);
        let merged = noisy_change_detector(&turns, 0, 1.0, &mut rng);
        assert!(merged.len() < turns.len());
        let jittered = noisy_change_detector(&turns, 3, 0.0, &mut rng);
        assert_eq!(jittered.len(), turns.len());
        assert!(jittered.iter().all(|t| !t.is_empty()));
    }
}
