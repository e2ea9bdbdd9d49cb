//! Diarization error rate with an optimal one-to-one speaker mapping.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::synth::{SpeakerId, Timeline};

/// Error components in seconds plus the frame counts they were derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerBreakdown {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_reference_speech: f64,
    pub miss_frames: u64,
    pub false_alarm_frames: u64,
    pub confusion_frames: u64,
    pub reference_frames: u64,
}

impl DerBreakdown {
    pub fn error_frames(&self) -> u64 {
        self.miss_frames + self.false_alarm_frames + self.confusion_frames
    }

    /// Error over reference speech; 0 for an empty reference scored without
    /// errors, infinite otherwise.
    pub fn der(&self) -> f64 {
        match (self.error_frames(), self.reference_frames) {
            (0, 0) => 0.0,
            (_, 0) => f64::INFINITY,
            (e, r) => e as f64 / r as f64,
        }
    }

    pub fn from_frames(miss: u64, false_alarm: u64, confusion: u64, reference: u64, frame_duration: f64) -> Self {
        DerBreakdown {
            miss: miss as f64 * frame_duration,
            false_alarm: false_alarm as f64 * frame_duration,
            confusion: confusion as f64 * frame_duration,
            total_reference_speech: reference as f64 * frame_duration,
            miss_frames: miss,
            false_alarm_frames: false_alarm,
            confusion_frames: confusion,
            reference_frames: reference,
        }
    }

    pub fn csv_header() -> &'static str {
        "der,miss_s,false_alarm_s,confusion_s,reference_s"
    }

    pub fn csv_fields(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{:.6},{:.1},{:.1},{:.1},{:.1}",
            self.der(),
            self.miss,
            self.false_alarm,
            self.confusion,
            self.total_reference_speech
        );
        s
    }
}

fn check_comparable(reference: &Timeline, hypothesis: &Timeline) -> Result<()> {
    if reference.frames.len() != hypothesis.frames.len() {
        return Err(Error::TimelineMismatch(format!(
            "{} reference frames vs {} hypothesis frames",
            reference.frames.len(),
            hypothesis.frames.len()
        )));
    }
    if reference.frame_duration != hypothesis.frame_duration {
        return Err(Error::TimelineMismatch(format!(
            "frame durations {} vs {}",
            reference.frame_duration, hypothesis.frame_duration
        )));
    }
    Ok(())
}

fn speakers_of(t: &Timeline) -> Vec<SpeakerId> {
    let set: BTreeSet<SpeakerId> = t.frames.iter().flat_map(|f| f.ids().iter().copied()).collect();
    set.into_iter().collect()
}

/// Frames in which each reference speaker and each hypothesis speaker are
/// both active.
pub fn cooccurrence(reference: &Timeline, hypothesis: &Timeline) -> (Vec<SpeakerId>, Vec<SpeakerId>, Vec<Vec<i64>>) {
    let refs = speakers_of(reference);
    let hyps = speakers_of(hypothesis);
    let mut w = vec![vec![0i64; hyps.len()]; refs.len()];
    for (rf, hf) in reference.frames.iter().zip(&hypothesis.frames) {
        for r in rf.ids() {
            let ri = refs.binary_search(r).expect("collected");
            for h in hf.ids() {
                w[ri][hyps.binary_search(h).expect("collected")] += 1;
            }
        }
    }
    (refs, hyps, w)
}

/// Scores a mapping given as `mapping[ref_index] = Some(hyp_index)`.
pub fn score_with_mapping(
    reference: &Timeline,
    hypothesis: &Timeline,
    refs: &[SpeakerId],
    hyps: &[SpeakerId],
    mapping: &[Option<usize>],
) -> Result<DerBreakdown> {
    check_comparable(reference, hypothesis)?;
    let (mut miss, mut fa, mut conf, mut total) = (0u64, 0u64, 0u64, 0u64);
    for (rf, hf) in reference.frames.iter().zip(&hypothesis.frames) {
        let n_ref = rf.len() as u64;
        let n_hyp = hf.len() as u64;
        let correct = rf
            .ids()
            .iter()
            .filter(|r| {
                let ri = refs.binary_search(r).expect("reference speaker");
                mapping[ri].is_some_and(|hi| hf.contains(hyps[hi]))
            })
            .count() as u64;
        total += n_ref;
        miss += n_ref.saturating_sub(n_hyp);
        fa += n_hyp.saturating_sub(n_ref);
        conf += n_ref.min(n_hyp) - correct;
    }
    Ok(DerBreakdown::from_frames(
        miss,
        fa,
        conf,
        total,
        reference.frame_duration,
    ))
}

/// Frame-level DER with no collar; overlapped speech is scored.
pub fn der_score(reference: &Timeline, hypothesis: &Timeline) -> Result<DerBreakdown> {
    check_comparable(reference, hypothesis)?;
    let (refs, hyps, w) = cooccurrence(reference, hypothesis);
    let mapping = max_weight_assignment(&w);
    score_with_mapping(reference, hypothesis, &refs, &hyps, &mapping)
}

/// Hungarian algorithm on a rectangular weight matrix: returns, per row, the
/// column it is matched to so that the total weight is maximal.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return vec![None; rows];
    }
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            -weights[i][j]
        } else {
            0
        }
    };
    // Potentials formulation, 1-based with a virtual column 0.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}
