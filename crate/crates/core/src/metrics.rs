//! Sequence quality `Q`, the VOTS frame-class measures (Acc, Rob, NRE, DRE,
//! ADQ) and the DAVIS region/boundary scores `J` and `F`.
//!
//! Predictions and ground truth are indexed `[sequence][frame][object]`.
//! Per-object tracks are scored first, then averaged within a sequence and
//! finally across sequences.

use thiserror::Error;

use crate::mask::{MaskError, ObjectMask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("misaligned results: {0}")]
    Misaligned(String),
    #[error("no frame with a visible target; J/F are undefined")]
    NoVisibleTarget,
    #[error("boundary tolerance must be positive, got {0}")]
    Tolerance(f64),
}

/// Masks of one sequence, `[frame][object]`.
pub type SequenceMasks = Vec<Vec<ObjectMask>>;

/// How frames where both prediction and ground truth are empty enter `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentFrames {
    /// A correctly predicted absence scores IoU 1.
    #[default]
    ScoreOne,
    /// Frames whose ground truth is empty are left out of `Q`.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    /// A visible, reported frame counts as tracked when IoU exceeds this.
    pub track_threshold: f64,
    pub absent_frames: AbsentFrames,
    /// Boundary match radius in pixels; `None` uses `ceil(0.008 * diagonal)`.
    pub boundary_tolerance: Option<f64>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            track_threshold: 0.0,
            absent_frames: AbsentFrames::ScoreOne,
            boundary_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricBundle {
    pub q: f64,
    pub acc: f64,
    pub rob: f64,
    pub nre: f64,
    pub dre: f64,
    pub adq: f64,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
}

/// Scores of a single object track. Ratios over visible frames are `NaN`
/// when the target is never visible.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMetrics {
    pub sequence_id: String,
    pub object_id: u32,
    pub q: f64,
    pub acc: f64,
    pub rob: f64,
    pub nre: f64,
    pub dre: f64,
    pub adq: f64,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub final_memory_size: Option<usize>,
}

/// `|a ∩ b| / |a ∪ b|`, with two empty masks scoring 1.
pub fn iou(a: &ObjectMask, b: &ObjectMask) -> Result<f64, MetricsError> {
    let (inter, union) = a.overlap_counts(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Default DAVIS boundary radius for a `height x width` image.
pub fn default_boundary_tolerance(height: usize, width: usize) -> f64 {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil()
}

/// Boundary F-measure: boundary pixels of each mask are matched to the
/// other's within `tolerance_px` (Euclidean).
pub fn boundary_f(pred: &ObjectMask, gt: &ObjectMask, tolerance_px: f64) -> Result<f64, MetricsError> {
    pred.ensure_same_shape(gt)?;
    if !(tolerance_px.is_finite() && tolerance_px > 0.0) {
        return Err(MetricsError::Tolerance(tolerance_px));
    }
    let pb = pred.boundary();
    let gb = gt.boundary();
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (h, w) = pred.shape();
    let mut p_grid = vec![false; h * w];
    let mut g_grid = vec![false; h * w];
    for &(r, c) in &pb {
        p_grid[r * w + c] = true;
    }
    for &(r, c) in &gb {
        g_grid[r * w + c] = true;
    }
    let radius = tolerance_px.floor() as isize;
    let tol2 = tolerance_px * tolerance_px;
    let matched = |points: &[(usize, usize)], other: &[bool]| {
        points
            .iter()
            .filter(|&&(r, c)| {
                for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        if ((dr * dr + dc * dc) as f64) > tol2 {
                            continue;
                        }
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        if other[rr as usize * w + cc as usize] {
                            return true;
                        }
                    }
                }
                false
            })
            .count()
    };
    let precision = matched(&pb, &g_grid) as f64 / pb.len() as f64;
    let recall = matched(&gb, &p_grid) as f64 / gb.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn check_aligned(preds: &[SequenceMasks], gts: &[SequenceMasks]) -> Result<(), MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::Misaligned(format!(
            "{} predicted sequences vs {} ground-truth sequences",
            preds.len(),
            gts.len()
        )));
    }
    for (s, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::Misaligned(format!(
                "sequence {s}: {} predicted frames vs {} ground-truth frames",
                p.len(),
                g.len()
            )));
        }
        if g.is_empty() {
            return Err(MetricsError::Misaligned(format!("sequence {s} has no frames")));
        }
        let objects = g[0].len();
        for (t, (pf, gf)) in p.iter().zip(g).enumerate() {
            if pf.len() != gf.len() || gf.len() != objects {
                return Err(MetricsError::Misaligned(format!(
                    "sequence {s} frame {t}: {} predicted objects vs {} ground-truth objects",
                    pf.len(),
                    gf.len()
                )));
            }
            for (a, b) in pf.iter().zip(gf) {
                a.ensure_same_shape(b)?;
            }
        }
    }
    Ok(())
}

/// Frame-class counts and score sums for one object track.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackTally {
    pub frames: usize,
    pub q_sum: f64,
    pub q_count: usize,
    pub visible: usize,
    pub tracked: usize,
    pub drifted: usize,
    pub not_reported: usize,
    pub absent: usize,
    pub absent_correct: usize,
    pub tracked_iou_sum: f64,
    pub j_sum: f64,
    pub f_sum: f64,
}

impl TrackTally {
    pub fn q(&self) -> f64 {
        if self.q_count == 0 {
            f64::NAN
        } else {
            self.q_sum / self.q_count as f64
        }
    }

    fn over_visible(&self, n: usize) -> f64 {
        if self.visible == 0 {
            f64::NAN
        } else {
            n as f64 / self.visible as f64
        }
    }

    pub fn rob(&self) -> f64 {
        self.over_visible(self.tracked)
    }

    pub fn nre(&self) -> f64 {
        self.over_visible(self.not_reported)
    }

    pub fn dre(&self) -> f64 {
        self.over_visible(self.drifted)
    }

    /// Mean IoU over tracked frames; 0 when visible but never tracked.
    pub fn acc(&self) -> f64 {
        if self.visible == 0 {
            f64::NAN
        } else if self.tracked == 0 {
            0.0
        } else {
            self.tracked_iou_sum / self.tracked as f64
        }
    }

    pub fn adq(&self) -> f64 {
        if self.absent == 0 {
            1.0
        } else {
            self.absent_correct as f64 / self.absent as f64
        }
    }

    pub fn j(&self) -> f64 {
        self.over_visible_sum(self.j_sum)
    }

    pub fn f(&self) -> f64 {
        self.over_visible_sum(self.f_sum)
    }

    fn over_visible_sum(&self, sum: f64) -> f64 {
        if self.visible == 0 {
            f64::NAN
        } else {
            sum / self.visible as f64
        }
    }
}

/// Classifies and scores every frame of one object track.
pub fn tally_track(
    pred: &[&ObjectMask],
    gt: &[&ObjectMask],
    opts: &MetricOptions,
) -> Result<TrackTally, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Misaligned(format!(
            "track lengths {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut tally = TrackTally {
        frames: gt.len(),
        ..Default::default()
    };
    for (p, g) in pred.iter().zip(gt) {
        let overlap = iou(p, g)?;
        let visible = !g.is_empty();
        let reported = !p.is_empty();
        if visible || opts.absent_frames == AbsentFrames::ScoreOne {
            tally.q_sum += overlap;
            tally.q_count += 1;
        }
        if visible {
            tally.visible += 1;
            let tol = opts
                .boundary_tolerance
                .unwrap_or_else(|| default_boundary_tolerance(g.height(), g.width()));
            tally.j_sum += overlap;
            tally.f_sum += boundary_f(p, g, tol)?;
            if !reported {
                tally.not_reported += 1;
            } else if overlap > opts.track_threshold {
                tally.tracked += 1;
                tally.tracked_iou_sum += overlap;
            } else {
                tally.drifted += 1;
            }
        } else {
            tally.absent += 1;
            if !reported {
                tally.absent_correct += 1;
            }
        }
    }
    Ok(tally)
}

fn sequence_tallies(
    pred: &SequenceMasks,
    gt: &SequenceMasks,
    opts: &MetricOptions,
) -> Result<Vec<TrackTally>, MetricsError> {
    let objects = gt.first().map_or(0, Vec::len);
    (0..objects)
        .map(|i| {
            let p: Vec<&ObjectMask> = pred.iter().map(|f| &f[i]).collect();
            let g: Vec<&ObjectMask> = gt.iter().map(|f| &f[i]).collect();
            tally_track(&p, &g, opts)
        })
        .collect()
}

/// Mean of the defined (non-NaN) values, or `None` when there are none.
fn mean_defined(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Track values averaged per sequence, then across sequences.
fn nested_mean(per_seq: &[Vec<TrackTally>], f: impl Fn(&TrackTally) -> f64) -> Option<f64> {
    mean_defined(
        per_seq
            .iter()
            .map(|tracks| mean_defined(tracks.iter().map(&f)).unwrap_or(f64::NAN)),
    )
}

/// Sequence-normalised mean IoU: the inner average runs over all
/// `frames x objects` of a sequence, the outer over sequences.
pub fn quality(preds: &[SequenceMasks], gts: &[SequenceMasks]) -> Result<f64, MetricsError> {
    quality_with(preds, gts, AbsentFrames::ScoreOne)
}

pub fn quality_with(
    preds: &[SequenceMasks],
    gts: &[SequenceMasks],
    absent: AbsentFrames,
) -> Result<f64, MetricsError> {
    check_aligned(preds, gts)?;
    let mut total = 0.0;
    let mut sequences = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        let (mut sum, mut n) = (0.0, 0usize);
        for (pf, gf) in p.iter().zip(g) {
            for (a, b) in pf.iter().zip(gf) {
                if absent == AbsentFrames::Skip && b.is_empty() {
                    continue;
                }
                sum += iou(a, b)?;
                n += 1;
            }
        }
        if n > 0 {
            total += sum / n as f64;
            sequences += 1;
        }
    }
    if sequences == 0 {
        return Err(MetricsError::Misaligned("no scored frames".into()));
    }
    Ok(total / sequences as f64)
}

/// Full metric bundle. Frame-class ratios with no defined track fall back
/// to 0 (ADQ to 1); J/F are 0 when no target is ever visible.
pub fn vots_bundle(
    preds: &[SequenceMasks],
    gts: &[SequenceMasks],
    opts: &MetricOptions,
) -> Result<MetricBundle, MetricsError> {
    check_aligned(preds, gts)?;
    let per_seq = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| sequence_tallies(p, g, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let q = quality_with(preds, gts, opts.absent_frames)?;
    let (j_mean, f_mean, jf_mean) = match pooled_jf(&per_seq) {
        Ok(v) => v,
        Err(MetricsError::NoVisibleTarget) => (0.0, 0.0, 0.0),
        Err(e) => return Err(e),
    };
    Ok(MetricBundle {
        q,
        acc: nested_mean(&per_seq, TrackTally::acc).unwrap_or(0.0),
        rob: nested_mean(&per_seq, TrackTally::rob).unwrap_or(0.0),
        nre: nested_mean(&per_seq, TrackTally::nre).unwrap_or(0.0),
        dre: nested_mean(&per_seq, TrackTally::dre).unwrap_or(0.0),
        adq: nested_mean(&per_seq, TrackTally::adq).unwrap_or(1.0),
        j_mean,
        f_mean,
        jf_mean,
    })
}

fn pooled_jf(per_seq: &[Vec<TrackTally>]) -> Result<(f64, f64, f64), MetricsError> {
    let (mut j, mut f, mut n) = (0.0, 0.0, 0usize);
    for t in per_seq.iter().flatten() {
        j += t.j_sum;
        f += t.f_sum;
        n += t.visible;
    }
    if n == 0 {
        return Err(MetricsError::NoVisibleTarget);
    }
    let (j, f) = (j / n as f64, f / n as f64);
    Ok((j, f, (j + f) / 2.0))
}

/// `(J_mean, F_mean, JF_mean)` pooled over every visible `(frame, object)`.
pub fn jf_bundle(
    preds: &[SequenceMasks],
    gts: &[SequenceMasks],
    opts: &MetricOptions,
) -> Result<(f64, f64, f64), MetricsError> {
    check_aligned(preds, gts)?;
    let per_seq = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| sequence_tallies(p, g, opts))
        .collect::<Result<Vec<_>, _>>()?;
    pooled_jf(&per_seq)
}

/// Per-track rows, in sequence then object order.
pub fn track_rows(
    sequence_id: &str,
    object_ids: &[u32],
    pred: &SequenceMasks,
    gt: &SequenceMasks,
    final_memory_size: Option<usize>,
    opts: &MetricOptions,
) -> Result<Vec<TrackMetrics>, MetricsError> {
    check_aligned(std::slice::from_ref(pred), std::slice::from_ref(gt))?;
    let tallies = sequence_tallies(pred, gt, opts)?;
    if tallies.len() != object_ids.len() {
        return Err(MetricsError::Misaligned(format!(
            "{} object ids for {} tracks",
            object_ids.len(),
            tallies.len()
        )));
    }
    Ok(tallies
        .iter()
        .zip(object_ids)
        .map(|(t, &object_id)| TrackMetrics {
            sequence_id: sequence_id.to_string(),
            object_id,
            q: t.q(),
            acc: t.acc(),
            rob: t.rob(),
            nre: t.nre(),
            dre: t.dre(),
            adq: t.adq(),
            j: t.j(),
            f: t.f(),
            jf: (t.j() + t.f()) / 2.0,
            final_memory_size,
        })
        .collect())
}
