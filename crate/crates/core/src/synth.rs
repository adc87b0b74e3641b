//! Deterministic synthetic scenes: moving rectangles/ellipses with scripted
//! appearance shifts, occlusions and topology splits.
//!
//! Per-pixel features are assigned analytically: every pixel carries the
//! current appearance vector of the topmost object covering it, or the
//! background appearance. Later objects in the scene description are drawn on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::embedding::Embedding;
use crate::mask::ObjectMask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown benchmark scene {0:?}")]
    UnknownScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    /// Ellipse inscribed in the object's size box.
    Ellipse,
}

/// Object centre at a given frame, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub frame: usize,
    pub row: f64,
    pub col: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// From this frame on the object's pixels carry `new` as feature.
    AppearanceShift(Embedding),
    /// The object is absent for `span` frames.
    Occlusion { span: usize },
    /// The object breaks into `parts` pieces separated by 2-pixel gaps
    /// along its motion axis.
    Split { parts: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEvent {
    pub at_frame: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Piecewise-linear centre path, ascending by frame.
    pub trajectory: Vec<Waypoint>,
    /// `(height, width)` in pixels.
    pub size: (usize, usize),
    pub appearance: Embedding,
    pub events: Vec<SceneEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub length: usize,
    pub objects: Vec<ObjectSpec>,
    pub background_appearance: Embedding,
    pub seed: u64,
}

const SPLIT_GAP: usize = 2;

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut problems = Vec::new();
        if self.height == 0 || self.width == 0 {
            problems.push(format!("frame size {}x{} must be positive", self.height, self.width));
        }
        if self.length == 0 {
            problems.push("length must be positive".to_string());
        }
        if self.objects.is_empty() {
            problems.push("at least one object is required".to_string());
        }
        if self.objects.len() >= u16::MAX as usize {
            problems.push("too many objects".to_string());
        }
        let dim = self.background_appearance.dim();
        for (i, obj) in self.objects.iter().enumerate() {
            let at = |field: &str| format!("objects[{i}].{field}");
            if obj.size.0 == 0 || obj.size.1 == 0 {
                problems.push(format!("{} must be positive", at("size")));
            }
            if obj.appearance.dim() != dim {
                problems.push(format!("{} has dim {}, background has {dim}", at("appearance"), obj.appearance.dim()));
            }
            if obj.trajectory.is_empty() {
                problems.push(format!("{} is empty", at("trajectory")));
            }
            for (k, wp) in obj.trajectory.iter().enumerate() {
                let inside = wp.row >= 0.0
                    && wp.col >= 0.0
                    && wp.row < self.height as f64
                    && wp.col < self.width as f64;
                if !inside {
                    problems.push(format!("{} is outside the frame", at(&format!("trajectory[{k}]"))));
                }
                if wp.frame >= self.length {
                    problems.push(format!("{} frame {} >= length", at(&format!("trajectory[{k}]")), wp.frame));
                }
                if k > 0 && obj.trajectory[k - 1].frame >= wp.frame {
                    problems.push(format!("{} frames must ascend", at("trajectory")));
                }
            }
            for (k, ev) in obj.events.iter().enumerate() {
                let field = at(&format!("events[{k}]"));
                if ev.at_frame >= self.length {
                    problems.push(format!("{field}.at_frame {} >= length", ev.at_frame));
                }
                match &ev.kind {
                    EventKind::AppearanceShift(e) if e.dim() != dim => {
                        problems.push(format!("{field} appearance has dim {}, expected {dim}", e.dim()));
                    }
                    EventKind::Occlusion { span } if *span == 0 || ev.at_frame + span > self.length => {
                        problems.push(format!("{field}.span {span} must be positive and end within the sequence"));
                    }
                    EventKind::Split { parts } => {
                        let along = match split_axis(obj, ev.at_frame) {
                            Axis::Columns => obj.size.1,
                            Axis::Rows => obj.size.0,
                        };
                        if *parts < 2 {
                            problems.push(format!("{field}.parts must be at least 2"));
                        } else if along < parts * (SPLIT_GAP + 1) - SPLIT_GAP {
                            problems.push(format!("{field}: object too small for {parts} parts"));
                        }
                    }
                    _ => {}
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::Invalid(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// Horizontal motion; gaps are columns.
    Columns,
    /// Vertical motion; gaps are rows.
    Rows,
}

fn centre_at(traj: &[Waypoint], t: usize) -> (f64, f64) {
    let first = traj[0];
    if t <= first.frame {
        return (first.row, first.col);
    }
    for pair in traj.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if t <= b.frame {
            let s = (t - a.frame) as f64 / (b.frame - a.frame) as f64;
            return (a.row + s * (b.row - a.row), a.col + s * (b.col - a.col));
        }
    }
    let last = traj[traj.len() - 1];
    (last.row, last.col)
}

fn split_axis(obj: &ObjectSpec, t: usize) -> Axis {
    let traj = &obj.trajectory;
    if traj.len() < 2 {
        return Axis::Columns;
    }
    let seg = traj
        .windows(2)
        .find(|p| t < p[1].frame)
        .unwrap_or(&traj[traj.len() - 2..]);
    let (dr, dc) = (seg[1].row - seg[0].row, seg[1].col - seg[0].col);
    if dc.abs() >= dr.abs() {
        Axis::Columns
    } else {
        Axis::Rows
    }
}

fn in_gap(pos: usize, extent: usize, parts: usize) -> bool {
    let usable = extent - SPLIT_GAP * (parts - 1);
    let (base, rem) = (usable / parts, usable % parts);
    let mut start = 0;
    for k in 0..parts {
        let end = start + base + usize::from(k < rem);
        if k + 1 == parts {
            return false;
        }
        if pos >= end && pos < end + SPLIT_GAP {
            return true;
        }
        start = end + SPLIT_GAP;
        if pos < start {
            return false;
        }
    }
    false
}

/// Generated ground truth and feature field of one scene.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    spec: SceneSpec,
    /// `[frame][pixel]`: 0 is background, `i + 1` is object `i`.
    labels: Vec<Vec<u16>>,
    /// `[frame][object]` current appearance.
    appearances: Vec<Vec<Embedding>>,
    keys: Vec<Embedding>,
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut labels = Vec::with_capacity(spec.length);
    let mut appearances = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let mut frame = vec![0u16; h * w];
        let mut apps = Vec::with_capacity(spec.objects.len());
        for (i, obj) in spec.objects.iter().enumerate() {
            let mut app = &obj.appearance;
            let mut occluded = false;
            let mut split: Option<(usize, Axis)> = None;
            let mut events: Vec<&SceneEvent> = obj.events.iter().collect();
            events.sort_by_key(|e| e.at_frame);
            for ev in events.into_iter().filter(|e| e.at_frame <= t) {
                match &ev.kind {
                    EventKind::AppearanceShift(e) => app = e,
                    EventKind::Occlusion { span } => occluded |= t < ev.at_frame + span,
                    EventKind::Split { parts } => split = Some((*parts, split_axis(obj, ev.at_frame))),
                }
            }
            apps.push(app.clone());
            if occluded {
                continue;
            }
            let (cr, cc) = centre_at(&obj.trajectory, t);
            let (oh, ow) = obj.size;
            let top = (cr - oh as f64 / 2.0).round() as isize;
            let left = (cc - ow as f64 / 2.0).round() as isize;
            for lr in 0..oh {
                let r = top + lr as isize;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for lc in 0..ow {
                    let c = left + lc as isize;
                    if c < 0 || c >= w as isize {
                        continue;
                    }
                    if obj.shape == Shape::Ellipse {
                        let dy = (lr as f64 + 0.5) / oh as f64 * 2.0 - 1.0;
                        let dx = (lc as f64 + 0.5) / ow as f64 * 2.0 - 1.0;
                        if dy * dy + dx * dx > 1.0 {
                            continue;
                        }
                    }
                    if let Some((parts, axis)) = split {
                        let gap = match axis {
                            Axis::Columns => in_gap(lc, ow, parts),
                            Axis::Rows => in_gap(lr, oh, parts),
                        };
                        if gap {
                            continue;
                        }
                    }
                    frame[r as usize * w + c as usize] = (i + 1) as u16;
                }
            }
        }
        labels.push(frame);
        appearances.push(apps);
    }
    let mut ds = SyntheticDataset {
        spec: spec.clone(),
        labels,
        appearances,
        keys: Vec::new(),
    };
    ds.keys = (0..spec.length)
        .map(|t| ds.pooled(t, None))
        .collect();
    Ok(ds)
}

impl SyntheticDataset {
    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn len(&self) -> usize {
        self.spec.length
    }

    pub fn is_empty(&self) -> bool {
        self.spec.length == 0
    }

    pub fn num_objects(&self) -> usize {
        self.spec.objects.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.spec.height, self.spec.width)
    }

    pub fn dim(&self) -> usize {
        self.spec.background_appearance.dim()
    }

    pub fn gt_mask(&self, t: usize, object: usize) -> ObjectMask {
        let label = (object + 1) as u16;
        let bits = self.labels[t].iter().map(|&l| l == label).collect();
        ObjectMask::from_bits(self.spec.height, self.spec.width, bits).expect("valid scene shape")
    }

    pub fn gt_masks(&self, t: usize) -> Vec<ObjectMask> {
        (0..self.num_objects()).map(|i| self.gt_mask(t, i)).collect()
    }

    pub fn visible(&self, t: usize, object: usize) -> bool {
        let label = (object + 1) as u16;
        self.labels[t].contains(&label)
    }

    /// Feature vector at pixel `(row, col)` of frame `t`.
    pub fn feature_at(&self, t: usize, row: usize, col: usize) -> &Embedding {
        match self.labels[t][row * self.spec.width + col] {
            0 => &self.spec.background_appearance,
            l => &self.appearances[t][l as usize - 1],
        }
    }

    pub fn appearance(&self, t: usize, object: usize) -> &Embedding {
        &self.appearances[t][object]
    }

    /// Global average of the feature field.
    pub fn frame_key(&self, t: usize) -> &Embedding {
        &self.keys[t]
    }

    /// Sum of the feature field over `mask`.
    pub fn feature_sum(&self, t: usize, mask: &ObjectMask) -> Vec<f64> {
        let counts = self.label_counts(t, Some(mask));
        self.weighted_sum(t, &counts)
    }

    /// Mean of the feature field over `mask` (zero vector for an empty mask),
    /// or over the whole frame when `mask` is `None`.
    pub fn pooled(&self, t: usize, mask: Option<&ObjectMask>) -> Embedding {
        let counts = self.label_counts(t, mask);
        let n: usize = counts.iter().sum();
        let mut sum = self.weighted_sum(t, &counts);
        if n > 0 {
            sum.iter_mut().for_each(|v| *v /= n as f64);
        }
        Embedding::new(sum).expect("finite features")
    }

    fn label_counts(&self, t: usize, mask: Option<&ObjectMask>) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_objects() + 1];
        match mask {
            Some(m) => {
                for (&l, &b) in self.labels[t].iter().zip(m.bits()) {
                    counts[l as usize] += usize::from(b);
                }
            }
            None => self.labels[t].iter().for_each(|&l| counts[l as usize] += 1),
        }
        counts
    }

    fn weighted_sum(&self, t: usize, counts: &[usize]) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim()];
        for (l, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let feat = if l == 0 {
                &self.spec.background_appearance
            } else {
                &self.appearances[t][l - 1]
            };
            for (s, v) in sum.iter_mut().zip(feat.values()) {
                *s += n as f64 * v;
            }
        }
        sum
    }
}

pub const SUITE_DIM: usize = 8;
pub const SUITE_NAMES: [&str; 5] = ["constant-1000", "shift-200", "occlude-100", "split-100", "twin-100"];

fn basis(i: usize, scale: f64) -> Embedding {
    let mut v = vec![0.0; SUITE_DIM];
    v[i] = scale;
    Embedding::new(v).expect("finite")
}

/// The fixed catalogue of benchmark scenes. `seed` jitters trajectories.
pub fn benchmark_suite(seed: u64) -> Vec<SceneSpec> {
    let (h, w) = (64usize, 64usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed5u64);
    let path = |points: &[(usize, f64, f64)], rng: &mut ChaCha8Rng| {
        let dr = rng.gen_range(-3i32..=3) as f64;
        let dc = rng.gen_range(-3i32..=3) as f64;
        points
            .iter()
            .map(|&(frame, row, col)| Waypoint {
                frame,
                row: (row + dr).clamp(0.0, h as f64 - 1.0),
                col: (col + dc).clamp(0.0, w as f64 - 1.0),
            })
            .collect::<Vec<_>>()
    };
    let background = basis(SUITE_DIM - 1, 0.1);
    let scene = |name: &str, length: usize, objects: Vec<ObjectSpec>| SceneSpec {
        name: name.to_string(),
        height: h,
        width: w,
        length,
        objects,
        background_appearance: background.clone(),
        seed,
    };
    let object = |shape, trajectory, size, appearance, events| ObjectSpec {
        shape,
        trajectory,
        size,
        appearance,
        events,
    };

    let constant = scene(
        "constant-1000",
        1000,
        vec![object(
            Shape::Rectangle,
            path(&[(0, 32.0, 16.0), (500, 32.0, 48.0), (999, 32.0, 16.0)], &mut rng),
            (16, 16),
            basis(0, 1.0),
            vec![],
        )],
    );

    let shifts = (1..5)
        .map(|k| SceneEvent {
            at_frame: 40 * k,
            kind: EventKind::AppearanceShift(basis(k % 2, 1.0)),
        })
        .collect();
    let shift = scene(
        "shift-200",
        200,
        vec![object(
            Shape::Ellipse,
            path(&[(0, 32.0, 26.0), (199, 32.0, 38.0)], &mut rng),
            (30, 30),
            basis(0, 1.0),
            shifts,
        )],
    );

    let occlude = scene(
        "occlude-100",
        100,
        vec![
            object(
                Shape::Rectangle,
                path(&[(0, 18.0, 12.0), (99, 18.0, 50.0)], &mut rng),
                (14, 14),
                basis(0, 1.0),
                vec![SceneEvent {
                    at_frame: 40,
                    kind: EventKind::Occlusion { span: 20 },
                }],
            ),
            object(
                Shape::Ellipse,
                path(&[(0, 12.0, 46.0), (99, 50.0, 46.0)], &mut rng),
                (16, 16),
                basis(2, 1.0),
                vec![],
            ),
        ],
    );

    let split = scene(
        "split-100",
        100,
        vec![object(
            Shape::Rectangle,
            path(&[(0, 32.0, 18.0), (99, 32.0, 46.0)], &mut rng),
            (16, 24),
            basis(3, 1.0),
            vec![SceneEvent {
                at_frame: 50,
                kind: EventKind::Split { parts: 2 },
            }],
        )],
    );

    let twin = scene(
        "twin-100",
        100,
        vec![
            object(
                Shape::Rectangle,
                path(&[(0, 18.0, 14.0), (99, 18.0, 50.0)], &mut rng),
                (14, 14),
                basis(0, 1.0),
                vec![],
            ),
            object(
                Shape::Rectangle,
                path(&[(0, 46.0, 50.0), (99, 46.0, 14.0)], &mut rng),
                (14, 14),
                basis(0, 1.0),
                vec![],
            ),
        ],
    );

    vec![constant, shift, occlude, split, twin]
}

pub fn suite_scene(name: &str, seed: u64) -> Result<SceneSpec, SynthError> {
    benchmark_suite(seed)
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| SynthError::UnknownScene(name.to_string()))
}
