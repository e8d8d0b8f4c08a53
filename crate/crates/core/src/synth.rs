//! Seeded synthetic warehouse: layout, robot trajectory, captions,
//! primitives, keyframes and question/answer tasks with exact ground truth.

use crate::agent::Query;
use crate::store::{CaptionInput, KeyframeRecord, MemorySnapshot, PrimitiveInput, SnapshotBuilder, StoreError};
use crate::vector::{self, Embedder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub name: String,
    pub center: [f64; 2],
    pub size: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShelfSpec {
    pub name: String,
    pub position: [f64; 2],
    /// Category written on the shelf sign.
    pub sign: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Color and noun, e.g. "white box".
    pub name: String,
    pub count: usize,
    /// Width, depth and height in meters.
    pub size: [f64; 3],
    /// Zone to scatter copies in. Ignored when `positions` is given.
    #[serde(default)]
    pub zone: Option<String>,
    /// Fixed floor positions, one per copy.
    #[serde(default)]
    pub positions: Vec<[f64; 2]>,
    /// Labels carried by the first copies, one each.
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskMix {
    pub spatial: f64,
    pub binary: f64,
    pub descriptive: f64,
    pub multimodal: f64,
    pub temporal: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            spatial: 0.4,
            binary: 0.2,
            descriptive: 0.2,
            multimodal: 0.2,
            temporal: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Length of the recording, seconds.
    pub horizon: f64,
    /// Caption clip length M, seconds.
    pub clip_length: f64,
    /// Keyframes per second.
    pub keyframe_rate: f64,
    pub num_tasks: usize,
    #[serde(default)]
    pub task_mix: TaskMix,
    /// Robot speed, m/s.
    pub speed: f64,
    /// Longest pause at a waypoint, seconds.
    pub max_dwell: f64,
    pub visibility_range: f64,
    pub fov_deg: f64,
    /// Closed loop visited in order.
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub zones: Vec<ZoneSpec>,
    #[serde(default)]
    pub shelves: Vec<ShelfSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

fn s(x: &str) -> String {
    x.to_string()
}

impl ScenarioSpec {
    /// Twenty-minute warehouse run with ten look-alike white boxes.
    pub fn warehouse(seed: u64) -> Self {
        let shelf = |name: &str, x: f64, sign: &str| ShelfSpec {
            name: s(name),
            position: [x, 26.0],
            sign: s(sign),
        };
        let obj = |name: &str, count: usize, size: [f64; 3]| ObjectSpec {
            name: s(name),
            count,
            size,
            zone: None,
            positions: Vec::new(),
            labels: Vec::new(),
        };
        Self {
            seed,
            horizon: 1200.0,
            clip_length: 3.0,
            keyframe_rate: 1.0,
            num_tasks: 100,
            task_mix: TaskMix::default(),
            speed: 1.0,
            max_dwell: 6.0,
            visibility_range: 8.0,
            fov_deg: 90.0,
            waypoints: vec![[2.0, 2.0], [42.0, 2.0], [42.0, 12.0], [4.0, 12.0], [4.0, 22.0], [42.0, 22.0]],
            zones: vec![
                ZoneSpec { name: s("staging"), center: [10.0, 7.0], size: [8.0, 3.0] },
                ZoneSpec { name: s("unloading"), center: [32.0, 7.0], size: [8.0, 4.0] },
            ],
            shelves: vec![
                shelf("alpha", 6.0, "digital twin"),
                shelf("bravo", 12.0, "fragile"),
                shelf("charlie", 18.0, "electronics"),
                shelf("delta", 24.0, "chemicals"),
                shelf("echo", 30.0, "spare parts"),
                shelf("foxtrot", 36.0, "textiles"),
            ],
            objects: vec![
                ObjectSpec {
                    zone: Some(s("staging")),
                    labels: vec![s("digital twin"), s("fragile"), s("electronics")],
                    ..obj("white box", 10, [0.6, 0.6, 0.6])
                },
                ObjectSpec {
                    zone: Some(s("staging")),
                    labels: vec![s("chemicals"), s("textiles")],
                    ..obj("brown box", 4, [0.8, 0.6, 0.5])
                },
                ObjectSpec { zone: Some(s("unloading")), ..obj("red pallet", 4, [1.2, 1.0, 0.15]) },
                ObjectSpec { zone: Some(s("unloading")), ..obj("orange cone", 3, [0.4, 0.4, 0.7]) },
                ObjectSpec { zone: Some(s("unloading")), ..obj("blue barrel", 2, [0.6, 0.6, 0.9]) },
                ObjectSpec { positions: vec![[22.0, 15.0]], ..obj("yellow forklift", 1, [2.5, 1.2, 2.2]) },
                ObjectSpec { positions: vec![[44.5, 16.0]], ..obj("charging station", 1, [1.0, 0.5, 1.5]) },
                ObjectSpec {
                    positions: vec![[0.5, 7.0], [0.5, 17.0], [44.5, 8.0]],
                    labels: vec![s("police call")],
                    ..obj("yellow pole", 3, [0.2, 0.2, 2.5])
                },
                ObjectSpec {
                    positions: vec![[1.0, 12.5], [44.0, 21.5]],
                    ..obj("red extinguisher", 2, [0.3, 0.3, 0.6])
                },
                ObjectSpec { positions: vec![[20.0, 0.5]], ..obj("green bin", 1, [0.8, 0.8, 1.0]) },
                ObjectSpec { positions: vec![[45.0, 3.0]], ..obj("wooden workbench", 1, [2.0, 0.8, 0.9]) },
            ],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let spec: Self = toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let positive = [
            ("horizon", self.horizon),
            ("clip_length", self.clip_length),
            ("keyframe_rate", self.keyframe_rate),
            ("speed", self.speed),
            ("visibility_range", self.visibility_range),
            ("fov_deg", self.fov_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.clip_length > self.horizon {
            return bad("clip_length exceeds horizon".into());
        }
        if !(self.max_dwell >= 0.0) {
            return bad("max_dwell must be non-negative".into());
        }
        if self.waypoints.len() < 2 {
            return bad("at least two waypoints are required".into());
        }
        let m = &self.task_mix;
        let parts = [m.spatial, m.binary, m.descriptive, m.multimodal, m.temporal];
        if parts.iter().any(|p| !(*p >= 0.0)) || parts.iter().sum::<f64>() <= 0.0 {
            return bad("task mix needs non-negative weights with a positive sum".into());
        }
        if self.shelves.is_empty() && self.objects.is_empty() {
            return bad("the scene has no objects".into());
        }
        for o in &self.objects {
            if o.count == 0 {
                return bad(format!("object {:?} has count 0", o.name));
            }
            if o.labels.len() > o.count {
                return bad(format!("object {:?} has more labels than copies", o.name));
            }
            if o.size.iter().any(|x| !(*x > 0.0)) {
                return bad(format!("object {:?} needs a positive size", o.name));
            }
            if o.positions.is_empty() {
                match &o.zone {
                    Some(z) if self.zones.iter().any(|zone| &zone.name == z) => {}
                    Some(z) => return bad(format!("object {:?} refers to unknown zone {z:?}", o.name)),
                    None => return bad(format!("object {:?} needs a zone or positions", o.name)),
                }
            } else if o.positions.len() != o.count {
                return bad(format!("object {:?} needs one position per copy", o.name));
            }
            if vector::tokenize(&o.name).is_empty() {
                return bad("object names need at least one word".into());
            }
        }
        Ok(())
    }
}

/// One object of the generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u64,
    pub caption: String,
    /// Phrase used when asking about the object.
    pub mention: String,
    pub base: String,
    pub label: Option<String>,
    pub shelf_sign: Option<String>,
    pub centroid: [f64; 3],
    pub bbox: [[f64; 3]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Spatial,
    Temporal,
    Binary,
    Descriptive,
    Multimodal,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Spatial,
        TaskKind::Temporal,
        TaskKind::Binary,
        TaskKind::Descriptive,
        TaskKind::Multimodal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Spatial => "spatial",
            TaskKind::Temporal => "temporal",
            TaskKind::Binary => "binary",
            TaskKind::Descriptive => "descriptive",
            TaskKind::Multimodal => "multimodal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Position([f64; 3]),
    /// Time of the last sighting on the memory clock.
    Timestamp(f64),
    Boolean(bool),
    /// Tokens that a correct free-text answer must contain.
    KeyTokens(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QATask {
    pub id: u64,
    pub kind: TaskKind,
    pub query: Query,
    pub ground_truth: GroundTruth,
    /// Moments the evidence should point at, used for recall.
    pub gt_timestamps: Vec<f64>,
    /// Primitive the question is about, when there is one.
    pub target: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_threshold: Option<f64>,
}

/// Generated records and tasks, before sealing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub objects: Vec<SceneObject>,
    pub captions: Vec<CaptionInput>,
    pub primitives: Vec<PrimitiveInput>,
    pub keyframes: Vec<KeyframeRecord>,
    pub tasks: Vec<QATask>,
    pub horizon: f64,
}

impl Scenario {
    pub fn seal(&self, embedder: &dyn Embedder) -> Result<MemorySnapshot, SynthError> {
        let mut b = SnapshotBuilder::new();
        for c in &self.captions {
            b.add_caption(c.clone());
        }
        for p in &self.primitives {
            b.add_primitive(p.clone());
        }
        for k in &self.keyframes {
            b.add_keyframe(k.clone());
        }
        b.horizon(self.horizon);
        Ok(b.seal(embedder)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    x: f64,
    y: f64,
    yaw: f64,
}

#[derive(Debug, Clone, Copy)]
struct Leg {
    t0: f64,
    t1: f64,
    from: Pose,
    to: Pose,
}

fn wrap(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Piecewise motion: straight legs at constant speed, and in-place turns
/// during the pause at each waypoint.
struct Trajectory {
    legs: Vec<Leg>,
}

impl Trajectory {
    fn plan(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Self {
        let wp = &spec.waypoints;
        let n = wp.len();
        let heading = |i: usize| {
            let (a, b) = (wp[i % n], wp[(i + 1) % n]);
            (b[1] - a[1]).atan2(b[0] - a[0])
        };
        let mut legs = Vec::new();
        let mut t = 0.0;
        let mut i = 0usize;
        while t <= spec.horizon {
            let (a, b) = (wp[i % n], wp[(i + 1) % n]);
            let yaw = heading(i);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let dt = len / spec.speed;
            if dt > 0.0 {
                legs.push(Leg {
                    t0: t,
                    t1: t + dt,
                    from: Pose { x: a[0], y: a[1], yaw },
                    to: Pose { x: b[0], y: b[1], yaw },
                });
                t += dt;
            }
            let dwell = if spec.max_dwell > 0.0 {
                rng.gen_range(0.0..spec.max_dwell)
            } else {
                0.0
            };
            let next_yaw = heading(i + 1);
            legs.push(Leg {
                t0: t,
                t1: t + dwell.max(1e-9),
                from: Pose { x: b[0], y: b[1], yaw },
                to: Pose { x: b[0], y: b[1], yaw: yaw + wrap(next_yaw - yaw) },
            });
            t += dwell.max(1e-9);
            i += 1;
        }
        Self { legs }
    }

    fn pose(&self, t: f64) -> Pose {
        let i = self.legs.partition_point(|l| l.t1 < t).min(self.legs.len() - 1);
        let l = &self.legs[i];
        let u = ((t - l.t0) / (l.t1 - l.t0)).clamp(0.0, 1.0);
        Pose {
            x: l.from.x + u * (l.to.x - l.from.x),
            y: l.from.y + u * (l.to.y - l.from.y),
            yaw: wrap(l.from.yaw + u * (l.to.yaw - l.from.yaw)),
        }
    }
}

fn visible(spec: &ScenarioSpec, pose: Pose, obj: &SceneObject) -> Option<f64> {
    let dx = obj.centroid[0] - pose.x;
    let dy = obj.centroid[1] - pose.y;
    let d = (dx * dx + dy * dy).sqrt();
    if d > spec.visibility_range {
        return None;
    }
    if d < 1e-9 {
        return Some(d);
    }
    let off = wrap(dy.atan2(dx) - pose.yaw).abs();
    (off <= 0.5 * spec.fov_deg.to_radians()).then_some(d)
}

fn round_mm(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn place_objects(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<SceneObject> {
    let mut out = Vec::new();
    let mut push = |base: &str, label: Option<String>, sign: Option<String>, pos: [f64; 2], size: [f64; 3], mention: String| {
        let id = out.len() as u64;
        let caption = match (&label, &sign) {
            (Some(l), _) => format!("{base} labeled {l}"),
            (None, Some(sg)) => format!("{base} with {sg} sign"),
            _ => base.to_string(),
        };
        let (x, y) = (round_mm(pos[0]), round_mm(pos[1]));
        let (hx, hy, h) = (0.5 * size[0], 0.5 * size[1], size[2]);
        out.push(SceneObject {
            id,
            mention: if mention.is_empty() { caption.clone() } else { mention },
            caption,
            base: base.to_string(),
            label,
            shelf_sign: sign,
            centroid: [x, y, 0.5 * h],
            bbox: [[x - hx, y - hy, 0.0], [x + hx, y + hy, h]],
        });
    };
    for sh in &spec.shelves {
        let base = format!("shelf {}", sh.name);
        push(&base, None, Some(sh.sign.clone()), sh.position, [4.0, 1.0, 2.0], base.clone());
    }
    let mut zone_slots: Vec<(String, Vec<[f64; 2]>)> = Vec::new();
    for z in &spec.zones {
        let n: usize = spec
            .objects
            .iter()
            .filter(|o| o.positions.is_empty() && o.zone.as_deref() == Some(z.name.as_str()))
            .map(|o| o.count)
            .sum();
        if n == 0 {
            continue;
        }
        let cols = ((n as f64 * z.size[0] / z.size[1].max(1e-9)).sqrt().ceil() as usize).max(1);
        let rows = n.div_ceil(cols);
        let mut slots = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let fx = (c as f64 + 0.5) / cols as f64 - 0.5;
                let fy = (r as f64 + 0.5) / rows as f64 - 0.5;
                slots.push([z.center[0] + fx * z.size[0], z.center[1] + fy * z.size[1]]);
            }
        }
        slots.shuffle(rng);
        zone_slots.push((z.name.clone(), slots));
    }
    for o in &spec.objects {
        for k in 0..o.count {
            let label = o.labels.get(k).cloned();
            let pos = if o.positions.is_empty() {
                let zone = o.zone.as_deref().expect("validated");
                let slots = &mut zone_slots.iter_mut().find(|(n, _)| n == zone).expect("validated").1;
                let p = slots.pop().expect("one slot per copy");
                [p[0] + rng.gen_range(-0.2..0.2), p[1] + rng.gen_range(-0.2..0.2)]
            } else {
                o.positions[k]
            };
            push(&o.name, label, None, pos, o.size, String::new());
        }
    }
    out
}

fn counts_for(mix: &TaskMix, n: usize) -> Vec<(TaskKind, usize)> {
    let weights = [
        (TaskKind::Spatial, mix.spatial),
        (TaskKind::Binary, mix.binary),
        (TaskKind::Descriptive, mix.descriptive),
        (TaskKind::Multimodal, mix.multimodal),
        (TaskKind::Temporal, mix.temporal),
    ];
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let exact: Vec<f64> = weights.iter().map(|w| w.1 / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    weights.iter().zip(counts).map(|(w, c)| (w.0, c)).collect()
}

/// Number of tasks of each kind for `n` tasks, by largest remainder.
pub fn task_counts(mix: &TaskMix, n: usize) -> Vec<(TaskKind, usize)> {
    counts_for(mix, n)
}

const COLORS: &[&str] = &["red", "blue", "green", "yellow", "white", "orange", "purple", "brown", "black"];

fn contains_phrase(text: &str, phrase: &str) -> bool {
    let t = vector::tokenize(text);
    let p = vector::tokenize(phrase);
    !p.is_empty() && t.windows(p.len()).any(|w| w == p.as_slice())
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(spec, &mut rng);
    let traj = Trajectory::plan(spec, &mut rng);

    let step = (1.0 / spec.keyframe_rate).min(1.0);
    let samples = (spec.horizon / step).floor() as usize;
    let mut detections: Vec<Vec<f64>> = vec![Vec::new(); objects.len()];
    let mut sample_vis: Vec<Vec<(f64, u64)>> = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = k as f64 * step;
        let pose = traj.pose(t);
        let mut vis: Vec<(f64, u64)> = objects.iter().filter_map(|o| visible(spec, pose, o).map(|d| (d, o.id))).collect();
        vis.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, id) in &vis {
            detections[*id as usize].push(t);
        }
        sample_vis.push(vis);
    }

    let n_clips = (spec.horizon / spec.clip_length + 1e-9).floor() as usize;
    let mut captions = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let t0 = i as f64 * spec.clip_length;
        let t1 = t0 + spec.clip_length;
        let mid = 0.5 * (t0 + t1);
        let lo = (t0 / step).ceil() as usize;
        let hi = ((t1 / step).ceil() as usize).min(samples);
        let mut seen = BTreeSet::new();
        for vis in &sample_vis[lo.min(hi)..hi] {
            seen.extend(vis.iter().map(|v| v.1));
        }
        let pose = traj.pose(mid);
        let mut near: Vec<(f64, u64)> = seen
            .iter()
            .map(|id| {
                let o = &objects[*id as usize];
                let d = ((o.centroid[0] - pose.x).powi(2) + (o.centroid[1] - pose.y).powi(2)).sqrt();
                (d, *id)
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // the captioner names one of the closest objects, sometimes with a
        // second visible one as context
        let text = if near.is_empty() {
            "empty aisle".to_string()
        } else {
            let focus = rng.gen_range(0..near.len().min(3));
            let a = &objects[near[focus].1 as usize].caption;
            let others: Vec<u64> = near.iter().map(|n| n.1).filter(|id| *id != near[focus].1).collect();
            match others.choose(&mut rng) {
                Some(b) if rng.gen_bool(0.5) => format!("{a} near {}", objects[*b as usize].caption),
                _ => a.clone(),
            }
        };
        captions.push(CaptionInput {
            id: i as u64,
            t_start: t0,
            t_end: t1,
            pose: [round_mm(pose.x), round_mm(pose.y), 0.0, round_mm(pose.yaw)],
            text,
            embedding: None,
            primitive_ids: seen.into_iter().collect(),
        });
    }

    let n_kf = (spec.horizon * spec.keyframe_rate + 1e-9).floor() as usize;
    let mut keyframes = Vec::with_capacity(n_kf);
    for k in 0..n_kf {
        let t = k as f64 / spec.keyframe_rate;
        let pose = traj.pose(t);
        let mut vis: Vec<(f64, u64)> = objects.iter().filter_map(|o| visible(spec, pose, o).map(|d| (d, o.id))).collect();
        vis.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let annotation = (!vis.is_empty()).then(|| {
            vis.iter()
                .map(|(_, id)| objects[*id as usize].caption.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        });
        let mut ids: Vec<u64> = vis.iter().map(|v| v.1).collect();
        ids.sort_unstable();
        keyframes.push(KeyframeRecord {
            timestamp: t,
            image_ref: format!("frames/{k:06}.jpg"),
            visible_primitive_ids: ids,
            annotation,
        });
    }

    let primitives: Vec<PrimitiveInput> = objects
        .iter()
        .map(|o| PrimitiveInput {
            id: o.id,
            centroid: o.centroid,
            bbox: o.bbox,
            caption: o.caption.clone(),
            feature: None,
            detections: detections[o.id as usize].clone(),
        })
        .collect();

    let tasks = make_tasks(spec, &objects, &detections, &captions, &mut rng)?;
    Ok(Scenario {
        objects,
        captions,
        primitives,
        keyframes,
        tasks,
        horizon: spec.horizon,
    })
}

fn make_tasks(
    spec: &ScenarioSpec,
    objects: &[SceneObject],
    detections: &[Vec<f64>],
    captions: &[CaptionInput],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QATask>, SynthError> {
    let seen = |o: &&SceneObject| !detections[o.id as usize].is_empty();
    let unique: Vec<&SceneObject> = objects
        .iter()
        .filter(seen)
        .filter(|o| objects.iter().filter(|p| p.caption == o.caption).count() == 1)
        .collect();
    let all_seen: Vec<&SceneObject> = objects.iter().filter(seen).collect();
    let mentions = |phrase: &str| -> Vec<f64> {
        captions
            .iter()
            .filter(|c| contains_phrase(&c.text, phrase))
            .map(|c| 0.5 * (c.t_start + c.t_end))
            .collect()
    };
    let gt_for = |o: &SceneObject| -> Vec<f64> {
        let m = mentions(&o.mention);
        if !m.is_empty() {
            return m;
        }
        captions
            .iter()
            .filter(|c| c.primitive_ids.contains(&o.id))
            .map(|c| 0.5 * (c.t_start + c.t_end))
            .collect()
    };

    let shelves: Vec<&SceneObject> = unique.iter().copied().filter(|o| o.shelf_sign.is_some()).collect();
    let colored: Vec<(&SceneObject, String, String)> = {
        let mut nouns: Vec<(String, Vec<&SceneObject>)> = Vec::new();
        for o in objects {
            let toks = vector::tokenize(&o.base);
            if toks.len() < 2 || !COLORS.contains(&toks[0].as_str()) {
                continue;
            }
            let noun = toks[1..].join(" ");
            match nouns.iter_mut().find(|(n, _)| *n == noun) {
                Some((_, v)) => v.push(o),
                None => nouns.push((noun, vec![o])),
            }
        }
        nouns
            .into_iter()
            .filter(|(_, v)| v.len() == 1 && !detections[v[0].id as usize].is_empty())
            .map(|(noun, v)| (v[0], noun, vector::tokenize(&v[0].base)[0].clone()))
            .collect()
    };
    let absent: Vec<String> = {
        let nouns: BTreeSet<String> = objects
            .iter()
            .filter_map(|o| vector::tokenize(&o.base).last().cloned())
            .filter(|n| !["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"].contains(&n.as_str()))
            .collect();
        let mut out = Vec::new();
        for color in COLORS {
            for noun in &nouns {
                let exists = objects.iter().any(|o| {
                    let t = vector::tokenize(&o.caption);
                    t.iter().any(|x| x == color) && t.iter().any(|x| x == noun)
                });
                if !exists {
                    out.push(format!("{color} {noun}"));
                }
            }
        }
        out
    };
    let placements: Vec<(&SceneObject, &SceneObject)> = objects
        .iter()
        .filter(|o| o.label.is_some())
        .filter_map(|o| {
            objects
                .iter()
                .find(|s| s.shelf_sign.as_deref() == o.label.as_deref())
                .map(|s| (o, s))
        })
        .collect();

    let now = spec.horizon;
    let mut tasks = Vec::new();
    for (kind, count) in counts_for(&spec.task_mix, spec.num_tasks) {
        for i in 0..count {
            let id = tasks.len() as u64;
            let task = match kind {
                TaskKind::Spatial | TaskKind::Temporal => {
                    let Some(o) = unique.choose(rng) else {
                        return Err(SynthError::InvalidSpec("no uniquely described object was observed".into()));
                    };
                    if kind == TaskKind::Spatial {
                        QATask {
                            id,
                            kind,
                            query: Query::new(format!("Where is the {}?", o.mention), now),
                            ground_truth: GroundTruth::Position(crate::store::bbox_center(&o.bbox)),
                            gt_timestamps: gt_for(o),
                            target: Some(o.id),
                            spatial_threshold: None,
                            temporal_threshold: None,
                        }
                    } else {
                        let last = *detections[o.id as usize].last().expect("observed");
                        QATask {
                            id,
                            kind,
                            query: Query::new(format!("When did you last see the {}?", o.mention), now),
                            ground_truth: GroundTruth::Timestamp(last),
                            gt_timestamps: vec![last],
                            target: Some(o.id),
                            spatial_threshold: None,
                            temporal_threshold: None,
                        }
                    }
                }
                TaskKind::Binary => {
                    if i % 2 == 0 || absent.is_empty() {
                        let Some(o) = all_seen.choose(rng) else {
                            return Err(SynthError::InvalidSpec("nothing was observed".into()));
                        };
                        QATask {
                            id,
                            kind,
                            query: Query::new(format!("Is there a {}?", o.caption), now),
                            ground_truth: GroundTruth::Boolean(true),
                            gt_timestamps: mentions(&o.caption),
                            target: Some(o.id),
                            spatial_threshold: None,
                            temporal_threshold: None,
                        }
                    } else {
                        let phrase = absent.choose(rng).expect("non-empty").clone();
                        QATask {
                            id,
                            kind,
                            query: Query::new(format!("Is there a {phrase}?"), now),
                            ground_truth: GroundTruth::Boolean(false),
                            gt_timestamps: Vec::new(),
                            target: None,
                            spatial_threshold: None,
                            temporal_threshold: None,
                        }
                    }
                }
                TaskKind::Descriptive => {
                    let use_shelf = (i % 2 == 0 && !shelves.is_empty()) || colored.is_empty();
                    if use_shelf {
                        let Some(sh) = shelves.choose(rng) else {
                            return Err(SynthError::InvalidSpec("no descriptive targets were observed".into()));
                        };
                        QATask {
                            id,
                            kind,
                            query: Query::new(format!("What sign is on {}?", sh.mention), now),
                            ground_truth: GroundTruth::KeyTokens(vector::tokenize(sh.shelf_sign.as_deref().unwrap_or(""))),
                            gt_timestamps: gt_for(sh),
                            target: Some(sh.id),
                            spatial_threshold: None,
                            temporal_threshold: None,
                        }
                    } else {
                        let (o, noun, color) = colored.choose(rng).expect("non-empty");
                        QATask {
                            id,
                            kind,
                            query: Query::new(format!("What color is the {noun}?"), now),
                            ground_truth: GroundTruth::KeyTokens(vec![color.clone()]),
                            gt_timestamps: gt_for(o),
                            target: Some(o.id),
                            spatial_threshold: None,
                            temporal_threshold: None,
                        }
                    }
                }
                TaskKind::Multimodal => {
                    let Some((item, shelf)) = placements.choose(rng) else {
                        return Err(SynthError::InvalidSpec("no labeled item matches a shelf sign".into()));
                    };
                    let name = vector::tokenize(&shelf.base).last().cloned().unwrap_or_default();
                    QATask {
                        id,
                        kind,
                        query: Query::new("Which shelf should this one be placed on?", now)
                            .with_observation(item.caption.clone()),
                        ground_truth: GroundTruth::KeyTokens(vec![name]),
                        gt_timestamps: gt_for(shelf),
                        target: Some(shelf.id),
                        spatial_threshold: None,
                        temporal_threshold: None,
                    }
                }
            };
            tasks.push(task);
        }
    }
    Ok(tasks)
}

/// Sealed snapshot plus tasks for `spec`.
pub fn generate_synthetic_memory(
    spec: &ScenarioSpec,
    embedder: &dyn Embedder,
) -> Result<(MemorySnapshot, Vec<QATask>), SynthError> {
    let scenario = generate_scenario(spec)?;
    let snapshot = scenario.seal(embedder)?;
    Ok((snapshot, scenario.tasks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warehouse_counts() {
        let sc = generate_scenario(&ScenarioSpec::warehouse(42)).unwrap();
        assert_eq!(sc.captions.len(), 400);
        assert_eq!(sc.keyframes.len(), 1200);
        assert_eq!(sc.tasks.len(), 100);
    }

    #[test]
    fn one_digital_twin_box() {
        let sc = generate_scenario(&ScenarioSpec::warehouse(42)).unwrap();
        let boxes: Vec<_> = sc.objects.iter().filter(|o| o.base == "white box").collect();
        assert_eq!(boxes.len(), 10);
        assert_eq!(boxes.iter().filter(|o| o.label.as_deref() == Some("digital twin")).count(), 1);
    }

    #[test]
    fn mix_split() {
        let c = task_counts(&TaskMix::default(), 100);
        let get = |k| c.iter().find(|x| x.0 == k).unwrap().1;
        assert_eq!(get(TaskKind::Spatial), 40);
        assert_eq!(get(TaskKind::Binary), 20);
        assert_eq!(get(TaskKind::Descriptive), 20);
        assert_eq!(get(TaskKind::Multimodal), 20);
        assert_eq!(get(TaskKind::Temporal), 0);
        let c = task_counts(&TaskMix::default(), 7);
        assert_eq!(c.iter().map(|x| x.1).sum::<usize>(), 7);
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = generate_scenario(&ScenarioSpec::warehouse(7)).unwrap();
        let b = generate_scenario(&ScenarioSpec::warehouse(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&ScenarioSpec::warehouse(8)).unwrap();
        assert_ne!(a.captions, c.captions);
    }

    #[test]
    fn every_object_is_seen() {
        let sc = generate_scenario(&ScenarioSpec::warehouse(42)).unwrap();
        for p in &sc.primitives {
            assert!(!p.detections.is_empty(), "{} never seen", p.caption);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = ScenarioSpec::warehouse(1);
        s.horizon = 0.0;
        assert!(matches!(s.validate(), Err(SynthError::InvalidSpec(_))));
        let mut s = ScenarioSpec::warehouse(1);
        s.objects[0].zone = Some("nowhere".into());
        assert!(s.validate().is_err());
    }
}
