//! Synthetic scenes of solid-colored segments along a straight camera path.
//!
//! A camera moves at a steady rate along a line and sees one solid color per
//! segment. When a color is used by more than one segment, an observation of
//! that color is consistent with several disjoint stretches of the path: the
//! true pose posterior is multimodal, and the modes are known exactly.
//!
//! Segments own their left end: a coordinate exactly on a boundary belongs
//! to the segment that starts there. The end of the path belongs to the
//! last segment.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cvae::Example;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, rotation_about, Pose};

/// Lateral tolerance for a pose to count as on the trajectory.
pub const TRAJECTORY_TOL: f64 = 1e-6;

/// Maximum RGB distance between an observation and its palette color.
pub const COLOR_TOL: f64 = 0.1;

/// Range observation features are clamped to after noise.
pub const FEATURE_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Color {
    pub name: String,
    pub rgb: [f64; 3],
}

impl Color {
    pub fn new(name: &str, rgb: [f64; 3]) -> Self {
        Color {
            name: name.to_string(),
            rgb,
        }
    }
}

/// Red, green and blue.
pub fn default_palette() -> Vec<Color> {
    vec![
        Color::new("red", [1.0, 0.0, 0.0]),
        Color::new("green", [0.0, 1.0, 0.0]),
        Color::new("blue", [0.0, 0.0, 1.0]),
    ]
}

/// Camera orientation looking along world `+y`, with image x along `+x`.
pub fn facing_plus_y() -> Matrix3<f64> {
    Matrix3::from_columns(&[Vector3::x(), -Vector3::z(), Vector3::y()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    /// Color name of each segment, in path order.
    pub pattern: Vec<String>,
    pub palette: Vec<Color>,
    /// Path length in scene units.
    pub length: f64,
    /// Yaw (degrees, about `+z`) applied to the base orientation per
    /// segment. `None` keeps one orientation for the whole path.
    pub segment_yaw_deg: Option<Vec<f64>>,
    /// Standard deviation of additive Gaussian feature noise.
    pub obs_noise: f64,
    /// Observation width; the RGB triple is repeated to fill it.
    pub feature_dim: usize,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            pattern: vec!["red".into(), "green".into(), "red".into()],
            palette: default_palette(),
            length: 3.0,
            segment_yaw_deg: None,
            obs_noise: 0.01,
            feature_dim: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub origin: Vector3<f64>,
    /// Unit direction of travel.
    pub direction: Vector3<f64>,
    pub length: f64,
}

impl Trajectory {
    pub fn point(&self, s: f64) -> Vector3<f64> {
        self.origin + self.direction * s
    }

    /// Coordinate along the path of the projection of `p`, and the lateral
    /// distance from the line.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        let rel = p - self.origin;
        let s = rel.dot(&self.direction);
        (s, (rel - self.direction * s).norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Index into the palette.
    pub color: usize,
    pub rotation: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub palette: Vec<Color>,
    pub segments: Vec<Segment>,
    pub trajectory: Trajectory,
    pub obs_noise: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

/// Observation features: a (noisy) solid color, repeated to `F` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    /// Mean of the repeated values per color channel.
    pub fn rgb(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let mut count = [0usize; 3];
        for (k, v) in self.features.iter().enumerate() {
            sum[k % 3] += v;
            count[k % 3] += 1;
        }
        std::array::from_fn(|c| if count[c] > 0 { sum[c] / count[c] as f64 } else { 0.0 })
    }
}

/// One stretch of the path consistent with an observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRegion {
    pub segment: usize,
    pub start: f64,
    pub end: f64,
    /// Pose at the middle of the stretch.
    pub center: Pose,
}

impl ModeRegion {
    /// Translation distance to the nearest pose of the region and the
    /// rotation angle (degrees) to the region's orientation.
    pub fn distance(&self, trajectory: &Trajectory, pose: &Pose) -> (f64, f64) {
        let (s, _) = trajectory.project(&pose.translation);
        let nearest = trajectory.point(s.clamp(self.start, self.end));
        (
            (pose.translation - nearest).norm(),
            geodesic_angle(&pose.rotation, &self.center.rotation),
        )
    }

    pub fn contains(&self, coordinate: f64) -> bool {
        self.start <= coordinate && coordinate <= self.end
    }
}

/// Ground-truth posterior modes for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub color: usize,
    pub regions: Vec<ModeRegion>,
}

/// Builds a scene from a color pattern.
///
/// The default is a 3-unit path along `+x` from the origin, camera facing
/// `+y`, split into three equal segments colored red, green, red: red is
/// ambiguous (two modes) and green is not.
pub fn build_tricolor_scene(seed: u64, options: &SceneOptions) -> Result<SceneSpec> {
    let n = options.pattern.len();
    if n < 3 {
        return Err(Error::InvalidScene(format!("need at least 3 segments, got {n}")));
    }
    if !(options.length > 0.0 && options.length.is_finite()) {
        return Err(Error::InvalidScene("path length must be positive".into()));
    }
    if options.feature_dim == 0 {
        return Err(Error::InvalidScene("feature_dim must be positive".into()));
    }
    if !(options.obs_noise >= 0.0) {
        return Err(Error::InvalidScene("obs_noise must be non-negative".into()));
    }
    for (i, a) in options.palette.iter().enumerate() {
        if a.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidScene(format!("color `{}` outside [0, 1]", a.name)));
        }
        for b in &options.palette[i + 1..] {
            if a.rgb == b.rgb || a.name == b.name {
                return Err(Error::InvalidScene(format!(
                    "palette entries `{}` and `{}` are not distinct",
                    a.name, b.name
                )));
            }
        }
    }
    let yaws = match &options.segment_yaw_deg {
        Some(y) if y.len() != n => {
            return Err(Error::InvalidScene(format!(
                "{} yaw values for {n} segments",
                y.len()
            )))
        }
        Some(y) => y.clone(),
        None => vec![0.0; n],
    };
    let width = options.length / n as f64;
    let segments = options
        .pattern
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let color = options
                .palette
                .iter()
                .position(|c| &c.name == name)
                .ok_or_else(|| Error::InvalidScene(format!("pattern uses unknown color `{name}`")))?;
            Ok(Segment {
                start: i as f64 * width,
                end: if i + 1 == n { options.length } else { (i + 1) as f64 * width },
                color,
                rotation: rotation_about(Vector3::z(), yaws[i]) * facing_plus_y(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSpec {
        palette: options.palette.clone(),
        segments,
        trajectory: Trajectory {
            origin: Vector3::zeros(),
            direction: Vector3::x(),
            length: options.length,
        },
        obs_noise: options.obs_noise,
        feature_dim: options.feature_dim,
        seed,
    })
}

impl SceneSpec {
    /// Index of the segment owning path coordinate `s` (left-closed).
    pub fn segment_at(&self, s: f64) -> Option<usize> {
        let last = self.segments.len() - 1;
        self.segments.iter().position(|seg| seg.start <= s && s < seg.end).or({
            if (s - self.trajectory.length).abs() <= TRAJECTORY_TOL {
                Some(last)
            } else {
                None
            }
        })
    }

    /// Camera pose at path coordinate `s`.
    pub fn pose_at(&self, s: f64) -> Result<Pose> {
        let seg = self.segment_at(s).ok_or(Error::OffTrajectory {
            coordinate: s,
            lateral: 0.0,
        })?;
        Ok(Pose::new(self.segments[seg].rotation, self.trajectory.point(s)))
    }

    /// True when some color labels two or more segments.
    pub fn is_ambiguous(&self) -> bool {
        (0..self.palette.len()).any(|c| self.segments.iter().filter(|s| s.color == c).count() >= 2)
    }

    fn locate(&self, pose: &Pose) -> Result<(f64, usize)> {
        let (s, lateral) = self.trajectory.project(&pose.translation);
        let off = Error::OffTrajectory {
            coordinate: s,
            lateral,
        };
        if lateral > TRAJECTORY_TOL || s < -TRAJECTORY_TOL || s > self.trajectory.length + TRAJECTORY_TOL {
            return Err(off);
        }
        let s = s.clamp(0.0, self.trajectory.length);
        Ok((s, self.segment_at(s).ok_or(off)?))
    }
}

/// Observation seen from `pose`: the owning segment's color, plus Gaussian
/// noise of the scene's `obs_noise` drawn from `noise_seed`, clamped to
/// [`FEATURE_RANGE`].
pub fn render_observation(scene: &SceneSpec, pose: &Pose, noise_seed: u64) -> Result<Observation> {
    let (_, seg) = scene.locate(pose)?;
    let rgb = scene.palette[scene.segments[seg].color].rgb;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let (lo, hi) = FEATURE_RANGE;
    let features = (0..scene.feature_dim)
        .map(|k| {
            let noise = if scene.obs_noise > 0.0 {
                scene.obs_noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (rgb[k % 3] + noise).clamp(lo, hi)
        })
        .collect();
    Ok(Observation { features })
}

/// Regions of the path whose color matches the observation.
pub fn true_mode_set(scene: &SceneSpec, observation: &Observation) -> Result<ModeSet> {
    let rgb = observation.rgb();
    let dist = |c: &Color| {
        c.rgb
            .iter()
            .zip(&rgb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let color = scene
        .palette
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist(c)))
        .filter(|&(_, d)| d <= COLOR_TOL)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(Error::UnknownColor {
            r: rgb[0],
            g: rgb[1],
            b: rgb[2],
        })?;
    let regions = scene
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.color == color)
        .map(|(i, s)| {
            let mid = 0.5 * (s.start + s.end);
            ModeRegion {
                segment: i,
                start: s.start,
                end: s.end,
                center: Pose::new(s.rotation, scene.trajectory.point(mid)),
            }
        })
        .collect();
    Ok(ModeSet { color, regions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Sample,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Sample => "sample",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "sample" => Ok(Split::Sample),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown split `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Path coordinate of the pose.
    pub coordinate: f64,
    pub pose: Pose,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn examples(&self) -> Vec<Example> {
        self.records
            .iter()
            .map(|r| Example {
                features: r.observation.features.clone(),
                pose: r.pose,
            })
            .collect()
    }
}

fn noise_seed(seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 1u64,
        Split::Test => 2,
        Split::Sample => 3,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tag.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (index as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Poses at a steady rate along the path.
///
/// Training coordinates are `(i + ½)·spacing` (cell midpoints); test
/// coordinates are `i·spacing`, half a spacing away, so the two splits never
/// share a pose. `spacing` defaults to `length / n`.
pub fn generate_dataset(
    scene: &SceneSpec,
    n_samples: usize,
    spacing: Option<f64>,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidScene("n_samples must be at least 1".into()));
    }
    let length = scene.trajectory.length;
    let spacing = spacing.unwrap_or(length / n_samples as f64);
    let offset = match split {
        Split::Train => 0.5,
        Split::Test | Split::Sample => 0.0,
    };
    let last = (n_samples as f64 - 1.0 + offset) * spacing;
    if !(spacing > 0.0) || last >= length {
        return Err(Error::InvalidScene(format!(
            "{n_samples} samples with spacing {spacing} overrun the path length {length}"
        )));
    }
    let records = (0..n_samples)
        .map(|i| {
            let coordinate = (i as f64 + offset) * spacing;
            let pose = scene.pose_at(coordinate)?;
            let observation = render_observation(scene, &pose, noise_seed(seed, split, i))?;
            Ok(Record {
                coordinate,
                pose,
                observation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        split,
        seed,
        records,
    })
}

fn fmt_num(v: f64) -> String {
    // 17 significant digits: exact round trip for f64
    format!("{v:.16e}")
}

/// One line of the dataset format:
/// `split coordinate R(9, row-major) t(3) features(F)`, space separated.
pub fn format_record(split: Split, record: &Record) -> String {
    let mut fields = vec![split.to_string(), fmt_num(record.coordinate)];
    let r = &record.pose.rotation;
    for i in 0..3 {
        for j in 0..3 {
            fields.push(fmt_num(r[(i, j)]));
        }
    }
    fields.extend(record.pose.translation.iter().map(|&v| fmt_num(v)));
    fields.extend(record.observation.features.iter().map(|&v| fmt_num(v)));
    fields.join(" ")
}

/// Writes `dataset`, preceded by `header` lines emitted as `#` comments.
pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset, header: &[String]) -> std::io::Result<()> {
    writeln!(w, "# pose-cvae dataset v1")?;
    writeln!(w, "# seed={}", dataset.seed)?;
    for h in header {
        writeln!(w, "# {h}")?;
    }
    writeln!(
        w,
        "# columns: split coordinate r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz features..."
    )?;
    for rec in &dataset.records {
        writeln!(w, "{}", format_record(dataset.split, rec))?;
    }
    Ok(())
}

/// Parses the dataset format. All records must share one split and one
/// feature width.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut split = None;
    let mut seed = 0;
    let mut records = Vec::new();
    let mut width = None;
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("seed=") {
                seed = v.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad seed `{v}`"),
                })?;
            }
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let mut fields = line.split_whitespace();
        let sp: Split = fields
            .next()
            .expect("non-empty line")
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;
        if *split.get_or_insert(sp) != sp {
            return Err(bad("mixed splits in one file".into()));
        }
        let nums = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() < 14 {
            return Err(bad(format!("expected at least 14 numbers, got {}", nums.len())));
        }
        let f = nums.len() - 13;
        if *width.get_or_insert(f) != f {
            return Err(bad("feature width differs from earlier records".into()));
        }
        let rotation = Matrix3::from_row_slice(&nums[1..10]);
        let translation = Vector3::new(nums[10], nums[11], nums[12]);
        records.push(Record {
            coordinate: nums[0],
            pose: Pose::new(rotation, translation),
            observation: Observation {
                features: nums[13..].to_vec(),
            },
        });
    }
    Ok(Dataset {
        split: split.ok_or(Error::Parse {
            line: 0,
            message: "no records".into(),
        })?,
        seed,
        records,
    })
}
