//! Deterministic synthetic driving scenes.
//!
//! Every sequence draws its own random stream from `(seed, sequence_id)`, so
//! sequences can be generated in parallel and the output never depends on
//! the thread schedule. Objects persist for the whole sequence and move with
//! a constant per-object velocity; an object whose center leaves the sensor
//! range is simply absent from those frames.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, Box3D, Point, PointCloud};

/// Placement attempts per object before it is dropped from the sequence.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Free space kept around every footprint so that neighbouring objects never
/// merge into one occupancy component.
pub const PLACEMENT_GAP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Mean (length, width, height) in meters.
    pub dims: [f64; 3],
    /// Relative frequency; normalized over all classes.
    pub weight: f64,
    /// Mean surface reflectance in [0, 1].
    pub reflectance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub classes: Vec<ClassSpec>,
    /// Inclusive `[min, max]` number of objects spawned per sequence.
    pub objects_per_frame: [usize; 2],
    pub range_max: f64,
    /// Expected surface returns for an object at distance `d0` or closer.
    pub density_n0: f64,
    pub d0: f64,
    pub noise_sigma: f64,
    pub clutter_points: usize,
    pub seed: u64,
    /// Upper bound on per-object speed, meters per frame.
    pub max_speed: f64,
    /// Relative standard deviation of per-object dimensions around the class mean.
    pub dim_jitter: f64,
}

/// Zipf weights `1 / k^s` for ranks `k = 1..=n`.
pub fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|k| 1.0 / (k as f64).powf(s)).collect()
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::with_zipf(1.0)
    }
}

impl SceneConfig {
    /// The five built-in road-user classes with Zipf(`s`) frequencies.
    pub fn with_zipf(s: f64) -> Self {
        let table = [
            ("car", [4.5, 1.9, 1.6], 0.55),
            ("pedestrian", [0.8, 0.7, 1.8], 0.35),
            ("cyclist", [1.8, 0.7, 1.7], 0.45),
            ("van", [5.5, 2.1, 2.3], 0.6),
            ("truck", [9.0, 2.6, 3.4], 0.7),
        ];
        let weights = zipf_weights(table.len(), s);
        let classes = table
            .iter()
            .zip(weights)
            .map(|(&(name, dims, reflectance), weight)| ClassSpec {
                name: name.to_string(),
                dims,
                weight,
                reflectance,
            })
            .collect();
        Self {
            num_sequences: 60,
            frames_per_sequence: 10,
            classes,
            objects_per_frame: [4, 10],
            range_max: 40.0,
            density_n0: 150.0,
            d0: 10.0,
            noise_sigma: 0.03,
            clutter_points: 200,
            seed: 0,
            max_speed: 0.5,
            dim_jitter: 0.05,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes.len() < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        for c in &self.classes {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return fail(format!("class `{}` weight must be > 0", c.name));
            }
            if c.dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return fail(format!("class `{}` dims must be > 0", c.name));
            }
            if !(0.0..=1.0).contains(&c.reflectance) {
                return fail(format!("class `{}` reflectance must lie in [0, 1]", c.name));
            }
        }
        if self.num_sequences == 0 {
            return fail("num_sequences must be >= 1".into());
        }
        if self.frames_per_sequence == 0 {
            return fail("frames_per_sequence must be >= 1".into());
        }
        if self.objects_per_frame[0] > self.objects_per_frame[1] {
            return fail("objects_per_frame min exceeds max".into());
        }
        if !(self.d0 > 0.0) {
            return fail("d0 must be > 0".into());
        }
        if !(self.range_max > 0.0) {
            return fail("range_max must be > 0".into());
        }
        if !(self.density_n0 >= 0.0) || !(self.noise_sigma >= 0.0) || !(self.max_speed >= 0.0) {
            return fail("density_n0, noise_sigma and max_speed must be >= 0".into());
        }
        if !(self.dim_jitter >= 0.0 && self.dim_jitter < 0.5) {
            return fail("dim_jitter must lie in [0, 0.5)".into());
        }
        Ok(())
    }

    /// Expected number of surface returns at BEV distance `d`:
    /// `n0 · (d0 / max(d, d0))²`.
    pub fn expected_point_count(&self, d: f64) -> f64 {
        let r = self.d0 / d.max(self.d0);
        self.density_n0 * r * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub sequence_id: u64,
    pub index_in_sequence: u64,
    pub cloud: PointCloud,
    pub gt_boxes: Vec<Box3D>,
    /// Persistent object identity within the sequence, parallel to `gt_boxes`.
    #[serde(default)]
    pub track_ids: Vec<u64>,
}

struct Track {
    id: u64,
    start: [f64; 2],
    velocity: [f64; 2],
    dims: [f64; 3],
    yaw: f64,
    class_id: usize,
}

impl Track {
    fn center_at(&self, t: u64) -> [f64; 2] {
        let t = t as f64;
        [self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t]
    }

    fn box_at(&self, t: u64) -> Box3D {
        let [x, y] = self.center_at(t);
        Box3D::new([x, y, self.dims[2] / 2.0], self.dims, self.yaw, self.class_id)
    }

    fn inflated_at(&self, t: u64) -> Box3D {
        let mut b = self.box_at(t);
        b.dims[0] += PLACEMENT_GAP;
        b.dims[1] += PLACEMENT_GAP;
        b
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a list of
/// discriminators (sequence id, round, pass, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

fn uniform_in_disk(rng: &mut impl Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    [r * a.cos(), r * a.sin()]
}

fn clipped_noise(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n: f64 = rng.sample(StandardNormal);
    sigma * n.clamp(-3.0, 3.0)
}

/// Samples LiDAR-like surface returns on the top and the four side faces of
/// `bbox`. The count is Poisson with mean [`SceneConfig::expected_point_count`]
/// at the box's BEV range; every coordinate gets Gaussian noise truncated at
/// ±3σ.
pub fn sample_object_points(
    bbox: &Box3D,
    reflectance: f64,
    cfg: &SceneConfig,
    rng: &mut impl Rng,
) -> Vec<Point> {
    let d = bbox.center[0].hypot(bbox.center[1]);
    let lambda = cfg.expected_point_count(d);
    if lambda <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
    let [l, w, h] = bbox.dims;
    // Top, ±length faces (area w·h), ±width faces (area l·h).
    let areas = [l * w, w * h, w * h, l * h, l * h];
    let face = WeightedIndex::new(areas).expect("positive face areas");
    let refl_noise = Normal::new(0.0, 0.05).expect("finite sigma");
    let (s, c) = bbox.yaw.sin_cos();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a: f64 = rng.random_range(-0.5..0.5);
        let b: f64 = rng.random_range(-0.5..0.5);
        let [u, v, z] = match face.sample(rng) {
            0 => [a * l, b * w, h / 2.0],
            1 => [l / 2.0, a * w, b * h],
            2 => [-l / 2.0, a * w, b * h],
            3 => [a * l, w / 2.0, b * h],
            _ => [a * l, -w / 2.0, b * h],
        };
        let x = bbox.center[0] + c * u - s * v + clipped_noise(rng, cfg.noise_sigma);
        let y = bbox.center[1] + s * u + c * v + clipped_noise(rng, cfg.noise_sigma);
        let z = bbox.center[2] + z + clipped_noise(rng, cfg.noise_sigma);
        let r = (reflectance + refl_noise.sample(rng)).clamp(0.0, 1.0);
        out.push(Point::new(x, y, z, r));
    }
    out
}

fn spawn_tracks(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Track> {
    let weights: Vec<f64> = cfg.classes.iter().map(|c| c.weight).collect();
    let class_dist = WeightedIndex::new(&weights).expect("validated weights");
    let [lo, hi] = cfg.objects_per_frame;
    let n = rng.random_range(lo..=hi);
    let horizon = cfg.frames_per_sequence as u64;
    let mut tracks: Vec<Track> = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let class_id = class_dist.sample(rng);
        let spec = &cfg.classes[class_id];
        let dims = spec
            .dims
            .map(|m| m * (1.0 + clipped_noise(rng, cfg.dim_jitter)).max(0.5));
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let start = uniform_in_disk(rng, cfg.range_max);
            let speed = if cfg.max_speed > 0.0 {
                rng.random_range(0.0..cfg.max_speed)
            } else {
                0.0
            };
            let candidate = Track {
                id,
                start,
                velocity: [speed * yaw.cos(), speed * yaw.sin()],
                dims,
                yaw,
                class_id,
            };
            let collides = tracks.iter().any(|other| {
                (0..horizon).any(|t| {
                    bev_intersection_area(&candidate.inflated_at(t), &other.inflated_at(t)) > 0.0
                })
            });
            if !collides {
                tracks.push(candidate);
                break;
            }
        }
    }
    tracks
}

fn generate_sequence(cfg: &SceneConfig, sequence_id: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[sequence_id]));
    let tracks = spawn_tracks(cfg, &mut rng);
    let fps = cfg.frames_per_sequence as u64;
    (0..fps)
        .map(|t| {
            let mut points = Vec::new();
            let mut gt_boxes = Vec::new();
            let mut track_ids = Vec::new();
            for track in &tracks {
                let bbox = track.box_at(t);
                if bbox.center[0].hypot(bbox.center[1]) > cfg.range_max {
                    continue;
                }
                let refl = cfg.classes[track.class_id].reflectance;
                points.extend(sample_object_points(&bbox, refl, cfg, &mut rng));
                gt_boxes.push(bbox);
                track_ids.push(track.id);
            }
            for _ in 0..cfg.clutter_points {
                let [x, y] = uniform_in_disk(&mut rng, cfg.range_max);
                let z = clipped_noise(&mut rng, cfg.noise_sigma);
                points.push(Point::new(x, y, z, rng.random_range(0.0..0.3)));
            }
            Frame {
                frame_id: sequence_id * fps + t,
                sequence_id,
                index_in_sequence: t,
                cloud: PointCloud::new(points),
                gt_boxes,
                track_ids,
            }
        })
        .collect()
}

/// Generates `num_sequences × frames_per_sequence` frames, ordered by
/// `(sequence_id, index_in_sequence)`. Frame ids are
/// `sequence_id · frames_per_sequence + index`.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<Vec<Frame>> {
    cfg.validate()?;
    let frames = (0..cfg.num_sequences as u64)
        .into_par_iter()
        .map(|s| generate_sequence(cfg, s))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(frames)
}

/// Per-class counts over a set of boxes (ground truth or predictions).
pub fn box_class_histogram<'a>(boxes: impl IntoIterator<Item = &'a Box3D>, num_classes: usize) -> Vec<usize> {
    let mut hist = vec![0; num_classes];
    for b in boxes {
        if b.class_id < num_classes {
            hist[b.class_id] += 1;
        }
    }
    hist
}

/// Per-class counts of ground-truth labels over `frames`.
pub fn class_histogram(frames: &[Frame], num_classes: usize) -> Vec<usize> {
    box_class_histogram(frames.iter().flat_map(|f| f.gt_boxes.iter()), num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SceneConfig {
        SceneConfig {
            num_sequences: 4,
            frames_per_sequence: 5,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn empty_object_range_gives_clutter_only() {
        let cfg = SceneConfig {
            objects_per_frame: [0, 0],
            ..small_cfg()
        };
        let frames = generate_dataset(&cfg).unwrap();
        assert_eq!(frames.len(), 20);
        for f in &frames {
            assert!(f.gt_boxes.is_empty());
            assert_eq!(f.cloud.len(), cfg.clutter_points);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_dataset(&SceneConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = small_cfg();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = single.install(|| generate_dataset(&cfg).unwrap());
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ids_and_ranges() {
        let cfg = small_cfg();
        let frames = generate_dataset(&cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in &frames {
            assert!(seen.insert(f.frame_id));
            assert_eq!(f.frame_id, f.sequence_id * 5 + f.index_in_sequence);
            assert_eq!(f.track_ids.len(), f.gt_boxes.len());
            for b in &f.gt_boxes {
                assert!(b.is_valid());
                assert!(b.center[0].hypot(b.center[1]) <= cfg.range_max);
            }
            assert!(f.cloud.points.iter().all(Point::is_valid));
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = small_cfg();
        cfg.classes.truncate(1);
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
        let mut cfg = small_cfg();
        cfg.classes[0].weight = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SceneConfig { d0: 0.0, ..small_cfg() };
        assert!(cfg.validate().is_err());
        let cfg = SceneConfig { frames_per_sequence: 0, ..small_cfg() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn inverse_square_density_at_twice_d0() {
        let cfg = SceneConfig::default();
        let bbox = Box3D::new([2.0 * cfg.d0, 0.0, 0.8], [4.5, 1.9, 1.6], 0.4, 0);
        let expected = cfg.density_n0 / 4.0;
        assert!((cfg.expected_point_count(2.0 * cfg.d0) - expected).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1000;
        let total: usize = (0..draws)
            .map(|_| sample_object_points(&bbox, 0.5, &cfg, &mut rng).len())
            .sum();
        let mean = total as f64 / draws as f64;
        assert!((mean - expected).abs() / expected < 0.05, "mean {mean}");
        // Within d0 the density is clamped.
        assert_eq!(cfg.expected_point_count(0.5 * cfg.d0), cfg.density_n0);
    }

    #[test]
    fn object_points_stay_within_noise_inflated_box() {
        let cfg = SceneConfig::default();
        let frames = generate_dataset(&small_cfg()).unwrap();
        let three_sigma = 3.0 * cfg.noise_sigma + 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for f in frames.iter().take(5) {
            for b in &f.gt_boxes {
                let mut inflated = *b;
                for d in inflated.dims.iter_mut() {
                    *d += 2.0 * three_sigma * std::f64::consts::SQRT_2;
                }
                for p in sample_object_points(b, 0.5, &cfg, &mut rng) {
                    let [u, v, w] = b.to_local(p.x, p.y, p.z);
                    // Rotation mixes the x/y noise, bounded by √2·3σ per axis.
                    assert!(u.abs() <= inflated.dims[0] / 2.0);
                    assert!(v.abs() <= inflated.dims[1] / 2.0);
                    assert!(w.abs() <= b.dims[2] / 2.0 + three_sigma);
                }
            }
        }
    }

    #[test]
    fn sequences_move_with_constant_velocity() {
        let cfg = SceneConfig {
            num_sequences: 3,
            frames_per_sequence: 8,
            ..SceneConfig::default()
        };
        let frames = generate_dataset(&cfg).unwrap();
        for seq in frames.chunks(8) {
            let mut velocity: std::collections::HashMap<u64, [f64; 2]> = Default::default();
            for pair in seq.windows(2) {
                for (i, id) in pair[1].track_ids.iter().enumerate() {
                    let Some(j) = pair[0].track_ids.iter().position(|x| x == id) else {
                        continue;
                    };
                    let (a, b) = (pair[0].gt_boxes[j], pair[1].gt_boxes[i]);
                    let d = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
                    let v = velocity.entry(*id).or_insert(d);
                    assert!((v[0] - d[0]).abs() < 1e-9 && (v[1] - d[1]).abs() < 1e-9);
                    assert!(d[0].hypot(d[1]) <= cfg.max_speed + 1e-9);
                    assert_eq!(a.yaw, b.yaw);
                    assert_eq!(a.dims, b.dims);
                }
            }
        }
    }

    #[test]
    fn histogram_basics() {
        assert_eq!(class_histogram(&[], 3), vec![0, 0, 0]);
        let b = |c| Box3D::new([0.0; 3], [1.0; 3], 0.0, c);
        let frame = Frame {
            frame_id: 0,
            sequence_id: 0,
            index_in_sequence: 0,
            cloud: PointCloud::default(),
            gt_boxes: vec![b(0), b(0), b(1)],
            track_ids: vec![0, 1, 2],
        };
        assert_eq!(class_histogram(&[frame], 4), vec![2, 1, 0, 0]);
    }

    #[test]
    fn zipf_frequencies_match_weights() {
        let cfg = SceneConfig {
            num_sequences: 2000,
            frames_per_sequence: 1,
            objects_per_frame: [5, 5],
            clutter_points: 0,
            density_n0: 0.0,
            range_max: 200.0,
            ..SceneConfig::default()
        };
        let frames = generate_dataset(&cfg).unwrap();
        let hist = class_histogram(&frames, cfg.num_classes());
        let total: usize = hist.iter().sum();
        assert!(total >= 9_900, "placement dropped too many objects: {total}");
        let wsum: f64 = cfg.classes.iter().map(|c| c.weight).sum();
        for (count, class) in hist.iter().zip(&cfg.classes) {
            let freq = *count as f64 / total as f64;
            assert!((freq - class.weight / wsum).abs() < 0.02, "{} {freq}", class.name);
        }
    }
}
