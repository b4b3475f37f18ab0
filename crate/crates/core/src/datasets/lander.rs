//! Synthetic positioning collection: a deterministic parametric renderer
//! standing in for gym rollout dumps, preserving their structure — rollouts
//! of consecutive frames, a bright small sprite over a dark terrain scene,
//! off-screen filtering of the second half, and rollout-level splits.
//!
//! Scenes are rendered at 64x64 with three layers: a dark background, a
//! terrain silhouette from a per-rollout height curve, and the sprite
//! (a solid bright rectangle) drawn last. The sprite byte is the only value
//! above 200 anywhere, so an independent pixel scan can recover its
//! bounding box exactly.
//!
//! Trajectories integrate a seeded random walk with weak gravity: position
//! changes per frame are bounded by `max_step` per axis. The label of a
//! frame is the rendered sprite center `(round(x), round(y))`; a frame is
//! "on-screen" when the whole sprite rectangle lies inside the image.

use super::{DatasetBundle, ImageU8, Label, LabeledSample, TaskKind, TrainValSplit};
use crate::errors::{Error, Result};
use crate::seed::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Byte intensities of the three scene layers (per channel).
const BG_BYTES: [u8; 3] = [10, 10, 16];
const TERRAIN_BYTES: [u8; 3] = [64, 60, 56];
/// Pixel-scan threshold separating the sprite from everything else.
pub const SPRITE_SCAN_THRESHOLD: u8 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub rollouts: usize,
    pub frames_per_rollout: usize,
    pub image_size: usize,
    pub sprite_w: usize,
    pub sprite_h: usize,
    /// Sprite intensity byte; must stay above [`SPRITE_SCAN_THRESHOLD`].
    pub sprite_byte: u8,
    /// Hover-anchor ranges. Anchors may sit near the frame edge, which is
    /// what produces off-screen excursions.
    pub anchor_margin_x: f64,
    pub anchor_y_range: (f64, f64),
    /// Initial velocity bound, pixels per frame.
    pub v0: f64,
    /// Damped-spring hover dynamics plus noise.
    pub spring: f64,
    pub damping: f64,
    pub gravity: f64,
    /// Per-frame acceleration noise bound.
    pub jitter: f64,
    /// Per-axis speed clamp, pixels per frame.
    pub max_step: f64,
}

impl Default for SceneConfig {
    /// Full-scale collection: 1400 rollouts of 150 frames. The trajectory
    /// parameters put roughly 10% of second-half frames partially
    /// off-screen under the default seed range.
    fn default() -> Self {
        SceneConfig {
            rollouts: 1400,
            frames_per_rollout: 150,
            image_size: 64,
            sprite_w: 6,
            sprite_h: 8,
            sprite_byte: 230,
            anchor_margin_x: 0.0,
            anchor_y_range: (4.0, 58.0),
            v0: 0.4,
            spring: 0.004,
            damping: 0.03,
            gravity: 0.001,
            jitter: 0.06,
            max_step: 2.0,
        }
    }
}

impl SceneConfig {
    /// Desk-scale profile: same structure, ~10k images total.
    pub fn desk() -> Self {
        SceneConfig {
            rollouts: 70,
            frames_per_rollout: 150,
            ..Default::default()
        }
    }

    /// Planned autoencoder-part size (first half of rollouts, unfiltered).
    pub fn autoencoder_part_planned(&self) -> usize {
        (self.rollouts / 2) * self.frames_per_rollout
    }

    fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.frames_per_rollout == 0 {
            return Err(Error::InvalidConfig("rollouts and frames must be positive".into()));
        }
        if self.sprite_w >= self.image_size || self.sprite_h >= self.image_size {
            return Err(Error::InvalidConfig(format!(
                "sprite {}x{} does not fit a {}px frame",
                self.sprite_w, self.sprite_h, self.image_size
            )));
        }
        if self.sprite_byte <= SPRITE_SCAN_THRESHOLD {
            return Err(Error::InvalidConfig(
                "sprite byte must exceed the scan threshold".into(),
            ));
        }
        Ok(())
    }
}

/// Per-rollout terrain: height over columns from a small sum of sinusoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainProfile {
    pub base: f64,
    pub components: [(f64, f64, f64); 3],
}

impl TerrainProfile {
    fn sample(rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let mut components = [(0.0, 0.0, 0.0); 3];
        for (i, c) in components.iter_mut().enumerate() {
            let amp = rng.random_range(1.0..5.0) / (i + 1) as f64;
            let freq = rng.random_range(0.5..(2.0 + i as f64));
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            *c = (amp, freq, phase);
        }
        TerrainProfile {
            base: rng.random_range(6.0..14.0),
            components,
        }
    }

    /// Terrain height in pixels at a column, clamped to [2, 24].
    pub fn height(&self, col: usize, width: usize) -> usize {
        let t = col as f64 / width as f64;
        let mut h = self.base;
        for &(amp, freq, phase) in &self.components {
            h += amp * (std::f64::consts::TAU * freq * t + phase).sin();
        }
        h.clamp(2.0, 24.0).round() as usize
    }
}

/// Everything needed to render one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rollout_id: usize,
    pub frame_id: usize,
    /// Continuous trajectory position (sprite center), pixels.
    pub x: f64,
    pub y: f64,
    /// Rendered sprite center = rounded position; the frame label.
    pub label_x: i64,
    pub label_y: i64,
    pub on_screen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: ImageU8,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub id: usize,
    pub terrain: TerrainProfile,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanderCollection {
    pub config: SceneConfig,
    pub seed: u64,
    pub rollouts: Vec<Rollout>,
}

fn render(config: &SceneConfig, terrain: &TerrainProfile, spec: &SceneSpec) -> ImageU8 {
    let s = config.image_size;
    let mut img = ImageU8::zeros(s, s);
    for c in 0..3 {
        let plane = &mut img.data[c * s * s..(c + 1) * s * s];
        plane.fill(BG_BYTES[c]);
        for col in 0..s {
            let h = terrain.height(col, s);
            for r in s - h..s {
                plane[r * s + col] = TERRAIN_BYTES[c];
            }
        }
        // sprite drawn last, clipped to the frame
        let left = spec.label_x - config.sprite_w as i64 / 2;
        let top = spec.label_y - config.sprite_h as i64 / 2;
        for r in top.max(0)..(top + config.sprite_h as i64).min(s as i64) {
            for col in left.max(0)..(left + config.sprite_w as i64).min(s as i64) {
                plane[r as usize * s + col as usize] = config.sprite_byte;
            }
        }
    }
    img
}

fn simulate_rollout(config: &SceneConfig, seed: u64, id: usize) -> Rollout {
    let mut rng = rng_for(seed, "rollout", id as u64);
    let terrain = TerrainProfile::sample(&mut rng);
    let s = config.image_size as f64;
    let anchor_x = rng.random_range(config.anchor_margin_x..s - config.anchor_margin_x);
    let anchor_y = rng.random_range(config.anchor_y_range.0..config.anchor_y_range.1);
    let mut x = anchor_x + rng.random_range(-3.0..3.0);
    let mut y = anchor_y + rng.random_range(-3.0..3.0);
    let mut vx = rng.random_range(-config.v0..config.v0);
    let mut vy = rng.random_range(-config.v0..config.v0);
    let mut frames = Vec::with_capacity(config.frames_per_rollout);
    for frame_id in 0..config.frames_per_rollout {
        let label_x = x.round() as i64;
        let label_y = y.round() as i64;
        let left = label_x - config.sprite_w as i64 / 2;
        let top = label_y - config.sprite_h as i64 / 2;
        let on_screen = left >= 0
            && top >= 0
            && left + config.sprite_w as i64 <= config.image_size as i64
            && top + config.sprite_h as i64 <= config.image_size as i64;
        let spec = SceneSpec {
            rollout_id: id,
            frame_id,
            x,
            y,
            label_x,
            label_y,
            on_screen,
        };
        let image = render(config, &terrain, &spec);
        frames.push(Frame { image, spec });

        vx += -config.spring * (x - anchor_x) - config.damping * vx
            + rng.random_range(-config.jitter..config.jitter);
        vy += -config.spring * (y - anchor_y) - config.damping * vy
            + config.gravity
            + rng.random_range(-config.jitter..config.jitter);
        vx = vx.clamp(-config.max_step, config.max_step);
        vy = vy.clamp(-config.max_step, config.max_step);
        x += vx;
        y += vy;
    }
    Rollout { id, terrain, frames }
}

impl LanderCollection {
    pub fn generate(config: SceneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rollouts: Vec<Rollout> = (0..config.rollouts)
            .into_par_iter()
            .map(|id| simulate_rollout(&config, seed, id))
            .collect();
        Ok(LanderCollection {
            config,
            seed,
            rollouts,
        })
    }

    fn first_half(&self) -> &[Rollout] {
        &self.rollouts[..self.rollouts.len() / 2]
    }

    fn second_half(&self) -> &[Rollout] {
        &self.rollouts[self.rollouts.len() / 2..]
    }

    /// Fraction of second-half frames removed by the on-screen filter.
    pub fn filtered_fraction(&self) -> f64 {
        let mut total = 0usize;
        let mut removed = 0usize;
        for r in self.second_half() {
            for f in &r.frames {
                total += 1;
                if !f.spec.on_screen {
                    removed += 1;
                }
            }
        }
        removed as f64 / total.max(1) as f64
    }

    /// Assembles the three-way bundle: first half of rollouts as images for
    /// the autoencoders, second half filtered to on-screen frames and split
    /// 80/20 by rollout into predictor and test parts.
    pub fn bundle(&self) -> Result<DatasetBundle> {
        let mut ae_images = Vec::new();
        let mut ae_groups = Vec::new();
        for r in self.first_half() {
            let start = ae_images.len();
            ae_images.extend(r.frames.iter().map(|f| f.image.clone()));
            ae_groups.push((start..ae_images.len()).collect::<Vec<_>>());
        }

        let second: Vec<&Rollout> = self.second_half().iter().collect();
        let mut order: Vec<usize> = (0..second.len()).collect();
        let mut rng = rng_for(self.seed, "pred-test-rollouts", 0);
        order.shuffle(&mut rng);
        let cut = (second.len() * 8) / 10;

        let labeled = |r: &Rollout| -> Vec<LabeledSample> {
            r.frames
                .iter()
                .filter(|f| f.spec.on_screen)
                .map(|f| LabeledSample {
                    image: f.image.clone(),
                    label: Label::Position {
                        x: f.spec.label_x as f32,
                        y: f.spec.label_y as f32,
                    },
                })
                .collect()
        };

        let mut pred_samples = Vec::new();
        let mut pred_groups = Vec::new();
        for &ri in &order[..cut] {
            let samples = labeled(second[ri]);
            let start = pred_samples.len();
            pred_samples.extend(samples);
            pred_groups.push((start..pred_samples.len()).collect::<Vec<_>>());
        }
        let mut test_samples = Vec::new();
        for &ri in &order[cut..] {
            test_samples.extend(labeled(second[ri]));
        }

        let ae_split = TrainValSplit::by_group(&ae_groups, self.seed, "ae-split");
        let pred_split = TrainValSplit::by_group(&pred_groups, self.seed, "pred-split");
        DatasetBundle::new(
            "lander".into(),
            TaskKind::Positioning,
            None,
            self.config.image_size,
            false,
            ae_images,
            pred_samples,
            test_samples,
            ae_split,
            pred_split,
        )
    }

    /// Writes the collection as one raw image file per rollout plus a
    /// plain-text label index for second-half rollouts (see docs/FORMATS.md).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("collection.json");
        let manifest = serde_json::json!({
            "format": "lander-collection-v1",
            "config": self.config,
            "seed": self.seed,
        });
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).unwrap(),
        )
        .map_err(|e| Error::io(&manifest_path, e))?;

        let half = self.rollouts.len() / 2;
        for r in &self.rollouts {
            let raw_path = dir.join(format!("rollout_{:05}.raw", r.id));
            let mut raw = std::fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
            let second_half = r.id >= half;
            let mut labels = String::new();
            for f in &r.frames {
                if second_half {
                    if !f.spec.on_screen {
                        continue;
                    }
                    labels.push_str(&format!(
                        "{} {} {}\n",
                        f.spec.frame_id, f.spec.label_x, f.spec.label_y
                    ));
                }
                raw.write_all(&f.image.data).map_err(|e| Error::io(&raw_path, e))?;
            }
            if second_half {
                let label_path = dir.join(format!("rollout_{:05}_labels.txt", r.id));
                std::fs::write(&label_path, labels).map_err(|e| Error::io(&label_path, e))?;
            }
        }
        Ok(())
    }
}

/// Generates the synthetic positioning dataset.
pub fn generate_lander_collection(config: SceneConfig, seed: u64) -> Result<DatasetBundle> {
    LanderCollection::generate(config, seed)?.bundle()
}

/// Loads a collection directory written by [`LanderCollection::write_dir`]
/// back into the identical bundle.
pub fn load_lander_dir(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join("collection.json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    )
    .map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    if manifest["format"] != "lander-collection-v1" {
        return Err(Error::dataset(&manifest_path, "unknown collection format"));
    }
    let config: SceneConfig = serde_json::from_value(manifest["config"].clone())
        .map_err(|e| Error::Json {
            path: manifest_path.clone(),
            source: e,
        })?;
    let seed = manifest["seed"]
        .as_u64()
        .ok_or_else(|| Error::dataset(&manifest_path, "missing seed"))?;

    let s = config.image_size;
    let frame_bytes = 3 * s * s;
    let half = config.rollouts / 2;

    let read_frames = |id: usize| -> Result<Vec<ImageU8>> {
        let raw_path = dir.join(format!("rollout_{id:05}.raw"));
        let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        if bytes.len() % frame_bytes != 0 {
            return Err(Error::dataset(&raw_path, "truncated raw frame file"));
        }
        Ok(bytes
            .chunks_exact(frame_bytes)
            .map(|chunk| ImageU8 {
                height: s,
                width: s,
                data: chunk.to_vec(),
            })
            .collect())
    };

    let mut ae_images = Vec::new();
    let mut ae_groups = Vec::new();
    for id in 0..half {
        let frames = read_frames(id)?;
        let start = ae_images.len();
        ae_images.extend(frames);
        ae_groups.push((start..ae_images.len()).collect::<Vec<_>>());
    }

    // Second-half rollouts: labels sit beside the (already filtered) frames.
    let mut per_rollout: Vec<Vec<LabeledSample>> = Vec::new();
    for id in half..config.rollouts {
        let frames = read_frames(id)?;
        let label_path = dir.join(format!("rollout_{id:05}_labels.txt"));
        let file = std::fs::File::open(&label_path).map_err(|e| Error::io(&label_path, e))?;
        let mut samples = Vec::new();
        for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&label_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |p: Option<&str>| -> Result<f32> {
                p.and_then(|v| v.parse::<f32>().ok()).ok_or_else(|| {
                    Error::dataset(
                        &label_path,
                        format!("bad label line {}: {line:?}", line_no + 1),
                    )
                })
            };
            let _frame_id = parse(parts.next())?;
            let x = parse(parts.next())?;
            let y = parse(parts.next())?;
            samples.push(LabeledSample {
                image: ImageU8::zeros(0, 0), // filled below
                label: Label::Position { x, y },
            });
        }
        if samples.len() != frames.len() {
            return Err(Error::dataset(
                &label_path,
                format!("{} labels for {} frames", samples.len(), frames.len()),
            ));
        }
        for (sample, image) in samples.iter_mut().zip(frames) {
            sample.image = image;
        }
        per_rollout.push(samples);
    }

    let mut order: Vec<usize> = (0..per_rollout.len()).collect();
    let mut rng = rng_for(seed, "pred-test-rollouts", 0);
    order.shuffle(&mut rng);
    let cut = (per_rollout.len() * 8) / 10;
    let mut pred_samples = Vec::new();
    let mut pred_groups = Vec::new();
    for &ri in &order[..cut] {
        let start = pred_samples.len();
        pred_samples.extend(per_rollout[ri].clone());
        pred_groups.push((start..pred_samples.len()).collect::<Vec<_>>());
    }
    let mut test_samples = Vec::new();
    for &ri in &order[cut..] {
        test_samples.extend(per_rollout[ri].clone());
    }

    let ae_split = TrainValSplit::by_group(&ae_groups, seed, "ae-split");
    let pred_split = TrainValSplit::by_group(&pred_groups, seed, "pred-split");
    DatasetBundle::new(
        "lander".into(),
        TaskKind::Positioning,
        None,
        s,
        false,
        ae_images,
        pred_samples,
        test_samples,
        ae_split,
        pred_split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::pixel_scan_sprite_center;
    use std::collections::HashSet;

    fn small_config() -> SceneConfig {
        SceneConfig {
            rollouts: 10,
            frames_per_rollout: 40,
            ..Default::default()
        }
    }

    #[test]
    fn identical_seed_identical_collection() {
        let a = LanderCollection::generate(small_config(), 7).unwrap();
        let b = LanderCollection::generate(small_config(), 7).unwrap();
        assert_eq!(a, b);
        let c = LanderCollection::generate(small_config(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_config_plans_the_published_counts() {
        let config = SceneConfig::default();
        assert_eq!(config.rollouts, 1400);
        assert_eq!(config.frames_per_rollout, 150);
        assert_eq!(config.autoencoder_part_planned(), 105_000);
    }

    #[test]
    fn generated_half_split_matches_plan() {
        let bundle = generate_lander_collection(small_config(), 3).unwrap();
        assert_eq!(bundle.ae_len(), 5 * 40);
        assert!(bundle.pred_len() > 0 && bundle.test_len() > 0);
    }

    #[test]
    fn sprite_rect_example_case() {
        // center (32, 32), size 6x8 -> rows 28..=35, cols 29..=34
        let config = SceneConfig::default();
        let terrain = TerrainProfile {
            base: 6.0,
            components: [(0.0, 1.0, 0.0); 3],
        };
        let spec = SceneSpec {
            rollout_id: 0,
            frame_id: 0,
            x: 32.0,
            y: 32.0,
            label_x: 32,
            label_y: 32,
            on_screen: true,
        };
        let img = render(&config, &terrain, &spec);
        for r in 0..64 {
            for col in 0..64 {
                let expect_sprite = (28..=35).contains(&r) && (29..=34).contains(&col);
                let is_sprite = img.get(0, r, col) == config.sprite_byte;
                assert_eq!(is_sprite, expect_sprite, "at ({r},{col})");
            }
        }
        let (cx, cy) =
            pixel_scan_sprite_center(&img.data[..64 * 64], 64, 64, SPRITE_SCAN_THRESHOLD).unwrap();
        assert_eq!((cx, cy), (32.0, 32.0));
    }

    #[test]
    fn labels_match_pixel_scan_on_all_predictor_samples() {
        let bundle = generate_lander_collection(small_config(), 11).unwrap();
        let s = bundle.image_size;
        for i in 0..bundle.pred_len() {
            let label = bundle.pred_label(i);
            let img = bundle.pred_batch::<f32>(&[i]);
            let bytes: Vec<u8> = img
                .iter()
                .take(s * s)
                .map(|&v| (v * 255.0).round() as u8)
                .collect();
            let (cx, cy) = pixel_scan_sprite_center(&bytes, s, s, SPRITE_SCAN_THRESHOLD)
                .expect("sprite must be visible in predictor frames");
            match label {
                Label::Position { x, y } => {
                    assert_eq!((cx as f32, cy as f32), (x, y), "sample {i}");
                }
                _ => panic!("positioning labels expected"),
            }
        }
    }

    #[test]
    fn trajectory_steps_are_bounded() {
        let col = LanderCollection::generate(small_config(), 5).unwrap();
        let cap = col.config.max_step + 0.51; // rounding adds at most half a pixel
        for r in &col.rollouts {
            for pair in r.frames.windows(2) {
                let dx = (pair[1].spec.label_x - pair[0].spec.label_x).abs() as f64;
                let dy = (pair[1].spec.label_y - pair[0].spec.label_y).abs() as f64;
                assert!(dx <= cap && dy <= cap, "step ({dx}, {dy})");
            }
        }
    }

    #[test]
    fn parts_are_disjoint_by_content_hash() {
        let bundle = generate_lander_collection(small_config(), 13).unwrap();
        let (ae, pred, test) = bundle.part_hashes();
        let ae: HashSet<_> = ae.into_iter().collect();
        let pred: HashSet<_> = pred.into_iter().collect();
        let test: HashSet<_> = test.into_iter().collect();
        assert!(ae.is_disjoint(&pred));
        assert!(ae.is_disjoint(&test));
        assert!(pred.is_disjoint(&test));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small_config();
        cfg.sprite_w = 100;
        assert!(LanderCollection::generate(cfg, 0).is_err());
        let mut cfg = small_config();
        cfg.rollouts = 0;
        assert!(LanderCollection::generate(cfg, 0).is_err());
    }

    #[test]
    fn write_then_load_roundtrips_the_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let col = LanderCollection::generate(small_config(), 21).unwrap();
        let direct = col.bundle().unwrap();
        col.write_dir(dir.path()).unwrap();
        let loaded = load_lander_dir(dir.path()).unwrap();
        assert_eq!(direct, loaded);
    }

    #[test]
    fn desk_profile_filter_fraction_is_roughly_ten_percent() {
        let col = LanderCollection::generate(SceneConfig::desk(), 0).unwrap();
        let f = col.filtered_fraction();
        assert!((0.05..=0.15).contains(&f), "filtered fraction {f}");
    }
}
