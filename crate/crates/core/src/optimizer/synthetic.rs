//! Synthetic multi-frame scans of a room with spherical obstacles.
//!
//! A sensor travels a noisy loop inside a box-shaped room. Every frame
//! independently samples points on the surfaces within sensor range, adds
//! Gaussian noise and expresses them in the sensor frame. The initial guess
//! chains ground-truth relative motions perturbed by odometry noise.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{estimate_covariances, GaussianPointCloud, Pose, DEFAULT_K_NEIGHBORS};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub frames: usize,
    pub points_per_frame: usize,
    pub loop_radius: f64,
    /// Half extent of the square room, meters.
    pub room_half_size: f64,
    pub room_height: f64,
    pub spheres: usize,
    pub sensor_range: f64,
    /// Standard deviation of per-point noise, meters.
    pub sensor_noise: f64,
    /// Jitter of the ground-truth loop around a perfect circle (meters, radians).
    pub loop_translation_jitter: f64,
    pub loop_rotation_jitter: f64,
    /// Per-step odometry noise standard deviations (radians, meters).
    pub odometry_rotation_noise: f64,
    pub odometry_translation_noise: f64,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            points_per_frame: 4000,
            loop_radius: 4.0,
            room_half_size: 10.0,
            room_height: 4.0,
            spheres: 10,
            sensor_range: 8.0,
            sensor_noise: 0.01,
            loop_translation_jitter: 0.2,
            loop_rotation_jitter: 0.05,
            odometry_rotation_noise: 0.01,
            odometry_translation_noise: 0.03,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    /// `origin + s·u + t·v` for `s, t ∈ [0, 1]`.
    Rect { origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match self {
            Surface::Rect { u, v, .. } => u.cross(v).norm(),
            Surface::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        match self {
            Surface::Rect { origin, u, v } => origin + u * rng.random::<f64>() + v * rng.random::<f64>(),
            Surface::Sphere { center, radius } => {
                let d = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                center + d.normalize() * *radius
            }
        }
    }
}

/// Fixed geometry shared by all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    surfaces: Vec<Surface>,
    cumulative_area: Vec<f64>,
}

impl Scene {
    pub fn room(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let (s, h) = (cfg.room_half_size, cfg.room_height);
        let x = Vector3::x() * 2.0 * s;
        let y = Vector3::y() * 2.0 * s;
        let z = Vector3::z() * h;
        let corner = Vector3::new(-s, -s, 0.0);
        let mut surfaces = vec![
            Surface::Rect { origin: corner, u: x, v: y },
            Surface::Rect { origin: corner + z, u: x, v: y },
            Surface::Rect { origin: corner, u: x, v: z },
            Surface::Rect { origin: corner + y, u: x, v: z },
            Surface::Rect { origin: corner, u: y, v: z },
            Surface::Rect { origin: corner + x, u: y, v: z },
        ];
        // obstacles stay clear of the loop band
        while surfaces.len() < 6 + cfg.spheres {
            let radius = rng.random_range(0.4..1.2);
            let r = rng.random_range(0.0..s - radius - 0.5);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            if (r - cfg.loop_radius).abs() < radius + 1.0 {
                continue;
            }
            let center = Vector3::new(r * a.cos(), r * a.sin(), rng.random_range(radius..h - radius));
            surfaces.push(Surface::Sphere { center, radius });
        }
        Self::from_surfaces(surfaces)
    }

    /// A straight road along x: ground, segmented facades on both sides,
    /// parked cars and poles.
    pub fn street(rng: &mut ChaCha8Rng) -> Self {
        let (len, half_width) = (40.0, 9.0);
        let mut surfaces = vec![Surface::Rect {
            origin: Vector3::new(-len, -half_width, 0.0),
            u: Vector3::x() * 2.0 * len,
            v: Vector3::y() * 2.0 * half_width,
        }];
        for side in [-1.0, 1.0] {
            let mut x = -len;
            while x < len {
                let seg = rng.random_range(8.0..16.0);
                let height = rng.random_range(5.0..12.0);
                let y = side * half_width;
                surfaces.push(Surface::Rect {
                    origin: Vector3::new(x, y, 0.0),
                    u: Vector3::x() * seg,
                    v: Vector3::z() * height,
                });
                // building sides facing the gap
                let depth = Vector3::y() * side * 4.0;
                for end in [x, x + seg] {
                    surfaces.push(Surface::Rect { origin: Vector3::new(end, y, 0.0), u: depth, v: Vector3::z() * height });
                }
                x += seg + rng.random_range(2.0..5.0);
            }
            let mut x = -len + rng.random_range(0.0..6.0);
            while x < len - 5.0 {
                let y = side * (half_width - 3.0);
                surfaces.extend(open_box(Vector3::new(x, y - 0.9, 0.0), Vector3::new(4.2, 1.8, 1.5)));
                x += rng.random_range(6.0..14.0);
            }
            let mut x = -len + rng.random_range(0.0..10.0);
            while x < len {
                surfaces.extend(open_box(Vector3::new(x, side * (half_width - 1.0), 0.0), Vector3::new(0.2, 0.2, 5.0)));
                x += rng.random_range(10.0..20.0);
            }
        }
        Self::from_surfaces(surfaces)
    }

    fn from_surfaces(surfaces: Vec<Surface>) -> Self {
        let mut acc = 0.0;
        let cumulative_area = surfaces
            .iter()
            .map(|f| {
                acc += f.area();
                acc
            })
            .collect();
        Self { surfaces, cumulative_area }
    }

    fn sample_point(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let total = *self.cumulative_area.last().unwrap();
        let a = rng.random_range(0.0..total);
        let k = self.cumulative_area.partition_point(|c| *c <= a).min(self.surfaces.len() - 1);
        self.surfaces[k].sample(rng)
    }

    /// `n` noisy world points within `range` of `center`.
    pub fn scan(&self, center: &Vector3<f64>, range: f64, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = self.sample_point(rng);
            if (p - center).norm() <= range {
                out.push(p + Vector3::from_fn(|_, _| noise * rng.sample::<f64, _>(StandardNormal)));
            }
        }
        out
    }

    /// Like [`Scene::scan`] but with point density falling off as
    /// `(r0 / d)²` beyond `r0`, as for a spinning range sensor.
    pub fn scan_falloff(
        &self,
        center: &Vector3<f64>,
        range: f64,
        r0: f64,
        n: usize,
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = self.sample_point(rng);
            let d = (p - center).norm();
            if d <= range && rng.random::<f64>() * d * d <= r0 * r0 {
                out.push(p + Vector3::from_fn(|_, _| noise * rng.sample::<f64, _>(StandardNormal)));
            }
        }
        out
    }
}

/// Five faces of an axis-aligned box standing on the ground.
fn open_box(min: Vector3<f64>, size: Vector3<f64>) -> Vec<Surface> {
    let (x, y, z) = (Vector3::x() * size.x, Vector3::y() * size.y, Vector3::z() * size.z);
    vec![
        Surface::Rect { origin: min + z, u: x, v: y },
        Surface::Rect { origin: min, u: x, v: z },
        Surface::Rect { origin: min + y, u: x, v: z },
        Surface::Rect { origin: min, u: y, v: z },
        Surface::Rect { origin: min + x, u: y, v: z },
    ]
}

/// Sensor-frame clouds with ground-truth and initial-guess poses.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub clouds: Vec<GaussianPointCloud>,
    pub ground_truth: Vec<Pose>,
    pub initial: Vec<Pose>,
}

fn gaussian6(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Vector6<f64> {
    Vector6::from_fn(|k, _| (if k < 3 { rot } else { trans }) * rng.sample::<f64, _>(StandardNormal))
}

impl SyntheticSequence {
    pub fn generate(cfg: &SceneConfig) -> Result<Self> {
        if cfg.frames == 0 || cfg.points_per_frame < cfg.k_neighbors {
            return Err(Error::InvalidInput("scene needs at least one frame and k_neighbors points".into()));
        }
        if cfg.loop_radius + 1.0 >= cfg.room_half_size {
            return Err(Error::InvalidInput("loop must fit inside the room".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scene = Scene::room(cfg, &mut rng);
        let height = cfg.room_height * 0.4;

        let ground_truth: Vec<Pose> = (0..cfg.frames)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / cfg.frames as f64;
                let heading = Pose::exp(&Vector6::new(0.0, 0.0, a + std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0));
                let jitter = gaussian6(&mut rng, cfg.loop_rotation_jitter, cfg.loop_translation_jitter);
                let pos = Vector3::new(cfg.loop_radius * a.cos(), cfg.loop_radius * a.sin(), height);
                Pose::new(*heading.quaternion(), pos).retract(&jitter)
            })
            .collect();

        let mut initial = vec![ground_truth[0]];
        for k in 1..cfg.frames {
            let rel = ground_truth[k - 1].between(&ground_truth[k]);
            let noisy = rel.retract(&gaussian6(&mut rng, cfg.odometry_rotation_noise, cfg.odometry_translation_noise));
            initial.push(initial[k - 1].compose(&noisy));
        }

        let clouds = (0..cfg.frames)
            .map(|k| {
                let mut frng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k as u64));
                let pose = &ground_truth[k];
                let world =
                    scene.scan(&pose.translation(), cfg.sensor_range, cfg.points_per_frame, cfg.sensor_noise, &mut frng);
                let inv = pose.inverse();
                let local: Vec<Vector3<f64>> = world.iter().map(|p| inv.transform_point(p)).collect();
                estimate_covariances(&local, cfg.k_neighbors)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { clouds, ground_truth, initial })
    }
}

/// Range-sensor frames one meter apart on a street, both at their true poses.
pub fn street_pair(points: usize, seed: u64) -> Result<SyntheticSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::street(&mut rng);
    let yaw = rng.random_range(-0.05..0.05);
    let poses = [
        Pose::from_translation(Vector3::new(0.0, 0.0, 1.7)),
        Pose::exp(&Vector6::new(0.0, 0.0, yaw, 0.0, 0.0, 0.0)).compose(&Pose::from_translation(Vector3::new(1.0, 0.1, 1.7))),
    ];
    let clouds = poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let mut frng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let world = scene.scan_falloff(&pose.translation(), 40.0, 3.0, points, 0.01, &mut frng);
            let inv = pose.inverse();
            let local: Vec<Vector3<f64>> = world.iter().map(|p| inv.transform_point(p)).collect();
            estimate_covariances(&local, DEFAULT_K_NEIGHBORS)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence { clouds, ground_truth: poses.to_vec(), initial: poses.to_vec() })
}
