//! Per-scene position and orientation centroids for the coarse classification
//! stage, and the ground-truth centroid labels derived from them.
//!
//! Positions are clustered in R^3. Orientations are canonicalized and
//! clustered in R^4, then the centroids are renormalized to unit quaternions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::pose::Quaternion;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Outcome of one k-means run over `n` points of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub cost: f64,
    /// Cost after every assignment step, first to last.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid with ties going to the lowest index.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_points(points: &[f64], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Config(format!(
            "point buffer of length {} is not a multiple of dim {dim}",
            points.len()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite point".into()));
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(Error::InsufficientPoints {
            scene: None,
            needed: k.max(1),
            got: n,
        });
    }
    Ok(n)
}

/// Lloyd's algorithm with k-means++ seeding from `seed`.
///
/// `points` is row-major `n x dim`. Requires `n >= k >= 1`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<KMeans> {
    let n = check_points(points, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = &points[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        for (d, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *d = d.min(sq_dist(p, c));
        }
    }
    lloyd(points, dim, centroids)
}

/// Lloyd iterations from explicit initial centroids (row-major `k x dim`).
pub fn kmeans_from_centroids(points: &[f64], dim: usize, initial: &[f64]) -> Result<KMeans> {
    if !initial.len().is_multiple_of(dim.max(1)) {
        return Err(Error::Config("initial centroids do not match dim".into()));
    }
    check_points(points, dim, initial.len() / dim.max(1))?;
    lloyd(points, dim, initial.to_vec())
}

fn lloyd(points: &[f64], dim: usize, mut centroids: Vec<f64>) -> Result<KMeans> {
    let k = centroids.len() / dim;
    let n = points.len() / dim;
    let mut assignments = vec![usize::MAX; n];
    let mut cost_history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut changed = false;
        let mut cost = 0.0;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(p, &centroids, dim);
            cost += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        cost_history.push(cost);
        if !changed || iterations == MAX_LLOYD_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // Reseed empty clusters on the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n).filter(|&i| counts[assignments[i]] > 1).max_by(|&i, &j| {
                let di = sq_dist(
                    &points[i * dim..(i + 1) * dim],
                    &centroids[assignments[i] * dim..(assignments[i] + 1) * dim],
                );
                let dj = sq_dist(
                    &points[j * dim..(j + 1) * dim],
                    &centroids[assignments[j] * dim..(assignments[j] + 1) * dim],
                );
                di.total_cmp(&dj).then(j.cmp(&i))
            });
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
            }
        }
    }

    let cost = *cost_history.last().unwrap_or(&0.0);
    Ok(KMeans {
        dim,
        centroids,
        assignments,
        cost,
        cost_history,
        iterations,
    })
}

/// Position and orientation centroids of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub scene_id: usize,
    pub seed: u64,
    pub position_centroids: Vec<[f64; 3]>,
    /// Unit, canonical-sign quaternions.
    pub orientation_centroids: Vec<Quaternion>,
}

impl CentroidSet {
    pub fn k_x(&self) -> usize {
        self.position_centroids.len()
    }

    pub fn k_q(&self) -> usize {
        self.orientation_centroids.len()
    }

    pub fn nearest_position(&self, p: &[f64; 3]) -> usize {
        nearest(p, &self.position_centroids.concat(), 3).0
    }

    pub fn nearest_orientation(&self, q: &Quaternion) -> usize {
        let flat: Vec<f64> = self.orientation_centroids.iter().flat_map(|c| c.to_array()).collect();
        nearest(&q.canonicalize().to_array(), &flat, 4).0
    }
}

/// Ground-truth centroid indices for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CentroidLabels {
    pub sample: usize,
    pub position: usize,
    pub orientation: usize,
}

/// Rounds to the 9 significant digits the centroid file stores.
fn quantize(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

fn derive_seed(seed: u64, scene: usize, branch: u64) -> u64 {
    seed ^ (scene as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (branch << 62)
}

/// Clusters every scene's poses into `k_x` position and `k_q` orientation
/// centroids.
///
/// Centroid values are rounded to the file precision so a written set reads
/// back bit-identically.
pub fn build_centroid_sets(
    samples: &[LabeledSample],
    k_x: usize,
    k_q: usize,
    seed: u64,
) -> Result<BTreeMap<usize, CentroidSet>> {
    if k_x == 0 || k_q == 0 {
        return Err(Error::Config("K_x and K_q must be >= 1".into()));
    }
    let mut by_scene: BTreeMap<usize, Vec<&LabeledSample>> = BTreeMap::new();
    for s in samples {
        by_scene.entry(s.scene_id).or_default().push(s);
    }

    let mut sets = BTreeMap::new();
    for (scene_id, group) in by_scene {
        let needed = k_x.max(k_q);
        if group.len() < needed {
            return Err(Error::InsufficientPoints {
                scene: Some(scene_id),
                needed,
                got: group.len(),
            });
        }
        let positions: Vec<f64> = group.iter().flat_map(|s| s.pose.position).collect();
        let orientations: Vec<f64> = group
            .iter()
            .flat_map(|s| s.pose.orientation.canonicalize().to_array())
            .collect();

        let px = kmeans(&positions, 3, k_x, derive_seed(seed, scene_id, 0))?;
        let pq = kmeans(&orientations, 4, k_q, derive_seed(seed, scene_id, 1))?;

        let position_centroids = px
            .centroids
            .chunks_exact(3)
            .map(|c| [quantize(c[0]), quantize(c[1]), quantize(c[2])])
            .collect();
        let orientation_centroids = pq
            .centroids
            .chunks_exact(4)
            .map(|c| {
                let q = Quaternion::new(c[0], c[1], c[2], c[3]).unit_canonical()?;
                Ok(Quaternion::from_array(q.to_array().map(quantize)))
            })
            .collect::<Result<Vec<_>>>()?;

        sets.insert(
            scene_id,
            CentroidSet {
                scene_id,
                seed,
                position_centroids,
                orientation_centroids,
            },
        );
    }
    Ok(sets)
}

/// Labels each sample with its nearest position and orientation centroid.
pub fn assign_labels(samples: &[LabeledSample], sets: &BTreeMap<usize, CentroidSet>) -> Result<Vec<CentroidLabels>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let set = sets.get(&s.scene_id).ok_or(Error::MissingCentroids(s.scene_id))?;
            Ok(CentroidLabels {
                sample: i,
                position: set.nearest_position(&s.pose.position),
                orientation: set.nearest_orientation(&s.pose.orientation),
            })
        })
        .collect()
}

const FILE_HEADER: &str = "# c2f centroids v1";

pub fn centroids_to_string(sets: &BTreeMap<usize, CentroidSet>) -> String {
    let mut out = String::from(FILE_HEADER);
    out.push('\n');
    for set in sets.values() {
        let _ = writeln!(out, "scene {} {} {} {}", set.scene_id, set.k_x(), set.k_q(), set.seed);
        for c in &set.position_centroids {
            let _ = writeln!(out, "x {:.8e} {:.8e} {:.8e}", c[0], c[1], c[2]);
        }
        for q in &set.orientation_centroids {
            let _ = writeln!(out, "q {:.8e} {:.8e} {:.8e} {:.8e}", q.w, q.x, q.y, q.z);
        }
    }
    out
}

pub fn write_centroids(sets: &BTreeMap<usize, CentroidSet>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, centroids_to_string(sets))?;
    Ok(())
}

pub fn read_centroids(path: impl AsRef<Path>) -> Result<BTreeMap<usize, CentroidSet>> {
    let path = path.as_ref();
    parse_centroids(&fs::read_to_string(path)?, path)
}

pub fn parse_centroids(text: &str, path: &Path) -> Result<BTreeMap<usize, CentroidSet>> {
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut sets = BTreeMap::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();

    while let Some((ln, line)) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 || f[0] != "scene" {
            return Err(err(ln, "expected `scene <id> <K_x> <K_q> <seed>`"));
        }
        let ints: Vec<u64> = f[1..]
            .iter()
            .map(|v| v.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(ln, "non-integer scene header field"))?;
        let (scene_id, k_x, k_q, seed) = (ints[0] as usize, ints[1] as usize, ints[2] as usize, ints[3]);
        if k_x == 0 || k_q == 0 {
            return Err(err(ln, "K_x and K_q must be >= 1"));
        }

        let mut row = |tag: &str, width: usize| -> Result<Vec<f64>> {
            let (ln, line) = lines.next().ok_or_else(|| err(ln, "truncated scene record"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != width + 1 || f[0] != tag {
                return Err(err(ln, &format!("expected `{tag}` row with {width} values")));
            }
            f[1..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| err(ln, "bad number")))
                .collect()
        };
        let mut position_centroids = Vec::with_capacity(k_x);
        for _ in 0..k_x {
            let v = row("x", 3)?;
            position_centroids.push([v[0], v[1], v[2]]);
        }
        let mut orientation_centroids = Vec::with_capacity(k_q);
        for _ in 0..k_q {
            let v = row("q", 4)?;
            orientation_centroids.push(Quaternion::new(v[0], v[1], v[2], v[3]));
        }
        if sets
            .insert(
                scene_id,
                CentroidSet {
                    scene_id,
                    seed,
                    position_centroids,
                    orientation_centroids,
                },
            )
            .is_some()
        {
            return Err(err(ln, "duplicate scene record"));
        }
    }
    Ok(sets)
}
