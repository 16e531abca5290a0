//! Toy 2D datasets with class labels, and sample-quality metrics.
//!
//! Datasets: a checkerboard (alternating occupied cells on a square grid),
//! a Gaussian mixture with means on a circle, and two interleaved moons.
//! Metrics: the energy distance two-sample statistic, 2D histograms, and
//! nearest-mean class purity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{FlowError, Result};
use crate::oracle::Dataset;
use crate::rng::{seeded, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Checkerboard,
    Gmm,
    Moons,
}

/// Which label a checkerboard point carries: the parity class of its cell
/// column (two classes) or the occupied-cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheckerboardLabels {
    #[default]
    Parity,
    CellIndex,
}

/// Recipe for a generated dataset. Deterministic given the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_points: usize,
    #[serde(default)]
    pub seed: u64,
    /// Checkerboard: cells per axis on `[-bound, bound]^2`.
    #[serde(default = "default_grid_cells")]
    pub checkerboard_cells: usize,
    #[serde(default = "default_bound")]
    pub checkerboard_bound: f64,
    #[serde(default)]
    pub checkerboard_labels: CheckerboardLabels,
    /// Gaussian mixture: number of components on the circle.
    #[serde(default = "default_components")]
    pub gmm_components: usize,
    #[serde(default = "default_radius")]
    pub gmm_radius: f64,
    #[serde(default = "default_gmm_std")]
    pub gmm_std: f64,
    #[serde(default = "default_moons_std")]
    pub moons_noise_std: f64,
}

fn default_grid_cells() -> usize {
    4
}
fn default_bound() -> f64 {
    2.0
}
fn default_components() -> usize {
    2
}
fn default_radius() -> f64 {
    2.0
}
fn default_gmm_std() -> f64 {
    0.1
}
fn default_moons_std() -> f64 {
    0.05
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n_points: usize, seed: u64) -> Self {
        Self {
            kind,
            n_points,
            seed,
            checkerboard_cells: default_grid_cells(),
            checkerboard_bound: default_bound(),
            checkerboard_labels: CheckerboardLabels::default(),
            gmm_components: default_components(),
            gmm_radius: default_radius(),
            gmm_std: default_gmm_std(),
            moons_noise_std: default_moons_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(FlowError::InvalidConfig("n_points must be >= 1".into()));
        }
        match self.kind {
            DatasetKind::Checkerboard if self.checkerboard_cells == 0 => Err(
                FlowError::InvalidConfig("checkerboard_cells must be >= 1".into()),
            ),
            DatasetKind::Gmm if self.gmm_components == 0 => Err(FlowError::InvalidConfig(
                "gmm_components must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Component means of the circle mixture, counter-clockwise from `(r, 0)`.
pub fn gmm_means(n_components: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..n_components)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / n_components as f64;
            vec![radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

/// Cell corners `(i, j)` of the occupied checkerboard cells, in row-major
/// order. A cell is occupied when `i + j` is even.
fn occupied_cells(cells: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..cells {
        for i in 0..cells {
            if (i + j) % 2 == 0 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Generate a labeled dataset per the spec.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let mut points = Vec::with_capacity(spec.n_points);
    let mut labels = Vec::with_capacity(spec.n_points);
    match spec.kind {
        DatasetKind::Checkerboard => {
            let cells = spec.checkerboard_cells;
            let bound = spec.checkerboard_bound;
            let width = 2.0 * bound / cells as f64;
            let occupied = occupied_cells(cells);
            for _ in 0..spec.n_points {
                let pick = rand::Rng::gen_range(&mut rng, 0..occupied.len());
                let (i, j) = occupied[pick];
                let u: f64 = rand::Rng::gen(&mut rng);
                let v: f64 = rand::Rng::gen(&mut rng);
                let x = -bound + (i as f64 + u) * width;
                let y = -bound + (j as f64 + v) * width;
                points.push(vec![x, y]);
                labels.push(match spec.checkerboard_labels {
                    CheckerboardLabels::Parity => i % 2,
                    CheckerboardLabels::CellIndex => pick,
                });
            }
        }
        DatasetKind::Gmm => {
            let means = gmm_means(spec.gmm_components, spec.gmm_radius);
            for _ in 0..spec.n_points {
                let k = rand::Rng::gen_range(&mut rng, 0..means.len());
                let x = means[k][0] + spec.gmm_std * standard_normal(&mut rng);
                let y = means[k][1] + spec.gmm_std * standard_normal(&mut rng);
                points.push(vec![x, y]);
                labels.push(k);
            }
        }
        DatasetKind::Moons => {
            for _ in 0..spec.n_points {
                let m = rand::Rng::gen_range(&mut rng, 0..2usize);
                let angle: f64 = PI * rand::Rng::gen::<f64>(&mut rng);
                let (cx, cy) = if m == 0 {
                    (angle.cos(), angle.sin())
                } else {
                    (1.0 - angle.cos(), 0.5 - angle.sin())
                };
                let x = cx + spec.moons_noise_std * standard_normal(&mut rng);
                let y = cy + spec.moons_noise_std * standard_normal(&mut rng);
                points.push(vec![x, y]);
                labels.push(m);
            }
        }
    }
    Dataset::labeled(points, labels)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean pairwise distance over all ordered pairs (diagonal included), with
/// row blocks summed in fixed order.
fn mean_cross_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(64)
        .map(|rows| {
            let mut s = 0.0;
            for x in rows {
                for y in b {
                    s += euclidean(x, y);
                }
            }
            s
        })
        .collect();
    partials.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Energy distance `2 E||A - B|| - E||A - A'|| - E||B - B'||` with exact
/// double sums over all pairs. Symmetric, non-negative, and zero exactly
/// when the two multisets carry the same distribution.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(FlowError::Domain("energy distance of an empty set".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b.iter()).any(|p| p.len() != dim) {
        return Err(FlowError::Domain("mixed dimensions in energy distance".into()));
    }
    let cross = mean_cross_distance(a, b);
    let within_a = mean_cross_distance(a, a);
    let within_b = mean_cross_distance(b, b);
    Ok(2.0 * cross - within_a - within_b)
}

/// A counts grid over a rectangle: half-open bins `[lo, hi)` per axis with
/// the top edge closed; out-of-bounds samples are counted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major: `counts[iy * nx + ix]`.
    pub counts: Vec<u64>,
    pub out_of_bounds: u64,
}

impl Histogram2D {
    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.nx + ix]
    }

    pub fn total_in_bounds(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin 2D samples into a histogram.
pub fn histogram2d(
    samples: &[Vec<f64>],
    bounds: (f64, f64, f64, f64),
    bins: (usize, usize),
) -> Result<Histogram2D> {
    let (x_min, x_max, y_min, y_max) = bounds;
    let (nx, ny) = bins;
    if nx == 0 || ny == 0 {
        return Err(FlowError::Domain("histogram needs at least one bin".into()));
    }
    if !(x_min < x_max) || !(y_min < y_max) {
        return Err(FlowError::Domain(format!(
            "inverted histogram bounds ({x_min}, {x_max}, {y_min}, {y_max})"
        )));
    }
    let mut counts = vec![0u64; nx * ny];
    let mut out_of_bounds = 0u64;
    let wx = (x_max - x_min) / nx as f64;
    let wy = (y_max - y_min) / ny as f64;
    for s in samples {
        let (x, y) = (s[0], s[1]);
        let ix = if x == x_max {
            Some(nx - 1)
        } else if (x_min..x_max).contains(&x) {
            Some((((x - x_min) / wx) as usize).min(nx - 1))
        } else {
            None
        };
        let iy = if y == y_max {
            Some(ny - 1)
        } else if (y_min..y_max).contains(&y) {
            Some((((y - y_min) / wy) as usize).min(ny - 1))
        } else {
            None
        };
        match (ix, iy) {
            (Some(ix), Some(iy)) => counts[iy * nx + ix] += 1,
            _ => out_of_bounds += 1,
        }
    }
    Ok(Histogram2D {
        x_min,
        x_max,
        y_min,
        y_max,
        nx,
        ny,
        counts,
        out_of_bounds,
    })
}

/// Fraction of samples whose nearest mean (Euclidean) is the requested one.
pub fn class_purity(samples: &[Vec<f64>], requested: usize, means: &[Vec<f64>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .filter(|s| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, m) in means.iter().enumerate() {
                let d = euclidean(s, m);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best == requested
        })
        .count();
    hits as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmm_component_means() {
        let spec = DatasetSpec::new(DatasetKind::Gmm, 10_000, 3);
        let data = make_dataset(&spec).unwrap();
        let labels = data.labels().unwrap();
        let means = gmm_means(2, 2.0);
        assert_eq!(means[0], vec![2.0, 0.0]);
        assert!((means[1][0] + 2.0).abs() < 1e-15);
        for k in 0..2 {
            let pts: Vec<&Vec<f64>> = data
                .points()
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(p, _)| p)
                .collect();
            for axis in 0..2 {
                let mean: f64 = pts.iter().map(|p| p[axis]).sum::<f64>() / pts.len() as f64;
                assert!(
                    (mean - means[k][axis]).abs() < 0.01,
                    "component {k} axis {axis}: {mean}"
                );
            }
        }
    }

    #[test]
    fn checkerboard_avoids_forbidden_cells() {
        let spec = DatasetSpec::new(DatasetKind::Checkerboard, 10_000, 5);
        let data = make_dataset(&spec).unwrap();
        for p in data.points() {
            let i = ((p[0] + 2.0) / 1.0).floor() as i64;
            let j = ((p[1] + 2.0) / 1.0).floor() as i64;
            assert!((0..4).contains(&i) && (0..4).contains(&j), "{p:?}");
            assert_eq!((i + j) % 2, 0, "point {p:?} in forbidden cell ({i}, {j})");
        }
    }

    #[test]
    fn datasets_are_bit_reproducible() {
        for kind in [DatasetKind::Checkerboard, DatasetKind::Gmm, DatasetKind::Moons] {
            let spec = DatasetSpec::new(kind, 500, 9);
            let a = make_dataset(&spec).unwrap();
            let b = make_dataset(&spec).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn moons_stay_in_bounding_box() {
        let spec = DatasetSpec::new(DatasetKind::Moons, 5_000, 1);
        let data = make_dataset(&spec).unwrap();
        // Half circles span [-1, 2] x [-0.5, 1]; allow 6 noise std.
        let slack = 6.0 * spec.moons_noise_std;
        for p in data.points() {
            assert!(p[0] >= -1.0 - slack && p[0] <= 2.0 + slack, "{p:?}");
            assert!(p[1] >= -0.5 - slack && p[1] <= 1.0 + slack, "{p:?}");
        }
    }

    #[test]
    fn energy_distance_hand_value() {
        let a = vec![vec![0.0]];
        let b = vec![vec![1.0]];
        let d = energy_distance(&a, &b).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
    }

    #[test]
    fn energy_distance_identical_multisets() {
        let a = vec![vec![0.3, 1.0], vec![-0.5, 0.2], vec![2.0, -1.0]];
        let d = energy_distance(&a, &a).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn energy_distance_symmetric_nonnegative() {
        let a = vec![vec![0.0], vec![1.5], vec![-0.7]];
        let b = vec![vec![0.2], vec![0.9]];
        let ab = energy_distance(&a, &b).unwrap();
        let ba = energy_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!(ab >= 0.0);
    }

    #[test]
    fn energy_distance_null_calibration() {
        // Two independent draws from the same Gaussian stay below 0.02 at
        // n = 4096 each.
        let mut rng = seeded(11);
        let draw = |rng: &mut crate::rng::FlowRng| -> Vec<Vec<f64>> {
            (0..4096)
                .map(|_| vec![standard_normal(rng), standard_normal(rng)])
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let d = energy_distance(&a, &b).unwrap();
        assert!(d >= 0.0);
        assert!(d < 0.02, "null energy distance {d}");
    }

    #[test]
    fn energy_distance_rejects_empty() {
        assert!(energy_distance(&[], &[vec![0.0]]).is_err());
    }

    #[test]
    fn histogram_corner_and_edge_conventions() {
        let h = histogram2d(
            &[vec![0.0, 0.0]],
            (0.0, 1.0, 0.0, 1.0),
            (2, 2),
        )
        .unwrap();
        assert_eq!(h.count(0, 0), 1);
        // Top edges are closed: a sample exactly at (x_max, y_max) lands in
        // the last bin.
        let h = histogram2d(&[vec![1.0, 1.0]], (0.0, 1.0, 0.0, 1.0), (2, 2)).unwrap();
        assert_eq!(h.count(1, 1), 1);
        assert_eq!(h.out_of_bounds, 0);
        let h = histogram2d(&[vec![1.5, 0.5]], (0.0, 1.0, 0.0, 1.0), (2, 2)).unwrap();
        assert_eq!(h.out_of_bounds, 1);
        assert!(histogram2d(&[], (1.0, 0.0, 0.0, 1.0), (2, 2)).is_err());
    }

    #[test]
    fn histogram_counts_conserve_samples() {
        let spec = DatasetSpec::new(DatasetKind::Gmm, 2_000, 2);
        let data = make_dataset(&spec).unwrap();
        let h = histogram2d(data.points(), (-1.0, 1.0, -1.0, 1.0), (8, 8)).unwrap();
        assert_eq!(
            h.total_in_bounds() + h.out_of_bounds,
            data.len() as u64
        );
    }

    #[test]
    fn histogram_uniform_multinomial_concentration() {
        let mut rng = seeded(13);
        let samples: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                vec![
                    rand::Rng::gen::<f64>(&mut rng) * 4.0,
                    rand::Rng::gen::<f64>(&mut rng) * 4.0,
                ]
            })
            .collect();
        let h = histogram2d(&samples, (0.0, 4.0, 0.0, 4.0), (4, 4)).unwrap();
        // Expected 625 per bin, sd ~ 24.2; 4 sd ~ 97.
        for iy in 0..4 {
            for ix in 0..4 {
                let c = h.count(ix, iy) as f64;
                assert!((c - 625.0).abs() < 97.0, "bin ({ix}, {iy}) count {c}");
            }
        }
    }

    #[test]
    fn class_purity_trivial_cases() {
        let means = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let at_mean = vec![vec![-1.0, 0.0]; 10];
        assert_eq!(class_purity(&at_mean, 0, &means), 1.0);
        assert_eq!(class_purity(&at_mean, 1, &means), 0.0);
        let split = vec![
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
        ];
        assert_eq!(class_purity(&split, 0, &means), 0.5);
    }
}
