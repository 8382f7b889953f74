//! Baseline light planners and the brute-force subset oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{common_bins, BinnedSample};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, UnitVector3};
use crate::lightspace::LightBinGrid;
use crate::psolve::{evaluate_on_samples, Backend, LsTable};

pub const DEFAULT_MIN_SEPARATION_DEG: f64 = 20.0;
pub const RANDOM_ATTEMPTS: usize = 1000;
pub const EXHAUSTIVE_CAP: u128 = 200_000;
pub const ORTHOGONAL_TOLERANCE_DEG: f64 = 15.0;
const KMEANS_ITERATIONS: usize = 100;
const KMEANS_TOLERANCE_DEG: f64 = 1e-6;
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub method: String,
    pub m: usize,
    pub seed: u64,
    pub bin_indices: Vec<usize>,
    pub mae_deg: f64,
    /// Kept out of serialized reports so reruns compare byte for byte.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Kmeans,
    Ortho3,
    Exhaustive,
    Learned,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Random,
        Method::Kmeans,
        Method::Ortho3,
        Method::Exhaustive,
        Method::Learned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Kmeans => "kmeans",
            Method::Ortho3 => "ortho3",
            Method::Exhaustive => "exhaustive",
            Method::Learned => "learned",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Dart-throwing options for [`plan_random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomOptions {
    pub min_separation_deg: f64,
    /// Largest allowed |elevation| of a bin center; `None` keeps one half
    /// bin of margin from the poles.
    pub elevation_limit_deg: Option<f64>,
}

impl Default for RandomOptions {
    fn default() -> Self {
        RandomOptions {
            min_separation_deg: DEFAULT_MIN_SEPARATION_DEG,
            elevation_limit_deg: None,
        }
    }
}

/// Random bins with pairwise center separation of at least
/// `min_separation_deg`. Each attempt shuffles the eligible bins and keeps
/// every bin compatible with those already kept.
pub fn plan_random(
    grid: &LightBinGrid,
    m: usize,
    opts: RandomOptions,
    seed: u64,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Configuration("M must be at least 1".into()));
    }
    let limit = opts
        .elevation_limit_deg
        .unwrap_or(90.0 - grid.max_elevation_deviation_deg());
    let eligible: Vec<usize> = (0..grid.len())
        .filter(|&b| grid.center_angles(b).1.abs() <= limit + 1e-9)
        .collect();
    if eligible.len() < m {
        return Err(Error::Feasibility(format!(
            "only {} bins lie within ±{limit}° elevation, {m} requested",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = eligible;
    for _ in 0..RANDOM_ATTEMPTS {
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        for &b in &order {
            let ok = chosen.iter().all(|&c| {
                angle_between(&grid.center(b), &grid.center(c)) >= opts.min_separation_deg
            });
            if ok {
                chosen.push(b);
                if chosen.len() == m {
                    return Ok(chosen);
                }
            }
        }
    }
    Err(Error::Feasibility(format!(
        "no {m} bins {}° apart found in {RANDOM_ATTEMPTS} attempts",
        opts.min_separation_deg
    )))
}

fn normalized_mean(points: impl Iterator<Item = UnitVector3>) -> Option<UnitVector3> {
    let mut s = [0.0; 3];
    for p in points {
        for (acc, v) in s.iter_mut().zip(p.as_array()) {
            *acc += v;
        }
    }
    UnitVector3::normalize(s[0], s[1], s[2]).ok()
}

fn nearest(centroids: &[UnitVector3], p: &UnitVector3) -> usize {
    let mut best = 0;
    for (i, c) in centroids.iter().enumerate().skip(1) {
        if c.dot(p) > centroids[best].dot(p) {
            best = i;
        }
    }
    best
}

/// Spherical k-means on unit vectors with k-means++ seeding. Returns the
/// final centroids.
pub fn spherical_kmeans(points: &[UnitVector3], k: usize, seed: u64) -> Result<Vec<UnitVector3>> {
    if k == 0 || points.len() < k {
        return Err(Error::Input(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                let d = angle_between(p, &centroids[nearest(&centroids, p)]).to_radians();
                d * d
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next]);
    }

    for _ in 0..KMEANS_ITERATIONS {
        let labels: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        let mut next = centroids.clone();
        let mut taken = vec![false; points.len()];
        for (c, slot) in next.iter_mut().enumerate() {
            let members = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| *p);
            match normalized_mean(members.clone()) {
                Some(mean) if members.count() > 0 => *slot = mean,
                _ => {
                    // empty or cancelling cluster: restart at the point
                    // farthest from its own centroid
                    let far = (0..points.len())
                        .filter(|&i| !taken[i])
                        .max_by(|&a, &b| {
                            let da = angle_between(&points[a], &centroids[labels[a]]);
                            let db = angle_between(&points[b], &centroids[labels[b]]);
                            da.total_cmp(&db).then(b.cmp(&a))
                        })
                        .unwrap_or(0);
                    taken[far] = true;
                    *slot = points[far];
                }
            }
        }
        let moved = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| angle_between(a, b))
            .fold(0.0, f64::max);
        centroids = next;
        if moved < KMEANS_TOLERANCE_DEG {
            break;
        }
    }
    Ok(centroids)
}

/// Clusters the lights into `m` groups and returns, for each centroid, the
/// bin of the nearest light whose bin is not already taken.
pub fn plan_kmeans(
    grid: &LightBinGrid,
    lights: &[UnitVector3],
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let centroids = spherical_kmeans(lights, m, seed)?;
    let bins = lights
        .iter()
        .map(|l| grid.bin_of(l))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen = Vec::with_capacity(m);
    for c in &centroids {
        let pick = lights
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(&bins[*i]))
            .max_by(|(i, a), (j, b)| a.dot(c).total_cmp(&b.dot(c)).then(j.cmp(i)))
            .map(|(i, _)| bins[i])
            .ok_or_else(|| {
                Error::Feasibility(format!("lights span fewer than {m} distinct bins"))
            })?;
        chosen.push(pick);
    }
    Ok(chosen)
}

fn min_pairwise(angles: [f64; 3]) -> f64 {
    angles.into_iter().fold(f64::INFINITY, f64::min)
}

/// Bin-center triple closest to mutually orthogonal: the largest minimum
/// pairwise angle among triples whose pairwise angles all lie within
/// 90° ± 15°. Ties go to the triple lying higher above the horizon, then
/// to the lowest indices. If no triple fits the band, the one with the
/// smallest worst deviation from 90° is returned with a warning.
pub fn plan_orthogonal_triplet(grid: &LightBinGrid) -> Result<Vec<usize>> {
    let k = grid.len();
    if k < 3 {
        return Err(Error::Feasibility(format!("a grid of {k} bins has no triple")));
    }
    let c = grid.centers();
    let mut best: Option<([usize; 3], f64, f64)> = None;
    let mut fallback: Option<([usize; 3], f64)> = None;
    for a in 0..k {
        for b in a + 1..k {
            let ab = angle_between(&c[a], &c[b]);
            for d in b + 1..k {
                let angles = [ab, angle_between(&c[a], &c[d]), angle_between(&c[b], &c[d])];
                let worst = angles
                    .iter()
                    .map(|x| (x - 90.0).abs())
                    .fold(0.0, f64::max);
                if fallback.is_none_or(|(_, w)| worst < w - TIE_EPS) {
                    fallback = Some(([a, b, d], worst));
                }
                if worst > ORTHOGONAL_TOLERANCE_DEG + TIE_EPS {
                    continue;
                }
                let min_angle = min_pairwise(angles);
                let min_z = c[a].z().min(c[b].z()).min(c[d].z());
                let better = match best {
                    None => true,
                    Some((_, bm, bz)) => {
                        min_angle > bm + TIE_EPS || ((min_angle - bm).abs() <= TIE_EPS && min_z > bz + TIE_EPS)
                    }
                };
                if better {
                    best = Some(([a, b, d], min_angle, min_z));
                }
            }
        }
    }
    match best {
        Some((t, _, _)) => Ok(t.to_vec()),
        None => {
            let (t, worst) = fallback.expect("k >= 3");
            log::warn!(
                "no bin triple within {ORTHOGONAL_TOLERANCE_DEG}° of orthogonal; best misses by {worst:.2}°"
            );
            Ok(t.to_vec())
        }
    }
}

/// Number of `m`-subsets of `k` items.
pub fn binomial(k: usize, m: usize) -> u128 {
    if m > k {
        return 0;
    }
    let m = m.min(k - m);
    let mut acc: u128 = 1;
    for i in 0..m {
        acc = acc * (k - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// All `m`-subsets of `items` in lexicographic order.
pub fn subsets(items: &[usize], m: usize) -> Vec<Vec<usize>> {
    let k = items.len();
    let mut out = Vec::new();
    if m > k {
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(i) = (0..m).rev().find(|&i| idx[i] != i + k - m) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub bin_indices: Vec<usize>,
    /// `None` when the subset cannot be solved (for example coplanar
    /// lights under least squares).
    pub mae_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub best: Vec<usize>,
    pub best_mae_deg: f64,
    pub table: Vec<SubsetScore>,
}

/// Scores every `m`-subset of the bins shared by all samples (mean MAE
/// over samples) and returns the best. Equal scores keep the
/// lexicographically first subset.
pub fn plan_exhaustive(samples: &[BinnedSample], m: usize, backend: Backend<'_>) -> Result<ExhaustiveResult> {
    let bins = common_bins(samples)?;
    if m == 0 || m > bins.len() {
        return Err(Error::Configuration(format!(
            "M = {m} must lie in 1..={}",
            bins.len()
        )));
    }
    let count = binomial(bins.len(), m);
    if count > EXHAUSTIVE_CAP {
        return Err(Error::Cap {
            subsets: count,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let all = subsets(&bins, m);
    let scores: Vec<Option<f64>> = match backend {
        Backend::LeastSquares => {
            let tables = samples.iter().map(LsTable::new).collect::<Result<Vec<_>>>()?;
            all.par_iter()
                .map(|s| {
                    let mut total = 0.0;
                    for t in &tables {
                        total += t.mae(s).ok()?;
                    }
                    Some(total / tables.len() as f64)
                })
                .collect()
        }
        Backend::Net(_) => all
            .par_iter()
            .map(|s| evaluate_on_samples(samples, s, backend).ok())
            .collect(),
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = s {
            if best.is_none_or(|(_, b)| *v < b) {
                best = Some((i, *v));
            }
        }
    }
    let (i, best_mae_deg) = best.ok_or_else(|| {
        Error::Feasibility(format!("no {m}-subset of the bins could be evaluated"))
    })?;
    Ok(ExhaustiveResult {
        best: all[i].clone(),
        best_mae_deg,
        table: all
            .into_iter()
            .zip(scores)
            .map(|(bin_indices, mae_deg)| SubsetScore { bin_indices, mae_deg })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::direction;
    use crate::lightspace::make_grid;
    use crate::render::{render_dataset, SceneSpec};
    use proptest::prelude::*;

    #[test]
    fn binomials_and_subsets() {
        assert_eq!(binomial(48, 3), 17_296);
        assert_eq!(binomial(12, 4), 495);
        assert_eq!(binomial(12, 3), 220);
        assert_eq!(binomial(3, 5), 0);
        let s = subsets(&[0, 1, 2, 3], 2);
        assert_eq!(s, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(subsets(&[4, 7, 9], 3), vec![vec![4, 7, 9]]);
        assert_eq!(subsets(&(0..12).collect::<Vec<_>>(), 3).len(), 220);
        assert_eq!(subsets(&[1, 2], 1), vec![vec![1], vec![2]]);
    }

    #[test]
    fn random_single_and_unconstrained() {
        let grid = make_grid(8, 6).unwrap();
        for seed in 0..20 {
            assert_eq!(plan_random(&grid, 1, RandomOptions::default(), seed).unwrap().len(), 1);
        }
        let opts = RandomOptions {
            min_separation_deg: 0.0,
            elevation_limit_deg: None,
        };
        let p = plan_random(&grid, 48, opts, 3).unwrap();
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, (0..48).collect::<Vec<_>>());
    }

    #[test]
    fn random_separation_and_reproducibility() {
        let grid = make_grid(8, 6).unwrap();
        for seed in 0..10 {
            let p = plan_random(&grid, 10, RandomOptions::default(), seed).unwrap();
            assert_eq!(p, plan_random(&grid, 10, RandomOptions::default(), seed).unwrap());
            for (i, &a) in p.iter().enumerate() {
                for &b in &p[i + 1..] {
                    assert!(angle_between(&grid.center(a), &grid.center(b)) >= 20.0);
                }
            }
        }
        let far = RandomOptions {
            min_separation_deg: 100.0,
            elevation_limit_deg: None,
        };
        assert!(matches!(plan_random(&grid, 4, far, 0), Err(Error::Feasibility(_))));
    }

    #[test]
    fn random_respects_elevation_limit() {
        let grid = make_grid(8, 6).unwrap();
        let opts = RandomOptions {
            min_separation_deg: 0.0,
            elevation_limit_deg: Some(50.0),
        };
        let p = plan_random(&grid, 20, opts, 1).unwrap();
        assert!(p.iter().all(|&b| grid.center_angles(b).1.abs() <= 45.0 + 1e-9));
    }

    #[test]
    fn kmeans_each_light_own_cluster() {
        let grid = make_grid(4, 3).unwrap();
        let lights: Vec<UnitVector3> = [0, 3, 5, 6, 10].iter().map(|&b| grid.center(b)).collect();
        let mut p = plan_kmeans(&grid, &lights, 5, 1).unwrap();
        p.sort();
        assert_eq!(p, vec![0, 3, 5, 6, 10]);
    }

    #[test]
    fn kmeans_two_clusters() {
        let grid = make_grid(8, 6).unwrap();
        let mut lights = Vec::new();
        for d in [-3.0, 0.0, 3.0] {
            lights.push(direction(20.0 + d, 10.0).unwrap());
            lights.push(direction(160.0 + d, -10.0).unwrap());
        }
        for seed in 0..10 {
            let mut p = plan_kmeans(&grid, &lights, 2, seed).unwrap();
            p.sort();
            let expect = {
                let mut e = vec![
                    grid.bin_of(&lights[2]).unwrap(),
                    grid.bin_of(&lights[3]).unwrap(),
                ];
                e.sort();
                e
            };
            assert_eq!(p, expect);
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let grid = make_grid(8, 6).unwrap();
        let lights = vec![
            direction(60.0, 0.0).unwrap(),
            direction(120.0, 0.0).unwrap(),
            direction(90.0, 40.0).unwrap(),
            direction(90.0, -35.0).unwrap(),
        ];
        let mean = normalized_mean(lights.iter().copied()).unwrap();
        let nearest_light = lights
            .iter()
            .max_by(|a, b| a.dot(&mean).total_cmp(&b.dot(&mean)))
            .unwrap();
        assert_eq!(
            plan_kmeans(&grid, &lights, 1, 0).unwrap(),
            vec![grid.bin_of(nearest_light).unwrap()]
        );
        assert!(matches!(plan_kmeans(&grid, &lights, 5, 0), Err(Error::Input(_))));
    }

    #[test]
    fn orthogonal_triplet_on_default_grid() {
        let grid = make_grid(8, 6).unwrap();
        let t = plan_orthogonal_triplet(&grid).unwrap();
        let c = |i: usize| grid.center(t[i]);
        let angles = [angle_between(&c(0), &c(1)), angle_between(&c(0), &c(2)), angle_between(&c(1), &c(2))];
        assert!(min_pairwise(angles) >= 75.0);
        assert!(angles.iter().all(|a| (a - 90.0).abs() <= 15.0));
        assert!(matches!(
            plan_orthogonal_triplet(&make_grid(1, 1).unwrap()),
            Err(Error::Feasibility(_))
        ));
    }

    fn binned(grid: &LightBinGrid, size: usize) -> BinnedSample {
        BinnedSample::new(
            render_dataset(&SceneSpec::lambertian_sphere(size), grid.centers()).unwrap(),
            grid,
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_full_set_and_cap() {
        let grid = make_grid(2, 2).unwrap();
        let s = vec![binned(&grid, 16)];
        let r = plan_exhaustive(&s, 4, Backend::LeastSquares).unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.best, vec![0, 1, 2, 3]);
        let direct = evaluate_on_samples(&s, &[0, 1, 2, 3], Backend::LeastSquares).unwrap();
        assert_eq!(r.best_mae_deg, direct);

        let big = make_grid(8, 6).unwrap();
        let s = vec![binned(&big, 8)];
        assert!(matches!(
            plan_exhaustive(&s, 5, Backend::LeastSquares),
            Err(Error::Cap { subsets: 1_712_304, .. })
        ));
    }

    #[test]
    fn exhaustive_skips_dark_light() {
        let lights = vec![
            direction(45.0, 30.0).unwrap(),
            direction(135.0, 30.0).unwrap(),
            direction(45.0, -30.0).unwrap(),
            direction(135.0, -30.0).unwrap(),
        ];
        let grid = make_grid(2, 2).unwrap();
        let mut sample = render_dataset(&SceneSpec::lambertian_sphere(16), &lights).unwrap();
        sample.images[1].scale(0.0);
        let s = vec![BinnedSample::new(sample, &grid).unwrap()];
        let dark = grid.bin_of(&lights[1]).unwrap();
        let r = plan_exhaustive(&s, 3, Backend::LeastSquares).unwrap();
        assert!(!r.best.contains(&dark));
        for row in &r.table {
            if let Some(v) = row.mae_deg {
                assert!(r.best_mae_deg <= v);
            }
        }
    }

    proptest! {
        #[test]
        fn subsets_are_sorted_and_distinct(k in 1usize..9, m in 1usize..5) {
            let items: Vec<usize> = (0..k).collect();
            let s = subsets(&items, m);
            prop_assert_eq!(s.len() as u128, binomial(k, m));
            for w in s.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            for sub in &s {
                prop_assert!(sub.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }
}
