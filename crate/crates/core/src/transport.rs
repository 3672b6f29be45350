//! Wasserstein-2 distances between discrete measures.
//!
//! Equal-size uniform pools are solved as an assignment problem
//! (shortest augmenting paths with potentials, O(n³)). General weighted pools
//! go through a dense min-cost-flow transportation solver. Both are exact up
//! to floating-point rounding and are capped by support size; beyond the cap
//! use [`sliced_w2`] or, in one dimension, [`w2_1d`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::sq_dist;
use crate::pool::WeightedPool;
use crate::rng::{Domain, RngStream};
use crate::targets::Target;

/// Default cap on the combined support size handled by [`w2_exact`].
pub const DEFAULT_SUPPORT_CAP: usize = 2000;
/// Default number of projections for [`sliced_w2`].
pub const DEFAULT_PROJECTIONS: usize = 128;

/// Minimum-cost perfect matching on a square `n×n` cost matrix (row-major).
///
/// Returns `assignment[row] = column` and the total cost.
pub fn assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let inf = f64::INFINITY;
    // 1-based rows/columns; column 0 is a virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (assign, total)
}

/// Optimal transport cost between weight vectors `a` (rows) and `b` (columns),
/// each summing to one, for a row-major `|a|×|b|` cost matrix.
///
/// Successive shortest paths with Dijkstra on reduced costs over the dense
/// bipartite residual graph.
pub fn transport_cost(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    assert_eq!(cost.len(), n * m);
    let eps = 1e-15;
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    // nodes: sources 0..n, sinks n..n+m
    let nodes = n + m;
    let mut pot = vec![0.0; nodes];
    let mut dist = vec![0.0; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    for _round in 0..(4 * nodes * nodes + 16) {
        if supply.iter().all(|s| *s <= eps) || demand.iter().all(|s| *s <= eps) {
            break;
        }
        dist.iter_mut().for_each(|x| *x = f64::INFINITY);
        prev.iter_mut().for_each(|x| *x = usize::MAX);
        done.iter_mut().for_each(|x| *x = false);
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = 0.0;
            }
        }
        let mut target_sink = usize::MAX;
        loop {
            let mut best = f64::INFINITY;
            let mut u = usize::MAX;
            for (v, (&dv, &fin)) in dist.iter().zip(&done).enumerate() {
                if !fin && dv < best {
                    best = dv;
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n {
                let j = u - n;
                if demand[j] > eps {
                    target_sink = u;
                    break;
                }
                for i in 0..n {
                    if !done[i] && flow[i * m + j] > eps {
                        let rc = (-cost[i * m + j] + pot[u] - pot[i]).max(0.0);
                        if dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            } else {
                let row = &cost[u * m..(u + 1) * m];
                for j in 0..m {
                    let v = n + j;
                    if !done[v] {
                        let rc = (row[j] + pot[u] - pot[v]).max(0.0);
                        if dist[u] + rc < dist[v] {
                            dist[v] = dist[u] + rc;
                            prev[v] = u;
                        }
                    }
                }
            }
        }
        if target_sink == usize::MAX {
            break;
        }
        let reach = dist[target_sink];
        for v in 0..nodes {
            pot[v] += dist[v].min(reach);
        }
        // bottleneck along the path
        let mut amount = demand[target_sink - n];
        let mut v = target_sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                amount = amount.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        amount = amount.min(supply[v]);
        let mut v = target_sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[u * m + (v - n)] += amount;
            } else {
                flow[v * m + (u - n)] -= amount;
            }
            v = u;
        }
        supply[v] -= amount;
        demand[target_sink - n] -= amount;
    }
    flow.iter().zip(cost).map(|(f, c)| f.max(0.0) * c).sum()
}

fn cost_matrix(a: &WeightedPool, b: &WeightedPool) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        let x = a.point(i);
        for j in 0..b.len() {
            c.push(sq_dist(x, b.point(j)));
        }
    }
    c
}

/// Exact `W2` between two weighted pools with combined support at most `cap`.
pub fn w2_exact(a: &WeightedPool, b: &WeightedPool, cap: usize) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            expected: a.d(),
            found: b.d(),
        });
    }
    let size = a.len() + b.len();
    if size > cap {
        return Err(Error::SupportCapExceeded { size, cap });
    }
    let cost = cost_matrix(a, b);
    let total = if a.len() == b.len() && a.is_uniform() && b.is_uniform() {
        assignment(&cost, a.len()).1 / a.len() as f64
    } else {
        transport_cost(a.weights(), b.weights(), &cost)
    };
    Ok(total.max(0.0).sqrt())
}

/// Exact `W2²` between two weighted measures on the real line via monotone coupling.
fn w2_sq_1d(xa: &[(f64, f64)], xb: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (xa[0].1, xb[0].1);
    let mut total = 0.0;
    loop {
        let t = ra.min(rb);
        let diff = xa[i].0 - xb[j].0;
        total += t * diff * diff;
        ra -= t;
        rb -= t;
        if ra <= 0.0 {
            i += 1;
            if i == xa.len() {
                break;
            }
            ra = xa[i].1;
        }
        if rb <= 0.0 {
            j += 1;
            if j == xb.len() {
                break;
            }
            rb = xb[j].1;
        }
    }
    total
}

fn sorted_1d(values: impl Iterator<Item = f64>, weights: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = values.zip(weights.iter().copied()).collect();
    v.sort_by(|p, q| p.0.total_cmp(&q.0));
    v
}

/// Exact `W2` between one-dimensional weighted pools (quantile coupling).
pub fn w2_1d(a: &WeightedPool, b: &WeightedPool) -> Result<f64> {
    if a.d() != 1 || b.d() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: a.d().max(b.d()),
        });
    }
    let xa = sorted_1d(a.points().iter().copied(), a.weights());
    let xb = sorted_1d(b.points().iter().copied(), b.weights());
    Ok(w2_sq_1d(&xa, &xb).max(0.0).sqrt())
}

/// Sliced `W2`: root mean of exact 1-D `W2²` over random unit directions.
///
/// Direction `p` is drawn from `(seed, projection, p)`, so results are reproducible.
pub fn sliced_w2(a: &WeightedPool, b: &WeightedPool, projections: usize, seed: u64) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            expected: a.d(),
            found: b.d(),
        });
    }
    if projections == 0 {
        return Err(Error::InvalidParameter(
            "need at least one projection".into(),
        ));
    }
    let d = a.d();
    let stream = RngStream::new(seed);
    let mut dir = vec![0.0; d];
    let mut acc = 0.0;
    for p in 0..projections {
        let mut rng = stream.generator(Domain::Projection, 0, p as u64);
        loop {
            dir.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                dir.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
        let proj = |pool: &WeightedPool| {
            sorted_1d(
                pool.points()
                    .chunks_exact(d)
                    .map(|x| x.iter().zip(&dir).map(|(u, w)| u * w).sum()),
                pool.weights(),
            )
        };
        acc += w2_sq_1d(&proj(a), &proj(b));
    }
    Ok((acc / projections as f64).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W2Method {
    /// Quantile coupling in one dimension.
    Exact1d,
    /// Assignment or transportation solver.
    Exact,
    /// Sliced estimator with this many projections.
    Sliced(usize),
}

/// `W2` to a target, estimated against a fresh i.i.d. target cloud.
///
/// Upward-biased for finite `samples`: even exact target draws sit at
/// positive distance from `π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
    pub samples: usize,
    pub seed: u64,
}

/// Draws `m` exact target samples keyed by `seed`.
pub fn target_samples(target: &dyn Target, m: usize, seed: u64) -> Result<WeightedPool> {
    let d = target.dim();
    let stream = RngStream::new(seed);
    let mut pts = vec![0.0; m * d];
    for (s, row) in pts.chunks_exact_mut(d).enumerate() {
        target.sample(
            &mut stream.generator(Domain::TargetSample, 0, s as u64),
            row,
        )?;
    }
    WeightedPool::uniform(pts, d)
}

pub fn w2_to_target(
    pool: &WeightedPool,
    target: &dyn Target,
    samples: usize,
    seed: u64,
    cap: usize,
) -> Result<W2Estimate> {
    if pool.d() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: pool.d(),
        });
    }
    let reference = target_samples(target, samples, seed)?;
    let (value, method) = if pool.d() == 1 {
        (w2_1d(pool, &reference)?, W2Method::Exact1d)
    } else if pool.len() + samples <= cap {
        (w2_exact(pool, &reference, cap)?, W2Method::Exact)
    } else {
        (
            sliced_w2(pool, &reference, DEFAULT_PROJECTIONS, seed)?,
            W2Method::Sliced(DEFAULT_PROJECTIONS),
        )
    };
    Ok(W2Estimate {
        value,
        method,
        samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::standard_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(points: Vec<f64>, d: usize) -> WeightedPool {
        WeightedPool::uniform(points, d).unwrap()
    }

    #[test]
    fn identical_pools_are_at_zero() {
        let p = uniform(vec![0.0, 1.0, 2.0, 5.0, -1.0, 3.0], 2);
        assert!(w2_exact(&p, &p, 100).unwrap() < 1e-12);
    }

    #[test]
    fn two_point_matching() {
        let a = uniform(vec![0.0, 1.0], 1);
        let b = uniform(vec![2.0, 3.0], 1);
        assert!((w2_exact(&a, &b, 100).unwrap() - 2.0).abs() < 1e-15);
        // crossed matching costs 10 > 8
        let cost = [4.0, 9.0, 1.0, 4.0];
        let (assign, total) = assignment(&cost, 2);
        assert_eq!(assign, vec![0, 1]);
        assert_eq!(total, 8.0);
    }

    /// Brute force over all permutations.
    fn brute_assignment(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row * n + j] + rec(cost, n, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, n, 0, &mut vec![false; n])
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=7 {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
            let (_, got) = assignment(&cost, n);
            assert!((got - brute_assignment(&cost, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_agrees_with_assignment_on_uniform_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1usize, 3, 8, 20] {
            let a = uniform((0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect(), 2);
            let b = uniform((0..n * 2).map(|_| rng.random_range(-1.0..3.0)).collect(), 2);
            let cost = cost_matrix(&a, &b);
            let lp = transport_cost(a.weights(), b.weights(), &cost);
            let hung = assignment(&cost, n).1 / n as f64;
            assert!(
                (lp - hung).abs() < 1e-12 * hung.max(1.0),
                "n={n}: {lp} vs {hung}"
            );
        }
    }

    #[test]
    fn transport_matches_weighted_1d_quantile_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let na = rng.random_range(1..15);
            let nb = rng.random_range(1..15);
            let a = WeightedPool::new(
                (0..na).map(|_| rng.random_range(-3.0..3.0)).collect(),
                1,
                (0..na).map(|_| rng.random_range(0.1..2.0)).collect(),
            )
            .unwrap();
            let b = WeightedPool::new(
                (0..nb).map(|_| rng.random_range(-3.0..3.0)).collect(),
                1,
                (0..nb).map(|_| rng.random_range(0.1..2.0)).collect(),
            )
            .unwrap();
            let exact = w2_exact(&a, &b, 100).unwrap();
            let q = w2_1d(&a, &b).unwrap();
            assert!((exact - q).abs() < 1e-10, "{exact} vs {q}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let a = uniform(vec![0.0; 10], 1);
        match w2_exact(&a, &a, 15) {
            Err(Error::SupportCapExceeded { size: 20, cap: 15 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sliced_is_exact_in_one_dimension_and_reproducible() {
        let a = uniform(vec![0.0, 1.0, 4.0], 1);
        let b = uniform(vec![2.0, 2.5, -1.0], 1);
        let s = sliced_w2(&a, &b, 4, 9).unwrap();
        assert!((s - w2_1d(&a, &b).unwrap()).abs() < 1e-12);
        let c = uniform(vec![0.0, 1.0, 4.0, 2.0, 3.0, 1.0], 3);
        let e = uniform(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0], 3);
        assert_eq!(
            sliced_w2(&c, &e, 16, 5).unwrap(),
            sliced_w2(&c, &e, 16, 5).unwrap()
        );
        // projections can only shrink distances
        assert!(sliced_w2(&c, &e, 16, 5).unwrap() <= w2_exact(&c, &e, 100).unwrap() + 1e-12);
    }

    #[test]
    fn dirac_to_gaussian_is_second_moment() {
        let t = standard_gaussian(1).unwrap();
        let dirac = uniform(vec![0.0; 10], 1);
        let est = w2_to_target(&dirac, &t, 20_000, 4, DEFAULT_SUPPORT_CAP).unwrap();
        assert_eq!(est.method, W2Method::Exact1d);
        assert!((est.value - 1.0).abs() < 0.02, "{}", est.value);
    }

    #[test]
    fn same_samples_are_at_zero() {
        let t = standard_gaussian(2).unwrap();
        let cloud = target_samples(&t, 50, 7).unwrap();
        let est = w2_to_target(&cloud, &t, 50, 7, DEFAULT_SUPPORT_CAP).unwrap();
        assert_eq!(est.method, W2Method::Exact);
        assert!(est.value < 1e-12);
    }

    #[test]
    fn independent_clouds_get_closer_with_more_samples() {
        let t = standard_gaussian(2).unwrap();
        let avg = |m: usize| {
            (0..4)
                .map(|s| {
                    let a = target_samples(&t, m, 100 + s).unwrap();
                    let b = target_samples(&t, m, 200 + s).unwrap();
                    w2_exact(&a, &b, DEFAULT_SUPPORT_CAP).unwrap()
                })
                .sum::<f64>()
                / 4.0
        };
        assert!(avg(25) > avg(400));
    }

    proptest::proptest! {
        #[test]
        fn uniform_1d_matches_sorted_matching(xs in proptest::collection::vec(-10.0f64..10.0, 1..30), seed in 0u64..1000) {
            let n = xs.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let exact = w2_exact(&uniform(xs.clone(), 1), &uniform(ys.clone(), 1), 1000).unwrap();
            let (mut sx, mut sy) = (xs, ys);
            sx.sort_by(f64::total_cmp);
            sy.sort_by(f64::total_cmp);
            let sorted = (sx.iter().zip(&sy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64).sqrt();
            proptest::prop_assert!((exact - sorted).abs() < 1e-10);
        }
    }
}
