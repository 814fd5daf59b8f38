//! Two-sample tests: the global projection permutation test, per-property
//! Hotelling or permutation tests, and Benjamini–Hochberg adjustment.

use super::{euclideanize, gop_census, EuclideanizedRep, GopId};
use crate::lp::LpDssRep;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use std::cmp::Ordering;

pub const MIN_COHORT: usize = 5;
/// Pooled covariances worse conditioned than this use the permutation test.
pub const MAX_CONDITION: f64 = 1e8;
/// Features whose pooled sd is below this, relative to `1 + |mean|`, are constant.
pub const CONSTANT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalResult {
    /// Distance between the projected group means on standardized features.
    pub statistic: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub permutations: usize,
    /// Unit direction from the second group's mean to the first's, over the kept features.
    pub direction: Vec<f64>,
    /// Constant features left out of the test.
    pub dropped_features: Vec<usize>,
    pub direction_rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialMethod {
    #[default]
    Hotelling,
    Permutation,
}

impl std::str::FromStr for PartialMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hotelling" => Ok(PartialMethod::Hotelling),
            "permutation" => Ok(PartialMethod::Permutation),
            _ => Err(Error::Config(format!("unknown partial test {s:?} (hotelling, permutation)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub raw_p: f64,
    /// Whether an ill-conditioned covariance forced the permutation test.
    pub fallback: bool,
    /// Whether every coordinate was constant across both cohorts, leaving nothing to test.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEntry {
    pub gop: GopId,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub significant: bool,
    pub fallback: bool,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub global: GlobalResult,
    pub global_significant: bool,
    pub partial: Vec<PartialEntry>,
    pub method: PartialMethod,
    pub alpha: f64,
    pub fdr: f64,
    pub seed: u64,
}

impl TestReport {
    /// One row per property: kind, index, frame, p-values and flag.
    pub fn partial_csv(&self) -> String {
        let mut s = String::from("gop,kind,index,frame,raw_p,adjusted_p,significant,fallback,constant\n");
        for (k, e) in self.partial.iter().enumerate() {
            s += &format!(
                "{k},{},{},{},{},{},{},{},{}\n",
                serde_json::to_value(e.gop.kind).unwrap().as_str().unwrap(),
                e.gop.index,
                e.gop.frame,
                e.raw_p,
                e.adjusted_p,
                e.significant,
                e.fallback,
                e.constant
            );
        }
        s
    }
}

fn check_cohorts<T>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<usize> {
    if a.len() < MIN_COHORT || b.len() < MIN_COHORT {
        return Err(Error::Stats(format!("cohorts of {} and {} samples, need {MIN_COHORT} each", a.len(), b.len())));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return Err(Error::Stats("samples differ in feature dimension".into()));
    }
    Ok(d)
}

fn is_constant(mean: f64, var: f64) -> bool {
    var.sqrt() <= CONSTANT_TOL * (1.0 + mean.abs())
}

/// Coordinates of the rows that vary across them.
fn varying(rows: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let keep: Vec<usize> = (0..rows[0].len())
        .filter(|&j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            !is_constant(m, rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0))
        })
        .collect();
    rows.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect()
}

/// Order in which two cohorts are pooled: fixed by the data, not by which
/// cohort is called first, so swapping them only relabels.
fn pooled_first(a_len: usize, b_len: usize, a0: &[f64], b0: &[f64]) -> bool {
    match a_len.cmp(&b_len) {
        Ordering::Equal => a0.iter().zip(b0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal).is_le(),
        o => o.is_lt(),
    }
}

/// Random first-group membership for each permutation, over the pooled order.
fn permutation_groups(n: usize, n_first: usize, permutations: usize, seed: u64) -> Vec<Vec<bool>> {
    (0..permutations)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut g = vec![false; n];
            for &i in &idx[..n_first] {
                g[i] = true;
            }
            g
        })
        .collect()
}

fn mean_difference(rows: &[&[f64]], first: &[bool]) -> Vec<f64> {
    let d = rows[0].len();
    let (mut ma, mut mb) = (vec![0.0; d], vec![0.0; d]);
    let (mut na, mut nb) = (0.0, 0.0);
    for (r, &g) in rows.iter().zip(first) {
        let (m, n) = if g { (&mut ma, &mut na) } else { (&mut mb, &mut nb) };
        for (x, y) in m.iter_mut().zip(r.iter()) {
            *x += y;
        }
        *n += 1.0;
    }
    ma.iter().zip(&mb).map(|(x, y)| x / na - y / nb).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Pooled<'a> {
    rows: Vec<&'a [f64]>,
    /// Whether each pooled row belongs to cohort `a`.
    in_a: Vec<bool>,
    /// Size of the group that comes first in the pooled order.
    n_first: usize,
}

fn pool<'a>(a: &'a [Vec<f64>], b: &'a [Vec<f64>]) -> Pooled<'a> {
    let a_first = pooled_first(a.len(), b.len(), &a[0], &b[0]);
    let (x, y) = if a_first { (a, b) } else { (b, a) };
    let rows = x.iter().chain(y).map(|r| r.as_slice()).collect();
    let in_a = (0..x.len() + y.len()).map(|i| (i < x.len()) == a_first).collect();
    Pooled { rows, in_a, n_first: x.len() }
}

/// Difference of group means projected on the standardized mean-difference
/// direction, against a label-permutation null.
pub fn global_test(a: &[Vec<f64>], b: &[Vec<f64>], permutations: usize, seed: u64) -> Result<GlobalResult> {
    let d = check_cohorts(a, b)?;
    if permutations == 0 {
        return Err(Error::Stats("need at least one permutation".into()));
    }
    let p = pool(a, b);
    let n = p.rows.len() as f64;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut centre = Vec::new();
    let mut scale = Vec::new();
    for j in 0..d {
        let m = p.rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let v = p.rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / (n - 1.0);
        if is_constant(m, v) {
            dropped.push(j);
        } else {
            keep.push(j);
            centre.push(m);
            scale.push(v.sqrt());
        }
    }
    if !dropped.is_empty() {
        log::warn!("global test: dropped {} constant features", dropped.len());
    }
    if keep.is_empty() {
        return Err(Error::Stats("every feature is constant".into()));
    }
    let z: Vec<Vec<f64>> = p.rows.iter().map(|r| keep.iter().enumerate().map(|(k, &j)| (r[j] - centre[k]) / scale[k]).collect()).collect();
    let zr: Vec<&[f64]> = z.iter().map(|r| r.as_slice()).collect();
    let diff = mean_difference(&zr, &p.in_a);
    let statistic = norm(&diff);
    let direction = diff.iter().map(|x| x / statistic).collect();
    let groups = permutation_groups(zr.len(), p.n_first, permutations, seed);
    let null: Vec<f64> = groups.par_iter().map(|g| norm(&mean_difference(&zr, g))).collect();
    let exceed = null.iter().filter(|&&s| s >= statistic).count();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let sd = (null.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (null.len().max(2) - 1) as f64).sqrt();
    Ok(GlobalResult {
        statistic,
        z_score: if sd > 0.0 { (statistic - mean) / sd } else { 0.0 },
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        permutations,
        direction,
        dropped_features: dropped,
        direction_rule: "mean difference".into(),
    })
}

/// Two-sample Hotelling T² with pooled covariance: `(T², p)` from the F
/// reference, or `None` when the covariance is too ill-conditioned.
pub fn hotelling(a: &[&[f64]], b: &[&[f64]]) -> Option<(f64, f64)> {
    let p = a[0].len();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if na + nb - p as f64 - 1.0 <= 0.0 {
        return None;
    }
    let mean = |rows: &[&[f64]]| DVector::from_fn(p, |j, _| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let scatter = |rows: &[&[f64]], m: &DVector<f64>| {
        rows.iter().fold(DMatrix::zeros(p, p), |acc, r| {
            let d = DVector::from_column_slice(r) - m;
            acc + &d * d.transpose()
        })
    };
    let s = (scatter(a, &ma) + scatter(b, &mb)) / (na + nb - 2.0);
    let eig = s.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return None;
    }
    let d = &ma - &mb;
    let x = s.cholesky()?.solve(&d);
    let t2 = na * nb / (na + nb) * d.dot(&x);
    let df2 = na + nb - p as f64 - 1.0;
    let f = df2 / (p as f64 * (na + nb - 2.0)) * t2;
    let dist = FisherSnedecor::new(p as f64, df2).ok()?;
    Some((t2, dist.sf(f).clamp(0.0, 1.0)))
}

/// Raw p-value of every property block, in block order.
pub fn partial_tests(
    a: &[Vec<Vec<f64>>],
    b: &[Vec<Vec<f64>>],
    method: PartialMethod,
    permutations: usize,
    seed: u64,
) -> Result<Vec<PartialResult>> {
    let blocks = check_cohorts(a, b)?;
    let a_first = pooled_first(a.len(), b.len(), &a[0].concat(), &b[0].concat());
    let (x, y) = if a_first { (a, b) } else { (b, a) };
    let n_first = x.len();
    let groups = if method == PartialMethod::Permutation || permutations > 0 {
        permutation_groups(x.len() + y.len(), n_first, permutations, seed)
    } else {
        Vec::new()
    };
    (0..blocks)
        .into_par_iter()
        .map(|k| {
            let all: Vec<&[f64]> = x.iter().chain(y).map(|s| s[k].as_slice()).collect();
            let kept = varying(&all);
            if kept[0].is_empty() {
                return Ok(PartialResult { raw_p: 1.0, fallback: false, constant: true });
            }
            let rows: Vec<&[f64]> = kept.iter().map(|r| r.as_slice()).collect();
            if method == PartialMethod::Hotelling {
                if let Some((_, p)) = hotelling(&rows[..n_first], &rows[n_first..]) {
                    return Ok(PartialResult { raw_p: p, fallback: false, constant: false });
                }
            }
            if groups.is_empty() {
                return Err(Error::Stats(format!("block {k} needs the permutation fallback but no permutations were requested")));
            }
            let first: Vec<bool> = (0..rows.len()).map(|i| i < n_first).collect();
            let obs = norm(&mean_difference(&rows, &first));
            let exceed = groups.iter().filter(|g| norm(&mean_difference(&rows, g)) >= obs).count();
            Ok(PartialResult { raw_p: (1 + exceed) as f64 / (groups.len() + 1) as f64, fallback: method == PartialMethod::Hotelling, constant: false })
        })
        .collect()
}

/// Benjamini–Hochberg step-up adjusted p-values and their flags at `fdr`.
pub fn bh_adjust(p: &[f64], fdr: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut adj = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min((p[i] * m as f64 / (rank + 1) as f64).max(p[i]));
        adj[i] = running.min(1.0);
    }
    let flags = adj.iter().map(|&q| q <= fdr).collect();
    (adj, flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub permutations: usize,
    pub seed: u64,
    pub alpha: f64,
    pub fdr: f64,
    pub method: PartialMethod,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions { permutations: 1000, seed: 0, alpha: 0.05, fdr: 0.1, method: PartialMethod::Hotelling }
    }
}

/// Tangent features of both cohorts under one common model.
pub fn cohort_features(a: &[LpDssRep], b: &[LpDssRep]) -> Result<(Vec<EuclideanizedRep>, Vec<EuclideanizedRep>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Stats("empty cohort".into()));
    }
    let a_first = pooled_first(a.len(), b.len(), &a[0].spoke_lens, &b[0].spoke_lens);
    let (x, y) = if a_first { (a, b) } else { (b, a) };
    let pooled: Vec<&LpDssRep> = x.iter().chain(y).collect();
    let mut feats = euclideanize(&pooled)?;
    let tail = feats.split_off(x.len());
    Ok(if a_first { (feats, tail) } else { (tail, feats) })
}

/// Global and partial tests between two cohorts of tuples.
pub fn test_cohorts(a: &[LpDssRep], b: &[LpDssRep], opts: &TestOptions) -> Result<TestReport> {
    let (fa, fb) = cohort_features(a, b)?;
    let va: Vec<Vec<f64>> = fa.iter().map(|f| f.to_vector()).collect();
    let vb: Vec<Vec<f64>> = fb.iter().map(|f| f.to_vector()).collect();
    let global = global_test(&va, &vb, opts.permutations, opts.seed)?;
    let ba: Vec<Vec<Vec<f64>>> = fa.iter().map(|f| f.blocks()).collect();
    let bb: Vec<Vec<Vec<f64>>> = fb.iter().map(|f| f.blocks()).collect();
    let raw = partial_tests(&ba, &bb, opts.method, opts.permutations, opts.seed)?;
    let ps: Vec<f64> = raw.iter().map(|r| r.raw_p).collect();
    let (adj, flags) = bh_adjust(&ps, opts.fdr);
    let partial = gop_census(&a[0])
        .into_iter()
        .zip(raw)
        .zip(adj.into_iter().zip(flags))
        .map(|((gop, r), (adjusted_p, significant))| PartialEntry { gop, raw_p: r.raw_p, adjusted_p, significant, fallback: r.fallback, constant: r.constant })
        .collect();
    Ok(TestReport {
        global_significant: global.p_value <= opts.alpha,
        global,
        partial,
        method: opts.method,
        alpha: opts.alpha,
        fdr: opts.fdr,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| (0..d).map(|j| g.sample(&mut rng) + if j == 0 { shift } else { 0.0 }).collect()).collect()
    }

    #[test]
    fn bh_examples() {
        let (adj, flags) = bh_adjust(&[0.01, 0.02, 0.03, 0.04], 0.05);
        assert_eq!(adj, vec![0.04; 4]);
        assert!(flags.iter().all(|&f| f));
        assert_eq!(bh_adjust(&[0.3], 0.1).0, vec![0.3]);
    }

    #[test]
    fn separated_means_are_detected() {
        let (a, b) = (gaussian(20, 5, 5.0, 1), gaussian(20, 5, 0.0, 2));
        let r = global_test(&a, &b, 1000, 3).unwrap();
        assert!(r.p_value <= 0.001 + 1e-12, "{}", r.p_value);
        assert!(r.z_score > 3.0);
        assert!(r.direction[0] > 0.9);
    }

    #[test]
    fn swapping_cohorts_only_flips_the_direction() {
        let (a, b) = (gaussian(12, 4, 0.5, 4), gaussian(9, 4, 0.0, 5));
        let (x, y) = (global_test(&a, &b, 200, 6).unwrap(), global_test(&b, &a, 200, 6).unwrap());
        assert_eq!(x.p_value, y.p_value);
        assert_eq!(x.statistic, y.statistic);
        for (p, q) in x.direction.iter().zip(&y.direction) {
            assert_eq!(*p, -q);
        }
        let blocks = |v: &[Vec<f64>]| v.iter().map(|r| vec![r[..2].to_vec(), r[2..].to_vec()]).collect::<Vec<_>>();
        for m in [PartialMethod::Hotelling, PartialMethod::Permutation] {
            let (pa, pb) = (partial_tests(&blocks(&a), &blocks(&b), m, 100, 1).unwrap(), partial_tests(&blocks(&b), &blocks(&a), m, 100, 1).unwrap());
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn scaling_a_feature_keeps_the_p_value() {
        let (a, b) = (gaussian(10, 3, 0.7, 7), gaussian(10, 3, 0.0, 8));
        let scale = |v: &[Vec<f64>]| v.iter().map(|r| vec![r[0] * 1000.0, r[1], r[2]]).collect::<Vec<_>>();
        let (x, y) = (global_test(&a, &b, 300, 9).unwrap(), global_test(&scale(&a), &scale(&b), 300, 9).unwrap());
        assert_eq!(x.p_value, y.p_value);
    }

    #[test]
    fn hotelling_in_one_dimension_is_the_t_test() {
        let (a, b) = (gaussian(8, 1, 1.0, 10), gaussian(11, 1, 0.0, 11));
        let ra: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
        let rb: Vec<&[f64]> = b.iter().map(|r| r.as_slice()).collect();
        let (t2, p) = hotelling(&ra, &rb).unwrap();
        let m = |v: &[Vec<f64>]| v.iter().map(|r| r[0]).sum::<f64>() / v.len() as f64;
        let ss = |v: &[Vec<f64>], mu: f64| v.iter().map(|r| (r[0] - mu).powi(2)).sum::<f64>();
        let sp = (ss(&a, m(&a)) + ss(&b, m(&b))) / 17.0;
        let t = (m(&a) - m(&b)) / (sp * (1.0 / 8.0 + 1.0 / 11.0)).sqrt();
        assert!((t2 - t * t).abs() < 1e-9);
        let st = statrs::distribution::StudentsT::new(0.0, 1.0, 17.0).unwrap();
        assert!((p - 2.0 * st.sf(t.abs())).abs() < 1e-9);
        let flat = vec![vec![1.0]; 8];
        let rf: Vec<&[f64]> = flat.iter().map(|r| r.as_slice()).collect();
        assert!(hotelling(&rf, &rf).is_none());
    }

    #[test]
    fn constant_blocks_are_not_tested() {
        let noise = |n: usize, e: f64| (0..n).map(|i| vec![vec![1.0 + e * (i % 3) as f64, 2.0], vec![i as f64]]).collect::<Vec<_>>();
        let r = partial_tests(&noise(8, 1e-16), &noise(9, 3e-16), PartialMethod::Permutation, 50, 0).unwrap();
        assert_eq!(r[0], PartialResult { raw_p: 1.0, fallback: false, constant: true });
        assert!(!r[1].constant);
    }

    #[test]
    fn rejects_small_or_ragged_cohorts() {
        assert!(global_test(&gaussian(4, 2, 0.0, 0), &gaussian(10, 2, 0.0, 1), 10, 0).is_err());
        assert!(global_test(&gaussian(6, 2, 0.0, 0), &gaussian(6, 3, 0.0, 1), 10, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn p_values_in_range(seed in 0u64..1000, b in 1usize..60) {
            let r = global_test(&gaussian(6, 3, 0.0, seed), &gaussian(7, 3, 0.0, seed + 1), b, seed).unwrap();
            prop_assert!(r.p_value >= 1.0 / (b + 1) as f64 && r.p_value <= 1.0);
        }

        #[test]
        fn bh_is_monotone_and_dominates(p in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let (adj, _) = bh_adjust(&p, 0.1);
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
            for w in idx.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            for (a, r) in adj.iter().zip(&p) {
                prop_assert!(a >= r);
            }
        }
    }
}
