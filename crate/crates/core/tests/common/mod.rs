//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use pmwpub::queries::{QuerySet, Workload};
use pmwpub::{Dataset, Record, Schema};
use rand::Rng;

/// Answers by direct counting; decodes targets itself (last attribute fastest).
pub fn brute_answers(qs: &QuerySet, points: &[Record], weights: &[f64]) -> Vec<f64> {
    let schema = qs.schema();
    let mut out = Vec::with_capacity(qs.len());
    for w in qs.workloads() {
        let cards: Vec<u32> = w.attrs().iter().map(|&a| schema.cardinality(a)).collect();
        let size: usize = cards.iter().map(|&c| c as usize).product();
        for mut cell in 0..size {
            let mut target = vec![0u32; cards.len()];
            for j in (0..cards.len()).rev() {
                target[j] = (cell % cards[j] as usize) as u32;
                cell /= cards[j] as usize;
            }
            let mut total = 0.0;
            for (p, &wt) in points.iter().zip(weights) {
                if w.attrs().iter().zip(&target).all(|(&a, &v)| p[a] == v) {
                    total += wt;
                }
            }
            out.push(total);
        }
    }
    out
}

pub fn dataset_answers(qs: &QuerySet, d: &Dataset) -> Vec<f64> {
    let w = vec![1.0 / d.len() as f64; d.len()];
    brute_answers(qs, d.rows(), &w)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exponential-mechanism probabilities by direct normalization.
pub fn em_probs(scores: &[f64], sens: f64, eps: f64) -> Vec<f64> {
    let w: Vec<f64> = scores.iter().map(|s| (eps * s / (2.0 * sens)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Permute-and-flip probabilities by enumerating every visiting order.
pub fn pf_probs(scores: &[f64], sens: f64, eps: f64) -> Vec<f64> {
    let n = scores.len();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let accept: Vec<f64> = scores
        .iter()
        .map(|s| (eps * (s - max) / (2.0 * sens)).exp())
        .collect();
    let perms = permutations(n);
    let each = 1.0 / perms.len() as f64;
    let mut probs = vec![0.0; n];
    for p in &perms {
        let mut reach = each;
        for &i in p {
            probs[i] += reach * accept[i];
            reach *= 1.0 - accept[i];
        }
    }
    probs
}

pub fn expected(scores: &[f64], probs: &[f64]) -> f64 {
    scores.iter().zip(probs).map(|(s, p)| s * p).sum()
}

/// Tight zCDP to approximate-DP conversion by brute minimization over a
/// log-spaced grid of `points` Renyi orders in (1, 1 + 1e8].
pub fn tight_conversion_grid(epsilon_tilde: f64, delta: f64, points: usize) -> f64 {
    let rho = 0.5 * epsilon_tilde * epsilon_tilde;
    let (lo, hi) = ((1e-8f64).ln(), (1e8f64).ln());
    let mut best = f64::INFINITY;
    for i in 0..points {
        let a = 1.0 + (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
        let v = rho * a + ((1.0 / (a * delta)).ln()) / (a - 1.0) + (1.0 - 1.0 / a).ln();
        if v < best {
            best = v;
        }
    }
    best.max(0.0)
}

fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-12 {
            return None;
        }
        m.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / m[i][i]).collect())
}

/// Exact `min over mixtures mu of max_j |a_j . mu - d_j|`, by enumerating the
/// vertices of the LP. `phi[j][i]` is query `j` on support point `i`; at most
/// three support points.
pub fn exact_mixture_error(phi: &[Vec<f64>], truth: &[f64]) -> f64 {
    let s = phi[0].len();
    assert!((1..=3).contains(&s));
    // variables: mu_0 .. mu_{s-2} (mu_{s-1} = 1 - sum) and z
    let m = s;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new(); // row . x >= rhs
    for (a, &d) in phi.iter().zip(truth) {
        let last = a[s - 1];
        let mut coef: Vec<f64> = (0..s - 1).map(|i| a[i] - last).collect();
        // z - (coef . mu + last - d) >= 0 and z + (coef . mu + last - d) >= 0
        let mut r1: Vec<f64> = coef.iter().map(|c| -c).collect();
        r1.push(1.0);
        rows.push((r1, last - d));
        coef.push(1.0);
        rows.push((coef, d - last));
    }
    for i in 0..s - 1 {
        let mut r = vec![0.0; m];
        r[i] = 1.0;
        rows.push((r, 0.0));
    }
    if s > 1 {
        let mut r = vec![-1.0; m];
        r[m - 1] = 0.0;
        rows.push((r, -1.0));
    }
    let mut best = f64::INFINITY;
    let k = rows.len();
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| rows[i].1).collect();
        if let Some(x) = solve(a, b) {
            let feasible = rows.iter().all(|(r, rhs)| {
                r.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>() >= rhs - 1e-10
            });
            if feasible {
                best = best.min(x[m - 1]);
            }
        }
        // next combination
        let mut j = m;
        loop {
            if j == 0 {
                return best;
            }
            j -= 1;
            if idx[j] < k - m + j {
                idx[j] += 1;
                for t in j + 1..m {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Query values on each support point, `phi[j][i]`.
pub fn phi_matrix(qs: &QuerySet, points: &[Record]) -> Vec<Vec<f64>> {
    let mut phi = vec![vec![0.0; points.len()]; qs.len()];
    for i in 0..points.len() {
        let mut w = vec![0.0; points.len()];
        w[i] = 1.0;
        for (j, v) in brute_answers(qs, points, &w).into_iter().enumerate() {
            phi[j][i] = v;
        }
    }
    phi
}

/// Two binary attributes with every 1-way marginal.
pub fn tiny_queries() -> (Arc<Schema>, QuerySet) {
    let schema = Arc::new(Schema::from_cardinalities(&[2, 2]).unwrap());
    let ws = vec![
        Workload::new(&schema, vec![0]).unwrap(),
        Workload::new(&schema, vec![1]).unwrap(),
    ];
    let qs = QuerySet::new(schema.clone(), ws).unwrap();
    (schema, qs)
}

/// Every point of a small domain once, in lexicographic order.
pub fn full_domain_dataset(schema: &Arc<Schema>) -> Dataset {
    let cards = schema.cardinalities();
    let size: usize = cards.iter().map(|&c| c as usize).product();
    let rows = (0..size)
        .map(|mut cell| {
            let mut v = vec![0u32; cards.len()];
            for j in (0..cards.len()).rev() {
                v[j] = (cell % cards[j] as usize) as u32;
                cell /= cards[j] as usize;
            }
            v
        })
        .collect();
    Dataset::from_rows(schema.clone(), rows).unwrap()
}

/// Rows drawn from a skewed distribution over the tiny domain.
pub fn tiny_private(schema: &Arc<Schema>, n: usize, rng: &mut impl Rng) -> Dataset {
    let rows = (0..n)
        .map(|_| {
            let a = rng.random_bool(0.7) as u32;
            let b = rng.random_bool(if a == 1 { 0.2 } else { 0.6 }) as u32;
            vec![a, b]
        })
        .collect();
    Dataset::from_rows(schema.clone(), rows).unwrap()
}

pub fn random_dataset(schema: &Arc<Schema>, n: usize, rng: &mut impl Rng) -> Dataset {
    let cards = schema.cardinalities();
    let rows = (0..n)
        .map(|_| cards.iter().map(|&c| rng.random_range(0..c)).collect())
        .collect();
    Dataset::from_rows(schema.clone(), rows).unwrap()
}

/// Peak resident set size of this process in bytes (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
