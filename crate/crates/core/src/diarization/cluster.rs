//! Affinity propagation over a dense similarity matrix.

use crate::autodiff::l2_normalized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
    /// Self-similarity; `None` uses the median off-diagonal similarity.
    pub preference: Option<f64>,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            damping: 0.5,
            max_iter: 200,
            convergence_iter: 15,
            preference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// Exemplar point index per cluster, ascending.
    pub exemplars: Vec<usize>,
    /// Cluster index per point.
    pub labels: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl ApResult {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }
}

/// Cosine similarity of every pair of rows.
pub fn cosine_similarity_matrix(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let z: Vec<Vec<f64>> = points.iter().map(|p| l2_normalized(p)).collect::<Result<_>>()?;
    Ok(z.iter()
        .map(|a| z.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Responsibility/availability message passing. When no exemplar emerges
/// within `max_iter`, every point lands in one cluster and `converged` is
/// false.
pub fn affinity_propagation(similarity: &[Vec<f64>], cfg: &ApConfig) -> Result<ApResult> {
    let n = similarity.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "affinity propagation needs at least one point".into(),
        ));
    }
    if let Some(row) = similarity.iter().find(|r| r.len() != n) {
        return Err(Error::ShapeMismatch {
            op: "affinity_propagation",
            shapes: vec![vec![n, row.len()]],
        });
    }
    if !(0.5..1.0).contains(&cfg.damping) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in [0.5, 1), got {}",
            cfg.damping
        )));
    }
    if cfg.convergence_iter == 0 {
        return Err(Error::InvalidArgument("convergence_iter must be at least 1".into()));
    }
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
        .map(|(i, k)| similarity[i][k])
        .collect();
    let single = |converged| ApResult {
        exemplars: vec![0],
        labels: vec![0; n],
        converged,
        iterations: 0,
    };
    if n == 1 || off.iter().all(|&v| v == off[0]) {
        return Ok(single(true));
    }
    let preference = cfg.preference.unwrap_or_else(|| median(off));

    let mut s: Vec<Vec<f64>> = similarity.to_vec();
    for (i, row) in s.iter_mut().enumerate() {
        row[i] = preference;
    }
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let lam = cfg.damping;
    let mut history: Vec<Vec<bool>> = vec![vec![false; n]; cfg.convergence_iter];
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        for i in 0..n {
            let (mut first, mut second, mut idx) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[i][k] + s[i][k];
                if v > first {
                    second = first;
                    first = v;
                    idx = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let new = s[i][k] - if k == idx { second } else { first };
                r[i][k] = lam * r[i][k] + (1.0 - lam) * new;
            }
        }
        for k in 0..n {
            let col: f64 = (0..n).map(|i| if i == k { r[k][k] } else { r[i][k].max(0.0) }).sum();
            for i in 0..n {
                let new = if i == k {
                    col - r[k][k]
                } else {
                    (col - r[i][k].max(0.0)).min(0.0)
                };
                a[i][k] = lam * a[i][k] + (1.0 - lam) * new;
            }
        }
        let e: Vec<bool> = (0..n).map(|k| a[k][k] + r[k][k] > 0.0).collect();
        let k_count = e.iter().filter(|&&b| b).count();
        history[it % cfg.convergence_iter] = e;
        if it + 1 >= cfg.convergence_iter {
            let stable = (0..n).all(|p| {
                let on = history.iter().filter(|h| h[p]).count();
                on == 0 || on == cfg.convergence_iter
            });
            if stable && k_count > 0 {
                converged = true;
                break;
            }
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
    if exemplars.is_empty() {
        log::warn!("affinity propagation produced no exemplars after {iterations} iterations");
        return Ok(ApResult {
            iterations,
            ..single(false)
        });
    }
    if !converged {
        log::warn!("affinity propagation did not converge in {} iterations", cfg.max_iter);
    }
    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| match exemplars.iter().position(|&x| x == i) {
                Some(c) => c,
                None => argmax(exemplars.iter().map(|&x| s[i][x])),
            })
            .collect()
    };
    // Refine each exemplar to the member with the largest summed similarity
    // to the rest of its cluster.
    let labels = assign(&exemplars);
    for (c, ex) in exemplars.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let j = argmax(members.iter().map(|&j| members.iter().map(|&i| s[i][j]).sum::<f64>()));
        *ex = members[j];
    }
    exemplars.sort_unstable();
    exemplars.dedup();
    let labels = assign(&exemplars);
    Ok(ApResult {
        exemplars,
        labels,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_and_identical_points() {
        let r = affinity_propagation(&[vec![1.0]], &ApConfig::default()).unwrap();
        assert_eq!((r.exemplars, r.labels), (vec![0], vec![0]));
        let pts = vec![vec![1.0, 2.0]; 5];
        let sim = cosine_similarity_matrix(&pts).unwrap();
        let r = affinity_propagation(&sim, &ApConfig::default()).unwrap();
        assert_eq!(r.n_clusters(), 1);
        assert_eq!(r.labels, vec![0; 5]);
    }

    #[test]
    fn rejects_non_square() {
        assert!(affinity_propagation(&[vec![1.0, 0.0], vec![0.0]], &ApConfig::default()).is_err());
        assert!(affinity_propagation(&[], &ApConfig::default()).is_err());
    }

    #[test]
    fn three_separated_clusters() {
        let mut rng = rng_for(4, "ap");
        let centers = [[10.0, 0.0], [0.0, 10.0], [-10.0, -10.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..30 {
            let c = centers[i % 3];
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            pts.push([c[0] + 0.3 * x, c[1] + 0.3 * y]);
            truth.push(i % 3);
        }
        let sim: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                pts.iter()
                    .map(|q| -((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)))
                    .collect()
            })
            .collect();
        let r = affinity_propagation(&sim, &ApConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.n_clusters(), 3);
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(truth[i] == truth[j], r.labels[i] == r.labels[j]);
            }
        }
        for (c, &e) in r.exemplars.iter().enumerate() {
            assert_eq!(r.labels[e], c);
        }
    }
}
