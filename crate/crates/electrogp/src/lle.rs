//! Latent initialization: one-dimensional locally linear embedding and
//! rescaling into the open unit interval.

use crate::error::{Error, Result};
use crate::fit::LatentConfig;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LleSettings {
    pub k_neighbors: usize,
    /// Ridge added to the local Gram matrix, as a fraction of its trace.
    pub reg: f64,
}

impl Default for LleSettings {
    fn default() -> Self {
        Self {
            k_neighbors: 8,
            reg: 1e-3,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

fn knn_indices(data: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = data.nrows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row_i = data.row(i);
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let diff = row_i - data.row(j);
                (diff.norm_squared(), j)
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(dists.iter().take(k).map(|&(_, j)| j).collect());
    }
    out
}

fn check_connected(neighbors: &[Vec<usize>]) -> Result<()> {
    let n = neighbors.len();
    let mut uf = UnionFind::new(n);
    for (i, ns) in neighbors.iter().enumerate() {
        for &j in ns {
            uf.union(i, j);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    if groups.len() > 1 {
        return Err(Error::DisconnectedGraph {
            components: groups.into_values().collect(),
        });
    }
    Ok(())
}

/// First principal component scores with a deterministic sign: the loading
/// vector's largest-magnitude entry is made positive.
fn pc1_scores(data: &DMatrix<f64>) -> DVector<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut centered = data.clone();
    for j in 0..d {
        let mean = centered.column(j).sum() / n as f64;
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    let svd = nalgebra::linalg::SVD::new(centered.clone(), false, true);
    let v_t = svd.v_t.expect("SVD requested with right singular vectors");
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut v1: DVector<f64> = v_t.row(top).transpose();
    let pin = v1
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v1[pin] < 0.0 {
        v1 = -v1;
    }
    centered * v1
}

/// Standard locally linear embedding into one dimension.
///
/// Neighborhoods come from brute-force Euclidean k-NN; reconstruction
/// weights solve the ridge-regularized constrained least squares with
/// weights summing to one; the embedding is the eigenvector of
/// (I-W)'(I-W) for the second-smallest eigenvalue, sign-fixed to
/// correlate positively with the first principal component scores.
pub fn lle_1d(data: &DMatrix<f64>, settings: &LleSettings) -> Result<Vec<f64>> {
    let n = data.nrows();
    if n < 3 {
        return Err(Error::Domain(format!(
            "embedding needs at least 3 rows, got {}",
            n
        )));
    }
    let k = settings.k_neighbors;
    if k < 1 || k >= n {
        return Err(Error::Domain(format!(
            "k_neighbors must satisfy 1 <= k < n, got k={} n={}",
            k, n
        )));
    }
    if !(settings.reg >= 0.0) {
        return Err(Error::Domain("reg must be nonnegative".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("data contains non-finite values".into()));
    }

    let neighbors = knn_indices(data, k);
    check_connected(&neighbors)?;

    let mut w = DMatrix::<f64>::zeros(n, n);
    let ones = DVector::<f64>::from_element(k, 1.0);
    for i in 0..n {
        let mut z = DMatrix::<f64>::zeros(k, data.ncols());
        for (a, &j) in neighbors[i].iter().enumerate() {
            z.set_row(a, &(data.row(j) - data.row(i)));
        }
        let mut c = &z * z.transpose();
        let trace = c.trace();
        let ridge = if trace > 0.0 {
            settings.reg * trace
        } else {
            settings.reg
        };
        for a in 0..k {
            c[(a, a)] += ridge;
        }
        let wi = c
            .lu()
            .solve(&ones)
            .ok_or_else(|| Error::Conditioning("singular local Gram matrix".into()))?;
        let sum = wi.sum();
        if sum == 0.0 || !sum.is_finite() {
            return Err(Error::Conditioning(
                "local reconstruction weights do not normalize".into(),
            ));
        }
        for (a, &j) in neighbors[i].iter().enumerate() {
            w[(i, j)] = wi[a] / sum;
        }
    }

    let mut iw = -w;
    for i in 0..n {
        iw[(i, i)] += 1.0;
    }
    let m = iw.transpose() * &iw;
    let eig = nalgebra::linalg::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut coords: DVector<f64> = eig.eigenvectors.column(order[1]).into();

    let scores = pc1_scores(data);
    let corr = coords.dot(&scores);
    if corr < 0.0 {
        coords = -coords;
    } else if corr == 0.0 {
        let pin = coords
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if coords[pin] < 0.0 {
            coords = -coords;
        }
    }
    Ok(coords.iter().cloned().collect())
}

/// Affine map of raw coordinates onto [m, 1-m] with margin m = 1/(2n).
/// Ranks are preserved; constant input is rejected.
pub fn rescale_unit(coords: &[f64]) -> Result<LatentConfig> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::Domain("cannot rescale an empty list".into()));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite coordinate".into()));
    }
    let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(Error::Domain(
            "coordinates are all equal; cannot rescale".into(),
        ));
    }
    let margin = 1.0 / (2.0 * n as f64);
    let scale = (1.0 - 2.0 * margin) / (hi - lo);
    let xs = coords.iter().map(|&c| margin + (c - lo) * scale).collect();
    LatentConfig::new(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spearman_sign(e: &[f64], t: &[f64]) -> f64 {
        let n = e.len();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut r = vec![0.0; n];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let re = rank(e);
        let rt = rank(t);
        let mean = (n as f64 - 1.0) / 2.0;
        let num: f64 = re
            .iter()
            .zip(&rt)
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum();
        let den: f64 = re.iter().map(|a| (a - mean) * (a - mean)).sum();
        num / den
    }

    fn concordance(e: &[f64], t: &[f64]) -> f64 {
        let n = e.len();
        let mut conc = 0usize;
        let mut tot = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                tot += 1;
                if (e[i] - e[j]) * (t[i] - t[j]) > 0.0 {
                    conc += 1;
                }
            }
        }
        conc.max(tot - conc) as f64 / tot as f64
    }

    #[test]
    fn straight_segment_recovers_arc_order() {
        let n = 10;
        let data = DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 / (n - 1) as f64;
            if j == 0 {
                2.0 * t
            } else {
                -t
            }
        });
        let e = lle_1d(&data, &LleSettings { k_neighbors: 3, reg: 1e-3 }).unwrap();
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let rho = spearman_sign(&e, &t);
        assert!(rho.abs() > 0.999999, "spearman {}", rho);
    }

    #[test]
    fn collinear_triple_keeps_middle_between() {
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        let e = lle_1d(&data, &LleSettings { k_neighbors: 2, reg: 1e-3 }).unwrap();
        let mid = e[1];
        assert!(
            (e[0] < mid && mid < e[2]) || (e[2] < mid && mid < e[0]),
            "middle not between: {:?}",
            e
        );
    }

    #[test]
    fn invariant_under_rotation_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 60;
        let mut raw = Vec::with_capacity(n * 2);
        let mut ts = Vec::with_capacity(n);
        for _ in 0..n {
            let t: f64 = rng.gen();
            ts.push(t);
            let u = -1.0 + 2.0 * t;
            raw.push(u + 0.01 * (rng.gen::<f64>() - 0.5));
            raw.push(u * u + 0.01 * (rng.gen::<f64>() - 0.5));
        }
        let data = DMatrix::from_row_slice(n, 2, &raw);
        let th = 0.83f64;
        let moved = DMatrix::from_fn(n, 2, |i, j| {
            let (x, y) = (data[(i, 0)], data[(i, 1)]);
            if j == 0 {
                th.cos() * x - th.sin() * y + 5.0
            } else {
                th.sin() * x + th.cos() * y - 2.0
            }
        });
        let s = LleSettings { k_neighbors: 8, reg: 1e-3 };
        let a = lle_1d(&data, &s).unwrap();
        let b = lle_1d(&moved, &s).unwrap();
        let rho = spearman_sign(&a, &b);
        assert!(rho.abs() > 0.9999, "spearman across rigid motion {}", rho);
    }

    #[test]
    fn noisy_parabola_concordance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100;
        let th = std::f64::consts::PI / 6.0;
        let mut raw = Vec::with_capacity(n * 2);
        let mut ts = Vec::with_capacity(n);
        for _ in 0..n {
            let t: f64 = rng.gen();
            ts.push(t);
            let u = -1.0 + 2.0 * t;
            let (bx, by) = (u, u * u);
            let nx = 0.05 * gauss(&mut rng);
            let ny = 0.05 * gauss(&mut rng);
            raw.push(th.cos() * bx - th.sin() * by + nx);
            raw.push(th.sin() * bx + th.cos() * by + ny);
        }
        let data = DMatrix::from_row_slice(n, 2, &raw);
        let e = lle_1d(&data, &LleSettings { k_neighbors: 12, reg: 1e-3 }).unwrap();
        let c = concordance(&e, &ts);
        assert!(c >= 0.95, "concordance {}", c);
    }

    fn gauss<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn disconnected_graph_reports_components() {
        let mut raw = Vec::new();
        for i in 0..4 {
            raw.extend_from_slice(&[i as f64 * 0.1, 0.0]);
        }
        for i in 0..4 {
            raw.extend_from_slice(&[100.0 + i as f64 * 0.1, 0.0]);
        }
        let data = DMatrix::from_row_slice(8, 2, &raw);
        let err = lle_1d(&data, &LleSettings { k_neighbors: 2, reg: 1e-3 }).unwrap_err();
        match err {
            Error::DisconnectedGraph { components } => {
                assert_eq!(components.len(), 2);
                assert_eq!(components[0], vec![0, 1, 2, 3]);
                assert_eq!(components[1], vec![4, 5, 6, 7]);
            }
            other => panic!("expected DisconnectedGraph, got {:?}", other),
        }
    }

    #[test]
    fn rescale_examples() {
        let out = rescale_unit(&[-2.0, 0.0, 2.0]).unwrap();
        let xs = out.as_slice();
        assert_abs_diff_eq!(xs[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[2], 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn rescale_hits_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 23;
        let coords: Vec<f64> = (0..n).map(|_| 10.0 * rng.gen::<f64>() - 5.0).collect();
        let out = rescale_unit(&coords).unwrap();
        let xs = out.as_slice();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(lo, 1.0 / (2.0 * n as f64), epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0 - 1.0 / (2.0 * n as f64), epsilon = 1e-12);
        // ranks preserved
        for i in 0..n {
            for j in 0..n {
                if coords[i] < coords[j] {
                    assert!(xs[i] < xs[j]);
                }
            }
        }
    }

    #[test]
    fn rescale_rejects_constant() {
        assert!(rescale_unit(&[1.0, 1.0, 1.0]).is_err());
        assert!(rescale_unit(&[]).is_err());
    }
}
