use crate::attnstore::AttnMatrix;

use super::{Composition, Distance};

/// Precomputed geometry of one attention matrix: all-pairs distances under
/// both kernels and the centroid of every span. Span arguments are 1-based
/// and inclusive.
pub struct HeadScorer<'a> {
    matrix: &'a AttnMatrix,
    n: usize,
    // [jsd, hellinger], each n x n
    pairwise: [Vec<f64>; 2],
    // per-row prefix sums of `pairwise`, n x (n + 1); a run of zero
    // distances yields an exactly zero difference
    prefix: [Vec<f64>; 2],
    // centroid of span (i, j) at offset ((i - 1) * n + (j - 1)) * n
    centroids: Vec<f64>,
}

fn slot(f: Distance) -> usize {
    match f {
        Distance::Jsd => 0,
        Distance::Hellinger => 1,
    }
}

impl<'a> HeadScorer<'a> {
    pub fn new(matrix: &'a AttnMatrix) -> Self {
        let n = matrix.n();
        let mut pairwise = [vec![0.0; n * n], vec![0.0; n * n]];
        for x in 0..n {
            for y in (x + 1)..n {
                for f in [Distance::Jsd, Distance::Hellinger] {
                    let d = f.eval(matrix.row(x), matrix.row(y));
                    pairwise[slot(f)][x * n + y] = d;
                    pairwise[slot(f)][y * n + x] = d;
                }
            }
        }
        let prefix = [prefix_sums(&pairwise[0], n), prefix_sums(&pairwise[1], n)];

        let mut centroids = vec![0.0; n * n * n];
        for i in 0..n {
            let mut acc = vec![0.0; n];
            for j in i..n {
                for (a, v) in acc.iter_mut().zip(matrix.row(j)) {
                    *a += v;
                }
                let len = (j - i + 1) as f64;
                let off = (i * n + j) * n;
                for (c, a) in centroids[off..off + n].iter_mut().zip(&acc) {
                    *c = a / len;
                }
            }
        }
        HeadScorer { matrix, n, pairwise, prefix, centroids }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distance(&self, f: Distance, x: usize, y: usize) -> f64 {
        self.pairwise[slot(f)][(x - 1) * self.n + (y - 1)]
    }

    pub fn centroid(&self, i: usize, j: usize) -> &[f64] {
        let off = ((i - 1) * self.n + (j - 1)) * self.n;
        &self.centroids[off..off + self.n]
    }

    // sum of pairwise[f] over rows r1..=r2, cols c1..=c2
    fn block_sum(&self, f: Distance, r1: usize, r2: usize, c1: usize, c2: usize) -> f64 {
        let p = &self.prefix[slot(f)];
        let w = self.n + 1;
        (r1..=r2).map(|r| p[(r - 1) * w + c2] - p[(r - 1) * w + (c1 - 1)]).sum()
    }

    /// Mean pairwise distance inside `(i, j)`.
    pub fn pair(&self, f: Distance, i: usize, j: usize) -> f64 {
        let len = j - i + 1;
        let pairs = (len * (len - 1) / 2) as f64;
        // The block covers each unordered pair twice.
        (0.5 * self.block_sum(f, i, j, i, j) / pairs).max(0.0)
    }

    /// Mean distance of the members of `(i, j)` to their centroid.
    pub fn characteristic(&self, f: Distance, i: usize, j: usize) -> f64 {
        let c = self.centroid(i, j);
        let total: f64 = (i..=j).map(|x| f.eval(self.matrix.row(x - 1), c)).sum();
        total / (j - i + 1) as f64
    }

    pub fn comp(&self, f: Distance, comp: Composition, i: usize, j: usize) -> f64 {
        match comp {
            Composition::Pair => self.pair(f, i, j),
            Composition::Characteristic => self.characteristic(f, i, j),
        }
    }

    /// Mean distance over the cross product of `(i, k)` and `(k + 1, j)`.
    pub fn pair_cross(&self, f: Distance, i: usize, k: usize, j: usize) -> f64 {
        let pairs = ((k - i + 1) * (j - k)) as f64;
        (self.block_sum(f, i, k, k + 1, j) / pairs).max(0.0)
    }

    /// Distance between the centroids of `(i, k)` and `(k + 1, j)`.
    pub fn characteristic_cross(&self, f: Distance, i: usize, k: usize, j: usize) -> f64 {
        f.eval(self.centroid(i, k), self.centroid(k + 1, j))
    }

    /// Table of `comp(i, j)` for every span, indexed `(i - 1) * n + (j - 1)`.
    pub fn comp_table(&self, f: Distance, comp: Composition) -> Vec<f64> {
        let n = self.n;
        let mut table = vec![0.0; n * n];
        for i in 1..=n {
            for j in (i + 1)..=n {
                table[(i - 1) * n + (j - 1)] = self.comp(f, comp, i, j);
            }
        }
        table
    }
}

fn prefix_sums(m: &[f64], n: usize) -> Vec<f64> {
    let w = n + 1;
    let mut p = vec![0.0; n * w];
    for r in 0..n {
        for c in 1..=n {
            p[r * w + c] = p[r * w + c - 1] + m[r * n + c - 1];
        }
    }
    p
}
