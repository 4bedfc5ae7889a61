//! Cluster dataset construction: exact cosine kNN proposals, similarity
//! encodings, token fusion, and union-find assembly of final clusters.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::qtransformer::TokenSequence;

/// Feature matrix (`N × D`, one row per sample) with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Array2<f64>,
    labels: Option<Vec<u32>>,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::contract("feature set must be non-empty"));
        }
        if let Some(l) = &labels {
            if l.len() != features.nrows() {
                return Err(Error::contract(format!(
                    "{} labels for {} samples",
                    l.len(),
                    features.nrows()
                )));
            }
        }
        for (i, row) in features.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "sample {i} has non-finite features"
                )));
            }
            if row.dot(&row) == 0.0 {
                return Err(Error::Degenerate(format!("sample {i} has zero norm")));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::contract(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Rows scaled to unit length.
    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.features.clone();
        for mut row in out.outer_iter_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        out
    }
}

/// A center sample with its `k` nearest neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInstance {
    pub center: usize,
    /// Sample indices, center first, then by descending similarity.
    pub members: Vec<usize>,
    /// Cosine similarity of each member to the center.
    pub sims: Vec<f64>,
    /// `mask[h]` is true iff member `h` shares the center's label.
    pub mask: Option<Vec<bool>>,
}

impl ClusterInstance {
    pub fn k(&self) -> usize {
        self.members.len()
    }
}

/// Exact cosine kNN proposal around every sample. The center is always
/// ranked first; other members follow by descending similarity, ties broken
/// by ascending sample index.
pub fn knn_clusters(features: &FeatureSet, k: usize) -> Result<Vec<ClusterInstance>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::contract(format!("k = {k} must lie in 1..={n}")));
    }
    let unit = features.normalized();
    let build = |i: usize| -> ClusterInstance {
        let center = unit.row(i);
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (center.dot(&unit.row(j)), j))
            .collect();
        // descending similarity, then ascending index
        others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut members = Vec::with_capacity(k);
        let mut sims = Vec::with_capacity(k);
        members.push(i);
        sims.push(center.dot(&center));
        for &(s, j) in others.iter().take(k - 1) {
            members.push(j);
            sims.push(s);
        }
        let mask = features
            .labels()
            .map(|l| members.iter().map(|&m| l[m] == l[i]).collect());
        ClusterInstance {
            center: i,
            members,
            sims,
            mask,
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok((0..n).into_par_iter().map(build).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((0..n).map(build).collect())
    }
}

/// How similarity information is attached to the tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    /// Every token gets the same `e·W_e` bias, `e` the full similarity vector.
    Shared,
    /// Token `h` gets `sims[h]·W_e[h, ·]`.
    #[default]
    PerPosition,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Shared => "shared",
            FusionMode::PerPosition => "per-position",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(FusionMode::Shared),
            "per-position" | "per_position" => Ok(FusionMode::PerPosition),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Similarity encoding of a cluster: `k × k` (every row the full similarity
/// vector) in shared mode, `k × 1` (row `h` is `sims[h]`) in per-position mode.
pub fn similarity_encoding(c: &ClusterInstance, mode: FusionMode) -> Array2<f64> {
    let k = c.k();
    match mode {
        FusionMode::Shared => Array2::from_shape_fn((k, k), |(_, j)| c.sims[j]),
        FusionMode::PerPosition => Array2::from_shape_fn((k, 1), |(h, _)| c.sims[h]),
    }
}

/// Token matrix `s^(h) = f^(h) + e^(h)·W_e` of a cluster.
pub fn fuse_tokens(
    c: &ClusterInstance,
    features: &FeatureSet,
    w_e: &Array2<f64>,
    mode: FusionMode,
) -> Result<TokenSequence> {
    let (k, d) = (c.k(), features.dim());
    if w_e.dim() != (k, d) {
        return Err(Error::contract(format!(
            "W_e must be {k}×{d}, got {:?}",
            w_e.dim()
        )));
    }
    let mut s = Array2::zeros((k, d));
    for (h, &m) in c.members.iter().enumerate() {
        if m >= features.len() {
            return Err(Error::Index(format!(
                "member {m} beyond {} samples",
                features.len()
            )));
        }
        s.row_mut(h).assign(&features.row(m));
    }
    match mode {
        FusionMode::Shared => {
            let sims = ndarray::ArrayView1::from(&c.sims);
            let bias = sims.dot(w_e);
            for mut row in s.outer_iter_mut() {
                row += &bias;
            }
        }
        FusionMode::PerPosition => {
            for (h, mut row) in s.outer_iter_mut().enumerate() {
                row.scaled_add(c.sims[h], &w_e.row(h));
            }
        }
    }
    Ok(s)
}

/// Gradient of a loss with respect to `W_e` given its gradient `ds` with
/// respect to the fused tokens.
pub fn fuse_tokens_backward(
    c: &ClusterInstance,
    mode: FusionMode,
    ds: &TokenSequence,
) -> Array2<f64> {
    let (k, d) = ds.dim();
    let mut dw = Array2::zeros((k, d));
    match mode {
        FusionMode::Shared => {
            let col_sum = ds.sum_axis(ndarray::Axis(0));
            for (j, mut row) in dw.outer_iter_mut().enumerate() {
                row.scaled_add(c.sims[j], &col_sum);
            }
        }
        FusionMode::PerPosition => {
            for (h, mut row) in dw.outer_iter_mut().enumerate() {
                row.scaled_add(c.sims[h], &ds.row(h));
            }
        }
    }
    dw
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }

    /// Component ids numbered `0, 1, …` in order of first appearance.
    pub fn labels(&mut self) -> Vec<u32> {
        let n = self.parent.len();
        let mut id_of_root = vec![u32::MAX; n];
        let mut next = 0;
        (0..n)
            .map(|i| {
                let r = self.find(i);
                if id_of_root[r] == u32::MAX {
                    id_of_root[r] = next;
                    next += 1;
                }
                id_of_root[r]
            })
            .collect()
    }
}

/// Keeps members scoring `≥ tau` (centers always), links each kept member to
/// its center and returns connected-component labels over `n_samples`.
pub fn prune_and_link(
    n_samples: usize,
    clusters: &[ClusterInstance],
    predictions: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<u32>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau = {tau} must lie in (0, 1)")));
    }
    if clusters.len() != predictions.len() {
        return Err(Error::contract(format!(
            "{} clusters but {} prediction vectors",
            clusters.len(),
            predictions.len()
        )));
    }
    let mut uf = UnionFind::new(n_samples);
    for (c, y) in clusters.iter().zip(predictions) {
        if y.len() != c.k() {
            return Err(Error::contract(format!(
                "cluster {} has {} members but {} predictions",
                c.center,
                c.k(),
                y.len()
            )));
        }
        for (&m, &score) in c.members.iter().zip(y) {
            if m >= n_samples || c.center >= n_samples {
                return Err(Error::Index(format!("sample {m} beyond {n_samples}")));
            }
            if m != c.center && score >= tau {
                uf.union(c.center, m);
            }
        }
    }
    Ok(uf.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fs(rows: Array2<f64>, labels: Option<Vec<u32>>) -> FeatureSet {
        FeatureSet::new(rows, labels).unwrap()
    }

    #[test]
    fn rejects_zero_rows_and_bad_k() {
        assert!(matches!(
            FeatureSet::new(array![[1.0, 0.0], [0.0, 0.0]], None),
            Err(Error::Degenerate(_))
        ));
        let f = fs(array![[1.0, 0.0], [0.0, 1.0]], None);
        assert!(matches!(knn_clusters(&f, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn n_equals_k_takes_everything() {
        let f = fs(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], None);
        for c in knn_clusters(&f, 3).unwrap() {
            let mut m = c.members.clone();
            m.sort();
            assert_eq!(m, vec![0, 1, 2]);
            assert_eq!(c.members[0], c.center);
        }
    }

    #[test]
    fn orthonormal_k1() {
        let f = fs(Array2::eye(4), None);
        for (i, c) in knn_clusters(&f, 1).unwrap().iter().enumerate() {
            assert_eq!(c.members, vec![i]);
            assert_eq!(c.sims, vec![1.0]);
        }
    }

    #[test]
    fn circle_points() {
        let deg = |a: f64| a.to_radians();
        let rows = array![
            [1.0, 0.0],
            [deg(10.0).cos(), deg(10.0).sin()],
            [deg(90.0).cos(), deg(90.0).sin()]
        ];
        let cl = knn_clusters(&fs(rows, None), 2).unwrap();
        assert_eq!(cl[0].members, vec![0, 1]);
        assert!((cl[0].sims[0] - 1.0).abs() < 1e-12);
        assert!((cl[0].sims[1] - 0.984_807_753_012_208).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_index() {
        let f = fs(array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], None);
        let cl = knn_clusters(&f, 3).unwrap();
        assert_eq!(cl[2].members, vec![2, 0, 1]);
        assert_eq!(cl[3].members, vec![3, 0, 1]);
    }

    #[test]
    fn masks_follow_labels() {
        let f = fs(
            array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]],
            Some(vec![7, 7, 3, 7]),
        );
        let cl = knn_clusters(&f, 2).unwrap();
        for c in &cl {
            assert!(c.mask.as_ref().unwrap()[0]);
        }
        assert_eq!(cl[2].members, vec![2, 3]);
        assert_eq!(cl[2].mask.as_deref(), Some(&[true, false][..]));
    }

    fn sample_instance() -> (FeatureSet, ClusterInstance) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let f = fs(rows, None);
        let c = knn_clusters(&f, 4).unwrap().remove(2);
        (f, c)
    }

    #[test]
    fn similarity_encoding_modes() {
        let single = ClusterInstance {
            center: 0,
            members: vec![0],
            sims: vec![1.0],
            mask: None,
        };
        assert_eq!(
            similarity_encoding(&single, FusionMode::Shared),
            array![[1.0]]
        );
        assert_eq!(
            similarity_encoding(&single, FusionMode::PerPosition),
            array![[1.0]]
        );

        let (f, c) = sample_instance();
        let shared = similarity_encoding(&c, FusionMode::Shared);
        for row in shared.outer_iter() {
            assert_eq!(row, shared.row(0));
        }
        let per = similarity_encoding(&c, FusionMode::PerPosition);
        let center = f.row(c.center);
        for (h, &m) in c.members.iter().enumerate() {
            let other = f.row(m);
            let cos = center.dot(&other) / (center.dot(&center).sqrt() * other.dot(&other).sqrt());
            assert!((per[[h, 0]] - cos).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_examples() {
        let (f, c) = sample_instance();
        let zero = Array2::zeros((4, 3));
        let s = fuse_tokens(&c, &f, &zero, FusionMode::PerPosition).unwrap();
        for (h, &m) in c.members.iter().enumerate() {
            assert_eq!(s.row(h), f.row(m));
        }

        let ones = ClusterInstance {
            sims: vec![1.0; 3],
            members: vec![0, 1, 2],
            ..c.clone()
        };
        let beta = 0.25;
        let w = Array2::from_shape_fn((3, 3), |(r, col)| if r == col { beta } else { 0.0 });
        let s = fuse_tokens(&ones, &f, &w, FusionMode::PerPosition).unwrap();
        for h in 0..3 {
            for d in 0..3 {
                let shift = if h == d { beta } else { 0.0 };
                assert!((s[[h, d]] - f.row(h)[d] - shift).abs() < 1e-15);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let a = fuse_tokens(&c, &f, &w, FusionMode::Shared).unwrap();
        let b = fuse_tokens(&c, &f, &w, FusionMode::PerPosition).unwrap();
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-6));

        assert!(matches!(
            fuse_tokens(&c, &f, &Array2::zeros((3, 3)), FusionMode::Shared),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fusion_backward_matches_finite_differences() {
        let (f, c) = sample_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        for mode in [FusionMode::Shared, FusionMode::PerPosition] {
            let dw = fuse_tokens_backward(&c, mode, &probe);
            // objective is linear in W_e, so differences are exact up to rounding
            let base = (&fuse_tokens(&c, &f, &w, mode).unwrap() * &probe).sum();
            for idx in [(0, 0), (1, 2), (3, 1)] {
                let mut wp = w.clone();
                wp[idx] += 1.0;
                let up = (&fuse_tokens(&c, &f, &wp, mode).unwrap() * &probe).sum();
                assert!((up - base - dw[idx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prune_and_link_examples() {
        let f = fs(
            array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]],
            Some(vec![0, 0, 1, 1]),
        );
        let cl = knn_clusters(&f, 4).unwrap();
        let all = vec![vec![1.0; 4]; 4];
        assert_eq!(prune_and_link(4, &cl, &all, 0.5).unwrap(), vec![0, 0, 0, 0]);

        let none: Vec<Vec<f64>> = cl.iter().map(|_| vec![0.0; 4]).collect();
        assert_eq!(
            prune_and_link(4, &cl, &none, 0.5).unwrap(),
            vec![0, 1, 2, 3]
        );

        let perfect: Vec<Vec<f64>> = cl
            .iter()
            .map(|c| {
                c.mask
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|&m| m as u8 as f64)
                    .collect()
            })
            .collect();
        let labels = prune_and_link(4, &cl, &perfect, 0.5).unwrap();
        assert_eq!(labels, vec![0, 0, 1, 1]);

        assert!(matches!(
            prune_and_link(4, &cl, &all, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            prune_and_link(4, &cl, &all[..2], 0.5),
            Err(Error::Contract(_))
        ));
    }
}
