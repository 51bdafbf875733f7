//! Proximity interaction graph, its Laplacian, and the leader/follower
//! block partition used by the leader-follower protocol.

use std::collections::VecDeque;

use thiserror::Error;

use crate::numerics::{eigenvalues, invert, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("degenerate partition: {followers} followers out of {n} robots")]
    DegeneratePartition { followers: usize, n: usize },
    #[error("robot index {index} out of range for {n} robots")]
    IndexOutOfRange { index: usize, n: usize },
}

/// Undirected 0/1 proximity graph over `n` robots.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    adjacency: Vec<bool>,
    sensor_range: f64,
}

impl Topology {
    /// Edge `i–j` iff the robots are within `sensor_range` of each other.
    pub fn from_positions(positions: &[[f64; 2]], sensor_range: f64) -> Self {
        let n = positions.len();
        let mut adjacency = vec![false; n * n];
        let r2 = sensor_range * sensor_range;
        for i in 0..n {
            for j in i + 1..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                if dx * dx + dy * dy <= r2 {
                    adjacency[i * n + j] = true;
                    adjacency[j * n + i] = true;
                }
            }
        }
        Self {
            n,
            adjacency,
            sensor_range,
        }
    }

    /// Graph from an explicit undirected edge list. Self loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i != j {
                adjacency[i * n + j] = true;
                adjacency[j * n + i] = true;
            }
        }
        Self {
            n,
            adjacency,
            sensor_range: f64::NAN,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sensor_range(&self) -> f64 {
        self.sensor_range
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.adjacent(i, j) {
            1.0
        } else {
            0.0
        }
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adjacent(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.adjacent(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Robots with no neighbors at all.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.degree(i) == 0).collect()
    }

    /// Connected-component label of every robot, labels in order of first
    /// appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for j in self.neighbors(i) {
                    if label[j] == usize::MAX {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.component_count() == 1
    }

    /// Whether every follower reaches some leader along graph edges.
    pub fn follower_has_leader_path(&self, followers: &[usize]) -> bool {
        let is_follower = self.membership(followers);
        if is_follower.iter().all(|&f| f) {
            return false;
        }
        // Multi-source BFS from every leader.
        let mut reached = vec![false; self.n];
        let mut queue = VecDeque::new();
        for i in 0..self.n {
            if !is_follower[i] {
                reached[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        reached.into_iter().all(|r| r)
    }

    /// Whether the leaders, using only leader-to-leader edges, form one
    /// connected group. Vacuously true with at most one leader.
    pub fn leaders_connected(&self, followers: &[usize]) -> bool {
        let is_follower = self.membership(followers);
        let leaders: Vec<usize> = (0..self.n).filter(|&i| !is_follower[i]).collect();
        if leaders.len() <= 1 {
            return true;
        }
        let mut reached = vec![false; self.n];
        reached[leaders[0]] = true;
        let mut queue = VecDeque::from([leaders[0]]);
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !is_follower[j] && !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        leaders.into_iter().all(|l| reached[l])
    }

    fn membership(&self, subset: &[usize]) -> Vec<bool> {
        let mut m = vec![false; self.n];
        for &i in subset {
            if i < self.n {
                m[i] = true;
            }
        }
        m
    }
}

/// `L = D − A`.
pub fn laplacian(t: &Topology) -> Matrix {
    let n = t.n();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if t.adjacent(i, j) {
                l[(i, j)] = -1.0;
                l[(i, i)] += 1.0;
            }
        }
    }
    l
}

/// Laplacian rows for the followers after reordering robots as
/// `[followers…, leaders…]`, each group ascending. Leader rows of the full
/// reordered Laplacian are zero and are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderFollowerPartition {
    pub followers: Vec<usize>,
    pub leaders: Vec<usize>,
    /// Follower-follower block, `M×M`.
    pub l1: Matrix,
    /// Follower-leader block, `M×(N−M)`.
    pub l2: Matrix,
    /// `permutation[k]` is the original index of reordered position `k`.
    pub permutation: Vec<usize>,
}

pub fn partition(t: &Topology, followers: &[usize]) -> Result<LeaderFollowerPartition, TopologyError> {
    let n = t.n();
    if let Some(&bad) = followers.iter().find(|&&i| i >= n) {
        return Err(TopologyError::IndexOutOfRange { index: bad, n });
    }
    let mut fs = followers.to_vec();
    fs.sort_unstable();
    fs.dedup();
    if fs.is_empty() || fs.len() == n {
        return Err(TopologyError::DegeneratePartition {
            followers: fs.len(),
            n,
        });
    }
    let leaders: Vec<usize> = (0..n).filter(|i| fs.binary_search(i).is_err()).collect();
    let lap = laplacian(t);
    let l1 = lap.select(&fs, &fs);
    let l2 = lap.select(&fs, &leaders);
    let permutation = fs.iter().chain(&leaders).copied().collect();
    Ok(LeaderFollowerPartition {
        followers: fs,
        leaders,
        l1,
        l2,
        permutation,
    })
}

/// Evidence for the three structural properties the leader-follower
/// protocol relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub eigs_ok: bool,
    /// Smallest real part among the eigenvalues of `L1`.
    pub min_real_part: f64,
    pub nonneg_ok: bool,
    /// Smallest entry of `−L1⁻¹L2` (NaN when `L1` is singular).
    pub min_entry: f64,
    pub rowsum_ok: bool,
    /// Largest `|row sum − 1|` of `−L1⁻¹L2` (NaN when `L1` is singular).
    pub max_rowsum_deviation: f64,
}

impl PartitionReport {
    pub fn all_ok(&self) -> bool {
        self.eigs_ok && self.nonneg_ok && self.rowsum_ok
    }
}

/// Tolerance used by [`verify_partition`] for the sign and row-sum checks.
pub const PARTITION_TOL: f64 = 1e-9;

pub fn verify_partition(p: &LeaderFollowerPartition) -> PartitionReport {
    let min_real_part = eigenvalues(&p.l1, 1e-13)
        .map(|e| e.iter().map(|v| v.re).fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN);
    // Eigenvalue real parts below this are treated as zero (singular L1).
    let eigs_ok = min_real_part > 1e-9;
    let (min_entry, max_dev) = match invert(&p.l1) {
        Ok(inv) => {
            let h = (&inv * &p.l2).scale(-1.0);
            let min_entry = h.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let max_dev = (0..h.rows())
                .map(|i| (h.row(i).iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            (min_entry, max_dev)
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    PartitionReport {
        eigs_ok: eigs_ok && min_real_part.is_finite(),
        min_real_part,
        nonneg_ok: min_entry >= -PARTITION_TOL,
        min_entry,
        rowsum_ok: max_dev <= PARTITION_TOL,
        max_rowsum_deviation: max_dev,
    }
}
