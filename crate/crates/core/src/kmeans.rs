//! Lloyd's k-means over a chunked row view.
//!
//! Only the centroids, per-chunk accumulators and one `u32` assignment per row
//! are held in memory; rows are read straight from the view on every pass.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::ChunkExecutor;
use crate::matrix::{ChunkPlan, MatrixView};
use crate::prng::SplitMix64;
use crate::vecops::{add_assign, sq_dist};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_ITERATIONS: usize = 10;
/// Relative inertia change used by the optional early stop.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KmeansInit {
    /// `k` distinct rows sampled uniformly without replacement.
    #[default]
    Uniform,
    /// D^2-weighted seeding.
    PlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansOptions {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    pub init: KmeansInit,
    /// Stop early once `(prev - cur) <= tolerance * prev`. `None` runs every
    /// iteration.
    pub tolerance: Option<f64>,
    pub plan: ChunkPlan,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            init: KmeansInit::Uniform,
            tolerance: None,
            plan: ChunkPlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansModel {
    /// `k * cols`, row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub cols: usize,
    pub assignments: Vec<u32>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment pass, including the final one.
    pub trace: Vec<f64>,
    pub seed: u64,
    /// Update steps actually performed.
    pub rounds: usize,
}

impl KmeansModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.cols..(c + 1) * self.cols]
    }
}

/// Row indices chosen by a partial Fisher-Yates shuffle of `0..rows`.
///
/// Step `t` swaps position `t` with `t + floor(u * (rows - t))`. The
/// permutation is kept sparse, so memory is `O(k)` however many rows there are.
pub fn init_indices(rows: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidOption("k must be at least 1"));
    }
    if k > rows {
        return Err(Error::TooManyClusters { k, rows });
    }
    let mut rng = SplitMix64::new(seed);
    let mut moved: BTreeMap<usize, usize> = BTreeMap::new();
    let mut picked = Vec::with_capacity(k);
    for t in 0..k {
        let remaining = rows - t;
        let offset = ((rng.next_f64() * remaining as f64) as usize).min(remaining - 1);
        let r = t + offset;
        let at_t = *moved.get(&t).unwrap_or(&t);
        let at_r = *moved.get(&r).unwrap_or(&r);
        moved.insert(r, at_t);
        moved.insert(t, at_r);
        picked.push(at_r);
    }
    Ok(picked)
}

fn copy_rows(data: MatrixView<'_>, indices: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * data.cols());
    for &i in indices {
        out.extend_from_slice(data.row(i));
    }
    out
}

/// Centroids copied from the rows picked by [`init_indices`].
pub fn kmeans_init(data: MatrixView<'_>, k: usize, seed: u64) -> Result<Vec<f64>> {
    let indices = init_indices(data.rows(), k, seed)?;
    Ok(copy_rows(data, &indices))
}

/// k-means++ seeding: each further centroid is a row drawn with probability
/// proportional to its squared distance from the nearest chosen centroid.
pub fn kmeans_plusplus_init<E: ChunkExecutor>(
    data: MatrixView<'_>,
    k: usize,
    seed: u64,
    plan: ChunkPlan,
    exec: &E,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidOption("k must be at least 1"));
    }
    let rows = data.rows();
    if k > rows {
        return Err(Error::TooManyClusters { k, rows });
    }
    let mut rng = SplitMix64::new(seed);
    let first = ((rng.next_f64() * rows as f64) as usize).min(rows - 1);
    let mut chosen = vec![first];
    let mut nearest = vec![f64::INFINITY; rows];

    while chosen.len() < k {
        let newest = data.row(*chosen.last().unwrap());
        let parts = exec.map_chunks(plan.count(rows), |i| {
            let (_, block) = data.chunk(plan, i);
            block.iter_rows().map(|x| sq_dist(x, newest)).collect::<Vec<f64>>()
        });
        let mut total = 0.0;
        for (n, d) in nearest.iter_mut().zip(parts.iter().flatten()) {
            *n = n.min(*d);
            total += *n;
        }
        let next = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // All rows coincide with chosen centroids; fall back to unused rows.
            (0..rows).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
    }
    Ok(copy_rows(data, &chosen))
}

fn check_centroids(data: MatrixView<'_>, centroids: &[f64]) -> Result<usize> {
    let cols = data.cols();
    if centroids.is_empty() || !centroids.len().is_multiple_of(cols) {
        return Err(Error::Shape("centroid buffer is not k * cols"));
    }
    Ok(centroids.len() / cols)
}

#[inline]
fn nearest(x: &[f64], centroids: &[f64], cols: usize) -> (u32, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.chunks_exact(cols).enumerate() {
        let d = sq_dist(x, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best as u32, best_d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub assignments: Vec<u32>,
    pub inertia: f64,
}

/// Per-cluster coordinate sums and row counts.
#[derive(Debug, Clone, PartialEq)]
struct ClusterSums {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl ClusterSums {
    fn new(k: usize, cols: usize) -> Self {
        Self { sums: vec![0.0; k * cols], counts: vec![0; k] }
    }

    fn add(&mut self, cluster: usize, x: &[f64]) {
        let cols = x.len();
        add_assign(&mut self.sums[cluster * cols..(cluster + 1) * cols], x);
        self.counts[cluster] += 1;
    }

    fn merge(&mut self, other: &ClusterSums) {
        add_assign(&mut self.sums, &other.sums);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// One pass: nearest-centroid assignment, inertia, and the cluster sums the
/// next update needs. Chunk results merge in ascending chunk order.
fn assign_pass<E: ChunkExecutor>(
    data: MatrixView<'_>,
    centroids: &[f64],
    k: usize,
    plan: ChunkPlan,
    exec: &E,
) -> (Assignment, ClusterSums) {
    let cols = data.cols();
    let parts = exec.map_chunks(plan.count(data.rows()), |i| {
        let (_, block) = data.chunk(plan, i);
        let mut labels = Vec::with_capacity(block.rows());
        let mut sums = ClusterSums::new(k, cols);
        let mut inertia = 0.0;
        for x in block.iter_rows() {
            let (c, d) = nearest(x, centroids, cols);
            labels.push(c);
            sums.add(c as usize, x);
            inertia += d;
        }
        (labels, sums, inertia)
    });

    let mut assignments = Vec::with_capacity(data.rows());
    let mut total = ClusterSums::new(k, cols);
    let mut inertia = 0.0;
    for (labels, sums, part) in &parts {
        assignments.extend_from_slice(labels);
        total.merge(sums);
        inertia += part;
    }
    (Assignment { assignments, inertia }, total)
}

/// Assigns every row to its nearest centroid (ties to the smaller index).
pub fn assign<E: ChunkExecutor>(
    data: MatrixView<'_>,
    centroids: &[f64],
    plan: ChunkPlan,
    exec: &E,
) -> Result<Assignment> {
    let k = check_centroids(data, centroids)?;
    Ok(assign_pass(data, centroids, k, plan, exec).0)
}

fn sums_for<E: ChunkExecutor>(
    data: MatrixView<'_>,
    assignments: &[u32],
    k: usize,
    plan: ChunkPlan,
    exec: &E,
) -> ClusterSums {
    let cols = data.cols();
    let parts = exec.map_chunks(plan.count(data.rows()), |i| {
        let (offset, block) = data.chunk(plan, i);
        let mut sums = ClusterSums::new(k, cols);
        for (x, &a) in block.iter_rows().zip(&assignments[offset..]) {
            sums.add(a as usize, x);
        }
        sums
    });
    let mut total = ClusterSums::new(k, cols);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Orders candidates farthest first, then by row index.
#[inline]
fn farther(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn push_top(top: &mut Vec<(f64, usize)>, cand: (f64, usize), n: usize) {
    let pos = top.iter().position(|&t| farther(cand, t)).unwrap_or(top.len());
    if pos < n {
        top.insert(pos, cand);
        top.truncate(n);
    }
}

/// The `n` rows farthest from their assigned centroid in `previous`.
fn farthest_rows<E: ChunkExecutor>(
    data: MatrixView<'_>,
    assignments: &[u32],
    previous: &[f64],
    n: usize,
    plan: ChunkPlan,
    exec: &E,
) -> Vec<usize> {
    let cols = data.cols();
    let parts = exec.map_chunks(plan.count(data.rows()), |i| {
        let (offset, block) = data.chunk(plan, i);
        let mut top = Vec::with_capacity(n + 1);
        for (r, x) in block.iter_rows().enumerate() {
            let a = assignments[offset + r] as usize;
            let d = sq_dist(x, &previous[a * cols..(a + 1) * cols]);
            push_top(&mut top, (d, offset + r), n);
        }
        top
    });
    let mut top = Vec::with_capacity(n + 1);
    for cand in parts.into_iter().flatten() {
        push_top(&mut top, cand, n);
    }
    top.into_iter().map(|(_, i)| i).collect()
}

/// Means of non-empty clusters; empty clusters take the farthest rows, in
/// ascending cluster order.
fn finish_update<E: ChunkExecutor>(
    data: MatrixView<'_>,
    assignments: &[u32],
    sums: &ClusterSums,
    previous: &[f64],
    plan: ChunkPlan,
    exec: &E,
) -> Vec<f64> {
    let cols = data.cols();
    let mut centroids = previous.to_vec();
    let mut empty = Vec::new();
    for (c, &count) in sums.counts.iter().enumerate() {
        if count == 0 {
            empty.push(c);
            continue;
        }
        let n = count as f64;
        for (dst, s) in centroids[c * cols..(c + 1) * cols].iter_mut().zip(&sums.sums[c * cols..]) {
            *dst = s / n;
        }
    }
    if !empty.is_empty() {
        let rows = farthest_rows(data, assignments, previous, empty.len(), plan, exec);
        for (c, r) in empty.into_iter().zip(rows) {
            centroids[c * cols..(c + 1) * cols].copy_from_slice(data.row(r));
        }
    }
    centroids
}

/// Lloyd update step from an assignment.
pub fn update<E: ChunkExecutor>(
    data: MatrixView<'_>,
    assignments: &[u32],
    k: usize,
    previous: &[f64],
    plan: ChunkPlan,
    exec: &E,
) -> Result<Vec<f64>> {
    if check_centroids(data, previous)? != k {
        return Err(Error::Shape("previous centroids do not hold k rows"));
    }
    if assignments.len() != data.rows() {
        return Err(Error::Shape("assignment count differs from row count"));
    }
    if assignments.iter().any(|&a| a as usize >= k) {
        return Err(Error::Shape("assignment refers to a cluster >= k"));
    }
    let sums = sums_for(data, assignments, k, plan, exec);
    Ok(finish_update(data, assignments, &sums, previous, plan, exec))
}

/// Initializes, runs `iterations` assign/update rounds, then assigns once more
/// so the reported inertia matches the final centroids.
pub fn kmeans_train<E: ChunkExecutor>(
    data: MatrixView<'_>,
    opts: &KmeansOptions,
    exec: &E,
) -> Result<KmeansModel> {
    if opts.iterations == 0 {
        return Err(Error::InvalidOption("iterations must be at least 1"));
    }
    if data.rows() > u32::MAX as usize {
        return Err(Error::Shape("row count exceeds u32 assignment range"));
    }
    let k = opts.k;
    let plan = opts.plan;
    let mut centroids = match opts.init {
        KmeansInit::Uniform => kmeans_init(data, k, opts.seed)?,
        KmeansInit::PlusPlus => kmeans_plusplus_init(data, k, opts.seed, plan, exec)?,
    };

    let mut trace = Vec::with_capacity(opts.iterations + 1);
    let mut rounds = 0;
    let mut converged = None;
    for _ in 0..opts.iterations {
        let (current, sums) = assign_pass(data, &centroids, k, plan, exec);
        trace.push(current.inertia);
        if let (Some(tol), [.., prev, cur]) = (opts.tolerance, trace.as_slice()) {
            if prev - cur <= tol * prev {
                converged = Some(current);
                break;
            }
        }
        centroids = finish_update(data, &current.assignments, &sums, &centroids, plan, exec);
        rounds += 1;
    }
    let last = match converged {
        Some(a) => a,
        None => {
            let (a, _) = assign_pass(data, &centroids, k, plan, exec);
            trace.push(a.inertia);
            a
        }
    };

    Ok(KmeansModel {
        centroids,
        k,
        cols: data.cols(),
        assignments: last.assignments,
        inertia: last.inertia,
        trace,
        seed: opts.seed,
        rounds,
    })
}
