//! Balanced kd-tree over deposited photons with phase-selective KNN queries.
//!
//! The tree is implicit: the node covering slots `[lo, hi)` is the median
//! slot `(lo + hi) / 2`, split along the longest axis of the range's bounds.
//! All phases share one tree and queries filter by tag, so memory stays
//! proportional to the photon count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::math::Vec3;
use crate::photon::{PhaseSet, Photon};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnQuery {
    pub position: Vec3,
    /// Tag of the phase to match exactly.
    pub phase: u8,
    pub k: usize,
    pub r_max: f64,
}

impl KnnQuery {
    pub fn new(position: Vec3, phase: u8, k: usize, r_max: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("KNN query needs k >= 1"));
        }
        if !(r_max > 0.0) {
            return Err(Error::input(format!("KNN radius {r_max} must be > 0")));
        }
        if !position.is_finite() {
            return Err(Error::input("KNN query position must be finite"));
        }
        Ok(KnnQuery {
            position,
            phase,
            k,
            r_max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index of the photon in the order it was given to [`PhotonMap::build`].
    pub id: u32,
    pub distance: f64,
}

/// Squared distance in the exact operation order used by the tree.
#[inline]
pub fn distance_squared(a: [f64; 3], b: Vec3) -> f64 {
    let dx = a[0] - b.x;
    let dy = a[1] - b.y;
    let dz = a[2] - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    id: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Reusable buffers for repeated queries on one thread.
#[derive(Default)]
pub struct KnnScratch {
    heap: BinaryHeap<Candidate>,
    stack: Vec<(u32, u32, f64)>,
}

#[derive(Debug, Clone)]
pub struct PhotonMap {
    photons: Vec<Photon>,
    phase_set: PhaseSet,
    order: Vec<u32>,
    points: Vec<[f64; 3]>,
    tags: Vec<u8>,
    axes: Vec<u8>,
}

const PARALLEL_BUILD_MIN: usize = 1 << 15;

impl PhotonMap {
    pub fn build(photons: Vec<Photon>, phase_set: PhaseSet) -> Self {
        assert!(
            photons.len() < u32::MAX as usize,
            "photon count exceeds u32 ids"
        );
        let n = photons.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut axes = vec![0u8; n];
        let positions: Vec<[f64; 3]> = photons.iter().map(|p| p.position().to_array()).collect();
        build_range(&positions, &mut order, &mut axes);
        let points = order.iter().map(|&i| positions[i as usize]).collect();
        let tags = order.iter().map(|&i| photons[i as usize].phase).collect();
        PhotonMap {
            photons,
            phase_set,
            order,
            points,
            tags,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.photons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photons.is_empty()
    }

    pub fn photons(&self) -> &[Photon] {
        &self.photons
    }

    pub fn photon(&self, id: u32) -> &Photon {
        &self.photons[id as usize]
    }

    pub fn phase_set(&self) -> &PhaseSet {
        &self.phase_set
    }

    /// Photon ids in tree (in-order) slot order.
    pub fn tree_order(&self) -> &[u32] {
        &self.order
    }

    /// Exactly the `min(k, m)` nearest photons with the query's tag within
    /// `r_max`, ascending by distance with ties broken by id.
    pub fn knn_phase(&self, q: &KnnQuery) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.knn_into(q, &mut KnnScratch::default(), &mut out);
        out
    }

    /// Like [`knn_phase`](Self::knn_phase) but for a coefficient value;
    /// coefficients outside the map's phase set yield no neighbors.
    pub fn knn_phase_value(
        &self,
        position: Vec3,
        g: f64,
        k: usize,
        r_max: f64,
    ) -> Result<Vec<Neighbor>> {
        match self.phase_set.index_of(g) {
            Some(tag) => Ok(self.knn_phase(&KnnQuery::new(position, tag, k, r_max)?)),
            None => Ok(Vec::new()),
        }
    }

    /// Query into caller-owned buffers; returns the number of tree nodes visited.
    pub fn knn_into(
        &self,
        q: &KnnQuery,
        scratch: &mut KnnScratch,
        out: &mut Vec<Neighbor>,
    ) -> usize {
        out.clear();
        let heap = &mut scratch.heap;
        let stack = &mut scratch.stack;
        heap.clear();
        stack.clear();
        let n = self.points.len();
        if n == 0 || q.k == 0 {
            return 0;
        }
        let r2 = q.r_max * q.r_max;
        let p = q.position;
        let mut visited = 0;
        stack.push((0, n as u32, 0.0));
        while let Some((lo, hi, min_d2)) = stack.pop() {
            let bound = if heap.len() < q.k {
                r2
            } else {
                heap.peek().unwrap().d2
            };
            if min_d2 > bound {
                continue;
            }
            let (lo, hi) = (lo as usize, hi as usize);
            let mid = (lo + hi) / 2;
            visited += 1;

            if self.tags[mid] == q.phase {
                let d2 = distance_squared(self.points[mid], p);
                if d2 <= r2 {
                    let cand = Candidate {
                        d2,
                        id: self.order[mid],
                    };
                    if heap.len() < q.k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }

            let axis = self.axes[mid] as usize;
            let diff = p[axis] - self.points[mid][axis];
            let plane = diff * diff;
            let left = (lo as u32, mid as u32, 0.0);
            let right = ((mid + 1) as u32, hi as u32, 0.0);
            let (near, far) = if diff < 0.0 {
                (left, right)
            } else {
                (right, left)
            };
            if far.0 < far.1 {
                stack.push((far.0, far.1, plane.max(min_d2)));
            }
            if near.0 < near.1 {
                stack.push((near.0, near.1, min_d2));
            }
        }
        out.extend(heap.drain().map(|c| Neighbor {
            id: c.id,
            distance: c.d2.sqrt(),
        }));
        out.sort_unstable_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        visited
    }
}

fn build_range(positions: &[[f64; 3]], order: &mut [u32], axes: &mut [u8]) {
    let n = order.len();
    if n == 0 {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = positions[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
        0
    } else if extent[1] >= extent[2] {
        1
    } else {
        2
    };
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        positions[a as usize][axis]
            .total_cmp(&positions[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let right = &mut rest[1..];
    let (axes_left, axes_rest) = axes.split_at_mut(mid);
    let axes_right = &mut axes_rest[1..];
    if n >= PARALLEL_BUILD_MIN {
        rayon::join(
            || build_range(positions, left, axes_left),
            || build_range(positions, right, axes_right),
        );
    } else {
        build_range(positions, left, axes_left);
        build_range(positions, right, axes_right);
    }
}
