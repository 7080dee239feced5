//! Static 3-d tree for nearest-neighbour queries.

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // implicit balanced layout: the median of each subrange is its node
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut order, &mut axes, 0);
        Self {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    pub fn nearest_distance(&self, q: &[f64; 3]) -> f64 {
        self.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }

    /// Indices of all points within `radius` of `q`.
    pub fn within(&self, q: &[f64; 3], radius: f64, out: &mut Vec<usize>) {
        out.clear();
        self.collect(q, radius * radius, 0, self.order.len(), out);
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = dist2(p, q);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }

    fn collect(&self, q: &[f64; 3], r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        if dist2(p, q) <= r2 {
            out.push(idx);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.collect(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.collect(q, r2, mid + 1, hi, out);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], axes: &mut [u8], _depth: usize) {
    if order.len() <= 1 {
        return;
    }
    // split along the widest extent
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (axl, axr) = axes.split_at_mut(mid);
    build(points, left, axl, _depth + 1);
    build(points, &mut right[1..], &mut axr[1..], _depth + 1);
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
