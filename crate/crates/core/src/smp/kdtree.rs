//! Insert-only kd-tree over node indices. Splits happen only on the given
//! axes, which must be plain Euclidean components of the metric, so the
//! per-axis gap is always a lower bound on the full distance.

use crate::cspace::Config;

#[derive(Debug, Clone)]
struct KdNode {
    item: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    axes: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn new(axes: Vec<usize>) -> Self {
        assert!(!axes.is_empty());
        Self {
            axes,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts `item`, whose coordinates are `points[item]`.
    pub fn insert(&mut self, item: usize, points: &[Config]) {
        let new_slot = self.nodes.len();
        if self.nodes.is_empty() {
            self.nodes.push(KdNode {
                item,
                axis: self.axes[0],
                left: None,
                right: None,
            });
            return;
        }
        let p = &points[item].coords;
        let mut cur = 0;
        let mut depth = 0;
        loop {
            depth += 1;
            let node = &self.nodes[cur];
            let split = points[node.item].coords[node.axis];
            let go_left = p[node.axis] < split;
            let next = if go_left { node.left } else { node.right };
            match next {
                Some(n) => cur = n,
                None => {
                    let axis = self.axes[depth % self.axes.len()];
                    self.nodes.push(KdNode {
                        item,
                        axis,
                        left: None,
                        right: None,
                    });
                    if go_left {
                        self.nodes[cur].left = Some(new_slot);
                    } else {
                        self.nodes[cur].right = Some(new_slot);
                    }
                    return;
                }
            }
        }
    }

    /// Closest item to `q`; ties go to the lowest item index.
    pub fn nearest(
        &self,
        q: &Config,
        points: &[Config],
        dist: &dyn Fn(&Config, &Config) -> f64,
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        if !self.nodes.is_empty() {
            self.nearest_rec(0, q, points, dist, &mut best);
        }
        best
    }

    fn nearest_rec(
        &self,
        slot: usize,
        q: &Config,
        points: &[Config],
        dist: &dyn Fn(&Config, &Config) -> f64,
        best: &mut Option<(usize, f64)>,
    ) {
        let node = &self.nodes[slot];
        let p = &points[node.item];
        let d = dist(q, p);
        let better = match *best {
            None => true,
            Some((bi, bd)) => d < bd || (d == bd && node.item < bi),
        };
        if better {
            *best = Some((node.item, d));
        }
        let gap = q.coords[node.axis] - p.coords[node.axis];
        let (near, far) = if gap < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.nearest_rec(n, q, points, dist, best);
        }
        if let Some(f) = far {
            // `<=` keeps equal-distance candidates reachable for tie-breaking
            if best.is_none_or(|(_, bd)| gap.abs() <= bd) {
                self.nearest_rec(f, q, points, dist, best);
            }
        }
    }

    /// All items within `radius` of `q`, unsorted.
    pub fn within(
        &self,
        q: &Config,
        radius: f64,
        points: &[Config],
        dist: &dyn Fn(&Config, &Config) -> f64,
        out: &mut Vec<usize>,
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(slot) = stack.pop() {
            let node = &self.nodes[slot];
            let p = &points[node.item];
            if dist(q, p) <= radius {
                out.push(node.item);
            }
            let gap = q.coords[node.axis] - p.coords[node.axis];
            if let Some(l) = node.left {
                if gap < 0.0 || gap.abs() <= radius {
                    stack.push(l);
                }
            }
            if let Some(r) = node.right {
                if gap >= 0.0 || gap.abs() <= radius {
                    stack.push(r);
                }
            }
        }
    }
}
