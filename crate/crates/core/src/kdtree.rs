//! Balanced 3-d tree for exact nearest-neighbour queries over voxel means.

use crate::se3::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Exact nearest-neighbour index. Ties are broken toward the smaller point index.
#[derive(Debug, Clone, Default)]
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl NeighborIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build_node(&points, &mut order, 0, &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point within `max_dist` (inclusive), if any.
    pub fn nearest_within(&self, query: &Vec3, max_dist: f64) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = Best {
            dist_sq: max_dist * max_dist,
            index: None,
        };
        self.search(0, &[query.x, query.y, query.z], &mut best);
        best.index.map(|i| Neighbor {
            index: i as usize,
            dist_sq: best.dist_sq,
        })
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        self.nearest_within(query, f64::INFINITY)
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut Best) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    let p = &self.points[idx as usize];
                    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
                    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                    best.offer(idx, d2);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, q, best);
                if diff * diff <= best.dist_sq {
                    self.search(far as usize, q, best);
                }
            }
        }
    }
}

struct Best {
    dist_sq: f64,
    index: Option<u32>,
}

impl Best {
    #[inline]
    fn offer(&mut self, idx: u32, d2: f64) {
        if d2 < self.dist_sq || (d2 == self.dist_sq && self.index.is_none_or(|b| idx < b)) {
            self.dist_sq = d2;
            self.index = Some(idx);
        }
    }
}

fn build_node(points: &[[f64; 3]], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + order.len()) as u32,
        });
        return id;
    }
    let axis = widest_axis(points, order);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, lo, offset, nodes);
    let right = build_node(points, hi, offset + mid, nodes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}

fn widest_axis(points: &[[f64; 3]], order: &[u32]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap()
}
