//! Exact nearest-neighbor k-d tree over fixed-dimension points.

/// Squared Euclidean distance, accumulated in dimension order. Both the tree
/// and any brute-force comparison must use this exact routine to agree
/// bit-for-bit.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<Vec<f64>>,
    root: Node,
}

impl KdTree {
    /// Builds over `points`, which must all have the same non-zero length.
    pub fn build(points: Vec<Vec<f64>>) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        assert!(points.iter().all(|p| p.len() == dim), "ragged point set");
        let mut points = points;
        let n = points.len();
        let root = build_node(&mut points, 0, n, dim);
        Self { dim, points, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Index (into [`KdTree::points`]) and squared distance of the nearest
    /// point, or `None` for an empty tree.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        assert_eq!(query.len(), self.dim, "query dimension");
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(&self.root, query, &mut best);
        Some(best)
    }

    fn search(&self, node: &Node, q: &[f64], best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for i in *start..*end {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // every point beyond the plane is at least diff² away, and
                // rounding is monotone, so this bound also holds in floats
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(points: &mut [Vec<f64>], start: usize, end: usize, dim: usize) -> Node {
    if end - start <= LEAF_SIZE || dim == 0 {
        return Node::Leaf { start, end };
    }
    let slice = &mut points[start..end];
    let split_dim = (0..dim)
        .max_by(|&a, &b| spread(slice, a).total_cmp(&spread(slice, b)))
        .unwrap();
    if spread(slice, split_dim) == 0.0 {
        return Node::Leaf { start, end };
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a[split_dim].total_cmp(&b[split_dim]));
    let value = slice[mid][split_dim];
    // left holds coordinates <= value, right holds >= value
    let left = build_node(points, start, start + mid, dim);
    let right = build_node(points, start + mid, end, dim);
    Node::Split {
        dim: split_dim,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn spread(points: &[Vec<f64>], d: usize) -> f64 {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[d]), hi.max(p[d]))
        });
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec<f64>], q: &[f64]) -> f64 {
        points
            .iter()
            .map(|p| dist2(q, p))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn matches_brute_force_with_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                (0..5)
                    .map(|_| (rng.random_range(0..4) as f64) * 0.5)
                    .collect()
            })
            .collect();
        pts.extend(pts.clone());
        let tree = KdTree::build(pts.clone());
        for _ in 0..2000 {
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..3.0)).collect();
            assert_eq!(tree.nearest(&q).unwrap().1, brute(&pts, &q));
        }
    }

    #[test]
    fn single_point_and_empty() {
        let tree = KdTree::build(vec![vec![1.0, 2.0]]);
        assert_eq!(tree.nearest(&[4.0, 6.0]).unwrap(), (0, 25.0));
        assert!(KdTree::build(Vec::new()).nearest(&[]).is_none());
    }
}
