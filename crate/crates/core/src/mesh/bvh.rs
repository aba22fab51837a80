//! Bounding-volume hierarchy for nearest-triangle queries on a static mesh.

use crate::math::Vec3;

use super::closest_point_on_triangle;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: u32, end: u32 },
    Inner { bounds: Aabb, left: u32, right: u32 },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

/// Result of a nearest-triangle query.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hit {
    pub triangle: usize,
    pub dist2: f64,
    pub barycentric: [f64; 3],
}

impl Hit {
    /// Lexicographic `(distance², triangle index)` ordering.
    #[inline]
    pub fn better_than(&self, other: &Hit) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.triangle < other.triangle)
    }
}

impl Bvh {
    pub fn build(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let tri_bounds: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &v in f {
                    b.grow(&vertices[v as usize]);
                }
                b
            })
            .collect();
        let centroids: Vec<Vec3> = tri_bounds.iter().map(|b| (b.lo + b.hi) * 0.5).collect();
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * faces.len() / LEAF_SIZE + 1);
        if !faces.is_empty() {
            build_node(&mut nodes, &mut order, 0, faces.len(), &tri_bounds, &centroids);
        }
        Self { nodes, order }
    }

    pub fn nearest(&self, vertices: &[Vec3], faces: &[[u32; 3]], p: &Vec3) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Hit> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if let Some(b) = &best {
                // Equal distance must still be visited: a lower index may tie.
                if node.bounds().dist2(p) > b.dist2 {
                    continue;
                }
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start as usize..end as usize] {
                        let f = faces[t as usize];
                        let (q, bary) = closest_point_on_triangle(
                            p,
                            &vertices[f[0] as usize],
                            &vertices[f[1] as usize],
                            &vertices[f[2] as usize],
                        );
                        let hit = Hit {
                            triangle: t as usize,
                            dist2: (q - p).norm_squared(),
                            barycentric: bary,
                        };
                        if best.as_ref().map_or(true, |b| hit.better_than(b)) {
                            best = Some(hit);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left as usize].bounds().dist2(p);
                    let dr = self.nodes[right as usize].bounds().dist2(p);
                    // Push the farther child first so the nearer one is searched first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    start: usize,
    end: usize,
    tri_bounds: &[Aabb],
    centroids: &[Vec3],
) -> u32 {
    let mut bounds = Aabb::empty();
    let mut cb = Aabb::empty();
    for &t in &order[start..end] {
        bounds.merge(&tri_bounds[t as usize]);
        cb.grow(&centroids[t as usize]);
    }
    let id = nodes.len() as u32;
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            bounds,
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let extent = cb.hi - cb.lo;
    let axis = extent.imax();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf {
        bounds,
        start: 0,
        end: 0,
    });
    let left = build_node(nodes, order, start, mid, tri_bounds, centroids);
    let right = build_node(nodes, order, mid, end, tri_bounds, centroids);
    nodes[id as usize] = Node::Inner {
        bounds,
        left,
        right,
    };
    id
}
