//! Contour recovery from a distance map: threshold, thin, link nearby pixels
//! into a graph, take the longest path of its minimum spanning tree, close it
//! with a straight segment and fill the enclosed region.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use crate::{BinaryMask, DistanceMap, Error, Grid, Pixel, Result};

/// Undirected weighted edge between vertex indices `u < v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelGraph {
    pub vertices: Vec<Pixel>,
    pub edges: Vec<Edge>,
}

/// Ordered pixel path. A closed contour implies the segment from the last
/// point back to the first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<Pixel>,
    pub closed: bool,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One `y x` pair per line; closure is implied.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 8);
        for &(y, x) in &self.points {
            let _ = writeln!(s, "{y} {x}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(y)), Some(Ok(x)), None) => points.push((y, x)),
                _ => {
                    return Err(Error::MalformedHeader(format!(
                        "contour line {}: expected `y x`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(Self { points, closed: true })
    }
}

/// Pixels with value `>= tau`, row-major.
pub fn binarize(dmap: &DistanceMap, tau: f64) -> Result<Vec<Pixel>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParams(format!("threshold {tau} not in (0, 1)")));
    }
    let out: Vec<Pixel> = dmap.indexed().filter(|(_, &v)| v as f64 >= tau).map(|(p, _)| p).collect();
    if out.is_empty() {
        return Err(Error::EmptyResult(tau));
    }
    Ok(out)
}

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton. Never
/// deletes the last remaining pixels.
pub fn thin(pixels: &[Pixel]) -> Vec<Pixel> {
    if pixels.is_empty() {
        return Vec::new();
    }
    let y0 = pixels.iter().map(|p| p.0).min().expect("non-empty");
    let x0 = pixels.iter().map(|p| p.1).min().expect("non-empty");
    let h = pixels.iter().map(|p| p.0).max().expect("non-empty") - y0 + 3;
    let w = pixels.iter().map(|p| p.1).max().expect("non-empty") - x0 + 3;
    let mut g = Grid::filled(h, w, false);
    for &(y, x) in pixels {
        *g.get_mut(y - y0 + 1, x - x0 + 1) = true;
    }
    let mut remaining = pixels.len();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut doomed = Vec::new();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if !*g.get(y, x) {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let n = [
                        *g.get(y - 1, x),
                        *g.get(y - 1, x + 1),
                        *g.get(y, x + 1),
                        *g.get(y + 1, x + 1),
                        *g.get(y + 1, x),
                        *g.get(y + 1, x - 1),
                        *g.get(y, x - 1),
                        *g.get(y - 1, x - 1),
                    ];
                    let b = n.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let cond = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        doomed.push((y, x));
                    }
                }
            }
            if doomed.is_empty() || doomed.len() == remaining {
                continue;
            }
            remaining -= doomed.len();
            for (y, x) in doomed {
                *g.get_mut(y, x) = false;
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    g.indexed()
        .filter(|(_, &v)| v)
        .map(|((y, x), _)| (y + y0 - 1, x + x0 - 1))
        .collect()
}

/// Connects every pair of pixels at Euclidean distance `<= link_radius`.
pub fn build_graph(pixels: &[Pixel], link_radius: f64) -> PixelGraph {
    let mut vertices = pixels.to_vec();
    vertices.sort_unstable();
    vertices.dedup();
    let index: HashMap<Pixel, usize> = vertices.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let r = link_radius.max(0.0).floor() as i64;
    let r2 = link_radius * link_radius;
    // forward half-plane offsets so each pair is emitted once with u < v
    let offsets: Vec<(i64, i64, f64)> = (0..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy > 0 || dx > 0)
        .filter_map(|(dy, dx)| {
            let d2 = (dy * dy + dx * dx) as f64;
            (d2 <= r2).then(|| (dy, dx, d2.sqrt()))
        })
        .collect();
    let mut edges = Vec::new();
    for (u, &(y, x)) in vertices.iter().enumerate() {
        for &(dy, dx, weight) in &offsets {
            let (ny, nx) = (y as i64 + dy, x as i64 + dx);
            if ny < 0 || nx < 0 {
                continue;
            }
            if let Some(&v) = index.get(&(ny as usize, nx as usize)) {
                edges.push(Edge { u, v, weight });
            }
        }
    }
    PixelGraph { vertices, edges }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] || (self.size[a] == self.size[b] && a > b) {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// Kruskal's minimum spanning forest. Ties are broken by the endpoint pixels
/// in lexicographic order.
pub fn minimum_spanning_forest(graph: &PixelGraph) -> Vec<Edge> {
    let key = |e: &Edge| {
        let (a, b) = (graph.vertices[e.u], graph.vertices[e.v]);
        if a <= b { (a, b) } else { (b, a) }
    };
    let mut edges = graph.edges.clone();
    edges.sort_by(|a, b| a.weight.total_cmp(&b.weight).then_with(|| key(a).cmp(&key(b))));
    let mut ds = DisjointSet::new(graph.vertices.len());
    edges.into_iter().filter(|e| ds.union(e.u, e.v)).collect()
}

/// Vertex sets of the connected components, largest first (ties: the one
/// holding the smaller vertex index first).
pub fn components(graph: &PixelGraph) -> Vec<Vec<usize>> {
    let mut ds = DisjointSet::new(graph.vertices.len());
    for e in &graph.edges {
        ds.union(e.u, e.v);
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for v in 0..graph.vertices.len() {
        groups.entry(ds.find(v)).or_default().push(v);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

fn farthest(adj: &[Vec<(usize, f64)>], start: usize) -> (usize, f64, Vec<Option<usize>>) {
    let n = adj.len();
    let mut dist = vec![f64::NAN; n];
    let mut parent = vec![None; n];
    dist[start] = 0.0;
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &(v, w) in &adj[u] {
            if dist[v].is_nan() {
                dist[v] = dist[u] + w;
                parent[v] = Some(u);
                stack.push(v);
            }
        }
    }
    let mut best = start;
    for v in 0..n {
        if !dist[v].is_nan() && dist[v].total_cmp(&dist[best]) == Ordering::Greater {
            best = v;
        }
    }
    (best, dist[best], parent)
}

/// Weighted diameter of a tree on vertices `0..n` (edges must form a tree
/// over the vertices reachable from `edges[0].u`). Returns the total weight
/// and the vertex sequence.
pub fn tree_diameter(n: usize, edges: &[Edge]) -> (f64, Vec<usize>) {
    let Some(first) = edges.first() else {
        return (0.0, if n > 0 { vec![0] } else { Vec::new() });
    };
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.u].push((e.v, e.weight));
        adj[e.v].push((e.u, e.weight));
    }
    let start = first.u.min(first.v);
    let (a, _, _) = farthest(&adj, start);
    let (b, weight, parent) = farthest(&adj, a);
    let mut path = vec![b];
    let mut cur = b;
    while let Some(p) = parent[cur] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    (weight, path)
}

/// Longest path of the minimum spanning tree of the largest component.
pub fn mst_max_path(graph: &PixelGraph) -> Result<Contour> {
    if graph.vertices.is_empty() {
        return Err(Error::DegenerateContour("empty graph".into()));
    }
    let comps = components(graph);
    let keep = &comps[0];
    let mut in_keep = vec![false; graph.vertices.len()];
    keep.iter().for_each(|&v| in_keep[v] = true);
    let tree: Vec<Edge> = minimum_spanning_forest(graph).into_iter().filter(|e| in_keep[e.u]).collect();
    let path = if tree.is_empty() {
        vec![keep[0]]
    } else {
        tree_diameter(graph.vertices.len(), &tree).1
    };
    if path.len() < 8 {
        return Err(Error::DegenerateContour(format!("max path has {} vertices", path.len())));
    }
    Ok(Contour {
        points: path.into_iter().map(|v| graph.vertices[v]).collect(),
        closed: false,
    })
}

/// 8-connected digital line from `a` to `b` inclusive (Bresenham).
pub fn line(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut y, mut x) = a;
    let dy = (b.0 - a.0).abs();
    let dx = (b.1 - a.1).abs();
    let sy = (b.0 - a.0).signum();
    let sx = (b.1 - a.1).signum();
    let mut err = dx - dy;
    let mut out = Vec::with_capacity((dx.max(dy) + 1) as usize);
    loop {
        out.push((y, x));
        if (y, x) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dy {
            err -= dy;
            x += sx;
        }
        if e2 < dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Rasterises the path (and its closing segment) into a curve mask.
pub fn rasterize_closed(points: &[Pixel], shape: (usize, usize)) -> Result<BinaryMask> {
    let (h, w) = shape;
    let mut curve = Grid::filled(h, w, 0u8);
    let pts: Vec<(i64, i64)> = points.iter().map(|&(y, x)| (y as i64, x as i64)).collect();
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        for (y, x) in line(a, b) {
            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                return Err(Error::OpenRegion);
            }
            *curve.get_mut(y as usize, x as usize) = 1;
        }
    }
    Ok(curve)
}

/// Closes the path with a straight segment and fills it: everything not
/// 4-reachable from the frame border without crossing the curve.
pub fn close_and_fill(path: &Contour, shape: (usize, usize)) -> Result<BinaryMask> {
    if path.points.len() < 8 {
        return Err(Error::DegenerateContour(format!("path has {} vertices", path.points.len())));
    }
    let curve = rasterize_closed(&path.points, shape)?;
    let (h, w) = shape;
    let mut outside = Grid::filled(h, w, false);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if border && *curve.get(y, x) == 0 {
                *outside.get_mut(y, x) = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let (y, x) = (y as i64, x as i64);
        for (ny, nx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
            if curve.try_get(ny, nx) == Some(&0) {
                let o = outside.get_mut(ny as usize, nx as usize);
                if !*o {
                    *o = true;
                    queue.push_back((ny as usize, nx as usize));
                }
            }
        }
    }
    let mask = outside.map(|&o| u8::from(!o));
    let interior = mask
        .as_slice()
        .iter()
        .zip(curve.as_slice())
        .filter(|&(&m, &c)| m == 1 && c == 0)
        .count();
    if interior == 0 {
        return Err(Error::OpenRegion);
    }
    Ok(mask)
}

/// Post-processing parameters of the regression-only segmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrnParams {
    pub tau: f64,
    pub link_radius: f64,
    /// Radius of the retry pass when the largest component is too small.
    pub fallback_radius: f64,
    /// Minimum share of skeleton pixels the largest component must hold.
    pub min_component_share: f64,
}

impl Default for BrnParams {
    fn default() -> Self {
        Self {
            tau: 0.6,
            link_radius: 1.5,
            fallback_radius: 3.0,
            min_component_share: 0.5,
        }
    }
}

/// Intermediate products of [`brn_segment_detailed`].
#[derive(Clone, Debug)]
pub struct BrnOutput {
    pub skeleton: Vec<Pixel>,
    pub contour: Contour,
    pub mask: BinaryMask,
    pub used_fallback: bool,
}

pub fn brn_segment_detailed(dmap: &DistanceMap, params: &BrnParams) -> Result<BrnOutput> {
    let above = binarize(dmap, params.tau)?;
    let skeleton = thin(&above);
    let mut graph = build_graph(&skeleton, params.link_radius);
    let mut used_fallback = false;
    let largest = components(&graph).first().map_or(0, Vec::len);
    if (largest as f64) < params.min_component_share * skeleton.len() as f64 {
        graph = build_graph(&skeleton, params.fallback_radius);
        used_fallback = true;
    }
    let mut contour = mst_max_path(&graph)?;
    let mask = close_and_fill(&contour, dmap.shape())?;
    contour.closed = true;
    Ok(BrnOutput {
        skeleton,
        contour,
        mask,
        used_fallback,
    })
}

/// Threshold, thin, MST max path, close and fill.
pub fn brn_segment(dmap: &DistanceMap, params: &BrnParams) -> Result<BinaryMask> {
    brn_segment_detailed(dmap, params).map(|o| o.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distmap::mask_to_distance_map;
    use crate::metrics::dice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        Grid::from_fn(h, w, |y, x| u8::from((y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x)))
    }

    fn ring_pixels(y0: usize, x0: usize, side: usize) -> Vec<Pixel> {
        let mut v = Vec::new();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                if y == y0 || x == x0 || y == y0 + side - 1 || x == x0 + side - 1 {
                    v.push((y, x));
                }
            }
        }
        v
    }

    fn neighbours8(set: &[Pixel], p: Pixel) -> usize {
        set.iter()
            .filter(|&&q| q != p && q.0.abs_diff(p.0) <= 1 && q.1.abs_diff(p.1) <= 1)
            .count()
    }

    #[test]
    fn binarize_ground_truth_ring() {
        let m = square(12, 12, 3, 3, 6);
        let dm = mask_to_distance_map(&m).unwrap();
        let ring = ring_pixels(3, 3, 6);
        assert_eq!(binarize(&dm, 0.99).unwrap(), ring);
        assert_eq!(binarize(&dm, 0.5).unwrap(), ring);
        let flat = Grid::filled(5, 5, 0.1f32);
        assert!(matches!(binarize(&flat, 0.6), Err(Error::EmptyResult(_))));
        assert!(binarize(&dm, 1.0).is_err());
    }

    #[test]
    fn thin_keeps_thin_shapes() {
        let ring = ring_pixels(2, 2, 7);
        assert_eq!(thin(&ring), ring);
        assert_eq!(thin(&[(4, 4)]), vec![(4, 4)]);
    }

    #[test]
    fn thin_thick_ring_to_single_cycle() {
        let mut thick = Vec::new();
        for y in 2..18 {
            for x in 2..18 {
                let outer = (2..18).contains(&y) && (2..18).contains(&x);
                let inner = (5..15).contains(&y) && (5..15).contains(&x);
                if outer && !inner {
                    thick.push((y, x));
                }
            }
        }
        let sk = thin(&thick);
        assert!(sk.len() < thick.len());
        // one-pixel wide: no 2x2 block fully set
        for &(y, x) in &sk {
            let block = [(y, x + 1), (y + 1, x), (y + 1, x + 1)];
            assert!(!block.iter().all(|p| sk.contains(p)));
        }
        // a single cycle: every pixel has at least two neighbours, and the
        // skeleton separates an interior
        assert!(sk.iter().all(|&p| neighbours8(&sk, p) >= 2));
        let g = build_graph(&sk, 1.5);
        assert_eq!(components(&g).len(), 1);
        let filled = close_and_fill(&mst_max_path(&g).unwrap(), (20, 20)).unwrap();
        assert_eq!(*filled.get(10, 10), 1);
        assert_eq!(*filled.get(0, 0), 0);
    }

    #[test]
    fn graph_examples() {
        let g = build_graph(&[(0, 0), (0, 1)], 1.5);
        assert_eq!(g.edges, vec![Edge { u: 0, v: 1, weight: 1.0 }]);
        assert!(build_graph(&[(0, 0), (0, 3)], 1.5).edges.is_empty());
    }

    #[test]
    fn graph_matches_all_pairs_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut px: Vec<Pixel> = (0..10).map(|_| (rng.random_range(0..8), rng.random_range(0..8))).collect();
            px.sort_unstable();
            px.dedup();
            let g = build_graph(&px, 2.0);
            let mut want = Vec::new();
            for i in 0..px.len() {
                for j in i + 1..px.len() {
                    let d = (((px[i].0 as f64 - px[j].0 as f64).powi(2)) + (px[i].1 as f64 - px[j].1 as f64).powi(2)).sqrt();
                    if d <= 2.0 {
                        want.push((i, j, d));
                    }
                }
            }
            let mut got: Vec<(usize, usize, f64)> = g.edges.iter().map(|e| (e.u, e.v, e.weight)).collect();
            got.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            assert_eq!(got, want);
        }
    }

    #[test]
    fn path_and_cycle_trees() {
        let path = PixelGraph {
            vertices: vec![(0, 0), (0, 1), (0, 2)],
            edges: vec![Edge { u: 0, v: 1, weight: 1.0 }, Edge { u: 1, v: 2, weight: 1.0 }],
        };
        let mst = minimum_spanning_forest(&path);
        let (wt, p) = tree_diameter(3, &mst);
        assert_eq!(wt, 2.0);
        assert!(p == vec![0, 1, 2] || p == vec![2, 1, 0]);

        let cycle = PixelGraph {
            vertices: vec![(0, 0), (0, 1), (1, 1), (1, 0)],
            edges: vec![
                Edge { u: 0, v: 1, weight: 1.0 },
                Edge { u: 1, v: 2, weight: 1.0 },
                Edge { u: 2, v: 3, weight: 1.0 },
                Edge { u: 0, v: 3, weight: 5.0 },
            ],
        };
        let mst = minimum_spanning_forest(&cycle);
        assert!(mst.iter().all(|e| e.weight == 1.0));
        let (wt, p) = tree_diameter(4, &mst);
        assert_eq!(wt, 3.0);
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn short_paths_are_degenerate() {
        let g = build_graph(&[(0, 0), (0, 1), (0, 2)], 1.5);
        assert!(matches!(mst_max_path(&g), Err(Error::DegenerateContour(_))));
    }

    #[test]
    fn open_square_ring_fills_square() {
        // ring of a 6x6 square walked clockwise with the left side missing
        let mut pts = Vec::new();
        pts.extend((3..9).map(|x| (3, x)));
        pts.extend((4..9).map(|y| (y, 8)));
        pts.extend((3..8).rev().map(|x| (8, x)));
        let filled = close_and_fill(&Contour { points: pts, closed: false }, (12, 12)).unwrap();
        assert_eq!(filled, square(12, 12, 3, 3, 6));
    }

    #[test]
    fn circle_fill_matches_disk() {
        let (cy, cx, r) = (16.0f64, 16.0f64, 10.0f64);
        let n = (2.0 * std::f64::consts::PI * r).ceil() as usize;
        let mut pts: Vec<Pixel> = (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                ((cy + r * t.sin()).round() as usize, (cx + r * t.cos()).round() as usize)
            })
            .collect();
        pts.dedup();
        let filled = close_and_fill(&Contour { points: pts, closed: false }, (32, 32)).unwrap();
        // rasterised ring pixels lie within half a pixel of the circle
        let disk = Grid::from_fn(32, 32, |y, x| {
            u8::from((y as f64 - cy).hypot(x as f64 - cx) <= r + 0.5)
        });
        assert!(dice(&filled, &disk).unwrap() >= 0.98);
    }

    #[test]
    fn closure_leaving_frame_is_open_region() {
        let pts: Vec<Pixel> = (0..8).map(|i| (2, i)).chain([(40, 3)]).collect();
        assert!(matches!(
            close_and_fill(&Contour { points: pts, closed: false }, (10, 10)),
            Err(Error::OpenRegion)
        ));
        let flat: Vec<Pixel> = (0..9).map(|i| (4, i)).collect();
        assert!(matches!(
            close_and_fill(&Contour { points: flat, closed: false }, (10, 10)),
            Err(Error::OpenRegion)
        ));
    }

    #[test]
    fn brn_recovers_square_and_rejects_flat_map() {
        let m = square(24, 24, 5, 6, 12);
        let dm = mask_to_distance_map(&m).unwrap();
        let got = brn_segment(&dm, &BrnParams::default()).unwrap();
        assert!(dice(&got, &m).unwrap() >= 0.98);
        let flat = Grid::filled(24, 24, 0.3f32);
        assert!(matches!(brn_segment(&flat, &BrnParams::default()), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn brn_keeps_larger_of_two_rings() {
        let mut m = square(40, 40, 3, 3, 8);
        let big = square(40, 40, 15, 15, 18);
        for (a, b) in m.as_mut_slice().iter_mut().zip(big.as_slice()) {
            *a |= *b;
        }
        let dm = mask_to_distance_map(&m).unwrap();
        let got = brn_segment(&dm, &BrnParams::default()).unwrap();
        assert_eq!(got, big);
    }

    #[test]
    fn contour_text_roundtrip() {
        let c = Contour { points: vec![(1, 2), (3, 4), (10, 0)], closed: true };
        assert_eq!(c.to_text(), "1 2\n3 4\n10 0\n");
        assert_eq!(Contour::parse(&c.to_text()).unwrap(), c);
        assert!(Contour::parse("1 2 3\n").is_err());
    }
}
