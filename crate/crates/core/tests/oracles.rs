//! Cross-checks of the core algorithms against slow, obviously-correct
//! reference implementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bdrseg_core::contour::{brn_segment, build_graph, minimum_spanning_forest, BrnParams, Edge, PixelGraph};
use bdrseg_core::distmap::{boundary_pixels, euclidean_dt, mask_to_distance_map};
use bdrseg_core::metrics::dice;
use bdrseg_core::nn::gradcheck::{
    check_conv2d, check_l2_loss, check_maxpool2d, check_relu, check_softmax_ce_loss, check_transposed_conv2d,
};
use bdrseg_core::nn::{ConvSpec, DeconvSpec, PoolSpec, Shape4};
use bdrseg_core::phantom::{dataset_sample, PhantomRanges};
use bdrseg_core::{Grid, Pixel};

fn brute_edt(sites: &[Pixel], h: usize, w: usize) -> Grid<f64> {
    Grid::from_fn(h, w, |y, x| {
        sites
            .iter()
            .map(|&(sy, sx)| (y as f64 - sy as f64).hypot(x as f64 - sx as f64))
            .fold(f64::INFINITY, f64::min)
    })
}

#[test]
fn edt_matches_brute_force_on_random_site_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..300 {
        let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let density = rng.random_range(0.0..0.3);
        let mut sites: Vec<Pixel> = (0..h * w)
            .filter(|_| rng.random_bool(density))
            .map(|i| (i / w, i % w))
            .collect();
        if sites.is_empty() {
            sites.push((rng.random_range(0..h), rng.random_range(0..w)));
        }
        let fast = euclidean_dt(&sites, (h, w)).unwrap();
        let slow = brute_edt(&sites, h, w);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
        }
    }
}

/// Minimum total weight over all maximum-size acyclic edge subsets.
fn exhaustive_forest_weight(n: usize, edges: &[Edge]) -> f64 {
    fn find(p: &[usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    fn rec(i: usize, edges: &[Edge], parent: &mut Vec<usize>, count: usize, weight: f64, best: &mut (usize, f64)) {
        if count > best.0 || (count == best.0 && weight < best.1) {
            *best = (count, weight);
        }
        if i == edges.len() || count + (edges.len() - i) < best.0 {
            return;
        }
        let e = edges[i];
        let (a, b) = (find(parent, e.u), find(parent, e.v));
        if a != b {
            parent[a] = b;
            rec(i + 1, edges, parent, count + 1, weight + e.weight, best);
            parent[a] = a;
        }
        rec(i + 1, edges, parent, count, weight, best);
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut best = (0, 0.0);
    rec(0, edges, &mut parent, 0, 0.0, &mut best);
    best.1
}

#[test]
fn mst_weight_is_exhaustive_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..400 {
        let n = rng.random_range(1..=12);
        let mut vertices: Vec<Pixel> = Vec::new();
        while vertices.len() < n {
            let p = (rng.random_range(0..6), rng.random_range(0..6));
            if !vertices.contains(&p) {
                vertices.push(p);
            }
        }
        vertices.sort();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if edges.len() < 20 && rng.random_bool(0.35) {
                    let weight = [1.0, 2f64.sqrt(), 2.0, 2.5][rng.random_range(0..4)];
                    edges.push(Edge { u, v, weight });
                }
            }
        }
        let g = PixelGraph { vertices, edges };
        let got: f64 = minimum_spanning_forest(&g).iter().map(|e| e.weight).sum();
        let want = exhaustive_forest_weight(n, &g.edges);
        assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn pixel_graph_mst_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let pts: Vec<Pixel> = (0..rng.random_range(2..=10))
            .map(|_| (rng.random_range(0..5), rng.random_range(0..5)))
            .collect();
        let mut pts = pts;
        pts.sort();
        pts.dedup();
        let g = build_graph(&pts, 1.5);
        if g.edges.len() > 22 {
            continue;
        }
        let got: f64 = minimum_spanning_forest(&g).iter().map(|e| e.weight).sum();
        assert!((got - exhaustive_forest_weight(g.vertices.len(), &g.edges)).abs() < 1e-9);
    }
}

#[test]
fn brn_recovers_ground_truth_masks() {
    let ranges = PhantomRanges::square(64);
    for i in 0..40 {
        let s = dataset_sample(&ranges, 500, i).unwrap();
        let m = brn_segment(&s.dmap, &BrnParams::default()).unwrap();
        let d = dice(&m, &s.mask).unwrap();
        assert!(d >= 0.98, "sample {i}: {d}");
    }
}

#[test]
fn boundary_of_distance_map_is_exactly_one() {
    let ranges = PhantomRanges::square(48);
    for i in 0..20 {
        let s = dataset_sample(&ranges, 1, i).unwrap();
        let map = mask_to_distance_map(&s.mask).unwrap();
        for (y, x) in boundary_pixels(&s.mask).unwrap() {
            assert_eq!(*map.get(y, x), 1.0);
        }
    }
}

#[test]
fn op_gradients_match_finite_differences() {
    let (h, tol) = (1e-6, 1e-5);
    for dilation in [1, 2, 4] {
        let spec = ConvSpec::same(2, 3, 3, dilation);
        let r = check_conv2d(Shape4::new(2, 2, 9, 10), spec, dilation as u64, h, tol).unwrap();
        assert!(r.passed(), "{r:?}");
    }
    let strided = ConvSpec {
        stride: 2,
        ..ConvSpec::same(2, 2, 3, 1)
    };
    assert!(check_conv2d(Shape4::new(1, 2, 9, 8), strided, 4, h, tol).unwrap().passed());
    let r = check_transposed_conv2d(Shape4::new(2, 3, 4, 5), DeconvSpec::doubling(3, 2), 1, h, tol).unwrap();
    assert!(r.passed(), "{r:?}");
    let r = check_maxpool2d(Shape4::new(2, 2, 9, 7), PoolSpec::halving(), 2, h, tol).unwrap();
    assert!(r.passed(), "{r:?}");
    assert!(check_relu(Shape4::new(2, 2, 5, 5), 3, h, tol).unwrap().passed());
    assert!(check_l2_loss(Shape4::new(2, 1, 6, 6), 4, h, tol).unwrap().passed());
    assert!(check_softmax_ce_loss(Shape4::new(2, 2, 6, 6), 5, h, tol).unwrap().passed());
}
