//! Structured 2D triangulations of the supported cross-sections and linear
//! finite-element assembly on them.
//!
//! Rectangles get an aligned grid, disks a concentric "spiderweb" mesh with
//! near-equilateral triangles (6i nodes on ring i), polygons an ear-clip
//! triangulation refined uniformly to the target resolution. Boundary nodes
//! are detected topologically (edges owned by a single triangle).

use crate::geometry::CrossSection;
use crate::numerics::CsrMatrix;
use nalgebra::Vector2;

#[derive(Debug, Clone)]
pub struct Mesh2d {
    pub nodes: Vec<Vector2<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    /// Characteristic edge length actually achieved.
    pub h: f64,
}

impl Mesh2d {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn detect_boundary(nodes: usize, triangles: &[[usize; 3]]) -> Vec<bool> {
        let mut edge_count = std::collections::HashMap::<(usize, usize), u32>::new();
        for t in triangles {
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        let mut boundary = vec![false; nodes];
        for (&(a, b), &c) in &edge_count {
            if c == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        boundary
    }

    fn finish(nodes: Vec<Vector2<f64>>, triangles: Vec<[usize; 3]>) -> Mesh2d {
        // normalize winding to CCW
        let mut tris = triangles;
        for t in tris.iter_mut() {
            let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if (b - a).perp(&(c - a)) < 0.0 {
                t.swap(1, 2);
            }
        }
        let boundary = Self::detect_boundary(nodes.len(), &tris);
        let mut h: f64 = 0.0;
        for t in &tris {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                h = h.max((nodes[t[i]] - nodes[t[j]]).norm());
            }
        }
        Mesh2d { nodes, triangles: tris, boundary, h }
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let t = self.triangles[i];
        let (a, b, c) = (self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]);
        0.5 * (b - a).perp(&(c - a))
    }
}

/// Aligned grid on [0,a] x [0,b] with roughly square cells of size `h`.
pub fn rectangle_mesh(a: f64, b: f64, h: f64) -> Mesh2d {
    let nx = (a / h).round().max(2.0) as usize;
    let ny = (b / h).round().max(2.0) as usize;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(Vector2::new(a * i as f64 / nx as f64, b * j as f64 / ny as f64));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // alternate the diagonal for isotropy
            if (i + j) % 2 == 0 {
                tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            } else {
                tris.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                tris.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }
    Mesh2d::finish(nodes, tris)
}

/// Concentric-ring disk mesh centered at the origin: ring i of `rings` carries
/// 6i nodes, so triangles stay near-equilateral at every radius.
pub fn disk_mesh(radius: f64, rings: usize) -> Mesh2d {
    assert!(rings >= 2);
    let mut nodes = vec![Vector2::new(0.0, 0.0)];
    let mut ring_start = vec![0usize; rings + 1];
    for i in 1..=rings {
        ring_start[i] = nodes.len();
        let n = 6 * i;
        let r = radius * i as f64 / rings as f64;
        for k in 0..n {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            nodes.push(Vector2::new(r * phi.cos(), r * phi.sin()));
        }
    }
    let ring_node = |i: usize, k: usize| -> usize {
        if i == 0 {
            0
        } else {
            ring_start[i] + k % (6 * i)
        }
    };
    let mut tris = Vec::new();
    // center fan
    for k in 0..6 {
        tris.push([0, ring_node(1, k), ring_node(1, k + 1)]);
    }
    // strips between ring i and ring i+1, sector by sector
    for i in 1..rings {
        for s in 0..6 {
            // sector s: ring i has nodes s*i..s*i+i, ring i+1 has s*(i+1)..s*(i+1)+(i+1)
            for j in 0..=i {
                tris.push([
                    ring_node(i + 1, s * (i + 1) + j),
                    ring_node(i + 1, s * (i + 1) + j + 1),
                    ring_node(i, s * i + j.min(i)),
                ]);
            }
            for j in 0..i {
                tris.push([
                    ring_node(i, s * i + j),
                    ring_node(i + 1, s * (i + 1) + j + 1),
                    ring_node(i, s * i + j + 1),
                ]);
            }
        }
    }
    Mesh2d::finish(nodes, tris)
}

/// Ear-clip triangulation of a simple polygon, refined uniformly (each
/// triangle split in four) until the longest edge is at most `h`.
pub fn polygon_mesh(vertices: &[Vector2<f64>], h: f64) -> Mesh2d {
    let mut poly: Vec<usize> = (0..vertices.len()).collect();
    let mut nodes: Vec<Vector2<f64>> = vertices.to_vec();
    // ensure CCW order
    let area: f64 = {
        let n = vertices.len();
        (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                vertices[i].x * vertices[j].y - vertices[j].x * vertices[i].y
            })
            .sum::<f64>()
            / 2.0
    };
    if area < 0.0 {
        poly.reverse();
    }
    let mut tris: Vec<[usize; 3]> = Vec::new();
    // ear clipping
    while poly.len() > 3 {
        let n = poly.len();
        let mut clipped = false;
        for k in 0..n {
            let (ip, ic, inx) = (poly[(k + n - 1) % n], poly[k], poly[(k + 1) % n]);
            let (a, b, c) = (nodes[ip], nodes[ic], nodes[inx]);
            if (b - a).perp(&(c - a)) <= 1e-14 {
                continue; // reflex or degenerate corner
            }
            // no other polygon vertex inside the candidate ear
            let inside = poly.iter().any(|&q| {
                if q == ip || q == ic || q == inx {
                    return false;
                }
                point_in_triangle(nodes[q], a, b, c)
            });
            if !inside {
                tris.push([ip, ic, inx]);
                poly.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            break; // degenerate input; caller validated simplicity already
        }
    }
    if poly.len() == 3 {
        tris.push([poly[0], poly[1], poly[2]]);
    }
    // uniform refinement to target h
    loop {
        let mut longest: f64 = 0.0;
        for t in &tris {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                longest = longest.max((nodes[t[i]] - nodes[t[j]]).norm());
            }
        }
        if longest <= h {
            break;
        }
        let mut midpoints = std::collections::HashMap::<(usize, usize), usize>::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for t in &tris {
            let mut mid = |a: usize, b: usize, nodes: &mut Vec<Vector2<f64>>| -> usize {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    nodes.push((nodes[a] + nodes[b]) / 2.0);
                    nodes.len() - 1
                })
            };
            let ab = mid(t[0], t[1], &mut nodes);
            let bc = mid(t[1], t[2], &mut nodes);
            let ca = mid(t[2], t[0], &mut nodes);
            next.push([t[0], ab, ca]);
            next.push([t[1], bc, ab]);
            next.push([t[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }
    Mesh2d::finish(nodes, tris)
}

/// Mesh a cross-section at target edge length `h`.
pub fn mesh_cross_section(cs: &CrossSection, h: f64) -> Mesh2d {
    match cs {
        CrossSection::Rectangle { a, b } => rectangle_mesh(*a, *b, h),
        CrossSection::Disk { radius } => {
            let rings = (radius / h).round().max(2.0) as usize;
            disk_mesh(*radius, rings)
        }
        CrossSection::Polygon { vertices } => polygon_mesh(vertices, h),
    }
}

fn point_in_triangle(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> bool {
    let s1 = (b - a).perp(&(p - a));
    let s2 = (c - b).perp(&(p - b));
    let s3 = (a - c).perp(&(p - c));
    (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
}

/// P1 stiffness and consistent mass matrices over all nodes.
pub fn assemble_p1(mesh: &Mesh2d) -> (CsrMatrix, CsrMatrix) {
    let n = mesh.n_nodes();
    let mut kt = Vec::with_capacity(mesh.triangles.len() * 9);
    let mut mt = Vec::with_capacity(mesh.triangles.len() * 9);
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let (p0, p1, p2) = (mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
        let area = mesh.triangle_area(ti);
        debug_assert!(area > 0.0);
        // gradients of barycentric coordinates
        let g = [
            Vector2::new(p1.y - p2.y, p2.x - p1.x) / (2.0 * area),
            Vector2::new(p2.y - p0.y, p0.x - p2.x) / (2.0 * area),
            Vector2::new(p0.y - p1.y, p1.x - p0.x) / (2.0 * area),
        ];
        for i in 0..3 {
            for j in 0..3 {
                kt.push((t[i], t[j], area * g[i].dot(&g[j])));
                let m = if i == j { area / 6.0 } else { area / 12.0 };
                mt.push((t[i], t[j], m));
            }
        }
    }
    (CsrMatrix::from_triplets(n, &kt), CsrMatrix::from_triplets(n, &mt))
}

/// Uniform-grid accelerator for point-in-triangle location.
pub struct TriangleLocator {
    lo: Vector2<f64>,
    inv_cell: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<u32>>,
}

impl TriangleLocator {
    pub fn build(mesh: &Mesh2d) -> Self {
        let mut lo = mesh.nodes[0];
        let mut hi = mesh.nodes[0];
        for p in &mesh.nodes {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let cell = mesh.h.max(1e-12);
        let nx = (((hi.x - lo.x) / cell).ceil() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize + 1).max(1);
        let mut bins = vec![Vec::new(); nx * ny];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let (a, b, c) = (mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
            let tx0 = (((a.x.min(b.x).min(c.x) - lo.x) / cell).floor() as usize).min(nx - 1);
            let tx1 = (((a.x.max(b.x).max(c.x) - lo.x) / cell).floor() as usize).min(nx - 1);
            let ty0 = (((a.y.min(b.y).min(c.y) - lo.y) / cell).floor() as usize).min(ny - 1);
            let ty1 = (((a.y.max(b.y).max(c.y) - lo.y) / cell).floor() as usize).min(ny - 1);
            for gy in ty0..=ty1 {
                for gx in tx0..=tx1 {
                    bins[gy * nx + gx].push(ti as u32);
                }
            }
        }
        TriangleLocator { lo, inv_cell: 1.0 / cell, nx, ny, bins }
    }

    /// Triangle containing `p` with its barycentric coordinates, if any.
    pub fn locate(&self, mesh: &Mesh2d, p: Vector2<f64>) -> Option<(usize, [f64; 3])> {
        let gx = ((p.x - self.lo.x) * self.inv_cell).floor();
        let gy = ((p.y - self.lo.y) * self.inv_cell).floor();
        if gx < 0.0 || gy < 0.0 {
            return None;
        }
        let (gx, gy) = (gx as usize, gy as usize);
        if gx >= self.nx || gy >= self.ny {
            return None;
        }
        for &ti in &self.bins[gy * self.nx + gx] {
            let t = mesh.triangles[ti as usize];
            let (a, b, c) = (mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
            let det = (b - a).perp(&(c - a));
            let l1 = (p - a).perp(&(c - a)) / det;
            let l2 = (b - a).perp(&(p - a)) / det;
            let l0 = 1.0 - l1 - l2;
            let tol = -1e-10;
            if l0 >= tol && l1 >= tol && l2 >= tol {
                return Some((ti as usize, [l0, l1, l2]));
            }
        }
        None
    }
}

/// Area-weighted nodal average of the piecewise-constant P1 gradient.
/// On structured meshes this recovery is second-order accurate away from
/// the boundary.
pub fn recover_nodal_gradients(mesh: &Mesh2d, u: &[f64]) -> Vec<Vector2<f64>> {
    let n = mesh.n_nodes();
    let mut grad = vec![Vector2::zeros(); n];
    let mut weight = vec![0.0f64; n];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let (p0, p1, p2) = (mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
        let area = mesh.triangle_area(ti);
        let g = [
            Vector2::new(p1.y - p2.y, p2.x - p1.x) / (2.0 * area),
            Vector2::new(p2.y - p0.y, p0.x - p2.x) / (2.0 * area),
            Vector2::new(p0.y - p1.y, p1.x - p0.x) / (2.0 * area),
        ];
        let gu = g[0] * u[t[0]] + g[1] * u[t[1]] + g[2] * u[t[2]];
        for &ni in t {
            grad[ni] += gu * area;
            weight[ni] += area;
        }
    }
    for (g, w) in grad.iter_mut().zip(&weight) {
        *g /= *w;
    }
    grad
}
