//! Closed triangulated surfaces: icosphere/cuboid tessellations, ASCII
//! triangle-soup ingestion, and the few geometric queries the rest of the
//! crate needs (signed volume, centroids, normals).

use nalgebra::{Matrix3, Vector3};

/// A closed triangulated surface in 3D.
#[derive(Debug, Clone)]
pub struct TriSurface {
    pub vertices: Vec<Vector3<f64>>,
    /// Vertex index triples; counter-clockwise seen from outside once oriented.
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, thiserror::Error)]
pub enum SurfaceError {
    #[error("surface is not closed: {0} unmatched edges")]
    NotClosed(usize),
    #[error("surface has near-zero enclosed volume")]
    DegenerateVolume,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl TriSurface {
    /// Signed enclosed volume via the divergence theorem; positive when
    /// triangles are oriented outward.
    pub fn signed_volume(&self) -> f64 {
        let mut v6 = 0.0;
        for t in &self.triangles {
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            v6 += Matrix3::from_columns(&[a, b, c]).determinant();
        }
        v6 / 6.0
    }

    /// Flip triangle winding so the signed volume is positive.
    pub fn orient_outward(&mut self) -> Result<(), SurfaceError> {
        let v = self.signed_volume();
        if v.abs() < 1e-14 {
            return Err(SurfaceError::DegenerateVolume);
        }
        if v < 0.0 {
            for t in self.triangles.iter_mut() {
                t.swap(1, 2);
            }
        }
        Ok(())
    }

    /// Every edge must be shared by exactly two triangles with opposite
    /// orientation for the divergence-theorem volume to be meaningful.
    pub fn check_closed(&self) -> Result<(), SurfaceError> {
        let mut edges = std::collections::HashMap::<(usize, usize), i64>::new();
        for t in &self.triangles {
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                let dir = if e.0 < e.1 { 1 } else { -1 };
                *edges.entry(key).or_insert(0) += dir;
            }
        }
        let bad = edges.values().filter(|&&v| v != 0).count();
        if bad > 0 {
            return Err(SurfaceError::NotClosed(bad));
        }
        Ok(())
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let t = self.triangles[i];
        let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn triangle_centroid(&self, i: usize) -> Vector3<f64> {
        let t = self.triangles[i];
        (self.vertices[t[0]] + self.vertices[t[1]] + self.vertices[t[2]]) / 3.0
    }

    /// Outward unit normal of a (planar) triangle.
    pub fn triangle_normal(&self, i: usize) -> Vector3<f64> {
        let t = self.triangles[i];
        let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Parity test along a generic ray; `p` strictly inside the closed surface.
    pub fn contains(&self, p: Vector3<f64>) -> bool {
        // direction chosen so symmetric meshes do not put vertices on the ray
        let dir = Vector3::new(0.5860684921, 0.6957043812, 0.4153172904).normalize();
        let mut crossings = 0usize;
        for t in &self.triangles {
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            if let Some(hit) = ray_triangle(p, dir, a, b, c) {
                if hit > 0.0 {
                    crossings += 1;
                }
            }
        }
        crossings % 2 == 1
    }

    pub fn rotated(&self, r: &Matrix3<f64>) -> TriSurface {
        TriSurface {
            vertices: self.vertices.iter().map(|v| r * v).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn scaled(&self, s: &Vector3<f64>) -> TriSurface {
        TriSurface {
            vertices: self
                .vertices
                .iter()
                .map(|v| Vector3::new(v.x * s.x, v.y * s.y, v.z * s.z))
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Parse "v x y z" / "f i j k" records (1-based face indices).
    pub fn from_soup(text: &str) -> Result<TriSurface, SurfaceError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap();
            let fields: Vec<&str> = it.collect();
            match tag {
                "v" => {
                    if fields.len() != 3 {
                        return Err(SurfaceError::Parse {
                            line: ln + 1,
                            msg: "vertex needs 3 coordinates".into(),
                        });
                    }
                    let mut c = [0.0f64; 3];
                    for (k, f) in fields.iter().enumerate() {
                        c[k] = f.parse().map_err(|_| SurfaceError::Parse {
                            line: ln + 1,
                            msg: format!("bad number {f:?}"),
                        })?;
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                "f" => {
                    if fields.len() != 3 {
                        return Err(SurfaceError::Parse {
                            line: ln + 1,
                            msg: "face needs 3 indices".into(),
                        });
                    }
                    let mut idx = [0usize; 3];
                    for (k, f) in fields.iter().enumerate() {
                        let i: usize = f.parse().map_err(|_| SurfaceError::Parse {
                            line: ln + 1,
                            msg: format!("bad index {f:?}"),
                        })?;
                        if i == 0 {
                            return Err(SurfaceError::Parse {
                                line: ln + 1,
                                msg: "face indices are 1-based".into(),
                            });
                        }
                        idx[k] = i - 1;
                    }
                    triangles.push(idx);
                }
                other => {
                    return Err(SurfaceError::Parse {
                        line: ln + 1,
                        msg: format!("unknown record {other:?}"),
                    })
                }
            }
        }
        for t in &triangles {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(SurfaceError::Parse {
                    line: 0,
                    msg: "face index out of range".into(),
                });
            }
        }
        Ok(TriSurface { vertices, triangles })
    }
}

/// Moeller-Trumbore ray/triangle intersection; returns the ray parameter.
fn ray_triangle(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = tv.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Unit icosphere: subdivided icosahedron reprojected to the unit sphere.
/// `level` quadruples the triangle count each step (level 0 = 20 triangles).
pub fn icosphere(level: u32) -> TriSurface {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint = std::collections::HashMap::<(usize, usize), usize>::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut mid = |a: usize, b: usize, vs: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = ((vs[a] + vs[b]) / 2.0).normalize();
                vs.push(m);
                vs.len() - 1
            })
        };
        for t in &triangles {
            let ab = mid(t[0], t[1], &mut vertices);
            let bc = mid(t[1], t[2], &mut vertices);
            let ca = mid(t[2], t[0], &mut vertices);
            next.push([t[0], ab, ca]);
            next.push([t[1], bc, ab]);
            next.push([t[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }
    let mut s = TriSurface { vertices, triangles };
    s.orient_outward().expect("icosphere volume");
    s
}

/// Axis-aligned cuboid surface with half-edges `he`, each face split into a
/// regular `n` x `n` triangle grid (n = 2^level).
pub fn cuboid_surface(he: Vector3<f64>, level: u32) -> TriSurface {
    let n = 1usize << level;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vertex_ids = std::collections::HashMap::<(i64, i64, i64), usize>::new();
    // quantize to a lattice so shared face edges reuse vertices
    let mut get_vertex = |p: Vector3<f64>| -> usize {
        let key = (
            (p.x / he.x * 2.0 * n as f64).round() as i64,
            (p.y / he.y * 2.0 * n as f64).round() as i64,
            (p.z / he.z * 2.0 * n as f64).round() as i64,
        );
        *vertex_ids.entry(key).or_insert_with(|| {
            vertices.push(p);
            vertices.len() - 1
        })
    };
    // each face: fixed axis a at +-he[a], grid over the other two axes
    for axis in 0..3 {
        for &sign in &[1.0f64, -1.0] {
            let (u_axis, v_axis) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| -> Vector3<f64> {
                        let mut p = Vector3::zeros();
                        p[axis] = sign * he[axis];
                        p[u_axis] = -he[u_axis] + 2.0 * he[u_axis] * (i + di) as f64 / n as f64;
                        p[v_axis] = -he[v_axis] + 2.0 * he[v_axis] * (j + dj) as f64 / n as f64;
                        p
                    };
                    let p00 = get_vertex(corner(0, 0));
                    let p10 = get_vertex(corner(1, 0));
                    let p01 = get_vertex(corner(0, 1));
                    let p11 = get_vertex(corner(1, 1));
                    if sign > 0.0 {
                        triangles.push([p00, p10, p11]);
                        triangles.push([p00, p11, p01]);
                    } else {
                        triangles.push([p00, p11, p10]);
                        triangles.push([p00, p01, p11]);
                    }
                }
            }
        }
    }
    let mut s = TriSurface { vertices, triangles };
    s.orient_outward().expect("cuboid volume");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn icosphere_volume_converges_to_sphere() {
        let exact = 4.0 * PI / 3.0;
        let v2 = icosphere(2).signed_volume();
        let v3 = icosphere(3).signed_volume();
        assert!((v3 - exact).abs() < (v2 - exact).abs());
        assert!((v3 - exact).abs() / exact < 0.01);
    }

    #[test]
    fn cuboid_volume_is_exact() {
        let s = cuboid_surface(Vector3::new(0.5, 1.0, 2.0), 2);
        s.check_closed().unwrap();
        assert!((s.signed_volume() - 8.0 * 0.5 * 1.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_is_closed() {
        icosphere(1).check_closed().unwrap();
    }

    #[test]
    fn soup_roundtrip_and_orientation() {
        // tetrahedron with inward winding; orient_outward must fix it
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n\
                    f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
        let mut s = TriSurface::from_soup(text).unwrap();
        s.check_closed().unwrap();
        let v = s.signed_volume();
        s.orient_outward().unwrap();
        assert!((s.signed_volume() - v.abs()).abs() < 1e-15);
        assert!((s.signed_volume() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn soup_rejects_malformed_lines() {
        assert!(TriSurface::from_soup("v 1 2\n").is_err());
        assert!(TriSurface::from_soup("f 0 1 2\n").is_err());
        assert!(TriSurface::from_soup("q 1 2 3\n").is_err());
    }
}
