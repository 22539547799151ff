//! Cross-sections, void shapes, and the periodicity cell.
//!
//! The waveguide is a straight cylinder over a 2D cross-section with one
//! small void per unit period. The period is normalized to 1; longer physical
//! periods are expressed through [`rescale_period`]. All values here are
//! immutable after construction and safe to share across workers.

use crate::surface::{self, SurfaceError, TriSurface};
use nalgebra::{Vector2, Vector3};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("shape has nonpositive measure")]
    BadShape,
    #[error("rescale factor must be positive, got {0}")]
    BadScale(f64),
    #[error("scaled void touches or crosses the cell boundary (clearance {0:.3e})")]
    VoidEscapesCell(f64),
    #[error("triangulated surface is degenerate: {0}")]
    DegenerateMesh(#[from] SurfaceError),
    #[error("polygon must be simple with at least 3 vertices")]
    BadPolygon,
}

/// Bounded 2D cross-section of the waveguide.
#[derive(Debug, Clone)]
pub enum CrossSection {
    Rectangle { a: f64, b: f64 },
    Disk { radius: f64 },
    /// Simple closed polygon, vertices in order (either orientation).
    Polygon { vertices: Vec<Vector2<f64>> },
}

impl CrossSection {
    pub fn rectangle(a: f64, b: f64) -> Result<Self, GeometryError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(GeometryError::BadShape);
        }
        Ok(CrossSection::Rectangle { a, b })
    }

    pub fn disk(radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::BadShape);
        }
        Ok(CrossSection::Disk { radius })
    }

    pub fn polygon(vertices: Vec<Vector2<f64>>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 || vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(GeometryError::BadPolygon);
        }
        let cs = CrossSection::Polygon { vertices };
        if cs.area() <= 0.0 {
            return Err(GeometryError::BadShape);
        }
        if let CrossSection::Polygon { vertices } = &cs {
            if polygon_self_intersects(vertices) {
                return Err(GeometryError::BadPolygon);
            }
        }
        Ok(cs)
    }

    /// meas2 of the cross-section.
    pub fn area(&self) -> f64 {
        match self {
            CrossSection::Rectangle { a, b } => a * b,
            CrossSection::Disk { radius } => std::f64::consts::PI * radius * radius,
            CrossSection::Polygon { vertices } => polygon_area(vertices).abs(),
        }
    }

    /// True if `y` lies strictly inside the cross-section.
    pub fn contains(&self, y: Vector2<f64>) -> bool {
        match self {
            CrossSection::Rectangle { a, b } => y.x > 0.0 && y.x < *a && y.y > 0.0 && y.y < *b,
            CrossSection::Disk { radius } => y.norm() < *radius,
            CrossSection::Polygon { vertices } => point_in_polygon(vertices, y),
        }
    }

    /// Distance from an interior point to the cross-section boundary.
    pub fn boundary_distance(&self, y: Vector2<f64>) -> f64 {
        match self {
            CrossSection::Rectangle { a, b } => {
                (y.x.min(a - y.x)).min(y.y.min(b - y.y))
            }
            CrossSection::Disk { radius } => radius - y.norm(),
            CrossSection::Polygon { vertices } => {
                let mut d = f64::INFINITY;
                let n = vertices.len();
                for i in 0..n {
                    d = d.min(point_segment_distance(y, vertices[i], vertices[(i + 1) % n]));
                }
                d
            }
        }
    }

    /// Shortest side length, used for resolution preconditions.
    pub fn min_extent(&self) -> f64 {
        match self {
            CrossSection::Rectangle { a, b } => a.min(*b),
            CrossSection::Disk { radius } => *radius,
            CrossSection::Polygon { vertices } => {
                let (lo, hi) = polygon_bbox(vertices);
                (hi.x - lo.x).min(hi.y - lo.y)
            }
        }
    }
}

fn polygon_area(v: &[Vector2<f64>]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += v[i].x * v[j].y - v[j].x * v[i].y;
    }
    s / 2.0
}

fn polygon_bbox(v: &[Vector2<f64>]) -> (Vector2<f64>, Vector2<f64>) {
    let mut lo = v[0];
    let mut hi = v[0];
    for p in v {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn point_in_polygon(v: &[Vector2<f64>], p: Vector2<f64>) -> bool {
    // even-odd rule
    let n = v.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn segments_properly_intersect(
    a: Vector2<f64>,
    b: Vector2<f64>,
    c: Vector2<f64>,
    d: Vector2<f64>,
) -> bool {
    let cross = |u: Vector2<f64>, v: Vector2<f64>| u.x * v.y - u.y * v.x;
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

fn polygon_self_intersects(v: &[Vector2<f64>]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            // skip adjacent edges (they share a vertex)
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            if segments_properly_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Shrink the cross-section by the period factor `l` (period rescaled to 1).
/// Cross-section eigenvalues then scale as M' = l^2 M.
pub fn rescale_period(cs: &CrossSection, l: f64) -> Result<CrossSection, GeometryError> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(GeometryError::BadScale(l));
    }
    Ok(match cs {
        CrossSection::Rectangle { a, b } => CrossSection::Rectangle { a: a / l, b: b / l },
        CrossSection::Disk { radius } => CrossSection::Disk { radius: radius / l },
        CrossSection::Polygon { vertices } => CrossSection::Polygon {
            vertices: vertices.iter().map(|v| v / l).collect(),
        },
    })
}

/// Shape of the small void, in stretched coordinates (origin interior).
#[derive(Debug, Clone)]
pub enum VoidShape {
    Ball { radius: f64 },
    Ellipsoid { semi_axes: Vector3<f64> },
    Cuboid { half_edges: Vector3<f64> },
    Surface(TriSurface),
}

impl VoidShape {
    pub fn ball(radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::BadShape);
        }
        Ok(VoidShape::Ball { radius })
    }

    pub fn ellipsoid(a1: f64, a2: f64, a3: f64) -> Result<Self, GeometryError> {
        if [a1, a2, a3].iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(GeometryError::BadShape);
        }
        Ok(VoidShape::Ellipsoid { semi_axes: Vector3::new(a1, a2, a3) })
    }

    pub fn cuboid(h1: f64, h2: f64, h3: f64) -> Result<Self, GeometryError> {
        if [h1, h2, h3].iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(GeometryError::BadShape);
        }
        Ok(VoidShape::Cuboid { half_edges: Vector3::new(h1, h2, h3) })
    }

    /// Validate and adopt a triangulated surface: must be closed, enclose the
    /// origin, and is re-wound outward if the input winding is inside-out.
    pub fn from_surface(mut s: TriSurface) -> Result<Self, GeometryError> {
        s.check_closed()?;
        s.orient_outward()?;
        if !s.contains(Vector3::zeros()) {
            return Err(GeometryError::BadShape);
        }
        Ok(VoidShape::Surface(s))
    }

    /// Triangulated boundary at the requested refinement level. Analytic
    /// shapes are tessellated; an explicit surface is returned as-is.
    pub fn boundary_mesh(&self, level: u32) -> TriSurface {
        match self {
            VoidShape::Ball { radius } => {
                icospherical(Vector3::new(*radius, *radius, *radius), level)
            }
            VoidShape::Ellipsoid { semi_axes } => icospherical(*semi_axes, level),
            VoidShape::Cuboid { half_edges } => surface::cuboid_surface(*half_edges, level),
            VoidShape::Surface(s) => s.clone(),
        }
    }

    /// Largest |xi_3| over the shape (axial half-extent).
    pub fn axial_extent(&self) -> f64 {
        match self {
            VoidShape::Ball { radius } => *radius,
            VoidShape::Ellipsoid { semi_axes } => semi_axes.z,
            VoidShape::Cuboid { half_edges } => half_edges.z,
            VoidShape::Surface(s) => {
                s.vertices.iter().map(|v| v.z.abs()).fold(0.0, f64::max)
            }
        }
    }

    /// Largest planar radius sqrt(xi_1^2 + xi_2^2) over the shape.
    pub fn planar_extent(&self) -> f64 {
        match self {
            VoidShape::Ball { radius } => *radius,
            VoidShape::Ellipsoid { semi_axes } => semi_axes.x.max(semi_axes.y),
            VoidShape::Cuboid { half_edges } => half_edges.xy().norm(),
            VoidShape::Surface(s) => s
                .vertices
                .iter()
                .map(|v| v.xy().norm())
                .fold(0.0, f64::max),
        }
    }
}

fn icospherical(semi_axes: Vector3<f64>, level: u32) -> TriSurface {
    surface::icosphere(level).scaled(&semi_axes)
}

/// meas3 of the void. Exact for analytic shapes; divergence-theorem
/// quadrature for triangulated surfaces.
pub fn void_measure(void: &VoidShape) -> Result<f64, GeometryError> {
    let v = match void {
        VoidShape::Ball { radius } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
        VoidShape::Ellipsoid { semi_axes } => {
            4.0 / 3.0 * std::f64::consts::PI * semi_axes.x * semi_axes.y * semi_axes.z
        }
        VoidShape::Cuboid { half_edges } => 8.0 * half_edges.x * half_edges.y * half_edges.z,
        VoidShape::Surface(s) => {
            s.check_closed()?;
            s.signed_volume().abs()
        }
    };
    if v <= 0.0 {
        return Err(GeometryError::BadShape);
    }
    Ok(v)
}

/// Boundary condition on the lateral waveguide wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Neumann,
    /// Dirichlet on the lateral wall, Neumann on the void surface.
    MixedDirichletLateral,
}

/// One validated period of the perturbed waveguide: the cell
/// omega x (0,1) with the scaled void removed.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub cross_section: CrossSection,
    pub void: VoidShape,
    /// Void center (y1, y2, z), z in (0,1), (y1,y2) interior to omega.
    pub center: Vector3<f64>,
    pub epsilon: f64,
    pub bc_kind: BcKind,
    /// Smallest distance from the scaled void to the cell boundary,
    /// recorded at construction.
    pub clearance: f64,
}

/// Validate a periodicity cell. Fails with `VoidEscapesCell` when the scaled
/// void does not fit strictly inside with positive clearance.
pub fn make_cell(
    cross_section: CrossSection,
    void: VoidShape,
    center: Vector3<f64>,
    epsilon: f64,
    bc_kind: BcKind,
) -> Result<CellGeometry, GeometryError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(GeometryError::BadShape);
    }
    if cross_section.area() <= 0.0 || void_measure(&void)? <= 0.0 {
        return Err(GeometryError::BadShape);
    }
    let y0 = center.xy();
    if !cross_section.contains(y0) || !(center.z > 0.0 && center.z < 1.0) {
        return Err(GeometryError::VoidEscapesCell(0.0));
    }
    let clearance = cell_clearance(&cross_section, &void, center, epsilon);
    if clearance <= 0.0 {
        return Err(GeometryError::VoidEscapesCell(clearance));
    }
    Ok(CellGeometry { cross_section, void, center, epsilon, bc_kind, clearance })
}

/// Distance from the scaled void `eps * theta + x0` to the cell boundary
/// (lateral wall and both period ends). Exact for balls; for other shapes the
/// scaled surface is sampled and the sample minimum is returned.
pub fn cell_clearance(
    cs: &CrossSection,
    void: &VoidShape,
    center: Vector3<f64>,
    eps: f64,
) -> f64 {
    let y0 = center.xy();
    match void {
        VoidShape::Ball { radius } => {
            let r = eps * radius;
            let lateral = cs.boundary_distance(y0) - r;
            let axial = (center.z - r).min(1.0 - center.z - r);
            lateral.min(axial)
        }
        _ => {
            let mesh = void.boundary_mesh(3);
            let mut clearance = f64::INFINITY;
            for v in &mesh.vertices {
                let p = center + eps * v;
                let y = p.xy();
                if !cs.contains(y) || p.z <= 0.0 || p.z >= 1.0 {
                    return -1.0;
                }
                let lateral = cs.boundary_distance(y);
                let axial = p.z.min(1.0 - p.z);
                clearance = clearance.min(lateral.min(axial));
            }
            clearance
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn make_cell_examples() {
        // unit disk, ball r=1, center (0,0,0.5), eps=0.1 -> clearance 0.4
        let cell = make_cell(
            CrossSection::disk(1.0).unwrap(),
            VoidShape::ball(1.0).unwrap(),
            Vector3::new(0.0, 0.0, 0.5),
            0.1,
            BcKind::Neumann,
        )
        .unwrap();
        assert!((cell.clearance - 0.4).abs() < 1e-12);

        // eps=0.6 exceeds the axial half-period clearance 0.5
        let err = make_cell(
            CrossSection::disk(1.0).unwrap(),
            VoidShape::ball(1.0).unwrap(),
            Vector3::new(0.0, 0.0, 0.5),
            0.6,
            BcKind::Neumann,
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::VoidEscapesCell(_)));

        // 1x1 rectangle with a cuboid void, eps=0.2 < 0.5 clearance
        make_cell(
            CrossSection::rectangle(1.0, 1.0).unwrap(),
            VoidShape::cuboid(1.0, 1.0, 1.0).unwrap(),
            Vector3::new(0.5, 0.5, 0.5),
            0.2,
            BcKind::Neumann,
        )
        .unwrap();
    }

    #[test]
    fn make_cell_matches_sampled_interior_check() {
        // succeeds iff every sampled scaled-surface point is interior
        let cases = [
            (0.3, true),
            (0.49, true),
            (0.51, false),
            (0.7, false),
        ];
        for (eps, ok) in cases {
            let cs = CrossSection::rectangle(2.0, 2.0).unwrap();
            let void = VoidShape::ellipsoid(1.0, 0.5, 1.0).unwrap();
            let center = Vector3::new(1.0, 1.0, 0.5);
            let res = make_cell(cs.clone(), void.clone(), center, eps, BcKind::Neumann);
            assert_eq!(res.is_ok(), ok, "eps={eps}");
            let mesh = void.boundary_mesh(3);
            let all_inside = mesh.vertices.iter().all(|v| {
                let p = center + eps * v;
                cs.contains(p.xy()) && p.z > 0.0 && p.z < 1.0
            });
            assert_eq!(all_inside, ok, "eps={eps}");
        }
    }

    #[test]
    fn rescale_examples() {
        let d = rescale_period(&CrossSection::disk(1.0).unwrap(), 2.0).unwrap();
        match d {
            CrossSection::Disk { radius } => assert!((radius - 0.5).abs() < 1e-15),
            _ => panic!(),
        }
        let r = rescale_period(&CrossSection::rectangle(1.0, 1.0).unwrap(), 2.0).unwrap();
        assert!((r.area() - 0.25).abs() < 1e-15);
        assert!(rescale_period(&CrossSection::disk(1.0).unwrap(), 0.0).is_err());
        assert!(rescale_period(&CrossSection::disk(1.0).unwrap(), -1.0).is_err());
    }

    #[test]
    fn void_measures() {
        let ball = VoidShape::ball(1.0).unwrap();
        assert!((void_measure(&ball).unwrap() - 4.0 * PI / 3.0).abs() < 1e-12);
        let ell = VoidShape::ellipsoid(1.0, 1.0, 0.5).unwrap();
        assert!((void_measure(&ell).unwrap() - 4.0 * PI / 3.0 * 0.5).abs() < 1e-12);
        // icosphere quadrature within 1% of the closed form
        let mesh = VoidShape::from_surface(surface::icosphere(3)).unwrap();
        let v = void_measure(&mesh).unwrap();
        assert!((v - 4.0 * PI / 3.0).abs() / (4.0 * PI / 3.0) < 0.01);
    }

    #[test]
    fn mesh_measure_rotation_invariant() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 0.7);
        let s = surface::icosphere(2).scaled(&Vector3::new(1.0, 0.7, 0.4));
        let v0 = VoidShape::from_surface(s.clone()).unwrap();
        let v1 = VoidShape::from_surface(s.rotated(rot.matrix())).unwrap();
        let m0 = void_measure(&v0).unwrap();
        let m1 = void_measure(&v1).unwrap();
        assert!((m0 - m1).abs() < 1e-12 * m0);
    }

    #[test]
    fn polygon_validation() {
        let square = CrossSection::polygon(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ])
        .unwrap();
        assert!((square.area() - 1.0).abs() < 1e-15);
        assert!(square.contains(Vector2::new(0.5, 0.5)));
        assert!(!square.contains(Vector2::new(1.5, 0.5)));
        // bow-tie is rejected
        assert!(CrossSection::polygon(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        ])
        .is_err());
    }

    proptest! {
        #[test]
        fn rescale_roundtrip(l in 0.1f64..10.0, r in 0.1f64..5.0) {
            let cs = CrossSection::disk(r).unwrap();
            let back = rescale_period(&rescale_period(&cs, l).unwrap(), 1.0 / l).unwrap();
            match back {
                CrossSection::Disk { radius } => {
                    prop_assert!((radius - r).abs() < 1e-12 * r);
                }
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn rescale_area_scaling(l in 0.1f64..10.0, a in 0.1f64..5.0, b in 0.1f64..5.0) {
            let cs = CrossSection::rectangle(a, b).unwrap();
            let scaled = rescale_period(&cs, l).unwrap();
            prop_assert!((scaled.area() - cs.area() / (l * l)).abs() < 1e-10 * cs.area());
        }
    }
}
