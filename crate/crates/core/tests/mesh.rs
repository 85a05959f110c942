use std::collections::HashMap;

use cqmot::error::Error;
use cqmot::mesh::{barycentric_refine, Topology, TriangleMesh};
use cqmot::Vec3;
use proptest::prelude::*;

const TETRA: &str = "\
# regular tetrahedron
v 1 1 1
v 1 -1 -1
v -1 1 -1
v -1 -1 1
f 1 2 3
f 1 4 2
f 1 3 4
f 2 4 3
";

const OCTA: &str = "\
v 1 0 0
v -1 0 0
v 0 1 0
v 0 -1 0
v 0 0 1
v 0 0 -1
f 1 3 5
f 3 2 5
f 2 4 5
f 4 1 5
f 3 1 6
f 2 3 6
f 4 2 6
f 1 4 6
";

fn counts(m: &TriangleMesh) -> (usize, usize, usize, i64) {
    let t = Topology::new(m).unwrap();
    (t.vertex_count, t.edge_count(), t.face_count, t.euler)
}

/// Every directed edge appears exactly once: the orientation is consistent.
fn consistently_oriented(m: &TriangleMesh) -> bool {
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &m.faces {
        for i in 0..3 {
            *seen.entry((f[i], f[(i + 1) % 3])).or_default() += 1;
        }
    }
    seen.iter().all(|(&(a, b), &n)| n == 1 && seen.get(&(b, a)) == Some(&1))
}

fn enclosed_volume(m: &TriangleMesh) -> f64 {
    (0..m.faces.len())
        .map(|t| {
            let [a, b, c] = m.corners(t);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

#[test]
fn parses_the_tetrahedron_document() {
    let m = TriangleMesh::parse(TETRA).unwrap();
    assert_eq!(counts(&m), (4, 6, 4, 2));
}

#[test]
fn parses_the_octahedron_document() {
    let m = TriangleMesh::parse(OCTA).unwrap();
    assert_eq!(counts(&m), (6, 12, 8, 2));
}

#[test]
fn zero_index_is_rejected_with_its_line() {
    let doc = TETRA.replace("f 1 2 3", "f 0 2 3");
    match TriangleMesh::parse(&doc) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_lines_are_rejected() {
    assert!(matches!(TriangleMesh::parse("v 1 2\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(TriangleMesh::parse("x 1 2 3\n"), Err(Error::Parse { line: 1, .. })));
    let open: String = TETRA.lines().filter(|l| *l != "f 2 4 3").map(|l| format!("{l}\n")).collect();
    assert!(matches!(TriangleMesh::parse(&open), Err(Error::Mesh(_))));
}

#[test]
fn non_manifold_edges_are_rejected() {
    // Two tetrahedra glued along one edge only: that edge has four faces.
    let mut doc = String::from(TETRA);
    doc.push_str("v 3 3 3\nv 3 1 1\n");
    doc.push_str("f 1 2 5\nf 1 6 2\nf 1 5 6\nf 2 6 5\n");
    assert!(TriangleMesh::parse(&doc).is_err());
}

#[test]
fn inconsistent_orientation_is_repaired_outward() {
    let flipped = TETRA.replace("f 1 4 2", "f 1 2 4").replace("f 2 4 3", "f 2 3 4");
    let m = TriangleMesh::parse(&flipped).unwrap();
    assert!(consistently_oriented(&m));
    assert!(enclosed_volume(&m) > 0.0);
    let inside_out = OCTA
        .lines()
        .map(|l| match l.strip_prefix("f ") {
            Some(r) => {
                let v: Vec<&str> = r.split_whitespace().collect();
                format!("f {} {} {}\n", v[0], v[2], v[1])
            }
            None => format!("{l}\n"),
        })
        .collect::<String>();
    let m = TriangleMesh::parse(&inside_out).unwrap();
    assert!(enclosed_volume(&m) > 0.0);
}

#[test]
fn text_round_trip_is_exact() {
    let m = TriangleMesh::icosphere(0.7, 1).unwrap();
    let back = TriangleMesh::parse(&m.to_text()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn sphere_with_270_edges() {
    let m = TriangleMesh::uv_sphere(1.0, 10, 10).unwrap();
    assert_eq!(counts(&m), (92, 270, 180, 2));
    let t = Topology::new(&m).unwrap();
    assert_eq!(t.genus, 0);
    assert!((t.diameter - 2.0).abs() < t.h);
}

#[test]
fn torus_topology_and_parametrization() {
    let m = TriangleMesh::torus(0.2, 0.5, 1).unwrap();
    let t = Topology::new(&m).unwrap();
    assert_eq!((t.euler, t.genus), (0, 1));
    assert!((t.diameter - 1.0).abs() < t.h);
    for p in &m.vertices {
        let rho = p.x.hypot(p.y);
        assert!(((rho - 0.35).powi(2) + p.z * p.z - 0.15f64.powi(2)).abs() < 1e-12);
    }
}

#[test]
fn tetrahedron_metrics() {
    let m = TriangleMesh::tetrahedron(1.0).unwrap();
    let t = Topology::new(&m).unwrap();
    let edge = (m.vertices[0] - m.vertices[1]).norm();
    assert_eq!(t.h, edge);
    assert!(t.diameter >= t.h && t.h > 0.0);
    let r = barycentric_refine(&m, &t).unwrap();
    assert_eq!(r.mesh.vertices.len(), 14);
    assert_eq!(r.mesh.faces.len(), 24);
}

#[test]
fn refined_sphere_has_six_children_per_face() {
    let m = TriangleMesh::uv_sphere(1.0, 10, 10).unwrap();
    let t = Topology::new(&m).unwrap();
    let r = barycentric_refine(&m, &t).unwrap();
    assert_eq!(r.mesh.faces.len(), 1080);
    assert_eq!(Topology::new(&r.mesh).unwrap().euler, 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn icospheres_are_closed_and_on_the_sphere(radius in 0.1f64..10.0, level in 0usize..3) {
        let m = TriangleMesh::icosphere(radius, level).unwrap();
        let t = Topology::new(&m).unwrap();
        prop_assert_eq!(t.face_count, 20 * 4usize.pow(level as u32));
        prop_assert_eq!(2 * t.edge_count(), 3 * t.face_count);
        prop_assert_eq!(t.euler, 2);
        prop_assert!(consistently_oriented(&m));
        prop_assert!(enclosed_volume(&m) > 0.0);
        let worst = m.vertices.iter().map(|p| (p.norm() - radius).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-12 * radius.max(1.0));
    }

    #[test]
    fn tori_have_zero_euler_characteristic(
        minor in 0.05f64..0.4,
        gap in 0.05f64..1.0,
        n_ring in 6usize..20,
        n_tube in 3usize..10,
    ) {
        let m = TriangleMesh::torus_grid(minor + gap, minor, n_ring, n_tube).unwrap();
        let t = Topology::new(&m).unwrap();
        prop_assert_eq!((t.euler, t.genus, t.components), (0, 1, 1));
        prop_assert!(consistently_oriented(&m));
        prop_assert!(enclosed_volume(&m) > 0.0);
        prop_assert!(t.diameter >= t.h);
    }

    #[test]
    fn refinement_preserves_euler_and_area(n_lon in 3usize..12, n_lat in 2usize..10) {
        let m = TriangleMesh::uv_sphere(1.0, n_lon, n_lat).unwrap();
        let t = Topology::new(&m).unwrap();
        let r = barycentric_refine(&m, &t).unwrap();
        let rt = Topology::new(&r.mesh).unwrap();
        prop_assert_eq!(rt.euler, t.euler);
        prop_assert_eq!(r.mesh.vertices.len(), t.vertex_count + t.edge_count() + t.face_count);
        prop_assert!(consistently_oriented(&r.mesh));
        let area = |mm: &TriangleMesh| (0..mm.faces.len()).map(|k| mm.face_area(k)).sum::<f64>();
        prop_assert!((area(&m) - area(&r.mesh)).abs() < 1e-12);
        // Children keep the parent's normal.
        for k in 0..m.faces.len() {
            let n: Vec3 = m.face_normal(k);
            for c in 6 * k..6 * k + 6 {
                prop_assert!((r.mesh.face_normal(c) - n).norm() < 1e-9);
            }
        }
    }
}
