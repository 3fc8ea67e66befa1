use proptest::prelude::*;

use clinker_core::mesh::{conforming_delaunay, mesh_label_map, LabelRule, MeshOptions, TriMesh};
use clinker_core::synth::blob_label_map;

fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let (al, bl, cl) = (adx * adx + ady * ady, bdx * bdx + bdy * bdy, cdx * cdx + cdy * cdy);
    adx * (bdy * cl - bl * cdy) - ady * (bdx * cl - bl * cdx) + al * (bdx * cdy - bdy * cdx)
}

fn assert_empty_circumcircles(m: &TriMesh) -> Result<(), TestCaseError> {
    for (t, tri) in m.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| m.nodes[i]);
        prop_assert!(m.triangle_area(t) > 0.0, "triangle {t} is not counter-clockwise");
        for (i, &d) in m.nodes.iter().enumerate() {
            if tri.contains(&i) {
                continue;
            }
            prop_assert!(incircle(a, b, c, d) <= 1e-9 * (1.0 + a[0].abs() + a[1].abs()).powi(4), "node {i} inside triangle {t}");
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unconstrained_mesh_is_delaunay(pts in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..40)) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        match conforming_delaunay(&pts, &[], &MeshOptions { min_angle: 0.0, ..MeshOptions::default() }) {
            Ok(m) => {
                m.validate().unwrap();
                assert_empty_circumcircles(&m)?;
            }
            // All points collinear after snapping.
            Err(e) => prop_assert!(!e.is_numeric(), "{e}"),
        }
    }

    #[test]
    fn grid_points_with_ties_still_delaunay(n in 2usize..7, m in 2usize..7) {
        let pts: Vec<[f64; 2]> = (0..n * m).map(|k| [(k % n) as f64, (k / n) as f64]).collect();
        let mesh = conforming_delaunay(&pts, &[], &MeshOptions { min_angle: 0.0, ..MeshOptions::default() }).unwrap();
        prop_assert_eq!(mesh.triangles.len(), 2 * (n - 1) * (m - 1));
        assert_empty_circumcircles(&mesh)?;
    }

    #[test]
    fn label_meshes_cover_the_frame(seed in any::<u64>(), spacing in 1usize..5) {
        let labels = blob_label_map(40, 30, 5, 8.0, seed);
        let mesh = mesh_label_map(&labels, spacing, &MeshOptions::default(), LabelRule::Centroid).unwrap();
        mesh.validate().unwrap();
        prop_assert!((mesh.total_area() - 1200.0).abs() < 1e-9);
        let fr = mesh.phase_area_fractions();
        prop_assert!((fr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(mesh.labels.len() == mesh.triangles.len());
    }
}
