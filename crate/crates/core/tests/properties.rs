use hencky::analysis::*;
use hencky::cli::{fields_node_csv, fields_tri_csv, parse_indexed_csv};
use hencky::mesh::{domains, triangulate, BoundaryCondition, Mesh};
use hencky::oracles::*;
use hencky::solver::*;
use hencky::Vec2;
use proptest::prelude::*;

fn rect_mesh(w: f64, hgt: f64, h: f64, bc: BoundaryCondition) -> (hencky::mesh::Domain, Mesh) {
    let d = domains::rectangle(Vec2::ZERO, Vec2::new(w, hgt), bc).unwrap();
    let m = triangulate(&d, h).unwrap();
    (d, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn meshes_are_positive_and_cover_the_domain(w in 0.5..2.0f64, hgt in 0.5..2.0f64, h in 0.08..0.3f64) {
        let (d, m) = rect_mesh(w, hgt, h, BoundaryCondition::dirichlet(0.0, 0.0, 0.0));
        let area: f64 = (0..m.n_triangles()).map(|t| m.signed_area(t)).sum();
        prop_assert!((0..m.n_triangles()).all(|t| m.signed_area(t) > 0.0));
        prop_assert!((area - d.area()).abs() <= 1e-9 * d.area());
        prop_assert!(m.min_angle_deg() >= 20.0);
    }

    #[test]
    fn mesh_dump_round_trips(w in 0.5..2.0f64, h in 0.1..0.4f64) {
        let (_, m) = rect_mesh(w, 1.0, h, BoundaryCondition::dirichlet(0.0, 0.0, 0.0));
        let back = Mesh::from_dump(&m.to_dump(), m.h).unwrap();
        prop_assert_eq!(back.n_nodes(), m.n_nodes());
        prop_assert_eq!(&back.triangles, &m.triangles);
        prop_assert!(back.nodes.iter().zip(&m.nodes).all(|(a, b)| a == b));
    }

    #[test]
    fn field_csvs_round_trip_exactly(alpha in prop::sample::select(vec![-1.0, 1.0]), ax in -1.0..-0.3f64, ay in 0.0..1.0f64) {
        let (_, m) = rect_mesh(1.0, 1.0, 0.2, BoundaryCondition::dirichlet(0.0, 0.0, 0.0));
        let o = Oracle::Fan(FanOracle::new(Vec2::new(ax, ay), alpha, MonotoneTable::new(vec![(-2.0, 0.0), (2.0, 1.0)]).unwrap()).unwrap());
        let r = oracle_fields_on_mesh(&o, &m).unwrap();
        let tri = parse_indexed_csv(&fields_tri_csv(&m, &r), "tri_id,cx,cy,sigma_x,sigma_y,p_x,p_y,p_norm").unwrap();
        prop_assert!(tri.iter().zip(&r.sigma).all(|(row, s)| row[2] == s.x && row[3] == s.y));
        let node = parse_indexed_csv(&fields_node_csv(&m, &r), "node_id,x,y,u").unwrap();
        prop_assert!(node.iter().zip(&r.u).all(|(row, u)| row[2] == *u));
    }

    /// Subcritical affine data is a discrete minimizer; the solver recovers
    /// it to its stopping tolerance and stays elastic.
    #[test]
    fn subcritical_affine_data_is_elastic(b in -0.9..0.9f64, c in -0.4..0.4f64) {
        prop_assume!(b * b + c * c < 0.8);
        let (d, m) = rect_mesh(1.0, 1.0, 0.25, BoundaryCondition::dirichlet(0.3, b, c));
        let r = minimize(&m, &d, &SolverConfig::default()).unwrap();
        let g = Vec2::new(b, c);
        let err = r.sigma.iter().map(|s| (*s - g).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-3, "max stress error {err:e}");
        prop_assert!(r.p_norm.iter().all(|&p| p <= 1e-6));
    }

    /// Every vortex field satisfies ordering and Lipschitz bounds and has
    /// straight characteristics along which u is constant.
    #[test]
    fn vortex_fields_pass_the_flow_checks(ax in -1.0..-0.3f64, ay in 0.0..1.0f64, alpha in prop::sample::select(vec![-1.0, 1.0])) {
        let (_, m) = rect_mesh(1.0, 1.0, 1.0 / 16.0, BoundaryCondition::dirichlet(0.0, 0.0, 0.0));
        let o = Oracle::Fan(FanOracle::new(Vec2::new(ax, ay), alpha, MonotoneTable::new(vec![(-2.0, 0.0), (2.0, 1.5)]).unwrap()).unwrap());
        let r = oracle_fields_on_mesh(&o, &m).unwrap();
        let zone = extract_plastic_zone(&m, &r, 0.02).unwrap();
        let view = FieldView::from_result(&m, &r).unwrap().with_exact(&o);
        prop_assert_eq!(check_ordering(&view, &zone, 500, 0.02, 3).unwrap().violations, 0);
        let lines = seed_and_trace(&view, &zone, 0.1, 1.0 / 32.0);
        prop_assert!(!lines.is_empty());
        prop_assert!(lines.iter().all(|l| l.sigma_deviation <= 1e-9 && l.u_deviation <= 1e-9));
        prop_assert_eq!(check_non_intersection(&view, &zone, &lines).violations, 0);
    }

    #[test]
    fn percentile_is_monotone_and_bounded(mut v in prop::collection::vec(-1e3..1e3f64, 1..50), q1 in 0.0..1.0f64, q2 in 0.0..1.0f64) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(percentile(&v, lo) <= percentile(&v, hi));
        v.sort_by(f64::total_cmp);
        prop_assert!(v.contains(&percentile(&v, lo)));
    }
}
