use attnmesh_core::gradcheck::primitive_suite;

#[test]
fn every_primitive_matches_finite_differences() {
    for e in primitive_suite(50, 2024).unwrap() {
        println!("{:<28} cases={} max_rel={:.3e}", e.name, e.cases, e.max_rel_error);
        assert!(e.max_rel_error < 1e-3, "{} max rel error {}", e.name, e.max_rel_error);
    }
}
