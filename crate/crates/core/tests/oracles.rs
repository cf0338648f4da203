//! Closed-form quadrature against brute-force numerical integration.

mod suite;

#[test]
fn evidence_matches_grid_quadrature_in_one_and_two_dimensions() {
    suite::oracles::evidence_matches_grid_quadrature_in_one_and_two_dimensions();
}

#[test]
fn separable_variance_term_matches_quadruple_loop() {
    suite::oracles::separable_variance_term_matches_quadruple_loop();
}

#[test]
fn mixture_expansion_matches_likelihood_variance() {
    suite::oracles::mixture_expansion_matches_likelihood_variance();
}
