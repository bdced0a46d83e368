mod common;

use common::runner;

#[test]
fn delivery_share_simplex() {
    common::delivery_share_simplex(&mut runner()).unwrap();
}

#[test]
fn imputed_doses_sum_to_total() {
    common::imputed_doses_sum_to_total(&mut runner()).unwrap();
}

#[test]
fn fully_split_sums_to_total() {
    common::fully_split_sums_to_total(&mut runner()).unwrap();
}

#[test]
fn effective_count_within_doses() {
    common::effective_count_within_doses(&mut runner()).unwrap();
}

#[test]
fn theta_i_bounded_and_monotone() {
    common::theta_i_bounded_and_monotone(&mut runner()).unwrap();
}

#[test]
fn combine_bounds() {
    common::combine_bounds(&mut runner()).unwrap();
}

#[test]
fn aggregation_convexity() {
    common::aggregation_convexity(&mut runner()).unwrap();
}
