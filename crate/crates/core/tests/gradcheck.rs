//! Finite-difference checks of every layer and block in 64-bit.

#[path = "common/grad.rs"]
mod grad;

fn assert_all(cases: grad::Cases) {
    let bad = grad::failures(&cases);
    assert!(bad.is_empty(), "failed: {bad:?}");
}

#[test]
fn convolutions_and_elementwise() {
    assert_all(grad::conv_cases());
}

#[test]
fn pool_linear_softmax_cross_entropy() {
    assert_all(grad::head_cases());
}

#[test]
fn all_block_kinds() {
    assert_all(grad::block_cases());
}

#[test]
fn tied_recursive_blocks_and_whole_model() {
    assert_all(grad::recursive_cases());
}
