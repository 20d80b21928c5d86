use warfarin_xrl_bench::{actor, cohort, distill_data, observation_batch};

#[test]
fn fixtures_have_expected_shapes() {
    assert_eq!(cohort(5).len(), 5);
    let net = actor();
    assert_eq!((net.input_dim(), net.output_dim()), (4, 21));
    assert_eq!(observation_batch().dim(), (6500, 4));
    let d = distill_data(100);
    assert_eq!(d.len(), 100);
    assert!(d.rows.iter().all(|&(x, _)| (0.8..5.0).contains(&x)));
}
