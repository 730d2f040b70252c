use pantcr_net::gradcheck::{gradcheck, BLOCKS, TOLERANCE};

#[test]
fn every_block_passes_finite_differences() {
    let mut failures = Vec::new();
    for block in BLOCKS {
        let rep = gradcheck(block, 17).unwrap();
        for t in &rep.tensors {
            if t.max_rel_err >= TOLERANCE {
                failures.push(format!("{block}/{}: {:.3e}", t.name, t.max_rel_err));
            }
        }
        assert!(!rep.tensors.is_empty(), "{block} checked nothing");
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
