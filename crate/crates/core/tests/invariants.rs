mod props;

#[test]
fn invariant_suite() {
    let mut failed = Vec::new();
    for (name, check) in props::CHECKS {
        if let Err(e) = check() {
            failed.push(format!("{name}: {e}"));
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}
