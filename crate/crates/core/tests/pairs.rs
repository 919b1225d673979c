mod common;

use alignreid::losses::pair_label;
use common::criteria::{pair_taxonomy, PAIR_TABLE};

#[test]
fn label_table_is_exhaustive() {
    let mut seen = Vec::new();
    for a in [false, true] {
        for b in [false, true] {
            for c in [false, true] {
                let row = PAIR_TABLE.iter().find(|(s, _)| *s == (a, b, c)).expect("signature in table");
                assert_eq!(pair_label(a, b, c), row.1);
                seen.push((a, b, c));
            }
        }
    }
    assert_eq!(seen.len(), PAIR_TABLE.len());
}

#[test]
fn full_epoch_audit_finds_no_mislabeled_pairs() {
    println!("{}", pair_taxonomy().unwrap());
}
