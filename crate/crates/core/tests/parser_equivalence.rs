mod common;

use common::*;

#[test]
fn engine_matches_reference_on_text_corpus() {
    for (name, g) in text_corpus() {
        for o in option_grid() {
            let c = compiled(&g, &o);
            let (_, bad) = compare_parsers(&g, &c, alphabet(name), 8);
            assert!(bad.is_none(), "{name} {o:?}: {:?}", bad.map(|b| String::from_utf8_lossy(&b).into_owned()));
        }
    }
}
