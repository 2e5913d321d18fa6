mod common;

use arena_fragility::prefdata::parse_jsonl;
use arena_fragility::{PreferenceDataset, PreferenceRecord, Provenance, VoteLabel};
use common::id;
use proptest::prelude::*;

fn arb_record() -> impl Strategy<Value = PreferenceRecord> {
    (
        0usize..5,
        1usize..5,
        0usize..3,
        prop::option::of("[a-z \"\\\\é\n]{0,12}"),
        prop::option::of(("[a-z ]{0,8}", "[a-z ]{0,8}")),
        0usize..3,
    )
        .prop_map(|(a, off, l, prompt, responses, prov)| {
            let mut r = PreferenceRecord::new(
                id(&format!("model-{a}")),
                id(&format!("model-{}", (a + off) % 5)),
                VoteLabel::ALL[l],
            );
            r.prompt = prompt;
            r.responses = responses;
            r.provenance = [Provenance::Organic, Provenance::Apathetic, Provenance::Adversarial][prov];
            r
        })
}

proptest! {
    #[test]
    fn jsonl_roundtrip(records in prop::collection::vec(arb_record(), 1..30)) {
        let ds = PreferenceDataset::from_records(records).unwrap();
        let text = ds.to_jsonl_string();
        let back = parse_jsonl(text.as_bytes()).unwrap();
        prop_assert_eq!(back, ds);
    }
}
