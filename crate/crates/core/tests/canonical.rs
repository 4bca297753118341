use proptest::prelude::*;
use sha2::{Digest, Sha256};

use capqa::backend::{CompletionRecord, RecordCache};
use capqa::{ChatTurn, CompletionRequest};

fn turn() -> impl Strategy<Value = ChatTurn> {
    (any::<bool>(), "[a-z\u{e9}][ -~\n\u{e9}\u{4e2d}]{0,40}").prop_map(|(user, text)| {
        if user {
            ChatTurn::user(text).unwrap()
        } else {
            ChatTurn::assistant(text).unwrap()
        }
    })
}

fn request() -> impl Strategy<Value = CompletionRequest> {
    (
        "[a-z0-9.-]{1,20}",
        prop::collection::vec(turn(), 1..5),
        0.0f64..2.0,
        prop::option::of(1u32..4096),
    )
        .prop_map(|(model, turns, temperature, max_output_tokens)| CompletionRequest {
            model,
            turns,
            temperature,
            max_output_tokens,
        })
}

proptest! {
    #[test]
    fn canonical_json_rehashes_identically(req in request(), id in "[a-z]{1,8}:[a-z0-9]{0,12}") {
        let canonical = req.canonical_json(&id);
        let reparsed: serde_json::Value = serde_json::from_str(&canonical).unwrap();
        prop_assert_eq!(reparsed.to_string(), canonical.clone());
        prop_assert_eq!(req.digest(&id), hex::encode(Sha256::digest(canonical.as_bytes())));
        prop_assert_eq!(req.clone().digest(&id), req.digest(&id));
    }

    #[test]
    fn digest_separates_backends_and_params(req in request()) {
        prop_assert_ne!(req.digest("mock:a"), req.digest("mock:b"));
        let mut warmer = req.clone();
        warmer.temperature += 0.5;
        prop_assert_ne!(req.digest("x"), warmer.digest("x"));
    }

    #[test]
    fn cache_round_trip_keeps_digests(reqs in prop::collection::vec(request(), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = RecordCache::open(&path).unwrap();
        let mut digests = Vec::new();
        for (i, r) in reqs.iter().enumerate() {
            let d = r.digest("mock:x");
            let record = CompletionRecord {
                request_digest: d.clone(),
                response_text: format!("reply {i}"),
                prompt_tokens: i as u64,
                completion_tokens: 1,
                tokens_estimated: true,
                latency_ms: 0,
                backend_id: "mock:x".into(),
                timestamp_ms: 0,
                attempts: 1,
            };
            cache.append(&r.canonical_json("mock:x"), &record).unwrap();
            digests.push(d);
        }
        drop(cache);
        let reloaded = RecordCache::open_read_only(&path).unwrap();
        for d in &digests {
            prop_assert!(reloaded.get(d).is_some());
        }
    }
}
