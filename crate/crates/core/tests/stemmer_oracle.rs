//! The grouped miner, rule-indexed relation, and argmax assignment must
//! agree exactly with the quadratic reference implementations on random
//! vocabularies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stemlm_core::stemmer::{self, bruteforce, StemmerParams};

fn random_vocab(rng: &mut ChaCha8Rng, max_words: usize, alphabet: usize, max_len: usize) -> Vec<String> {
    let n = rng.random_range(10..=max_words);
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.random_range(1..=max_len);
        let w: String = (0..len)
            .map(|_| (b'a' + rng.random_range(0..alphabet) as u8) as char)
            .collect();
        words.push(w);
    }
    words.sort();
    words.dedup();
    words
}

#[test]
fn pipeline_matches_bruteforce_on_random_vocabularies() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_817);
    for case in 0..25 {
        let alphabet = rng.random_range(2..=6);
        let words = random_vocab(&mut rng, 200, alphabet, 8);
        let delta_s = rng.random_range(1..=3);
        let delta_p = rng.random_range(1..=3);
        let (max_s, max_p) = (6, 4);

        let fast_rs = stemmer::mine_suffix_rules(&words, delta_s, max_s);
        let slow_rs = bruteforce::mine_suffix_rules(&words, delta_s, max_s);
        let fast_rules: Vec<_> = fast_rs.iter().collect();
        let slow_rules: Vec<_> = slow_rs.iter().collect();
        assert_eq!(
            fast_rules, slow_rules,
            "case {case}: suffix rules diverge (|V|={}, delta_s={delta_s})",
            words.len()
        );

        let fast_rp = stemmer::mine_prefix_rules(&words, delta_p, max_p);
        let slow_rp = bruteforce::mine_prefix_rules(&words, delta_p, max_p);
        assert_eq!(
            fast_rp.iter().collect::<Vec<_>>(),
            slow_rp.iter().collect::<Vec<_>>(),
            "case {case}: prefix rules diverge"
        );

        let fast_rel = stemmer::build_relation(&words, &fast_rp, &fast_rs);
        let slow_rel = bruteforce::build_relation(&words, &slow_rp, &slow_rs);
        assert_eq!(
            fast_rel.pairs(),
            slow_rel.pairs(),
            "case {case}: relations diverge"
        );

        let fast_map = stemmer::assign_stems(&fast_rel);
        let slow_map = stemmer::assign_stems(&slow_rel);
        assert_eq!(fast_map, slow_map, "case {case}: stem maps diverge");

        let direct = bruteforce::stem_map(&words, delta_s, delta_p, max_s, max_p);
        assert_eq!(fast_map, direct, "case {case}: end-to-end maps diverge");

        let pipeline = stemmer::derive_stem_map(
            &words,
            &StemmerParams {
                delta_s: Some(delta_s),
                delta_p: Some(delta_p),
                max_suffix_len: max_s,
                max_prefix_len: max_p,
                target_suffix_count: None,
            },
        );
        assert_eq!(pipeline.stem_map, direct, "case {case}: pipeline diverges");
    }
}

#[test]
fn totality_and_weight_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let words = random_vocab(&mut rng, 120, 3, 7);
        let rs = stemmer::mine_suffix_rules(&words, 2, 6);
        let rp = stemmer::mine_prefix_rules(&words, 2, 4);
        let rel = stemmer::build_relation(&words, &rp, &rs);
        let map = stemmer::assign_stems(&rel);
        let word_set: std::collections::HashSet<&str> =
            words.iter().map(String::as_str).collect();
        for w in &words {
            // totality and closure
            let stem = map.stem(w).expect("total");
            assert!(word_set.contains(stem));
        }
        for i in 0..rel.words().len() as u32 {
            assert!(rel.wt(i) >= 1);
        }
        // the chosen stem's weight dominates every other candidate's
        for (wi, w) in rel.words().iter().enumerate() {
            let stem = map.stem(w).unwrap();
            let stem_idx = rel.words().iter().position(|x| x == stem).unwrap() as u32;
            for &cand in rel.candidates_of(wi as u32) {
                assert!(
                    rel.wt(stem_idx) >= rel.wt(cand),
                    "stem weight beaten by candidate for {w}"
                );
            }
        }
    }
}
