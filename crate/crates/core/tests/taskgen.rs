use proptest::prelude::*;

use stablept::taskgen::{build_templates, generate_task, read_jsonl, tokenize, HardTemplate, Vocabulary, MAX_INPUT_LEN, MIN_INPUT_LEN};

fn template_strategy() -> impl Strategy<Value = HardTemplate> {
    (proptest::collection::vec(4usize..24, 0..9), any::<prop::sample::Index>()).prop_map(|(mut toks, at)| {
        let pos = at.index(toks.len() + 1);
        toks.insert(pos, 1);
        HardTemplate::new(0, toks, 1, 0).unwrap()
    })
}

proptest! {
    #[test]
    fn tokenize_keeps_template_and_mask(
        raw in proptest::collection::vec(2usize..128, 0..40),
        t in template_strategy(),
        max_len in 10usize..40,
    ) {
        let out = tokenize(&raw, max_len, &t, 1, 0).unwrap();
        prop_assert_eq!(out.ids.len(), max_len);
        prop_assert_eq!(out.valid.len(), max_len);
        prop_assert_eq!(&out.ids[..t.len()], t.tokens.as_slice());
        prop_assert_eq!(out.ids[out.mask_pos], 1);
        prop_assert_eq!(out.ids.iter().filter(|&&x| x == 1).count(), 1);
        let used = (t.len() + raw.len()).min(max_len);
        prop_assert_eq!(out.unpadded().len(), used);
        prop_assert_eq!(&out.ids[t.len()..used], &raw[..used - t.len()]);
        prop_assert!(out.ids[used..].iter().all(|&x| x == 0));
    }

    #[test]
    fn generated_examples_are_well_formed(seed in 0u64..1000, noise in 0.0f64..0.5) {
        let task = generate_task(2, noise, seed).unwrap();
        let v = Vocabulary::standard();
        for ex in task.train.iter().chain(&task.dev).chain(&task.test) {
            prop_assert!((MIN_INPUT_LEN..=MAX_INPUT_LEN).contains(&ex.tokens.len()));
            prop_assert!(ex.tokens.iter().all(|t| v.signal_class(*t).is_some() || v.distractors.contains(t)));
            prop_assert!(ex.label < 2);
        }
    }
}

#[test]
fn noiseless_examples_only_carry_their_own_signal() {
    let task = generate_task(2, 0.0, 8).unwrap();
    for ex in task.train.iter().chain(&task.test) {
        let classes: Vec<usize> = ex.tokens.iter().filter_map(|&t| task.vocab.signal_class(t)).collect();
        assert!(!classes.is_empty());
        assert!(classes.iter().all(|&c| c == ex.label));
    }
}

#[test]
fn files_round_trip() {
    let task = generate_task(2, 0.15, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("task.jsonl");
    task.write_jsonl(&path).unwrap();
    let (train, dev, test) = read_jsonl(&path).unwrap();
    assert_eq!((train, dev, test), (task.train.clone(), task.dev.clone(), task.test.clone()));
    let rebuilt = stablept::taskgen::FewShotTask::from_manifest(&task.manifest()).unwrap();
    assert_eq!(rebuilt, task);
}

#[test]
fn templates_are_prefix_stable() {
    let six = build_templates(6, 11);
    let three = build_templates(3, 11);
    assert_eq!(&six[..3], three.as_slice());
    assert_ne!(build_templates(6, 12), six);
}
