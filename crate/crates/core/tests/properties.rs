use proptest::prelude::*;

use hwcost::dataset::{augment, generate_one, AugmentPolicy, GeneratorConfig, Sample, TargetKind};
use hwcost::ir::{canonicalize, emit_text, emit_text_with_names, parse_function, validate, GraphFunction};
use hwcost::nn::{adam_step, AdamConfig, AdamState, Checkpoint, NamedTensor};
use hwcost::oracle::{register_pressure, vector_alu_utilization, MachineConfig};
use hwcost::tokenizer::{build_vocab, pad_or_truncate, tokenize, TokenMode, BOS, EOS, PAD};

fn function(seed: u64, index: u64, max_ops: usize) -> GraphFunction {
    let config = GeneratorConfig {
        seed,
        op_count_range: 1..=max_ops,
        ..GeneratorConfig::default()
    };
    generate_one(&config, index)
}

fn machine(width: u64) -> MachineConfig {
    let mut m = MachineConfig::default();
    m.register_width_bytes = width;
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_functions_are_valid_and_round_trip(seed in any::<u64>(), index in 0u64..1000, max_ops in 1usize..40) {
        let f = function(seed, index, max_ops);
        prop_assert!(validate(&f).is_empty());
        prop_assert!(f.body.len() <= max_ops);
        prop_assert_eq!(parse_function(&emit_text(&f).unwrap()).unwrap(), f.clone());
        prop_assert_eq!(canonicalize(&f), f);
    }

    #[test]
    fn named_text_round_trips(seed in any::<u64>(), index in 0u64..1000) {
        let f = function(seed, index, 12);
        let text = emit_text_with_names(&f).unwrap();
        prop_assert_eq!(parse_function(&text).unwrap(), f);
    }

    #[test]
    fn wider_registers_never_raise_pressure(seed in any::<u64>(), index in 0u64..1000, shift in 0u32..8) {
        let f = function(seed, index, 20);
        let narrow = register_pressure(&f, &machine(8 << shift)).unwrap();
        let wide = register_pressure(&f, &machine(16 << shift)).unwrap();
        prop_assert!(wide <= narrow);
        // every value needs at least one register while live
        prop_assert!(narrow >= 1);
    }

    #[test]
    fn utilization_is_a_fraction(seed in any::<u64>(), index in 0u64..1000) {
        let f = function(seed, index, 20);
        let u = vector_alu_utilization(&f, &MachineConfig::default()).unwrap();
        prop_assert!(u.vector_slots <= u.total_slots);
        prop_assert!(u.total_slots >= f.body.len() as u64);
        prop_assert!((0.0..=1.0).contains(&u.value()));
    }

    #[test]
    fn padding_keeps_boundaries(seed in any::<u64>(), index in 0u64..1000, max_len in 2usize..80) {
        let f = function(seed, index, 20);
        let vocab = build_vocab(std::slice::from_ref(&f), TokenMode::OpsAndOperands, 1).unwrap();
        let s = tokenize(&f, &vocab, TokenMode::OpsAndOperands);
        let p = pad_or_truncate(&s, max_len);
        prop_assert_eq!(p.ids.len(), max_len);
        prop_assert_eq!(p.ids[0], BOS);
        if s.ids.len() >= max_len {
            prop_assert_eq!(p.ids[max_len - 1], EOS);
        } else {
            prop_assert_eq!(&p.ids[..s.ids.len()], s.ids.as_slice());
            prop_assert!(p.ids[s.ids.len()..].iter().all(|&id| id == PAD));
        }
    }

    #[test]
    fn rename_augmentation_keeps_tokens_and_labels(seed in any::<u64>(), index in 0u64..500) {
        let f = function(seed, index, 10);
        let m = MachineConfig::default();
        let s = Sample::labelled(&f, TargetKind::RegisterPressure, &m).unwrap();
        let out = augment(std::slice::from_ref(&s), AugmentPolicy::RenameOnly, 3, &m, seed).unwrap();
        let vocab = build_vocab(std::slice::from_ref(&f), TokenMode::OpsAndOperands, 1).unwrap();
        let base = tokenize(&f, &vocab, TokenMode::OpsAndOperands);
        for v in &out {
            prop_assert_eq!(v.target_value, s.target_value);
            prop_assert_eq!(tokenize(&v.function().unwrap(), &vocab, TokenMode::OpsAndOperands), base.clone());
        }
    }

    #[test]
    fn reorder_augmentation_labels_match_oracle(seed in any::<u64>(), index in 0u64..500) {
        let f = function(seed, index, 10);
        let m = MachineConfig::default();
        let s = Sample::labelled(&f, TargetKind::RegisterPressure, &m).unwrap();
        for v in augment(&[s], AugmentPolicy::ReorderRecompute, 3, &m, seed).unwrap() {
            prop_assert!(v.label_matches(&m));
            prop_assert_eq!(v.function().unwrap().body.len(), f.body.len());
        }
    }

    #[test]
    fn checkpoint_round_trip(
        config in "[ -~\n]{0,40}",
        tensors in prop::collection::vec(prop::collection::vec(any::<f64>(), 0..20), 0..4),
        with_adam in any::<bool>(),
    ) {
        let tensors: Vec<NamedTensor> = tensors
            .into_iter()
            .enumerate()
            .map(|(i, values)| NamedTensor { name: format!("t{i}"), shape: vec![values.len()], values })
            .collect();
        let adam = with_adam.then(|| tensors.iter().map(|t| AdamState::new(t.values.len())).collect());
        let ck = Checkpoint { config, vocab: "0\t<pad>\n".into(), tensors, adam };
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn adam_moves_against_the_gradient(g in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let mut params = vec![0.0; g.len()];
        let mut state = AdamState::new(g.len());
        adam_step(&mut params, &mut state, &g, &AdamConfig::default()).unwrap();
        for (p, g) in params.iter().zip(&g) {
            prop_assert!(*p == 0.0 || p.signum() == -g.signum());
            prop_assert!(p.abs() <= 1e-3 + 1e-12);
        }
    }
}
