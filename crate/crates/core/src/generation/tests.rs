use rand::{Rng, SeedableRng};

use super::*;
use crate::data::ProteinRecord;
use crate::tokenizer::{WordVocab, RESIDUES, VOCAB_SIZE};
use crate::training::{fit, AdamWConfig, TrainConfig};

const TEXT: &str = "FUNCTION: Is involved in the catabolism of quinate.";

fn setup(seed: u64) -> (ModelConfig, ModelParams, TextProvider) {
    let vocab = WordVocab::build([TEXT]);
    let config = ModelConfig { ffn_dim: 32, ..ModelConfig::tiny(16, 1, 2, 2, vocab.len()) };
    let params = ModelParams::init(&config, seed);
    (config, params, TextProvider::Trainable(vocab))
}

#[test]
fn fragment_is_kept_verbatim() {
    let (config, params, text) = setup(0);
    let g = Generator { config: &config, params: &params, text: &text };
    let gp = GenerationParams { max_len: 20, ..Default::default() };
    let out = g.generate(&PromptSpec::with_fragment("p", TEXT, "MAARILLIN"), &gp).unwrap();
    assert!(out.sequence.starts_with("MAARILLIN"), "{}", out.sequence);
    assert!(out.sequence.len() <= 20);
}

#[test]
fn tiny_budget_and_prompt_validation() {
    let (config, params, text) = setup(1);
    let g = Generator { config: &config, params: &params, text: &text };
    let out = g.generate(&PromptSpec::text_only("p", TEXT), &GenerationParams { max_len: 1, ..Default::default() }).unwrap();
    assert!(out.sequence.len() <= 1);
    assert!(out.trace.len() <= 1);
    let gp = GenerationParams { max_len: 5, ..Default::default() };
    assert!(matches!(g.generate(&PromptSpec::with_fragment("p", TEXT, "MAARILLIN"), &gp), Err(GenerationError::InvalidPrompt(_))));
    assert!(g.generate(&PromptSpec::with_fragment("p", TEXT, ""), &gp).is_err());
    assert!(g.generate(&PromptSpec::with_fragment("p", TEXT, "MA1"), &gp).is_err());
    assert!(g.generate(&PromptSpec::text_only("p", TEXT), &GenerationParams { max_len: 1024, ..Default::default() }).is_err());
    assert!(g.generate(&PromptSpec::text_only("p", TEXT), &GenerationParams { repetition_penalty: 0.5, ..gp }).is_err());
}

#[test]
fn seeded_runs_repeat_and_stay_inside_the_nucleus() {
    let (config, params, text) = setup(2);
    let g = Generator { config: &config, params: &params, text: &text };
    let gp = GenerationParams { max_len: 40, seed: 17, num_candidates: 3, ..Default::default() };
    let prompt = PromptSpec::text_only("p", TEXT);
    let a = g.generate_candidates(&prompt, &gp).unwrap();
    let b = g.generate_candidates(&prompt, &gp).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[1], g.generate(&prompt, &GenerationParams { seed: 18, ..gp.clone() }).unwrap());
    for cand in &a {
        assert!(cand.sequence.chars().all(|c| RESIDUES.contains(c)));
        for step in &cand.trace {
            assert!(step.nucleus.contains(&step.token));
        }
        // the EOS step, if any, is the last step and is not emitted
        if cand.stop == StopReason::Eos {
            assert_eq!(cand.trace.last().unwrap().token, EOS);
            assert_eq!(cand.trace.len(), cand.sequence.len() + 1);
        } else {
            assert_eq!(cand.sequence.len(), 40);
        }
    }
}

#[test]
fn penalty_lowers_the_probability_of_the_emitted_token() {
    let (config, params, text) = setup(3);
    let g = Generator { config: &config, params: &params, text: &text };
    let features = text.features("p", TEXT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let mut tokens = vec![crate::tokenizer::CLS];
        tokens.extend((0..rng.gen_range(1..8)).map(|_| rng.gen_range(4..VOCAB_SIZE)));
        let last = *tokens.last().unwrap();
        let logits = g.next_logits(&tokens, &features).unwrap();
        let history = &tokens[1..];
        let others: Vec<TokenId> = history.iter().copied().filter(|&t| t != last).collect();
        let with = softmax_with_temperature(&apply_repetition_penalty(&logits, history, 1.2).unwrap(), 1.0).unwrap();
        let without = softmax_with_temperature(&apply_repetition_penalty(&logits, &others, 1.2).unwrap(), 1.0).unwrap();
        assert!(with[last] <= without[last]);
    }
}

#[test]
fn overfit_pair_is_reproduced_by_argmax_decoding() {
    let sequence = "MKTAYIAKQRQISFVKSHFSRQ";
    let record = ProteinRecord::new("m", TEXT, sequence).unwrap();
    let vocab = WordVocab::build([record.text.as_str()]);
    let provider = TextProvider::Trainable(vocab.clone());
    let config = ModelConfig { ffn_dim: 32, ..ModelConfig::tiny(16, 1, 2, 2, vocab.len()) };
    let item = BatchItem::from_record(&record, &provider).unwrap();
    let train = TrainConfig {
        epochs: 200,
        batch_size: 1,
        seed: 5,
        optimizer: AdamWConfig { lr: 5e-3, weight_decay: 0.0, ..Default::default() },
        ..Default::default()
    };
    let out = fit(&[item], &[], &config, &train, None, Some(&vocab)).unwrap();
    let g = Generator { config: &config, params: &out.params, text: &provider };
    let generated = g.generate(&PromptSpec::text_only("m", &record.text), &GenerationParams::greedy(100)).unwrap();
    assert_eq!(generated.sequence, sequence);
    assert_eq!(generated.stop, StopReason::Eos);
}
