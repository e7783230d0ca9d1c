use probunk_core::concept::{train_concept_classifier, ConceptConfig};
use probunk_core::corpus::{shipped_concepts, Split};
use probunk_core::embed::fake_embeddings;
use probunk_core::encoder::{EncoderConfig, EncoderKind};
use probunk_core::eval::evaluate_concept_model;
use probunk_core::synth::{synthesize, SynthConfig};

#[test]
fn cnn_concept_model_has_one_output_per_concept() {
    let data = synthesize(&SynthConfig { problems: 300, seed: 5, ..SynthConfig::default() }, &shipped_concepts()).unwrap();
    assert_eq!(data.concepts.len(), 11);
    let table = fake_embeddings(&data.corpus, &data.concepts, 5, 32).unwrap();
    let cfg = ConceptConfig {
        encoder: EncoderConfig { kind: EncoderKind::Cnn, widths: vec![1, 2], kernels: 32, hidden: 0 },
        epochs: 120,
        ..ConceptConfig::preset("cnn").unwrap()
    };
    let classes: Vec<String> = data.concepts.iter().map(|c| c.id.clone()).collect();
    let trained = train_concept_classifier(&data.corpus, &table, &cfg, Some(classes.clone())).unwrap();
    assert_eq!(trained.model.head.output_dim(), 11);
    let report = evaluate_concept_model(&trained.model, &data.corpus, &table, Split::Dev).unwrap();
    let names: Vec<&str> = report.classes.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, classes.iter().map(String::as_str).collect::<Vec<_>>());
    eprintln!("dev macro F1 {:.4} final loss {:?}", report.macro_f1, trained.epoch_loss.last());
    assert!(report.macro_f1 > 0.5, "{}", report.macro_f1);
}
