//! Trains a small model on the synthetic corpus and reports held-out ROUGE.
//!
//! `cargo run --release --example desk_train -- [variant] [epochs]`

use std::time::Instant;

use sumkit::attention::AttentionVariant;
use sumkit::decoding::{summarize, BeamConfig};
use sumkit::metrics::rouge_multi;
use sumkit::textproc::{build_vocab, synth_corpus};
use sumkit::transformer::{Model, ModelConfig, TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant: AttentionVariant = args.get(1).map_or("s-dot-prod", String::as_str).parse().unwrap();
    let epochs: usize = args.get(2).map_or(10, |s| s.parse().unwrap());
    let corpus = synth_corpus(1, 5000, 200, 4).unwrap();
    let (train, test) = corpus.pairs.split_at(4500);
    let vocab = build_vocab(train, 1000).unwrap();
    let cfg = ModelConfig {
        layers: 2,
        d_model: 64,
        d_ff: 128,
        heads: 4,
        dropout: 0.0,
        variant,
        ..ModelConfig::desk(vocab.len())
    };
    let tcfg = TrainConfig { epochs, batch_tokens: 600, warmup: 400, ..TrainConfig::default() };
    let ids: Vec<(Vec<u32>, Vec<u32>)> =
        train.iter().map(|p| (vocab.encode(&p.source), vocab.encode(&p.target))).collect();
    let t0 = Instant::now();
    let mut tr = Trainer::new(Model::new(cfg, 1).unwrap(), tcfg);
    tr.fit(&ids, |e, l| eprintln!("epoch {e} loss {l:.4} t={:.0}s", t0.elapsed().as_secs_f64())).unwrap();
    let beam = BeamConfig::default();
    let mut r1 = 0.0;
    for p in test {
        let out = summarize(&tr.model, &vocab, &p.source, &beam).unwrap();
        r1 += rouge_multi(&out, std::slice::from_ref(&p.target), 75).unwrap().r1;
    }
    eprintln!("{variant}: R1 {:.2} total {:.0}s", r1 / test.len() as f64, t0.elapsed().as_secs_f64());
}
