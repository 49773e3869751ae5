use std::time::Instant;

use gear::aggregator::AggregatorKind;
use gear::data::synthetic::generate_splits;
use gear::encoder::EncoderConfig;
use gear::model::GearConfig;
use gear::retrieval::{retrieve_and_select, train_selector_ensemble, SelectorTrainConfig};
use gear::train::{fit, TrainConfig, TrainExample};

fn main() {
    let t0 = Instant::now();
    for seed in [7u64, 13] {
        let mut splits = generate_splits(500, 200, 0, seed, 288).unwrap();
        let cfg = SelectorTrainConfig { learning_rate: 5.0, epochs: 1000, weight_decay: 1e-3 };
        let selector = train_selector_ensemble(&splits.train, &splits.corpus, &[seed], 1, &cfg);
        for split in [&mut splits.train, &mut splits.dev] {
            for ex in &mut split.examples {
                ex.retrieved = retrieve_and_select(&ex.claim, &splits.corpus, &selector, 1e-3);
            }
        }
        let train_ex = TrainExample::from_split(&splits.train).unwrap();
        let dev_ex = TrainExample::from_split(&splits.dev).unwrap();
        for layers in [1usize, 0] {
            let gear_cfg = GearConfig {
                encoder: EncoderConfig::hashed_bow(32, 256),
                hidden_dim: 16,
                num_layers: layers,
                aggregator: AggregatorKind::Attention,
                classifier_relu: true,
            };
            let train_cfg = TrainConfig { seed, ..TrainConfig::default() };
            let t1 = Instant::now();
            let (_best, history) = fit(&train_cfg, &gear_cfg, None, &train_ex, &dev_ex).unwrap();
            println!(
                "seed {seed} T={layers}: best dev acc {:.4} at epoch {} ({} epochs, {:.1}s)",
                history.best_accuracy, history.best_epoch, history.epochs.len(),
                t1.elapsed().as_secs_f64()
            );
        }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
