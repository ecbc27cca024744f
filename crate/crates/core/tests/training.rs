use stexp_core::contrastive::{fit, TrainConfig};
use stexp_core::data::{preprocess, synth_generate, GenConfig};
use stexp_core::encoders::EncoderConfig;
use stexp_core::Tensor;

const EPOCHS: usize = 400;

fn tiny() -> (
    stexp_core::data::ProcessedDataset,
    EncoderConfig,
    TrainConfig,
) {
    let gen = GenConfig {
        slides: 1,
        spots_per_slide: 32,
        signal: 1.0,
        ..GenConfig::default()
    };
    let slides = synth_generate(&gen, 21).unwrap();
    let ds = preprocess(&slides, 64, &[slides[0].slide_id.clone()]).unwrap();
    let enc = EncoderConfig {
        coord_max: gen.coord_max as usize,
        ..EncoderConfig::default()
    };
    let tc = TrainConfig {
        epochs: EPOCHS,
        seed: 21,
        ..TrainConfig::default()
    };
    (ds, enc, tc)
}

fn top1_self_rate(h_patch: &Tensor<f32>, h_spot: &Tensor<f32>) -> f64 {
    let n = h_patch.shape()[0];
    let mut hits = 0;
    for i in 0..n {
        let q = h_patch.row(i);
        let best = (0..n)
            .map(|j| {
                (
                    j,
                    q.iter().zip(h_spot.row(j)).map(|(a, b)| a * b).sum::<f32>(),
                )
            })
            .fold(
                (0, f32::NEG_INFINITY),
                |acc, (j, c)| if c > acc.1 { (j, c) } else { acc },
            );
        hits += usize::from(best.0 == i);
    }
    hits as f64 / n as f64
}

#[test]
fn tiny_slide_is_learned() {
    let (ds, enc, tc) = tiny();
    let out = fit(&ds, &enc, &tc).unwrap();
    let first = out.epoch_losses[0];
    let last = out.final_loss().unwrap();
    assert!(last < first, "loss {first} -> {last}");

    let slide = &ds.slides[0];
    let hp = out.model.embed_image(&slide.image).unwrap();
    let hs = out
        .model
        .embed_spots(&slide.expression, &slide.coords)
        .unwrap();
    let rate = top1_self_rate(&hp, &hs);
    assert!(
        rate >= 0.9,
        "top-1 self retrieval {rate} (loss {first} -> {last})"
    );
}

#[test]
fn fit_is_deterministic() {
    let (ds, enc, mut tc) = tiny();
    tc.epochs = 3;
    let a = fit(&ds, &enc, &tc).unwrap();
    let b = fit(&ds, &enc, &tc).unwrap();
    assert_eq!(a.epoch_losses, b.epoch_losses);
    for (name, p) in a.model.params.iter() {
        let q = b.model.params.get(name).unwrap();
        assert!(
            p.value
                .data()
                .iter()
                .zip(q.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name}"
        );
    }
}
