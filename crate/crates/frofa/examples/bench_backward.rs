use frofa::feature_store::FeatureTensor;
use frofa::map_head;
use frofa::rng::RngKey;
use std::time::Instant;

fn main() {
    let (c, s, h, n, b) = (4usize, 4usize, 1usize, 4usize, 512usize);
    let params = map_head::init(c, s, h, 0).unwrap();
    let mut rng = RngKey::new(1).stream();
    let tensors: Vec<FeatureTensor> = (0..b)
        .map(|_| {
            FeatureTensor::new(
                (0..n * c).map(|_| rng.uniform_in(-2.0, 2.0) as f32).collect(),
                n,
                c,
            )
            .unwrap()
        })
        .collect();
    let refs: Vec<&FeatureTensor> = tensors.iter().collect();
    let labels: Vec<Vec<f32>> = (0..b)
        .map(|i| {
            let mut y = vec![0.0f32; s];
            y[i % s] = 1.0;
            y
        })
        .collect();
    let label_refs: Vec<&[f32]> = labels.iter().map(|l| l.as_slice()).collect();

    let steps = 2000usize;
    let start = Instant::now();
    let mut sink = 0.0f32;
    for _ in 0..steps {
        let (loss, grads) = map_head::backward(&params, &refs, &label_refs).unwrap();
        sink += loss + grads[0];
    }
    let elapsed = start.elapsed().as_secs_f64();
    let example_steps = (steps * b) as f64;
    println!(
        "sink {sink:.3}: {:.2} us/example-step ({:.1} steps/s)",
        elapsed * 1e6 / example_steps,
        steps as f64 / elapsed
    );
}
