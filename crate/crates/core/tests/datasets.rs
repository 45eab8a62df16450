use mixsemi_core::autodiff::{Optimizer, OptimizerKind};
use mixsemi_core::data::{synth_images, two_moons};
use mixsemi_core::metrics::accuracy;
use mixsemi_core::{Architecture, LayeredNetwork, Tape};

/// Softmax regression on raw pixels, trained full-batch.
fn linear_probe_accuracy(seed: u64) -> f64 {
    let data = synth_images(700, 7, 16, seed).unwrap();
    let flat = data.inputs.reshape(&[700, 256]).unwrap();
    let train: Vec<usize> = (0..500).collect();
    let test: Vec<usize> = (500..700).collect();
    let (xt, yt) = (flat.select_rows(&train).unwrap(), data.labels.select_rows(&train).unwrap());
    let mut net = LayeredNetwork::build(&Architecture::mlp(256, &[], 7), seed).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Adam, net.params());
    for _ in 0..400 {
        let mut tape = Tape::new();
        let x = tape.constant(xt.clone());
        let z = net.forward(&mut tape, x).unwrap();
        let loss = tape.soft_cross_entropy(z, &yt).unwrap();
        let g = tape.backward(loss, net.params()).unwrap();
        opt.step(net.params_mut(), &g, 0.01).unwrap();
    }
    let logits = net.logits(&flat.select_rows(&test).unwrap()).unwrap();
    accuracy(&logits, &data.labels.select_rows(&test).unwrap()).unwrap()
}

#[test]
fn shape_images_are_not_linearly_trivial() {
    for seed in [0, 1] {
        let acc = linear_probe_accuracy(seed);
        eprintln!("linear probe accuracy {acc}");
        assert!(acc > 1.0 / 7.0 && acc < 0.95, "{acc}");
    }
}

#[test]
fn moons_csv_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("moons.csv");
    two_moons(20, 0.1, 3).unwrap().save_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 21);
    let img = synth_images(3, 3, 16, 0).unwrap();
    let mut buf = Vec::new();
    img.write_csv(&mut buf).unwrap();
    let header = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 257);
    assert!(header.starts_with("p0,p1,") && header.ends_with("p255,label"));
}
