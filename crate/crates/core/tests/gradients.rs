use mixsemi_core::data::{one_hot, Task};
use mixsemi_core::mixing::LayerSet;
use mixsemi_core::oracle::check_gradients;
use mixsemi_core::rng::seeded;
use mixsemi_core::ssl::{plan_step, step_loss, SslConfig};
use mixsemi_core::{Architecture, AugmentPolicy, LayeredNetwork, Tape, Tensor};
use rand::Rng;

fn random_net(i: u64, r: &mut impl Rng) -> (Architecture, usize) {
    let classes = r.random_range(2..=4);
    let arch = match i % 3 {
        0 => Architecture::mlp(2, &[r.random_range(3..=8)], classes),
        1 => Architecture::parse(&format!("in:3 fc:{} sigmoid fc:{} relu fc:{classes}", r.random_range(3..=6), r.random_range(3..=6))).unwrap(),
        _ => Architecture::parse(&format!("in:1x5x5 conv:2:3:1:1:2 flatten fc:6 relu fc:{classes}")).unwrap(),
    };
    (arch, classes)
}

fn random_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let mut r = seeded(2024);
    let mut worst = 0.0f64;
    for i in 0..25 {
        let (arch, classes) = random_net(i, &mut r);
        let net = LayeredNetwork::build(&arch, i).unwrap();
        assert!(net.param_count() <= 500);
        let task = if i % 2 == 0 { Task::MultiClass } else { Task::MultiLabel };
        let mut shape = vec![4];
        shape.extend_from_slice(net.input_shape());
        let xl = random_tensor(&shape, &mut r);
        let xu = random_tensor(&shape, &mut r);
        let yl = one_hot(&(0..4).map(|k| k % classes).collect::<Vec<_>>(), classes).unwrap();
        let cfg = SslConfig {
            mix_layers: LayerSet::new((0..=net.num_boundaries()).collect()).unwrap(),
            augment: AugmentPolicy::GaussianNoise(0.1),
            task,
            lambda_u: 75.0,
            ..SslConfig::default()
        };
        let plan = plan_step(&net, &xl, &yl, Some(&xu), &cfg, &mut r).unwrap();
        let report = check_gradients(net.params(), 1e-5, |tape: &mut Tape, store| {
            let mut n = net.clone();
            *n.params_mut() = store.clone();
            Ok(step_loss(tape, &n, &plan, &cfg)?.total)
        })
        .unwrap();
        assert!(report.checked > report.skipped, "{report:?}");
        worst = worst.max(report.max_rel_err);
        assert!(report.max_rel_err < 1e-4, "net {i} ({arch}): {report:?}");
    }
    eprintln!("worst relative error {worst:.3e}");
}
