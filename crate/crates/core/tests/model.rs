use proptest::prelude::*;
use sikd_core::{ModelConfig, Network, Tensor};

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

fn norm(c: usize) -> usize {
    2 * c
}

fn double_conv(cin: usize, cout: usize) -> usize {
    conv(cin, cout, 3) + norm(cout) + conv(cout, cout, 3) + norm(cout)
}

/// Counted from the architecture description, independent of the implementation.
fn expected_params(c: &ModelConfig) -> usize {
    let w = |l: usize| c.base_width * (1 << l);
    let mut total = 0;
    for l in 0..c.depth {
        let input = if l == 0 { c.in_channels } else { w(l - 1) };
        total += double_conv(input, w(l));
    }
    total += double_conv(w(c.depth - 1), w(c.depth));
    for l in 0..c.depth {
        total += 4 * w(l + 1) * w(l) + w(l);
        let input = if c.skip_connections { 2 * w(l) } else { w(l) };
        total += double_conv(input, w(l));
    }
    total + conv(w(0), c.num_classes, 1)
}

#[test]
fn default_parameter_count() {
    let c = ModelConfig::default();
    let net = Network::<f32>::new(&c).unwrap();
    assert_eq!(net.param_count(), expected_params(&c));
    // 1 input channel, width 16, depth 2, 3 classes, with skips.
    assert_eq!(net.param_count(), 117_427);
}

#[test]
fn teacher_and_student_differ_only_in_decoder_inputs() {
    let student = ModelConfig::default();
    let teacher = student.variant(false, 9);
    let s = Network::<f32>::new(&student).unwrap().param_count();
    let t = Network::<f32>::new(&teacher).unwrap().param_count();
    let extra: usize = (0..student.depth).map(|l| 9 * (16 << l) * (16 << l)).sum();
    assert_eq!(s - t, extra);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parameter_count_matches_oracle(
        classes in 2usize..6,
        channels in prop::sample::select(vec![1usize, 3]),
        width in 1usize..9,
        depth in 1usize..4,
        skip in any::<bool>(),
    ) {
        let c = ModelConfig {
            num_classes: classes,
            in_channels: channels,
            base_width: width,
            depth,
            skip_connections: skip,
            seed: 1,
        };
        let net = Network::<f32>::new(&c).unwrap();
        prop_assert_eq!(net.param_count(), expected_params(&c));
    }

    #[test]
    fn output_shapes_follow_config(depth in 1usize..4, mult in 1usize..3, classes in 2usize..5) {
        let c = ModelConfig { num_classes: classes, base_width: 4, depth, ..ModelConfig::default() };
        let net = Network::<f64>::new(&c).unwrap();
        let side = mult << depth;
        let x = Tensor::<f64>::zeros([2, 1, side, side + (1 << depth)]);
        let out = net.forward(&x).unwrap();
        prop_assert_eq!(out.logits.shape(), [2, classes, side, side + (1 << depth)]);
        prop_assert_eq!(out.penultimate.shape(), [2, 4, side, side + (1 << depth)]);
    }
}

#[test]
fn initialization_is_seeded() {
    let c = ModelConfig::default();
    let a = Network::<f32>::new(&c).unwrap().flat_params();
    let b = Network::<f32>::new(&c).unwrap().flat_params();
    let d = Network::<f32>::new(&c.variant(true, 1)).unwrap().flat_params();
    assert_eq!(a, b);
    assert_ne!(a, d);
}
