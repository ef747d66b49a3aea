use ernn::autodiff::{gradcheck, Activation, ParamId};
use ernn::cells::{CellConfig, CellKind, Model};
use ernn::equilibrium::unroll;
use ernn::numerics::{gaussian, matmul, Rng, Vector};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = CellKind> {
    prop::sample::select(CellKind::ALL.to_vec())
}

fn act_strategy() -> impl Strategy<Value = Activation> {
    prop::sample::select(vec![
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Identity,
    ])
}

fn model(kind: CellKind, act: Activation, dh: usize, di: usize, k: usize, seed: u64) -> Model {
    let mut cfg = CellConfig::new(kind, dh, di);
    cfg.activation = act;
    cfg.k_steps = k;
    cfg.rank = dh.div_ceil(2);
    cfg.eta_init = 0.3;
    Model::init(&cfg, 3, &mut Rng::new(seed)).unwrap()
}

fn sequence(seed: u64, t: usize, di: usize) -> Vec<Vector> {
    let mut rng = Rng::new(seed ^ 0x5eed);
    (0..t).map(|_| gaussian(&mut rng, di, 1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_is_linear_in_the_seed(
        kind in kind_strategy(), act in act_strategy(), seed in any::<u64>(),
        alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
    ) {
        let m = model(kind, act, 4, 3, 2, seed);
        let seq = sequence(seed, 3, 3);
        let mut g = m.graph(3, None);
        g.tape.forward(&m.param_refs(), &m.graph_inputs(&seq)).unwrap();
        let s1 = Vector::new(vec![1.0, -0.5, 2.0]).unwrap();
        let s2 = Vector::new(vec![0.3, 0.7, -1.1]).unwrap();
        let mix = s1.scale(alpha).add(&s2.scale(beta)).unwrap();
        let (g1, g2, gm) = (
            g.tape.backward(&s1).unwrap(),
            g.tape.backward(&s2).unwrap(),
            g.tape.backward(&mix).unwrap(),
        );
        for k in 0..m.param_refs().len() {
            let id = ParamId(k);
            for ((a, b), c) in g1.param(id).iter().zip(g2.param(id)).zip(gm.param(id)) {
                let want = alpha * a + beta * b;
                prop_assert!((c - want).abs() <= 1e-12 * (1.0 + want.abs()), "{c} vs {want}");
            }
        }
    }

    #[test]
    fn replay_is_bit_identical(kind in kind_strategy(), act in act_strategy(), seed in any::<u64>()) {
        let m = model(kind, act, 5, 2, 3, seed);
        let seq = sequence(seed, 4, 2);
        let run = || {
            let mut g = m.graph(4, Some(1));
            let loss = g.tape.forward(&m.param_refs(), &m.graph_inputs(&seq)).unwrap().clone();
            let grads = g.tape.backward(&Vector::filled(1, 1.0)).unwrap().into_params();
            (loss, grads)
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.as_slice()[0].to_bits(), b.0.as_slice()[0].to_bits());
        for (x, y) in a.1.iter().flatten().zip(b.1.iter().flatten()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn state_jacobians_compose(kind in kind_strategy(), act in act_strategy(), seed in any::<u64>(), mid in 1usize..5) {
        let m = model(kind, act, 4, 2, 2, seed);
        let seq = sequence(seed, 6, 2);
        let mut tape = unroll(&m.cell, 6, 2);
        let mut feed = vec![Vector::zeros(4)];
        feed.extend(seq);
        tape.forward(&m.cell.param_refs(), &feed).unwrap();
        let whole = tape.state_jacobian(0, 6).unwrap();
        let first = tape.state_jacobian(0, mid).unwrap();
        let second = tape.state_jacobian(mid, 6).unwrap();
        let composed = matmul(&second, &first).unwrap();
        let scale = 1.0 + whole.max_abs();
        prop_assert!(composed.sub(&whole).unwrap().max_abs() <= 1e-8 * scale);
    }

    #[test]
    fn smooth_losses_pass_gradcheck(kind in kind_strategy(), seed in any::<u64>()) {
        let m = model(kind, Activation::Tanh, 4, 3, 2, seed);
        let seq = sequence(seed, 3, 3);
        let mut g = m.graph(3, Some(2));
        g.tape.forward(&m.param_refs(), &m.graph_inputs(&seq)).unwrap();
        let r = gradcheck(&mut g.tape, &m.param_refs(), 1e-5).unwrap();
        prop_assert!(r.max_relative_error <= 1e-6, "{:?}", r);
    }
}
