use cse_tensor::{conv1d_same, dropout_apply, gru_sequence, GruParams, Mode, Rng, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

proptest! {
    #[test]
    fn conv_preserves_time_length(steps in 1usize..40, half in 0usize..6, c_in in 1usize..4, c_out in 1usize..4, seed in any::<u64>()) {
        let width = 2 * half + 1;
        let mut rng = Rng::new(seed, 0);
        let mut x = Tensor::zeros(&[steps, c_in]);
        x.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        let mut k = Tensor::zeros(&[width, c_in, c_out]);
        k.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        let y = conv1d_same(&x, &k, &Tensor::zeros(&[c_out])).unwrap();
        prop_assert_eq!(y.shape(), &[steps, c_out]);
        prop_assert!(y.is_finite());
    }

    #[test]
    fn gru_last_state_equals_final_row(x in (1usize..12).prop_flat_map(|t| tensor(vec![t, 3])), seed in any::<u64>()) {
        let mut rng = Rng::new(seed, 0);
        let mut draw = |shape: &[usize]| {
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-0.7, 0.7));
            t
        };
        let (wi, wh, bi, bh) = (draw(&[3, 6]), draw(&[2, 6]), draw(&[6]), draw(&[6]));
        let p = GruParams { w_ih: &wi, w_hh: &wh, b_ih: &bi, b_hh: &bh };
        let h0 = Tensor::zeros(&[2]);
        let all = gru_sequence(&x, &h0, p, true).unwrap();
        let last = gru_sequence(&x, &h0, p, false).unwrap();
        let steps = x.shape()[0];
        prop_assert_eq!(all.row(steps - 1), last.data());
    }

    #[test]
    fn eval_dropout_is_identity(x in (1usize..6, 1usize..6).prop_flat_map(|(a, b)| tensor(vec![a, b])), rate in 0.0f64..0.99) {
        let mut rng = Rng::new(0, 0);
        let y = dropout_apply(&x, rate, Mode::Eval, &mut rng).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn equal_seed_and_stream_give_equal_draws(seed in any::<u64>(), stream in any::<u64>()) {
        let mut a = Rng::new(seed, stream);
        let mut b = Rng::new(seed, stream);
        for _ in 0..16 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }
}
