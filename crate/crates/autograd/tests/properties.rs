use metalearn_autograd::{grad, Tensor};
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(m, n)| {
        prop::collection::vec(-2.0f64..2.0, m * n).prop_map(move |d| Tensor::new(d, &[m, n]).unwrap())
    })
}

proptest! {
    #[test]
    fn gradient_has_input_shape(a in matrix(4)) {
        let p = a.requiring_grad();
        let g = grad(&p.tanh().square().sum(), std::slice::from_ref(&p), false).unwrap();
        prop_assert_eq!(g[0].shape(), p.shape());
    }

    #[test]
    fn unrelated_inputs_receive_exact_zeros(a in matrix(4), b in matrix(4)) {
        let (pa, pb) = (a.requiring_grad(), b.requiring_grad());
        let g = grad(&pa.exp().sum(), &[pa, pb.clone()], false).unwrap();
        prop_assert!(g[1].data().iter().all(|&v| v == 0.0));
        prop_assert_eq!(g[1].shape(), pb.shape());
    }

    #[test]
    fn gradient_of_linear_sum_is_ones(a in matrix(4)) {
        let p = a.requiring_grad();
        let g = grad(&p.identity().sum(), std::slice::from_ref(&p), false).unwrap();
        prop_assert!(g[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn transpose_is_an_involution(a in matrix(5)) {
        let back = a.t().unwrap().t().unwrap();
        prop_assert_eq!(back.data(), a.data());
    }
}
