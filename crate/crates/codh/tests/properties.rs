//! Randomized structural properties over the tensor and file-format layers.

use codh::golden::{read_tensor, write_tensor};
use codh::tensor::{transpose2d, Tensor};
use proptest::prelude::*;

fn small_matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(n, d)| {
            proptest::collection::vec(-1e3f64..1e3, n * d)
                .prop_map(move |data| Tensor::new(vec![n, d], data).unwrap())
        })
}

proptest! {
    #[test]
    fn transpose_is_an_involution(x in small_matrix()) {
        let back = transpose2d(&transpose2d(&x).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn reshape_preserves_data(x in small_matrix()) {
        let n = x.len();
        let flat = x.clone().reshape(vec![n]).unwrap();
        prop_assert_eq!(flat.data(), x.data());
        let back = flat.reshape(x.shape().to_vec()).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn golden_round_trip_is_identity_at_f32(x in small_matrix()) {
        let dir = std::env::temp_dir().join(format!("codh-prop-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.codh");
        write_tensor(&path, &x).unwrap();
        let back = read_tensor(&path).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }
}
