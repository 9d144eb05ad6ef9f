use proptest::prelude::*;
use swigan_tensor::container::{read_tensors, write_tensors};
use swigan_tensor::GridTensor;

proptest! {
    /// Round-trips are bit-exact, including non-finite payloads.
    #[test]
    fn roundtrip_bit_exact(bits in proptest::collection::vec(any::<u32>(), 1..64), name in "[a-z_.]{1,24}") {
        let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
        let t = GridTensor::from_vec(vec![data.len()], data);
        let entries = vec![(name.clone(), t)];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &entries).unwrap();
        let back = read_tensors(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].0, &name);
        prop_assert_eq!(back[0].1.shape(), entries[0].1.shape());
        for (a, b) in back[0].1.data().iter().zip(entries[0].1.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn rejects_bad_magic() {
    let err = read_tensors(&b"NOPE"[..]).unwrap_err();
    assert!(err.to_string().contains("magic"));
}

#[test]
fn multiple_records_keep_order() {
    let entries = vec![
        (
            "alpha".to_string(),
            GridTensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
        ),
        ("beta".to_string(), GridTensor::zeros(vec![3])),
    ];
    let mut buf = Vec::new();
    write_tensors(&mut buf, &entries).unwrap();
    let back = read_tensors(buf.as_slice()).unwrap();
    assert_eq!(back[0].0, "alpha");
    assert_eq!(back[1].0, "beta");
    assert_eq!(back[1].1.shape(), &[3]);
}
