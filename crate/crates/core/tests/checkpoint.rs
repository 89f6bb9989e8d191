use precond::harness::checkpoint::{decode, decode_records, encode, load, save, MAGIC};
use precond::harness::equivalence::GradientStream;
use precond::{init_layer, Error, LayerState, Method, OptimConfig, Parametrization, Precision};

fn trained(method: Method, p: Parametrization, storage: Precision) -> LayerState {
    let cfg = OptimConfig { method, parametrization: p, storage, interval: 3, ..Default::default() };
    let mut state = init_layer(6, 5, &cfg).unwrap();
    let mut grads = GradientStream::new(6, 5, 2);
    for _ in 0..7 {
        state.step(&grads.next_gradient(), &cfg).unwrap();
    }
    state
}

fn assert_same(a: &LayerState, b: &LayerState) {
    assert_eq!(a.method(), b.method());
    assert_eq!(a.parametrization(), b.parametrization());
    assert_eq!(a.step_count(), b.step_count());
    assert!(a.theta().bitwise_eq(b.theta()));
    for f in 0..2 {
        let (x, y) = (a.factor(f), b.factor(f));
        assert!(x.lambda_buffer().bitwise_eq(y.lambda_buffer()));
        assert!(x.basis().bitwise_eq(y.basis()));
        assert!(x.companion().bitwise_eq(y.companion()));
    }
    match (a.moments(), b.moments()) {
        (Some(m), Some(n)) => assert!(m.m.bitwise_eq(&n.m) && m.v.bitwise_eq(&n.v)),
        (None, None) => {}
        _ => panic!("moments present on one side only"),
    }
}

#[test]
fn round_trip_is_bitwise_for_every_configuration() {
    for method in [Method::KlShampoo, Method::KlSoap, Method::Soap] {
        for p in [Parametrization::Old, Parametrization::New] {
            for storage in [Precision::Fp64, Precision::Fp32, Precision::Bf16] {
                let states = vec![trained(method, p, storage), trained(method, p, storage).with_stream(1)];
                let back = decode(&encode(&states), Some(storage)).unwrap();
                assert_eq!(back.len(), 2);
                for (a, b) in states.iter().zip(&back) {
                    assert_same(a, b);
                }
            }
        }
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = OptimConfig { storage: Precision::Bf16, interval: 3, ..Default::default() };
    let mut straight = init_layer(6, 5, &cfg).unwrap();
    let mut grads = GradientStream::new(6, 5, 4);
    let gs: Vec<_> = (0..10).map(|_| grads.next_gradient()).collect();
    for g in &gs[..4] {
        straight.step(g, &cfg).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.kprc");
    save(&path, std::slice::from_ref(&straight)).unwrap();
    let mut resumed = load(&path, Some(Precision::Bf16)).unwrap().remove(0);
    for g in &gs[4..] {
        straight.step(g, &cfg).unwrap();
        resumed.step(g, &cfg).unwrap();
    }
    assert_same(&straight, &resumed);
}

#[test]
fn corrupted_magic_is_a_format_error() {
    let mut bytes = encode(&[trained(Method::KlShampoo, Parametrization::New, Precision::Fp32)]);
    assert_eq!(&bytes[..4], MAGIC);
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes, None), Err(Error::Format(_))));
}

#[test]
fn wrong_version_is_a_format_error() {
    let mut bytes = encode(&[trained(Method::KlShampoo, Parametrization::New, Precision::Fp32)]);
    bytes[4] = 9;
    assert!(matches!(decode(&bytes, None), Err(Error::Format(_))));
}

#[test]
fn every_truncation_is_an_io_error() {
    let bytes = encode(&[trained(Method::KlSoap, Parametrization::Old, Precision::Bf16)]);
    for len in 0..bytes.len() {
        match decode_records(&bytes[..len]) {
            Err(Error::Io(e)) => assert_eq!(e.kind(), std::io::ErrorKind::UnexpectedEof, "len {len}"),
            other => panic!("truncated to {len} of {} bytes: {other:?}", bytes.len()),
        }
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = encode(&[trained(Method::Soap, Parametrization::New, Precision::Fp64)]);
    bytes.push(0);
    assert!(matches!(decode(&bytes, None), Err(Error::Format(_))));
}

#[test]
fn precision_mismatch_is_explicit() {
    let all = [Precision::Fp64, Precision::Fp32, Precision::Bf16];
    for stored in all {
        let bytes = encode(&[trained(Method::KlShampoo, Parametrization::New, stored)]);
        for wanted in all {
            match decode(&bytes, Some(wanted)) {
                Ok(_) => assert_eq!(stored, wanted),
                Err(Error::PrecisionMismatch { expected, found }) => {
                    assert_ne!(stored, wanted);
                    assert_eq!((expected, found), (wanted, stored));
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }
}

#[test]
fn unknown_dtype_code_is_a_format_error() {
    let mut bytes = encode(&[trained(Method::KlShampoo, Parametrization::New, Precision::Fp32)]);
    // Header (4+2+4) then param, method, step_count (8), tensor count: first dtype byte.
    let dtype_at = 4 + 2 + 4 + 1 + 1 + 8 + 1;
    assert_eq!(bytes[dtype_at], Precision::Fp32.code());
    for code in 3..=255u8 {
        bytes[dtype_at] = code;
        assert!(matches!(decode(&bytes, None), Err(Error::Format(_))), "code {code}");
    }
}
