mod common;

use common::frames::frame;
use docmux::doclet::DocletId;
use docmux::wire::{decode_frame, decode_varint, encode_frame, encode_varint, Frame, Payload};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn frames_roundtrip(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        prop_assert_eq!(bytes[0], f.kind() as u8);
        prop_assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn varints_roundtrip(n in any::<u64>()) {
        let bytes = encode_varint(n);
        prop_assert_eq!(decode_varint(&bytes).unwrap(), (n, bytes.len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_frame(&bytes);
    }

    #[test]
    fn truncations_are_rejected(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        for cut in 0..bytes.len() {
            prop_assert!(decode_frame(&bytes[..cut]).is_err());
        }
    }
}

#[test]
fn fixed_vectors() {
    assert_eq!(
        encode_frame(&Frame::new(None, Payload::Keepalive)).unwrap(),
        [0x06, 0x00]
    );
    let sub = Frame::new(Some(DocletId::new("d1").unwrap()), Payload::Subscribe);
    assert_eq!(encode_frame(&sub).unwrap(), [0x01, 0x02, 0x64, 0x31]);
    assert_eq!(encode_varint(300), [0xAC, 0x02]);
    assert_eq!(encode_varint(0), [0x00]);
    assert_eq!(encode_varint(u64::MAX).len(), 10);
}
