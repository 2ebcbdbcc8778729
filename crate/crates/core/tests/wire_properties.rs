//! Property tests for the classical-channel wire format: encode/decode is a
//! bijection on valid messages, and malformed bytes never panic.

use proptest::prelude::*;

use qkd_downlink::protocol::wire::{decode_message, encode_message, SiftingMessage};
use qkd_downlink::{Basis, IntensityClass};

fn sorted_indices() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..1000, 0..64).prop_map(|gaps| {
        gaps.iter()
            .scan(0u64, |acc, g| {
                *acc += g;
                Some(*acc)
            })
            .collect()
    })
}

fn message() -> impl Strategy<Value = SiftingMessage> {
    prop_oneof![
        (any::<u64>(), any::<u64>(), 1.0..1e9f64, any::<u8>()).prop_map(
            |(session_id, pulse_count, pulse_rate_hz, bit_convention)| {
                SiftingMessage::SessionHeader {
                    session_id,
                    pulse_count,
                    pulse_rate_hz,
                    bit_convention,
                }
            }
        ),
        sorted_indices().prop_map(|indices| SiftingMessage::DetectionReport { indices }),
        prop::collection::vec(prop::bool::ANY, 0..64).prop_map(|bits| {
            SiftingMessage::BasisReveal {
                bases: bits
                    .into_iter()
                    .map(|b| if b { Basis::Hv } else { Basis::Da })
                    .collect(),
            }
        }),
        prop::collection::vec(0u8..3, 0..64).prop_map(|xs| {
            SiftingMessage::IntensityDeclaration {
                classes: xs.into_iter().map(|x| IntensityClass::ALL[x as usize]).collect(),
            }
        }),
        sorted_indices().prop_map(|indices| SiftingMessage::SampleRequest { indices }),
        prop::collection::vec(prop::bool::ANY, 0..64)
            .prop_map(|bits| SiftingMessage::SampleReveal { bits }),
        (any::<u8>(), "[ -~]{0,40}").prop_map(|(reason_code, message)| {
            SiftingMessage::Abort {
                reason_code,
                message,
            }
        }),
    ]
}

proptest! {
    #[test]
    fn roundtrip_is_identity(msg in message()) {
        let bytes = encode_message(&msg).unwrap();
        prop_assert_eq!(decode_message(&bytes).unwrap(), msg);
    }

    #[test]
    fn every_truncation_is_a_clean_error(msg in message()) {
        let bytes = encode_message(&msg).unwrap();
        for len in 0..bytes.len() {
            prop_assert!(decode_message(&bytes[..len]).is_err());
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_message(&bytes);
    }

    #[test]
    fn single_byte_corruption_never_panics(msg in message(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let mut bytes = encode_message(&msg).unwrap();
        if bytes.is_empty() {
            return Ok(());
        }
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        // corrupted frames must decode to an error or to some other valid
        // message, never crash
        let _ = decode_message(&bytes);
    }
}
