use appearance_elements::container::{
    decode_bundle, encode_bundle, Container, ContainerError, HEADER_LEN, MAGIC, VERSION,
};
use proptest::prelude::*;

fn sample(count: usize, dim: usize, labels: bool) -> Container {
    let data = (0..count * dim).map(|i| (i as f32 * 0.37).sin()).collect();
    let mut c = Container::new(count, dim, data).unwrap();
    if labels {
        c.labels = Some((0..count).map(|i| (i % 2) as u8).collect());
        c.normalized = true;
    }
    c
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(
        count in 0usize..20,
        dim in 0usize..12,
        labels in any::<bool>(),
        seed in any::<u32>(),
    ) {
        let data: Vec<f32> = (0..count * dim)
            .map(|i| f32::from_bits(seed.wrapping_mul(2_654_435_761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff))
            .collect();
        let mut c = Container::new(count, dim, data).unwrap();
        if labels {
            c.labels = Some((0..count).map(|i| ((i as u32 ^ seed) & 1) as u8).collect());
        }
        let bytes = c.encode();
        let back = Container::decode(&bytes).unwrap();
        let same_bits = back.data.iter().zip(&c.data).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same_bits);
        prop_assert_eq!(&back.labels, &c.labels);
        prop_assert_eq!(back.encode(), bytes);
    }
}

#[test]
fn header_fields() {
    let bytes = sample(3, 2, true).encode();
    assert_eq!(&bytes[..4], &MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
    assert_eq!(bytes[20], 0b11);
    assert_eq!(bytes.len(), HEADER_LEN + 3 + 4 * 6);
}

#[test]
fn file_round_trip_is_bit_exact() {
    let c = sample(7, 5, true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ldae");
    c.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), c.encode());
    assert_eq!(Container::load(&path).unwrap(), c);
}

#[test]
fn corrupted_magic() {
    let mut bytes = sample(2, 2, false).encode();
    bytes[..4].copy_from_slice(b"XXXX");
    assert!(matches!(
        Container::decode(&bytes),
        Err(ContainerError::BadMagic(m)) if &m == b"XXXX"
    ));
}

#[test]
fn every_truncation_is_reported() {
    let bytes = sample(4, 3, true).encode();
    for len in 0..bytes.len() {
        let err = Container::decode(&bytes[..len]).unwrap_err();
        let expected = if len < HEADER_LEN {
            "header"
        } else if len < HEADER_LEN + 4 {
            "labels"
        } else {
            "rows"
        };
        match err {
            ContainerError::Truncated { section, .. } => assert_eq!(section, expected, "len {len}"),
            other => panic!("len {len}: {other}"),
        }
    }
}

#[test]
fn other_designated_errors() {
    let good = sample(2, 2, true).encode();

    let mut b = good.clone();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        Container::decode(&b),
        Err(ContainerError::VersionMismatch { found: 2 })
    ));

    let mut b = good.clone();
    b[20] |= 1 << 6;
    assert!(matches!(
        Container::decode(&b),
        Err(ContainerError::UnknownFlags(64))
    ));

    let mut b = good.clone();
    b[HEADER_LEN + 1] = 7;
    assert!(matches!(
        Container::decode(&b),
        Err(ContainerError::InvalidLabel { row: 1, value: 7 })
    ));

    let mut b = good.clone();
    b.push(0);
    assert!(matches!(
        Container::decode(&b),
        Err(ContainerError::TrailingBytes(1))
    ));

    let mut b = good;
    b[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    b[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
    b[20] = 0;
    assert!(matches!(
        Container::decode(&b),
        Err(ContainerError::Overflow { .. })
    ));
}

#[test]
fn bundle_sections_round_trip_and_reject_kind_mixups() {
    let sections = vec![
        ("w_q".to_string(), sample(3, 4, false)),
        ("gamma".to_string(), sample(1, 4, false)),
    ];
    let bytes = encode_bundle(&sections);
    assert_eq!(decode_bundle(&bytes).unwrap(), sections);
    assert!(matches!(
        Container::decode(&bytes),
        Err(ContainerError::WrongKind { .. })
    ));
    assert!(matches!(
        decode_bundle(&sample(1, 1, false).encode()),
        Err(ContainerError::WrongKind { .. })
    ));
}

#[test]
fn shape_mismatch_on_construction() {
    assert!(matches!(
        Container::new(2, 3, vec![0.0; 5]),
        Err(ContainerError::Shape {
            len: 5,
            count: 2,
            dim: 3
        })
    ));
}
