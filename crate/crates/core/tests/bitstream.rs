use bgop::bitstream::{read_bitstream, read_container, write_bitstream, write_container, StoredBackend, HEADER_LEN};
use bgop::gop::{decode_sequence, encode_sequence};
use bgop::nn::{Binding, Codec, ModelConfig};
use bgop::Error;
use bgop_tensor::Tensor;

fn clip(frames: usize) -> Vec<Tensor<f32>> {
    (0..frames)
        .map(|t| {
            Tensor::from_fn(&[1, 3, 64, 64], |i| {
                let (x, y) = ((i % 64) as f32, ((i / 64) % 64) as f32);
                0.5 + 0.4 * ((x + 2.0 * t as f32) * 0.2).sin() * (y * 0.15).cos()
            })
        })
        .collect()
}

#[test]
fn sequence_survives_the_container() {
    let codec = Codec::new(ModelConfig::tiny()).unwrap();
    let store = codec.init_params::<f32>(11).unwrap();
    let p = Binding::frozen(&store);
    let frames = clip(7);
    let enc = encode_sequence(&codec, &p, &frames, 4).unwrap();
    assert_eq!(enc.recon.len(), 7);

    let bytes = write_bitstream(&codec, &p, &enc.gops, 4, &StoredBackend).unwrap();
    assert_eq!(&bytes[..4], b"BGOP");
    assert_eq!(u32::from_be_bytes(bytes[11..15].try_into().unwrap()), 7);
    let (header, gops) = read_bitstream(&codec, &p, &bytes, &StoredBackend).unwrap();
    assert_eq!((header.width, header.height, header.gop_size), (64, 64, 4));
    assert_eq!(gops, enc.gops);
    assert_eq!(decode_sequence(&codec, &p, &gops).unwrap(), enc.recon);

    let other = codec.init_params::<f32>(12).unwrap();
    assert!(matches!(
        read_bitstream(&codec, &Binding::frozen(&other), &bytes, &StoredBackend),
        Err(Error::Container { offset: 10, .. })
    ));
}

#[test]
fn damaged_streams_are_reported() {
    let codec = Codec::new(ModelConfig::tiny()).unwrap();
    let store = codec.init_params::<f32>(3).unwrap();
    let p = Binding::frozen(&store);
    let enc = encode_sequence(&codec, &p, &clip(3), 2).unwrap();
    let bytes = write_bitstream(&codec, &p, &enc.gops, 2, &StoredBackend).unwrap();

    let (header, mut chunks) = read_container(&bytes).unwrap();
    chunks[3].main.truncate(5);
    let cut = write_container(&header, &chunks).unwrap();
    match read_bitstream(&codec, &p, &cut, &StoredBackend) {
        Err(Error::Decode { unit, reason }) => {
            assert_eq!(unit, 2);
            assert!(reason.contains("main"), "{reason}");
        }
        other => panic!("expected a decode error, got {other:?}"),
    }

    let mut flipped = bytes.clone();
    flipped[0] = b'X';
    assert!(matches!(read_bitstream(&codec, &p, &flipped, &StoredBackend), Err(Error::Container { offset: 0, .. })));

    let (header, chunks) = read_container(&bytes).unwrap();
    let short = write_container(&header, &chunks[..chunks.len() - 1]).unwrap();
    assert!(matches!(read_bitstream(&codec, &p, &short, &StoredBackend), Err(Error::Decode { .. })));

    let empty = write_bitstream(&codec, &p, &[], 2, &StoredBackend).unwrap();
    assert_eq!(empty.len(), HEADER_LEN);
    assert!(read_bitstream(&codec, &p, &empty, &StoredBackend).unwrap().1.is_empty());
}
