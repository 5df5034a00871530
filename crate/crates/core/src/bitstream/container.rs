use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BGOP";
pub const VERSION: u8 = 1;
/// Bytes of a serialized [`StreamHeader`].
pub const HEADER_LEN: usize = 15;
/// Bytes of a chunk before its payloads.
pub const CHUNK_PREFIX_LEN: usize = 1 + 4 + 4 + 4 * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
    pub gop_size: u8,
    pub model_id: u8,
    pub frame_count: u32,
}

/// Coded payloads of one latent stream. Spans are inclusive symbol ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub kind: u8,
    pub main_span: (i16, i16),
    pub hyper_span: (i16, i16),
    pub main: Vec<u8>,
    pub hyper: Vec<u8>,
}

pub fn write_container(header: &StreamHeader, chunks: &[Chunk]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + chunks.iter().map(|c| CHUNK_PREFIX_LEN + c.main.len() + c.hyper.len()).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.width.to_be_bytes());
    out.extend_from_slice(&header.height.to_be_bytes());
    out.push(header.gop_size);
    out.push(header.model_id);
    out.extend_from_slice(&header.frame_count.to_be_bytes());
    for c in chunks {
        let len = |v: &[u8]| {
            u32::try_from(v.len()).map_err(|_| Error::Container { offset: out.len(), reason: "payload over 4 GiB".into() })
        };
        let (main_len, hyper_len) = (len(&c.main)?, len(&c.hyper)?);
        out.push(c.kind);
        out.extend_from_slice(&main_len.to_be_bytes());
        out.extend_from_slice(&hyper_len.to_be_bytes());
        for v in [c.main_span.0, c.main_span.1, c.hyper_span.0, c.hyper_span.1] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&c.main);
        out.extend_from_slice(&c.hyper);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Container {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Parses a container. Magic and version are checked before anything else.
pub fn read_container(bytes: &[u8]) -> Result<(StreamHeader, Vec<Chunk>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.array::<4>("magic")? != MAGIC {
        return Err(Error::Container { offset: 0, reason: "bad magic".into() });
    }
    let version = r.array::<1>("version")?[0];
    if version != VERSION {
        return Err(Error::Container { offset: 4, reason: format!("unsupported version {version}") });
    }
    let header = StreamHeader {
        width: u16::from_be_bytes(r.array("width")?),
        height: u16::from_be_bytes(r.array("height")?),
        gop_size: r.array::<1>("gop size")?[0],
        model_id: r.array::<1>("model id")?[0],
        frame_count: u32::from_be_bytes(r.array("frame count")?),
    };
    let mut chunks = Vec::new();
    while r.pos < bytes.len() {
        let kind = r.array::<1>("chunk kind")?[0];
        let main_len = u32::from_be_bytes(r.array("main length")?) as usize;
        let hyper_len = u32::from_be_bytes(r.array("hyper length")?) as usize;
        let mut span = || -> Result<(i16, i16)> {
            Ok((i16::from_be_bytes(r.array("symbol range")?), i16::from_be_bytes(r.array("symbol range")?)))
        };
        let (main_span, hyper_span) = (span()?, span()?);
        let main = r.take(main_len, "main payload")?.to_vec();
        let hyper = r.take(hyper_len, "hyper payload")?.to_vec();
        chunks.push(Chunk { kind, main_span, hyper_span, main, hyper });
    }
    Ok((header, chunks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(frames: u32) -> StreamHeader {
        StreamHeader { width: 256, height: 128, gop_size: 4, model_id: 0x5a, frame_count: frames }
    }

    #[test]
    fn header_only_layout() {
        let bytes = write_container(&header(0), &[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(bytes, [b'B', b'G', b'O', b'P', 1, 1, 0, 0, 128, 4, 0x5a, 0, 0, 0, 0]);
        assert_eq!(read_container(&bytes).unwrap(), (header(0), vec![]));
    }

    #[test]
    fn chunk_layout_is_big_endian() {
        let c = Chunk { kind: 2, main_span: (-3, 4), hyper_span: (-1, 1), main: vec![7, 8, 9], hyper: vec![1] };
        let bytes = write_container(&header(1), &[c]).unwrap();
        assert_eq!(
            &bytes[HEADER_LEN..],
            &[2, 0, 0, 0, 3, 0, 0, 0, 1, 0xff, 0xfd, 0, 4, 0xff, 0xff, 0, 1, 7, 8, 9, 1]
        );
    }

    #[test]
    fn corruption_names_the_offset() {
        let c = Chunk { kind: 0, main_span: (0, 0), hyper_span: (0, 0), main: vec![1, 2], hyper: vec![] };
        let bytes = write_container(&header(1), &[c]).unwrap();
        let mut bad = bytes.clone();
        bad[0] ^= 0x01;
        assert!(matches!(read_container(&bad), Err(Error::Container { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_container(&bad), Err(Error::Container { offset: 4, .. })));
        let cut = &bytes[..bytes.len() - 1];
        let at = HEADER_LEN + CHUNK_PREFIX_LEN;
        assert!(matches!(read_container(cut), Err(Error::Container { offset, .. }) if offset == at));
        assert!(matches!(read_container(&bytes[..6]), Err(Error::Container { offset: 5, .. })));
    }

    fn chunk() -> impl Strategy<Value = Chunk> {
        (
            0u8..3,
            any::<(i16, i16, i16, i16)>(),
            prop::collection::vec(any::<u8>(), 0..40),
            prop::collection::vec(any::<u8>(), 0..10),
        )
            .prop_map(|(kind, s, main, hyper)| Chunk { kind, main_span: (s.0, s.1), hyper_span: (s.2, s.3), main, hyper })
    }

    proptest! {
        #[test]
        fn write_read_inverse(
            w in any::<u16>(), h in any::<u16>(), g in any::<u8>(), m in any::<u8>(), n in any::<u32>(),
            chunks in prop::collection::vec(chunk(), 0..6),
        ) {
            let header = StreamHeader { width: w, height: h, gop_size: g, model_id: m, frame_count: n };
            let bytes = write_container(&header, &chunks).unwrap();
            let expected = HEADER_LEN + chunks.iter().map(|c| CHUNK_PREFIX_LEN + c.main.len() + c.hyper.len()).sum::<usize>();
            prop_assert_eq!(bytes.len(), expected);
            let (h2, c2) = read_container(&bytes).unwrap();
            prop_assert_eq!(h2, header);
            prop_assert_eq!(&c2, &chunks);
            prop_assert_eq!(write_container(&h2, &c2).unwrap(), bytes);
        }
    }
}
