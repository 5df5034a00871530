//! Container format, the entropy coder boundary and latent stream I/O.

mod backend;
mod container;
mod stream;

pub use backend::{
    table_data, RangeCoderBackend, StoredBackend, TableRecord, TableRecords, STATUS_CAPACITY, STATUS_CORRUPT,
    STATUS_INVALID_ARGUMENT, STATUS_OK, STATUS_OUT_OF_RANGE,
};
pub use container::{read_container, write_container, Chunk, StreamHeader, CHUNK_PREFIX_LEN, HEADER_LEN, MAGIC, VERSION};
pub use stream::{model_id, read_bitstream, write_bitstream};
