//! On-disk formats and the streaming reweight protocol.

mod embedding;
mod protocol;
mod trace;

pub use embedding::{
    load_embedding_table, read_embedding_table, save_embedding_table, write_embedding_table,
    EmbeddingFileError, DTYPE_F32, HEADER_LEN, MAGIC, VERSION,
};
pub use protocol::{handle_request, serve_stream, ReweightRequest, ReweightResponse, ServeSummary};
pub use trace::{
    collect_sequences, read_trace_stream, SequenceEnd, SequenceTrace, StepRecord, TraceError,
    TraceErrorKind, TraceReader, TraceRecord, TraceWriter, DEFAULT_TRACE_TOP_K, MASS_TOL,
};
